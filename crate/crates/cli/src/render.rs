//! Orthographic stick-figure frames as PNG images.

use std::path::{Path, PathBuf};

use mpgen_core::kinematics::{forward_kinematics, Joints, Skeleton};
use mpgen_core::geom::Vec3;
use mpgen_core::repr::{GroupMotion, NUM_JOINTS};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    /// Looking down `-z`: x to the right, y up.
    Front,
    /// Looking down `-y`: x to the right, z down the image.
    Top,
}

impl std::str::FromStr for View {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "front" => Ok(Self::Front),
            "top" => Ok(Self::Top),
            _ => Err(format!("unknown view {s:?} (front, top)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub size: u32,
    pub view: View,
    pub skeleton: Skeleton,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            size: 256,
            view: View::Front,
            skeleton: Skeleton::default(),
        }
    }
}

const HEAD: usize = 15;
const BACKGROUND: [u8; 3] = [255, 255, 255];
const GROUND: [u8; 3] = [200, 200, 200];
const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

pub fn subject_color(n: usize) -> [u8; 3] {
    PALETTE[n % PALETTE.len()]
}

/// An RGB8 raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        let pixels = BACKGROUND.repeat((width * height) as usize);
        Self { width, height, pixels }
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y * self.width + x) as usize;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 {
            let i = 3 * (y as usize * self.width as usize + x as usize);
            self.pixels[i..i + 3].copy_from_slice(&c);
        }
    }

    fn dot(&mut self, x: i64, y: i64, r: i64, c: [u8; 3]) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.put(x + dx, y + dy, c);
                }
            }
        }
    }

    /// Bresenham line stamped with a disc of radius `r`.
    pub fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), r: i64, c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.dot(x, y, r, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header()?;
            w.write_image_data(&self.pixels)?;
            w.finish()?;
        }
        Ok(out)
    }
}

fn plane(view: View, p: &Vec3) -> (f64, f64) {
    match view {
        View::Front => (p.x, p.y),
        View::Top => (p.x, -p.z),
    }
}

/// Square world window shared by every frame, so figures do not jump.
struct Frame2D {
    min: (f64, f64),
    scale: f64,
    size: f64,
}

impl Frame2D {
    fn fit(points: impl Iterator<Item = (f64, f64)>, size: u32) -> Self {
        let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
        for (u, v) in points {
            lo = (lo.0.min(u), lo.1.min(v));
            hi = (hi.0.max(u), hi.1.max(v));
        }
        if !lo.0.is_finite() {
            lo = (-1.0, -1.0);
            hi = (1.0, 1.0);
        }
        let extent = (hi.0 - lo.0).max(hi.1 - lo.1).max(0.5) * 1.15;
        let center = ((lo.0 + hi.0) / 2.0, (lo.1 + hi.1) / 2.0);
        Self {
            min: (center.0 - extent / 2.0, center.1 - extent / 2.0),
            scale: size as f64 / extent,
            size: size as f64,
        }
    }

    fn pixel(&self, (u, v): (f64, f64)) -> (i64, i64) {
        let x = (u - self.min.0) * self.scale;
        let y = self.size - (v - self.min.1) * self.scale;
        (x.round() as i64, y.round() as i64)
    }
}

/// Joint positions of every valid slot, `[frame][subject]`.
fn all_joints(m: &GroupMotion, skel: &Skeleton) -> Result<Vec<Vec<Option<Joints>>>> {
    (0..m.frames())
        .map(|f| {
            (0..m.subjects())
                .map(|n| {
                    if m.is_valid(f, n) {
                        Ok(Some(forward_kinematics(&m.pose(f, n), skel)?))
                    } else {
                        Ok(None)
                    }
                })
                .collect()
        })
        .collect()
}

/// One canvas per frame.
pub fn render_frames(m: &GroupMotion, opts: &RenderOptions) -> Result<Vec<Canvas>> {
    if opts.size < 16 {
        return Err(CliError::Usage(format!("image size {} is below 16 pixels", opts.size)));
    }
    let joints = all_joints(m, &opts.skeleton)?;
    let window = Frame2D::fit(
        joints.iter().flatten().flatten().flat_map(|j| j.iter().map(|p| plane(opts.view, p))),
        opts.size,
    );
    let radius = i64::from(opts.size / 256 + 1);
    let mut out = Vec::with_capacity(m.frames());
    for frame in &joints {
        let mut canvas = Canvas::new(opts.size, opts.size);
        if opts.view == View::Front {
            let y = window.pixel((0.0, 0.0)).1;
            canvas.line((0, y), (opts.size as i64 - 1, y), 0, GROUND);
        }
        for (n, subject) in frame.iter().enumerate() {
            let Some(j) = subject else { continue };
            let color = subject_color(n);
            for k in 1..NUM_JOINTS {
                if let Some(parent) = opts.skeleton.parent(k) {
                    let a = window.pixel(plane(opts.view, &j[parent]));
                    let b = window.pixel(plane(opts.view, &j[k]));
                    canvas.line(a, b, radius, color);
                }
            }
            let head = window.pixel(plane(opts.view, &j[HEAD]));
            canvas.dot(head.0, head.1, 2 * radius + 1, color);
        }
        out.push(canvas);
    }
    Ok(out)
}

/// Writes `frame_0000.png`, `frame_0001.png`, ... into `out_dir`.
pub fn render_motion(m: &GroupMotion, out_dir: &Path, opts: &RenderOptions) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::with_capacity(m.frames());
    for (f, canvas) in render_frames(m, opts)?.iter().enumerate() {
        let path = out_dir.join(format!("frame_{f:04}.png"));
        std::fs::write(&path, canvas.encode_png()?).map_err(|e| CliError::from(e).in_file(&path))?;
        paths.push(path);
    }
    Ok(paths)
}
