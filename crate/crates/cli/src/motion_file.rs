//! Versioned plain-text interchange format for motion samples.
//!
//! ```text
//! mpgen-motion 1.0
//! fps: 20
//! frames: 2
//! subjects: 1
//! text: one person waves hello
//! source_tag: HML
//! height_adjusted: true
//! frame_mask: 1 1
//! subject_mask: 1
//! subject 0
//! betas: <11 numbers>
//! frame 0: <72 axis-angle numbers> <3 translation numbers>
//! frame 1: ...
//! end
//! ```
//!
//! Rotations are stored as axis-angle vectors and converted to the 6D form
//! on load. Header keys this version does not know are kept verbatim.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use mpgen_core::repr::{GroupMotion, MotionSample, PoseVector, Rotation6D, SourceTag, BETA_DIM, NUM_JOINTS};

use crate::error::{CliError, ParseError, Result};

pub const MAGIC: &str = "mpgen-motion";
pub const VERSION_MAJOR: u32 = 1;
pub const VERSION: &str = "1.0";
pub const EXTENSION: &str = "motion";

const FRAME_VALUES: usize = NUM_JOINTS * 3 + 3;
const KNOWN_KEYS: [&str; 8] = [
    "fps",
    "frames",
    "subjects",
    "text",
    "source_tag",
    "height_adjusted",
    "frame_mask",
    "subject_mask",
];

/// A sample plus any header keys this version does not interpret.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFile {
    pub sample: MotionSample,
    pub extra: BTreeMap<String, String>,
}

impl From<MotionSample> for MotionFile {
    fn from(sample: MotionSample) -> Self {
        Self {
            sample,
            extra: BTreeMap::new(),
        }
    }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(text: &str) -> Option<String> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next()? {
            '\\' => out.push('\\'),
            'n' => out.push('\n'),
            'r' => out.push('\r'),
            _ => return None,
        }
    }
    Some(out)
}

fn valid_key(key: &str) -> bool {
    !key.is_empty() && key.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

fn mask_text(mask: &[bool]) -> String {
    mask.iter().map(|&v| if v { "1" } else { "0" }).collect::<Vec<_>>().join(" ")
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v}");
    }
    s
}

/// Mean shape of a subject over its valid frames.
fn subject_betas(m: &GroupMotion, n: usize) -> [f64; BETA_DIM] {
    let mut acc = [0.0; BETA_DIM];
    let mut count = 0usize;
    for f in (0..m.frames()).filter(|&f| m.is_valid(f, n)) {
        for (a, b) in acc.iter_mut().zip(m.pose(f, n).beta) {
            *a += b;
        }
        count += 1;
    }
    if count > 0 {
        acc.iter_mut().for_each(|a| *a /= count as f64);
    }
    acc
}

impl MotionFile {
    pub fn to_text(&self) -> Result<String> {
        let s = &self.sample;
        let m = &s.motion;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {VERSION}");
        let _ = writeln!(out, "fps: {}", m.fps);
        let _ = writeln!(out, "frames: {}", m.frames());
        let _ = writeln!(out, "subjects: {}", m.subjects());
        let _ = writeln!(out, "text: {}", escape(&s.text));
        let _ = writeln!(out, "source_tag: {}", s.source_tag);
        let _ = writeln!(out, "height_adjusted: {}", s.height_adjusted);
        let _ = writeln!(out, "frame_mask: {}", mask_text(&m.frame_mask));
        let _ = writeln!(out, "subject_mask: {}", mask_text(&m.subject_mask));
        for (k, v) in &self.extra {
            if !valid_key(k) || KNOWN_KEYS.contains(&k.as_str()) || v.contains('\n') {
                return Err(CliError::Runtime(format!("cannot store header key {k:?}")));
            }
            let _ = writeln!(out, "{k}: {v}");
        }
        for n in 0..m.subjects() {
            let _ = writeln!(out, "subject {n}");
            let _ = writeln!(out, "betas: {}", join(subject_betas(m, n)));
            for f in 0..m.frames() {
                let mut values = Vec::with_capacity(FRAME_VALUES);
                if m.is_valid(f, n) {
                    let p = m.pose(f, n);
                    for r in &p.theta {
                        values.extend(r.to_axis_angle()?);
                    }
                    values.extend(p.trans);
                } else {
                    values.resize(FRAME_VALUES, 0.0);
                }
                let _ = writeln!(out, "frame {f}: {}", join(values));
            }
        }
        out.push_str("end\n");
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text).parse()
    }
}

struct Parser<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)).collect(),
            pos: 0,
        }
    }

    /// Next line with its 1-based number.
    fn next(&mut self, expecting: &str) -> Result<(usize, &'a str), ParseError> {
        let line = self
            .lines
            .get(self.pos)
            .copied()
            .ok_or_else(|| ParseError::new(self.pos + 1, expecting, "unexpected end of file"))?;
        self.pos += 1;
        Ok((self.pos, line))
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    fn numbers(line: usize, field: &str, text: &str, count: usize) -> Result<Vec<f64>, ParseError> {
        let values = text
            .split_ascii_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ParseError::new(line, field, format!("not a finite number: {t:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != count {
            return Err(ParseError::new(line, field, format!("expected {count} values, found {}", values.len())));
        }
        Ok(values)
    }

    fn mask(line: usize, field: &str, text: &str, count: usize) -> Result<Vec<bool>, ParseError> {
        let mask = text
            .split_ascii_whitespace()
            .map(|t| match t {
                "1" => Ok(true),
                "0" => Ok(false),
                _ => Err(ParseError::new(line, field, format!("mask entries are 0 or 1, found {t:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if mask.len() != count {
            return Err(ParseError::new(line, field, format!("expected {count} entries, found {}", mask.len())));
        }
        Ok(mask)
    }

    fn parse(mut self) -> Result<MotionFile> {
        let (_, first) = self.next("version")?;
        let version = first
            .strip_prefix(MAGIC)
            .and_then(|v| v.strip_prefix(' '))
            .ok_or_else(|| ParseError::new(1, "version", format!("expected \"{MAGIC} <version>\"")))?;
        let major = version
            .split('.')
            .next()
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| ParseError::new(1, "version", format!("malformed version {version:?}")))?;
        if major != VERSION_MAJOR {
            return Err(CliError::Version {
                found: version.to_string(),
                supported: VERSION_MAJOR,
            });
        }

        let mut header: BTreeMap<String, (usize, String)> = BTreeMap::new();
        while let Some(line) = self.peek() {
            if line.starts_with("subject ") || line == "end" {
                break;
            }
            let (no, line) = self.next("header")?;
            let (key, value) = line
                .split_once(": ")
                .or_else(|| line.strip_suffix(':').map(|k| (k, "")))
                .ok_or_else(|| ParseError::new(no, "header", "expected \"key: value\""))?;
            if !valid_key(key) {
                return Err(ParseError::new(no, key, "invalid key").into());
            }
            if header.insert(key.to_string(), (no, value.to_string())).is_some() {
                return Err(ParseError::new(no, key, "duplicate key").into());
            }
        }
        let header_end = self.pos + 1;
        let mut take = |key: &str| header.remove(key);
        let required = |entry: Option<(usize, String)>, key: &str| {
            entry.ok_or_else(|| ParseError::new(header_end, key, "missing header key"))
        };
        let count = |key: &str, entry: (usize, String)| {
            entry
                .1
                .trim()
                .parse::<usize>()
                .map_err(|_| ParseError::new(entry.0, key, format!("not a count: {:?}", entry.1)))
        };

        let fps_entry = required(take("fps"), "fps")?;
        let fps = fps_entry
            .1
            .trim()
            .parse::<u32>()
            .map_err(|_| ParseError::new(fps_entry.0, "fps", "not a frame rate"))?;
        let frames = count("frames", required(take("frames"), "frames")?)?;
        let subjects = count("subjects", required(take("subjects"), "subjects")?)?;
        if frames == 0 || subjects == 0 {
            return Err(ParseError::new(header_end, "frames", "motions need at least one frame and one subject").into());
        }
        let tag_entry = required(take("source_tag"), "source_tag")?;
        let source_tag = SourceTag::parse(tag_entry.1.trim())
            .ok_or_else(|| ParseError::new(tag_entry.0, "source_tag", format!("unknown source {:?}", tag_entry.1)))?;
        let text = match take("text") {
            Some((no, v)) => unescape(&v).ok_or_else(|| ParseError::new(no, "text", "bad escape sequence"))?,
            None => String::new(),
        };
        let height_adjusted = match take("height_adjusted") {
            Some((no, v)) => match v.trim() {
                "true" => true,
                "false" => false,
                _ => return Err(ParseError::new(no, "height_adjusted", "expected true or false").into()),
            },
            None => false,
        };
        let frame_mask = match take("frame_mask") {
            Some((no, v)) => Self::mask(no, "frame_mask", &v, frames)?,
            None => vec![true; frames],
        };
        let subject_mask = match take("subject_mask") {
            Some((no, v)) => Self::mask(no, "subject_mask", &v, subjects)?,
            None => vec![true; subjects],
        };
        let extra: BTreeMap<String, String> = header.into_iter().map(|(k, (_, v))| (k, v)).collect();

        let mut motion = GroupMotion::zeros(frames, subjects, fps);
        motion.frame_mask = frame_mask;
        motion.subject_mask = subject_mask;
        for n in 0..subjects {
            let (no, line) = self.next("subject")?;
            if line != format!("subject {n}") {
                return Err(ParseError::new(no, "subject", format!("expected \"subject {n}\", found {line:?}")).into());
            }
            let (no, line) = self.next("betas")?;
            let values = line
                .strip_prefix("betas:")
                .ok_or_else(|| ParseError::new(no, "betas", "expected \"betas: ...\""))?;
            let mut beta = [0.0; BETA_DIM];
            beta.copy_from_slice(&Self::numbers(no, "betas", values, BETA_DIM)?);
            for f in 0..frames {
                let field = format!("frame {f}");
                let (no, line) = self.next(&field)?;
                let values = line
                    .strip_prefix(&field)
                    .and_then(|r| r.strip_prefix(':'))
                    .ok_or_else(|| ParseError::new(no, &field, format!("expected \"{field}: ...\", found {line:?}")))?;
                let values = Self::numbers(no, &field, values, FRAME_VALUES)?;
                if !motion.is_valid(f, n) {
                    continue;
                }
                let mut pose = PoseVector {
                    beta,
                    ..PoseVector::default()
                };
                for (j, r) in pose.theta.iter_mut().enumerate() {
                    *r = Rotation6D::from_axis_angle([values[3 * j], values[3 * j + 1], values[3 * j + 2]]);
                }
                pose.trans.copy_from_slice(&values[NUM_JOINTS * 3..]);
                motion.set_pose(f, n, &pose);
            }
        }
        let (no, line) = self.next("end")?;
        if line != "end" {
            return Err(ParseError::new(no, "end", format!("expected \"end\" after {subjects} subjects, found {line:?}")).into());
        }
        if let Some(i) = self.lines[self.pos..].iter().position(|l| !l.trim().is_empty()) {
            return Err(ParseError::new(self.pos + i + 1, "end", "content after end marker").into());
        }
        motion.zero_invalid();
        let mut sample = MotionSample::new(motion, text, source_tag);
        sample.height_adjusted = height_adjusted;
        Ok(MotionFile { sample, extra })
    }
}

pub fn read_motion_file(path: &Path) -> Result<MotionFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::from(e).in_file(path))?;
    MotionFile::parse(&text).map_err(|e| e.in_file(path))
}

pub fn write_motion_file(file: &MotionFile, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, file.to_text()?).map_err(|e| CliError::from(e).in_file(path))
}
