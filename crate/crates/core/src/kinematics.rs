//! Simplified 24-joint skeleton, capsule body proxy, camera projection and
//! temporal smoothing.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::geom::{segment_distance, Mat3, Vec3};
use crate::repr::{GroupMotion, PoseVector, BETA_DIM, NUM_JOINTS, POSE_DIM};

pub const NUM_BONES: usize = NUM_JOINTS - 1;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2", "left_ankle",
    "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar", "right_collar", "head",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
];

const DEFAULT_PARENTS: [i32; NUM_JOINTS] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

// rest pose is a T-pose facing +z; roughly 1.7 m tall including the head capsule
const DEFAULT_OFFSETS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.09, -0.09, 0.0],
    [-0.09, -0.09, 0.0],
    [0.0, 0.11, -0.02],
    [0.0, -0.38, 0.0],
    [0.0, -0.38, 0.0],
    [0.0, 0.13, 0.0],
    [0.0, -0.40, -0.02],
    [0.0, -0.40, -0.02],
    [0.0, 0.06, 0.02],
    [0.0, -0.06, 0.12],
    [0.0, -0.06, 0.12],
    [0.0, 0.21, -0.02],
    [0.07, 0.12, -0.01],
    [-0.07, 0.12, -0.01],
    [0.0, 0.10, 0.04],
    [0.11, 0.02, 0.0],
    [-0.11, 0.02, 0.0],
    [0.26, 0.0, 0.0],
    [-0.26, 0.0, 0.0],
    [0.25, 0.0, 0.0],
    [-0.25, 0.0, 0.0],
    [0.08, 0.0, 0.0],
    [-0.08, 0.0, 0.0],
];

const TORSO_RADIUS: f64 = 0.12;
const LIMB_RADIUS: f64 = 0.06;

/// Kinematic tree with rest-pose bone offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    parents: [Option<usize>; NUM_JOINTS],
    offsets: [Vec3; NUM_JOINTS],
    /// Linear map from shape coefficients to a uniform scale: `1 + beta_scale . beta`.
    pub beta_scale: [f64; BETA_DIM],
}

impl Default for Skeleton {
    fn default() -> Self {
        let mut parents = [None; NUM_JOINTS];
        for (p, &d) in parents.iter_mut().zip(DEFAULT_PARENTS.iter()) {
            *p = usize::try_from(d).ok();
        }
        let mut beta_scale = [0.0; BETA_DIM];
        beta_scale[0] = 0.05;
        Self {
            parents,
            offsets: DEFAULT_OFFSETS.map(Vec3::from),
            beta_scale,
        }
    }
}

impl Skeleton {
    pub fn new(
        parents: [Option<usize>; NUM_JOINTS],
        offsets: [[f64; 3]; NUM_JOINTS],
        beta_scale: [f64; BETA_DIM],
    ) -> Result<Self> {
        if parents[0].is_some() {
            return Err(Error::InvalidSkeleton("joint 0 must be the root"));
        }
        if offsets[0] != [0.0; 3] {
            return Err(Error::InvalidSkeleton("root offset must be zero"));
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => return Err(Error::InvalidSkeleton("parents must precede children")),
            }
        }
        Ok(Self {
            parents,
            offsets: offsets.map(Vec3::from),
            beta_scale,
        })
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn offset(&self, joint: usize) -> Vec3 {
        self.offsets[joint]
    }

    pub fn scale(&self, beta: &[f64; BETA_DIM]) -> f64 {
        1.0 + self.beta_scale.iter().zip(beta).map(|(c, b)| c * b).sum::<f64>()
    }

    /// Parses the plain-text skeleton table.
    ///
    /// One row per joint: `index parent x y z radius` (parent `-1` for the
    /// root, whose radius column is ignored). An optional
    /// `beta_scale c0 .. c10` row overrides the shape scaling. `#` starts a
    /// comment.
    pub fn parse_table(text: &str) -> Result<(Skeleton, CapsuleBody)> {
        let mut parents = [None; NUM_JOINTS];
        let mut offsets = [[0.0; 3]; NUM_JOINTS];
        let mut radii = [0.0; NUM_BONES];
        let mut seen = [false; NUM_JOINTS];
        let mut beta_scale = Skeleton::default().beta_scale;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split_whitespace();
            let head = cols.next().unwrap_or("");
            if head == "beta_scale" {
                let vals: Vec<f64> = cols.map(|c| c.parse().map_err(|_| Error::InvalidSkeleton("bad beta_scale value"))).collect::<Result<_>>()?;
                if vals.len() != BETA_DIM {
                    return Err(Error::InvalidSkeleton("beta_scale needs 11 values"));
                }
                beta_scale.copy_from_slice(&vals);
                continue;
            }
            let j: usize = head.parse().map_err(|_| Error::InvalidSkeleton("bad joint index"))?;
            if j >= NUM_JOINTS || seen[j] {
                return Err(Error::InvalidSkeleton("joint index out of range or repeated"));
            }
            let rest: Vec<f64> = cols
                .map(|c| c.parse::<f64>().map_err(|_| Error::InvalidSkeleton("bad number")))
                .collect::<Result<_>>()?;
            if rest.len() != 5 {
                return Err(Error::InvalidSkeleton("row needs parent, x, y, z, radius"));
            }
            parents[j] = if rest[0] < 0.0 { None } else { Some(rest[0] as usize) };
            offsets[j] = [rest[1], rest[2], rest[3]];
            if j > 0 {
                radii[j - 1] = rest[4];
            }
            seen[j] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidSkeleton("table must list all 24 joints"));
        }
        Ok((Skeleton::new(parents, offsets, beta_scale)?, CapsuleBody::new(radii)?))
    }

    pub fn to_table(&self, body: &CapsuleBody) -> String {
        let mut s = String::from("# index parent x y z radius\n");
        for j in 0..NUM_JOINTS {
            let parent = self.parents[j].map_or(-1, |p| p as i64);
            let r = if j == 0 { 0.0 } else { body.radii[j - 1] };
            let o = self.offsets[j];
            let _ = writeln!(s, "{j} {parent} {} {} {} {r}", o.x, o.y, o.z);
        }
        let coeffs: Vec<String> = self.beta_scale.iter().map(|c| format!("{c}")).collect();
        let _ = writeln!(s, "beta_scale {}", coeffs.join(" "));
        s
    }
}

/// One capsule per bone; bone `j - 1` connects joint `j` to its parent.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsuleBody {
    pub radii: [f64; NUM_BONES],
}

impl Default for CapsuleBody {
    fn default() -> Self {
        let mut radii = [LIMB_RADIUS; NUM_BONES];
        for j in [3, 6, 9, 12] {
            radii[j - 1] = TORSO_RADIUS;
        }
        Self { radii }
    }
}

impl CapsuleBody {
    pub fn new(radii: [f64; NUM_BONES]) -> Result<Self> {
        if radii.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::InvalidSkeleton("capsule radii must be positive"));
        }
        Ok(Self { radii })
    }

    pub fn max_radius(&self) -> f64 {
        self.radii.iter().copied().fold(0.0, f64::max)
    }
}

pub type Joints = [Vec3; NUM_JOINTS];

/// World-space joint positions.
pub fn forward_kinematics(pose: &PoseVector, skel: &Skeleton) -> Result<Joints> {
    let scale = skel.scale(&pose.beta);
    let mut global = [Mat3::identity(); NUM_JOINTS];
    let mut pos = [Vec3::zeros(); NUM_JOINTS];
    global[0] = pose.theta[0].to_matrix()?;
    pos[0] = Vec3::from(pose.trans);
    for j in 1..NUM_JOINTS {
        let p = skel.parents[j].expect("non-root joint has a parent");
        let local = pose.theta[j].to_matrix()?;
        pos[j] = pos[p] + global[p] * (skel.offsets[j] * scale);
        global[j] = global[p] * local;
    }
    Ok(pos)
}

fn joints_aabb(j: &Joints, pad: f64) -> (Vec3, Vec3) {
    let mut lo = j[0];
    let mut hi = j[0];
    for p in j.iter().skip(1) {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let pad = Vec3::repeat(pad);
    (lo - pad, hi + pad)
}

/// Penetration between two posed bodies and its gradient with respect to a
/// rigid translation of the second body.
///
/// The gradient with respect to the first body's translation is the
/// negation. Where two bone axes intersect the distance is not
/// differentiable; the subgradient used there pushes the second body along
/// `+x`.
pub fn penetration_from_joints(a: &Joints, b: &Joints, skel: &Skeleton, body: &CapsuleBody) -> (f64, Vec3) {
    let reach = 2.0 * body.max_radius();
    let (alo, ahi) = joints_aabb(a, reach);
    let (blo, bhi) = joints_aabb(b, 0.0);
    if (0..3).any(|k| alo[k] > bhi[k] || blo[k] > ahi[k]) {
        return (0.0, Vec3::zeros());
    }
    let mut total = 0.0;
    let mut grad = Vec3::zeros();
    for i in 1..NUM_JOINTS {
        let (a0, a1) = (a[skel.parents[i].unwrap()], a[i]);
        let ri = body.radii[i - 1];
        for k in 1..NUM_JOINTS {
            let (b0, b1) = (b[skel.parents[k].unwrap()], b[k]);
            let rk = body.radii[k - 1];
            let (d, cp, cq) = segment_distance(&a0, &a1, &b0, &b1);
            let depth = ri + rk - d;
            if depth > 0.0 {
                total += depth;
                if d > 1e-12 {
                    grad -= (cq - cp) / d;
                } else {
                    grad -= Vec3::x();
                }
            }
        }
    }
    (total, grad)
}

/// Sum over capsule pairs (one per body) of `max(0, r_i + r_j - dist)`.
pub fn capsule_penetration(a: &PoseVector, b: &PoseVector, skel: &Skeleton, body: &CapsuleBody) -> Result<f64> {
    let ja = forward_kinematics(a, skel)?;
    let jb = forward_kinematics(b, skel)?;
    Ok(penetration_from_joints(&ja, &jb, skel, body).0)
}

/// [`capsule_penetration`] together with its gradients with respect to the
/// translations of `a` and `b`.
pub fn capsule_penetration_grad(
    a: &PoseVector,
    b: &PoseVector,
    skel: &Skeleton,
    body: &CapsuleBody,
) -> Result<(f64, [f64; 3], [f64; 3])> {
    let ja = forward_kinematics(a, skel)?;
    let jb = forward_kinematics(b, skel)?;
    let (v, g) = penetration_from_joints(&ja, &jb, skel, body);
    Ok((v, [-g.x, -g.y, -g.z], [g.x, g.y, g.z]))
}

/// Pinhole camera; camera frame has `x` right, `y` down, `z` forward.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub focal: f64,
    pub principal: [f64; 2],
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// World-to-camera translation.
    pub translation: Vec3,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraModel {
    /// 640x480 camera 6 m in front of the origin at 1 m height, looking down `-z`.
    fn default() -> Self {
        Self {
            focal: 500.0,
            principal: [320.0, 240.0],
            rotation: Mat3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0),
            translation: Vec3::new(0.0, 1.0, 6.0),
            width: 640,
            height: 480,
        }
    }
}

impl CameraModel {
    /// Pixel coordinates of every joint.
    pub fn project(&self, joints: &Joints) -> Result<[[f64; 2]; NUM_JOINTS]> {
        let mut out = [[0.0; 2]; NUM_JOINTS];
        for (j, p) in joints.iter().enumerate() {
            let c = self.rotation * p + self.translation;
            if !(c.z > 0.0) {
                return Err(Error::BehindCamera { joint: j, depth: c.z });
            }
            out[j] = [
                self.focal * c.x / c.z + self.principal[0],
                self.focal * c.y / c.z + self.principal[1],
            ];
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BBox {
    pub fn of(points: &[[f64; 2]]) -> Self {
        let mut b = BBox {
            min: [f64::INFINITY; 2],
            max: [f64::NEG_INFINITY; 2],
        };
        for p in points {
            for k in 0..2 {
                b.min[k] = b.min[k].min(p[k]);
                b.max[k] = b.max[k].max(p[k]);
            }
        }
        b
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]).max(0.0) * (self.max[1] - self.min[1]).max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        if self == other {
            return 1.0;
        }
        let w = (self.max[0].min(other.max[0]) - self.min[0].max(other.min[0])).max(0.0);
        let h = (self.max[1].min(other.max[1]) - self.min[1].max(other.min[1])).max(0.0);
        let inter = w * h;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            (inter / union).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

pub fn projected_bbox(p: &PoseVector, skel: &Skeleton, cam: &CameraModel) -> Result<BBox> {
    Ok(BBox::of(&cam.project(&forward_kinematics(p, skel)?)?))
}

/// IoU of the image-plane bounding boxes of the two projected joint sets.
pub fn projected_bbox_iou(a: &PoseVector, b: &PoseVector, skel: &Skeleton, cam: &CameraModel) -> Result<f64> {
    Ok(projected_bbox(a, skel, cam)?.iou(&projected_bbox(b, skel, cam)?))
}

/// Fraction of the 24 projected joints inside the image rectangle.
pub fn frame_containment_fraction(p: &PoseVector, skel: &Skeleton, cam: &CameraModel) -> Result<f64> {
    let uv = cam.project(&forward_kinematics(p, skel)?)?;
    let (w, h) = (cam.width as f64, cam.height as f64);
    let inside = uv
        .iter()
        .filter(|[u, v]| (0.0..=w).contains(u) && (0.0..=h).contains(v))
        .count();
    Ok(inside as f64 / NUM_JOINTS as f64)
}

/// Normalized Gaussian taps for offsets `-r..=r`, truncated at 4 sigma.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma + 0.5) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            libm::exp(-0.5 * x * x / (sigma * sigma))
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Half-sample symmetric reflection of `i` into `0..len`.
fn reflect(i: isize, len: usize) -> usize {
    let period = 2 * len as isize;
    let m = i.rem_euclid(period) as usize;
    if m >= len {
        2 * len - 1 - m
    } else {
        m
    }
}

/// Convolves every channel with a Gaussian along valid frames.
pub fn gaussian_smooth(m: &GroupMotion, sigma: f64) -> GroupMotion {
    let frames: Vec<usize> = (0..m.frames()).filter(|&f| m.frame_mask[f]).collect();
    if sigma <= 0.0 || frames.len() < 2 {
        return m.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let len = frames.len();
    let mut out = m.clone();
    let mut series = vec![0.0; len];
    for n in 0..m.subjects() {
        if !m.subject_mask[n] {
            continue;
        }
        for c in 0..POSE_DIM {
            for (i, &f) in frames.iter().enumerate() {
                series[i] = m.slot(f, n)[c];
            }
            for (i, &f) in frames.iter().enumerate() {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * series[reflect(i as isize + k as isize - radius, len)];
                }
                out.slot_mut(f, n)[c] = acc;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::{rotate_group, Rotation6D};
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, spread: f64) -> PoseVector {
        let mut p = PoseVector::default();
        for (j, r) in p.theta.iter_mut().enumerate() {
            let s = if j == 0 { 3.0 } else { 0.6 };
            *r = Rotation6D::from_axis_angle([
                rng.random_range(-s..s),
                rng.random_range(-s..s),
                rng.random_range(-s..s),
            ]);
        }
        p.beta[0] = rng.random_range(-1.0..1.0);
        let mut coord = || if spread > 0.0 { rng.random_range(-spread..spread) } else { 0.0 };
        p.trans = [coord(), 0.9, coord()];
        p
    }

    /// Accumulates rest offsets down the tree without matrices.
    fn rest_joints() -> [[f64; 3]; NUM_JOINTS] {
        let mut out = [[0.0; 3]; NUM_JOINTS];
        for j in 1..NUM_JOINTS {
            let p = DEFAULT_PARENTS[j] as usize;
            for k in 0..3 {
                out[j][k] = out[p][k] + DEFAULT_OFFSETS[j][k];
            }
        }
        out
    }

    #[test]
    fn rest_pose_accumulates_offsets() {
        let skel = Skeleton::default();
        let j = forward_kinematics(&PoseVector::default(), &skel).unwrap();
        let oracle = rest_joints();
        for i in 0..NUM_JOINTS {
            for k in 0..3 {
                assert!((j[i][k] - oracle[i][k]).abs() < 1e-12);
            }
        }
        let height = oracle[15][1] - oracle[10][1].min(oracle[7][1]);
        assert!(height > 1.4 && height < 1.7, "{height}");
    }

    #[test]
    fn translation_shifts_every_joint() {
        let skel = Skeleton::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = random_pose(&mut rng, 0.0).with_trans([0.0; 3]);
        let j0 = forward_kinematics(&p, &skel).unwrap();
        let j1 = forward_kinematics(&p.with_trans([1.0, 2.0, 3.0]), &skel).unwrap();
        for i in 0..NUM_JOINTS {
            assert!((j1[i] - j0[i] - Vec3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn half_turn_negates_horizontal_offsets() {
        let skel = Skeleton::default();
        let mut p = PoseVector::default().with_trans([0.5, 0.9, -0.2]);
        p.theta[0] = Rotation6D::from_axis_angle([0.0, PI, 0.0]);
        let j = forward_kinematics(&p, &skel).unwrap();
        let rest = rest_joints();
        for i in 0..NUM_JOINTS {
            let rel = j[i] - Vec3::from(p.trans);
            assert!((rel.x + rest[i][0]).abs() < 1e-12);
            assert!((rel.y - rest[i][1]).abs() < 1e-12);
            assert!((rel.z + rest[i][2]).abs() < 1e-12);
        }
    }

    #[test]
    fn fk_is_equivariant_under_vertical_rotation() {
        let skel = Skeleton::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let p = random_pose(&mut rng, 3.0);
            let a = rng.random_range(0.0..2.0 * PI);
            let mut m = GroupMotion::zeros(1, 1, 20);
            m.set_pose(0, 0, &p);
            let rotated = rotate_group(&m, a).pose(0, 0);
            let j0 = forward_kinematics(&p, &skel).unwrap();
            let j1 = forward_kinematics(&rotated, &skel).unwrap();
            let r = crate::geom::rot_y(a);
            for i in 0..NUM_JOINTS {
                assert!((j1[i] - r * j0[i]).norm() < 1e-5);
            }
        }
    }

    #[test]
    fn shape_scales_uniformly() {
        let skel = Skeleton::default();
        let mut p = PoseVector::default();
        p.beta[0] = 2.0;
        let j = forward_kinematics(&p, &skel).unwrap();
        let rest = rest_joints();
        assert!((j[15].y - 1.1 * rest[15][1]).abs() < 1e-12);
    }

    #[test]
    fn far_apart_bodies_do_not_penetrate() {
        let (skel, body) = (Skeleton::default(), CapsuleBody::default());
        let a = PoseVector::default();
        let b = PoseVector::default().with_trans([10.0, 0.0, 0.0]);
        assert_eq!(capsule_penetration(&a, &b, &skel, &body).unwrap(), 0.0);
    }

    /// Dense sampling of the segment distance, independent of the
    /// closed-form closest-point routine.
    fn sampled_distance(p0: Vec3, p1: Vec3, q0: Vec3, q1: Vec3) -> f64 {
        let n = 60;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            let a = p0 + (p1 - p0) * (i as f64 / n as f64);
            for k in 0..=n {
                let b = q0 + (q1 - q0) * (k as f64 / n as f64);
                best = best.min((a - b).norm());
            }
        }
        best
    }

    #[test]
    fn coincident_bodies_match_sampled_oracle() {
        let (skel, body) = (Skeleton::default(), CapsuleBody::default());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_pose(&mut rng, 0.0);
        let j = forward_kinematics(&p, &skel).unwrap();
        let mut oracle = 0.0;
        for i in 1..NUM_JOINTS {
            for k in 1..NUM_JOINTS {
                let d = sampled_distance(
                    j[skel.parent(i).unwrap()],
                    j[i],
                    j[skel.parent(k).unwrap()],
                    j[k],
                );
                oracle += (body.radii[i - 1] + body.radii[k - 1] - d).max(0.0);
            }
        }
        let v = capsule_penetration(&p, &p, &skel, &body).unwrap();
        // self-pairs alone contribute 2r each
        let self_pairs: f64 = body.radii.iter().map(|r| 2.0 * r).sum();
        assert!(v >= self_pairs - 1e-12);
        assert!((v - oracle).abs() < 0.02 * oracle, "{v} vs {oracle}");
    }

    #[test]
    fn penetration_is_symmetric() {
        let (skel, body) = (Skeleton::default(), CapsuleBody::default());
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..30 {
            let a = random_pose(&mut rng, 0.4);
            let b = random_pose(&mut rng, 0.4);
            let ab = capsule_penetration(&a, &b, &skel, &body).unwrap();
            let ba = capsule_penetration(&b, &a, &skel, &body).unwrap();
            assert!((ab - ba).abs() < 1e-9);
        }
    }

    #[test]
    fn penetration_gradient_matches_finite_differences() {
        let (skel, body) = (Skeleton::default(), CapsuleBody::default());
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let h = 1e-5;
        let mut checked = 0;
        while checked < 40 {
            let a = random_pose(&mut rng, 0.3);
            let b = random_pose(&mut rng, 0.3);
            let (v, ga, gb) = capsule_penetration_grad(&a, &b, &skel, &body).unwrap();
            if v == 0.0 {
                continue;
            }
            for k in 0..3 {
                let mut plus = b;
                plus.trans[k] += h;
                let mut minus = b;
                minus.trans[k] -= h;
                let fd = (capsule_penetration(&a, &plus, &skel, &body).unwrap()
                    - capsule_penetration(&a, &minus, &skel, &body).unwrap())
                    / (2.0 * h);
                let err = (fd - gb[k]).abs() / fd.abs().max(gb[k].abs()).max(1e-3);
                assert!(err < 1e-4, "component {k}: fd {fd} vs {}", gb[k]);
                assert_eq!(ga[k], -gb[k]);
            }
            checked += 1;
        }
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let (skel, cam) = (Skeleton::default(), CameraModel::default());
        let a = PoseVector::default().with_trans([0.0, 1.0, 0.0]);
        assert_eq!(projected_bbox_iou(&a, &a, &skel, &cam).unwrap(), 1.0);
        let b = a.with_trans([3.0, 1.0, 0.0]);
        assert_eq!(projected_bbox_iou(&a, &b, &skel, &cam).unwrap(), 0.0);
    }

    #[test]
    fn iou_half_overlap_is_one_third() {
        // boxes of equal size overlapping half their width: 0.5 / 1.5
        let a = BBox { min: [0.0, 0.0], max: [2.0, 4.0] };
        let b = BBox { min: [1.0, 0.0], max: [3.0, 4.0] };
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        // the same through projection: shifting along x at fixed depth moves the box rigidly
        let (skel, cam) = (Skeleton::default(), CameraModel::default());
        let p = PoseVector::default().with_trans([0.0, 1.0, 0.0]);
        let bb = projected_bbox(&p, &skel, &cam).unwrap();
        // the box edges are set by the hands, which share one depth
        let hand_depth = 6.0 - forward_kinematics(&p, &skel).unwrap()[22].z;
        let width_m = (bb.max[0] - bb.min[0]) * hand_depth / cam.focal;
        let q = p.with_trans([width_m / 2.0, 1.0, 0.0]);
        let iou = projected_bbox_iou(&p, &q, &skel, &cam).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-9, "{iou}");
    }

    #[test]
    fn iou_properties() {
        let (skel, cam) = (Skeleton::default(), CameraModel::default());
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..50 {
            let a = random_pose(&mut rng, 1.5);
            let b = random_pose(&mut rng, 1.5);
            let ab = projected_bbox_iou(&a, &b, &skel, &cam).unwrap();
            let ba = projected_bbox_iou(&b, &a, &skel, &cam).unwrap();
            assert!((0.0..=1.0).contains(&ab));
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn behind_camera_is_an_error() {
        let (skel, cam) = (Skeleton::default(), CameraModel::default());
        let p = PoseVector::default().with_trans([0.0, 1.0, 7.0]);
        assert!(matches!(projected_bbox_iou(&p, &p, &skel, &cam), Err(Error::BehindCamera { .. })));
        assert!(matches!(frame_containment_fraction(&p, &skel, &cam), Err(Error::BehindCamera { .. })));
    }

    #[test]
    fn containment_fraction() {
        let (skel, cam) = (Skeleton::default(), CameraModel::default());
        let centered = PoseVector::default().with_trans([0.0, 1.0, 0.0]);
        assert_eq!(frame_containment_fraction(&centered, &skel, &cam).unwrap(), 1.0);
        let gone = centered.with_trans([20.0, 1.0, 0.0]);
        assert_eq!(frame_containment_fraction(&gone, &skel, &cam).unwrap(), 0.0);

        // slide the image edge through the body until exactly 20 joints remain inside
        let joints = forward_kinematics(&centered, &skel).unwrap();
        let uv = cam.project(&joints).unwrap();
        let mut us: Vec<f64> = uv.iter().map(|p| p[0]).collect();
        us.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // distinct-enough gap between the 20th and 21st smallest u
        let cut = 0.5 * (us[19] + us[20]);
        assert!(us[20] - us[19] > 1e-6);
        let narrow = CameraModel { width: cut.ceil() as u32, ..cam.clone() };
        let shift = narrow.width as f64 - cut;
        let cam2 = CameraModel { principal: [cam.principal[0] + shift, cam.principal[1]], ..narrow };
        let count = cam2.project(&joints).unwrap().iter().filter(|p| p[0] <= cam2.width as f64).count();
        assert_eq!(count, 20);
        let f = frame_containment_fraction(&centered, &skel, &cam2).unwrap();
        assert!((f - 20.0 / 24.0).abs() < 1e-12);
    }

    fn channel_motion(values: &[f64]) -> GroupMotion {
        let mut m = GroupMotion::zeros(values.len(), 1, 20);
        for (f, v) in values.iter().enumerate() {
            m.slot_mut(f, 0)[0] = *v;
        }
        m
    }

    #[test]
    fn smoothing_constant_and_single_frame() {
        let m = channel_motion(&[2.5; 9]);
        let s = gaussian_smooth(&m, 1.0);
        for f in 0..9 {
            assert!((s.slot(f, 0)[0] - 2.5).abs() < 1e-6);
        }
        let one = channel_motion(&[4.0]);
        assert_eq!(gaussian_smooth(&one, 1.0), one);
    }

    #[test]
    fn smoothing_impulse_reproduces_kernel() {
        let mut v = [0.0; 21];
        v[10] = 1.0;
        let s = gaussian_smooth(&channel_motion(&v), 1.0);
        // direct evaluation of the sampled Gaussian, radius 4
        let raw: Vec<f64> = (-4..=4).map(|x: i32| (-0.5 * (x * x) as f64).exp()).collect();
        let z: f64 = raw.iter().sum();
        for (k, w) in raw.iter().enumerate() {
            assert!((s.slot(6 + k, 0)[0] - w / z).abs() < 1e-12);
        }
        assert_eq!(s.slot(5, 0)[0], 0.0);
    }

    #[test]
    fn smoothing_preserves_channel_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for len in [2, 3, 5, 17, 61] {
            let v: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            for sigma in [0.5, 1.0, 3.0] {
                let s = gaussian_smooth(&channel_motion(&v), sigma);
                let before: f64 = v.iter().sum::<f64>() / len as f64;
                let after: f64 = (0..len).map(|f| s.slot(f, 0)[0]).sum::<f64>() / len as f64;
                assert!((before - after).abs() < 1e-5, "len {len} sigma {sigma}");
            }
        }
    }

    #[test]
    fn smoothing_skips_padded_frames() {
        let mut m = channel_motion(&[1.0, 5.0, 1.0, 0.0]);
        m.frame_mask[3] = false;
        let s = gaussian_smooth(&m, 1.0);
        assert_eq!(s.slot(3, 0)[0], 0.0);
        assert_eq!(s.frame_mask, m.frame_mask);
    }

    #[test]
    fn skeleton_table_roundtrip() {
        let (skel, body) = (Skeleton::default(), CapsuleBody::default());
        let (s2, b2) = Skeleton::parse_table(&skel.to_table(&body)).unwrap();
        assert_eq!(s2, skel);
        assert_eq!(b2, body);
        assert!(Skeleton::parse_table("0 -1 0 0 0 0\n").is_err());
    }
}
