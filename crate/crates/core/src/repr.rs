//! Group-motion data model.
//!
//! A single person at a single frame is a [`PoseVector`] of 158 scalars:
//! 11 shape coefficients, 24 joint rotations in the 6D representation and a
//! global translation. A [`GroupMotion`] holds `F x N` of them with frame and
//! subject validity masks. Axes: `y` is vertical up, `x` and `z` span the
//! ground plane.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::geom::{axis_angle_to_matrix, matrix_to_axis_angle, rot_y, Mat3, Vec3};

pub const BETA_DIM: usize = 11;
pub const NUM_JOINTS: usize = 24;
pub const ROT6D_DIM: usize = 6;
pub const THETA_DIM: usize = NUM_JOINTS * ROT6D_DIM;
pub const TRANS_DIM: usize = 3;
pub const POSE_DIM: usize = BETA_DIM + THETA_DIM + TRANS_DIM;

pub const BETA_RANGE: Range<usize> = 0..BETA_DIM;
pub const THETA_RANGE: Range<usize> = BETA_DIM..BETA_DIM + THETA_DIM;
pub const TRANS_RANGE: Range<usize> = BETA_DIM + THETA_DIM..POSE_DIM;

pub const MAX_FRAMES: usize = 61;
pub const MAX_SUBJECTS: usize = 10;

const DEGENERATE_EPS: f64 = 1e-8;

/// First two columns of a rotation matrix, column-major:
/// `r[0..3]` is column 1 and `r[3..6]` is column 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation6D(pub [f64; 6]);

impl Rotation6D {
    pub const IDENTITY: Self = Self([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn from_axis_angle(aa: [f64; 3]) -> Self {
        Self::from_matrix(&axis_angle_to_matrix(aa))
    }

    pub fn from_matrix(m: &Mat3) -> Self {
        Self([m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]])
    }

    /// Gram-Schmidt completion to a proper rotation.
    pub fn to_matrix(&self) -> Result<Mat3> {
        let a1 = Vec3::new(self.0[0], self.0[1], self.0[2]);
        let a2 = Vec3::new(self.0[3], self.0[4], self.0[5]);
        let n1 = a1.norm();
        if !(n1 >= DEGENERATE_EPS) {
            return Err(Error::DegenerateRotation("first column has near-zero norm"));
        }
        let b1 = a1 / n1;
        let u2 = a2 - b1 * b1.dot(&a2);
        let n2 = u2.norm();
        if !(n2 >= DEGENERATE_EPS) {
            return Err(Error::DegenerateRotation("columns are parallel"));
        }
        let b2 = u2 / n2;
        let b3 = b1.cross(&b2);
        Ok(Mat3::from_columns(&[b1, b2, b3]))
    }

    pub fn to_axis_angle(&self) -> Result<[f64; 3]> {
        Ok(matrix_to_axis_angle(&self.to_matrix()?))
    }

    /// Left-multiplies both stored columns by `m`.
    pub fn left_mul(&self, m: &Mat3) -> Self {
        let c1 = m * Vec3::new(self.0[0], self.0[1], self.0[2]);
        let c2 = m * Vec3::new(self.0[3], self.0[4], self.0[5]);
        Self([c1.x, c1.y, c1.z, c2.x, c2.y, c2.z])
    }
}

impl Default for Rotation6D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

pub fn axis_angle_to_rot6d(aa: [f64; 3]) -> Rotation6D {
    Rotation6D::from_axis_angle(aa)
}

pub fn rot6d_to_matrix(r: &Rotation6D) -> Result<Mat3> {
    r.to_matrix()
}

/// One person at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVector {
    pub beta: [f64; BETA_DIM],
    pub theta: [Rotation6D; NUM_JOINTS],
    pub trans: [f64; TRANS_DIM],
}

impl Default for PoseVector {
    /// Mean shape, rest pose, at the origin.
    fn default() -> Self {
        Self {
            beta: [0.0; BETA_DIM],
            theta: [Rotation6D::IDENTITY; NUM_JOINTS],
            trans: [0.0; TRANS_DIM],
        }
    }
}

impl PoseVector {
    pub fn pack(&self) -> [f64; POSE_DIM] {
        pack_pose(&self.beta, &self.theta, &self.trans)
    }

    pub fn unpack(v: &[f64]) -> Result<Self> {
        let (beta, theta, trans) = unpack_pose(v)?;
        Ok(Self { beta, theta, trans })
    }

    pub fn with_trans(mut self, trans: [f64; 3]) -> Self {
        self.trans = trans;
        self
    }
}

/// Concatenates `beta`, `theta` and `trans` in that order.
pub fn pack_pose(
    beta: &[f64; BETA_DIM],
    theta: &[Rotation6D; NUM_JOINTS],
    trans: &[f64; TRANS_DIM],
) -> [f64; POSE_DIM] {
    let mut v = [0.0; POSE_DIM];
    v[BETA_RANGE].copy_from_slice(beta);
    for (j, r) in theta.iter().enumerate() {
        let o = BETA_DIM + j * ROT6D_DIM;
        v[o..o + ROT6D_DIM].copy_from_slice(&r.0);
    }
    v[TRANS_RANGE].copy_from_slice(trans);
    v
}

#[allow(clippy::type_complexity)]
pub fn unpack_pose(
    v: &[f64],
) -> Result<([f64; BETA_DIM], [Rotation6D; NUM_JOINTS], [f64; TRANS_DIM])> {
    if v.len() != POSE_DIM {
        return Err(Error::LengthMismatch {
            expected: POSE_DIM,
            got: v.len(),
        });
    }
    let mut beta = [0.0; BETA_DIM];
    beta.copy_from_slice(&v[BETA_RANGE]);
    let mut theta = [Rotation6D::IDENTITY; NUM_JOINTS];
    for (j, r) in theta.iter_mut().enumerate() {
        let o = BETA_DIM + j * ROT6D_DIM;
        r.0.copy_from_slice(&v[o..o + ROT6D_DIM]);
    }
    let mut trans = [0.0; TRANS_DIM];
    trans.copy_from_slice(&v[TRANS_RANGE]);
    Ok((beta, theta, trans))
}

/// Frames x subjects of packed pose vectors, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMotion {
    frames: usize,
    subjects: usize,
    data: Vec<f64>,
    pub frame_mask: Vec<bool>,
    pub subject_mask: Vec<bool>,
    pub fps: u32,
}

impl GroupMotion {
    /// All-valid motion filled with zeros.
    pub fn zeros(frames: usize, subjects: usize, fps: u32) -> Self {
        Self {
            frames,
            subjects,
            data: vec![0.0; frames * subjects * POSE_DIM],
            frame_mask: vec![true; frames],
            subject_mask: vec![true; subjects],
            fps,
        }
    }

    /// All-valid motion from frame-major packed data.
    pub fn from_data(frames: usize, subjects: usize, fps: u32, data: Vec<f64>) -> Result<Self> {
        let expected = frames * subjects * POSE_DIM;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            frames,
            subjects,
            data,
            frame_mask: vec![true; frames],
            subject_mask: vec![true; subjects],
            fps,
        })
    }

    /// All-valid motion from per-frame, per-subject poses.
    pub fn from_poses(poses: &[Vec<PoseVector>], fps: u32) -> Result<Self> {
        let frames = poses.len();
        let subjects = poses.first().map_or(0, Vec::len);
        let mut m = Self::zeros(frames, subjects, fps);
        for (f, row) in poses.iter().enumerate() {
            if row.len() != subjects {
                return Err(Error::LengthMismatch {
                    expected: subjects,
                    got: row.len(),
                });
            }
            for (n, p) in row.iter().enumerate() {
                m.set_pose(f, n, p);
            }
        }
        Ok(m)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn subjects(&self) -> usize {
        self.subjects
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Index of the center frame, `floor(F / 2)`.
    pub fn center_frame(&self) -> usize {
        self.frames / 2
    }

    pub fn is_valid(&self, frame: usize, subject: usize) -> bool {
        self.frame_mask[frame] && self.subject_mask[subject]
    }

    pub fn valid_subject_count(&self) -> usize {
        self.subject_mask.iter().filter(|&&v| v).count()
    }

    pub fn valid_frame_count(&self) -> usize {
        self.frame_mask.iter().filter(|&&v| v).count()
    }

    fn offset(&self, frame: usize, subject: usize) -> usize {
        assert!(frame < self.frames && subject < self.subjects, "slot out of range");
        (frame * self.subjects + subject) * POSE_DIM
    }

    pub fn slot(&self, frame: usize, subject: usize) -> &[f64] {
        let o = self.offset(frame, subject);
        &self.data[o..o + POSE_DIM]
    }

    pub fn slot_mut(&mut self, frame: usize, subject: usize) -> &mut [f64] {
        let o = self.offset(frame, subject);
        &mut self.data[o..o + POSE_DIM]
    }

    pub fn pose(&self, frame: usize, subject: usize) -> PoseVector {
        PoseVector::unpack(self.slot(frame, subject)).expect("slot has pose length")
    }

    pub fn set_pose(&mut self, frame: usize, subject: usize, pose: &PoseVector) {
        self.slot_mut(frame, subject).copy_from_slice(&pose.pack());
    }

    pub fn trans(&self, frame: usize, subject: usize) -> [f64; 3] {
        let s = &self.slot(frame, subject)[TRANS_RANGE];
        [s[0], s[1], s[2]]
    }

    /// Zeroes every position outside the validity masks.
    pub fn zero_invalid(&mut self) {
        for f in 0..self.frames {
            for n in 0..self.subjects {
                if !self.is_valid(f, n) {
                    self.slot_mut(f, n).fill(0.0);
                }
            }
        }
    }

    /// A single-frame group pose taken from frame `frame`.
    pub fn frame(&self, frame: usize) -> Self {
        let o = self.offset(frame, 0);
        Self {
            frames: 1,
            subjects: self.subjects,
            data: self.data[o..o + self.subjects * POSE_DIM].to_vec(),
            frame_mask: vec![self.frame_mask[frame]],
            subject_mask: self.subject_mask.clone(),
            fps: self.fps,
        }
    }

    /// The single-person track of one subject.
    pub fn subject_track(&self, subject: usize) -> Self {
        let mut data = Vec::with_capacity(self.frames * POSE_DIM);
        for f in 0..self.frames {
            data.extend_from_slice(self.slot(f, subject));
        }
        Self {
            frames: self.frames,
            subjects: 1,
            data,
            frame_mask: self.frame_mask.clone(),
            subject_mask: vec![self.subject_mask[subject]],
            fps: self.fps,
        }
    }

    /// Frames `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.frames, "window out of range");
        let row = self.subjects * POSE_DIM;
        Self {
            frames: len,
            subjects: self.subjects,
            data: self.data[start * row..(start + len) * row].to_vec(),
            frame_mask: self.frame_mask[start..start + len].to_vec(),
            subject_mask: self.subject_mask.clone(),
            fps: self.fps,
        }
    }

    /// Stacks single-subject motions of equal length side by side.
    pub fn stack_subjects(tracks: &[GroupMotion]) -> Result<Self> {
        let frames = tracks.first().map_or(0, |t| t.frames);
        let fps = tracks.first().map_or(20, |t| t.fps);
        let mut out = Self::zeros(frames, tracks.iter().map(|t| t.subjects).sum(), fps);
        let mut n0 = 0;
        for t in tracks {
            if t.frames != frames {
                return Err(Error::LengthMismatch {
                    expected: frames,
                    got: t.frames,
                });
            }
            for n in 0..t.subjects {
                for f in 0..frames {
                    out.slot_mut(f, n0 + n).copy_from_slice(t.slot(f, n));
                }
                out.subject_mask[n0 + n] = t.subject_mask[n];
            }
            n0 += t.subjects;
        }
        Ok(out)
    }

    /// Replicates a single-frame pose over `frames` frames.
    pub fn repeat_frame(&self, frame: usize, frames: usize) -> Self {
        let one = self.frame(frame);
        let mut data = Vec::with_capacity(frames * one.data.len());
        for _ in 0..frames {
            data.extend_from_slice(&one.data);
        }
        Self {
            frames,
            subjects: self.subjects,
            data,
            frame_mask: vec![true; frames],
            subject_mask: self.subject_mask.clone(),
            fps: self.fps,
        }
    }
}

/// Shifts the group horizontally so the valid subjects' mean `(x, z)` at the
/// center frame is the origin.
pub fn canonicalize_group(m: &GroupMotion) -> Result<GroupMotion> {
    let c = m.center_frame();
    if m.frames == 0 || !m.frame_mask[c] {
        return Err(Error::EmptyCenterFrame(c));
    }
    let (mut sx, mut sz, mut count) = (0.0, 0.0, 0usize);
    for n in 0..m.subjects {
        if m.subject_mask[n] {
            let t = m.trans(c, n);
            sx += t[0];
            sz += t[2];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyCenterFrame(c));
    }
    let (mx, mz) = (sx / count as f64, sz / count as f64);
    let mut out = m.clone();
    for f in 0..m.frames {
        for n in 0..m.subjects {
            if m.is_valid(f, n) {
                let s = out.slot_mut(f, n);
                s[TRANS_RANGE.start] -= mx;
                s[TRANS_RANGE.start + 2] -= mz;
            }
        }
    }
    Ok(out)
}

/// Rotates the whole group about the vertical axis through the origin.
///
/// Translations rotate and every root orientation is left-composed with the
/// same rotation; other joints are local and stay put.
pub fn rotate_group(m: &GroupMotion, angle: f64) -> GroupMotion {
    let r = rot_y(angle);
    let mut out = m.clone();
    for f in 0..m.frames {
        for n in 0..m.subjects {
            let s = out.slot_mut(f, n);
            let o = THETA_RANGE.start;
            let mut root = Rotation6D([0.0; 6]);
            root.0.copy_from_slice(&s[o..o + ROT6D_DIM]);
            s[o..o + ROT6D_DIM].copy_from_slice(&root.left_mul(&r).0);
            let t = r * Vec3::new(s[TRANS_RANGE.start], s[TRANS_RANGE.start + 1], s[TRANS_RANGE.start + 2]);
            s[TRANS_RANGE].copy_from_slice(&[t.x, t.y, t.z]);
        }
    }
    out
}

/// Dataset a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceTag {
    /// Multi-person poses from images.
    Lp,
    /// Multi-person motions from videos.
    Wvm,
    /// Single-person motions.
    Hml,
    /// Synthetic compositions of single-person motions, unconditional.
    HmlC,
    /// Two-person interactions.
    Ih,
    Synth,
}

impl SourceTag {
    pub const ALL: [SourceTag; 6] = [Self::Lp, Self::Wvm, Self::Hml, Self::HmlC, Self::Ih, Self::Synth];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lp => "LP",
            Self::Wvm => "WVM",
            Self::Hml => "HML",
            Self::HmlC => "HML_C",
            Self::Ih => "IH",
            Self::Synth => "SYNTH",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl core::fmt::Display for SourceTag {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSample {
    pub motion: GroupMotion,
    /// Empty text means unconditional.
    pub text: String,
    pub source_tag: SourceTag,
    pub height_adjusted: bool,
}

impl MotionSample {
    /// Builds a sample; compositions (`HML_C`) are forced to empty text.
    pub fn new(motion: GroupMotion, text: impl Into<String>, source_tag: SourceTag) -> Self {
        let mut text = text.into();
        if source_tag == SourceTag::HmlC {
            text.clear();
        }
        Self {
            motion,
            text,
            source_tag,
            height_adjusted: true,
        }
    }
}

/// A zero-padded batch with per-sample validity masks.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub batch: usize,
    pub max_frames: usize,
    pub max_subjects: usize,
    /// `batch x max_frames x max_subjects x 158`.
    pub data: Vec<f64>,
    /// `batch x max_frames`.
    pub frame_mask: Vec<bool>,
    /// `batch x max_subjects`.
    pub subject_mask: Vec<bool>,
}

impl PaddedBatch {
    pub fn offset(&self, b: usize, f: usize, n: usize) -> usize {
        ((b * self.max_frames + f) * self.max_subjects + n) * POSE_DIM
    }

    pub fn is_valid(&self, b: usize, f: usize, n: usize) -> bool {
        self.frame_mask[b * self.max_frames + f] && self.subject_mask[b * self.max_subjects + n]
    }

    /// Recovers sample `b` cropped to its valid extent.
    pub fn unpad(&self, b: usize, frames: usize, subjects: usize, fps: u32) -> GroupMotion {
        let mut m = GroupMotion::zeros(frames, subjects, fps);
        for f in 0..frames {
            m.frame_mask[f] = self.frame_mask[b * self.max_frames + f];
            for n in 0..subjects {
                let o = self.offset(b, f, n);
                m.slot_mut(f, n).copy_from_slice(&self.data[o..o + POSE_DIM]);
            }
        }
        for n in 0..subjects {
            m.subject_mask[n] = self.subject_mask[b * self.max_subjects + n];
        }
        m
    }
}

/// Pads every motion to `max_frames x max_subjects`.
pub fn pad_and_mask(samples: &[GroupMotion], max_frames: usize, max_subjects: usize) -> Result<PaddedBatch> {
    let mut out = PaddedBatch {
        batch: samples.len(),
        max_frames,
        max_subjects,
        data: vec![0.0; samples.len() * max_frames * max_subjects * POSE_DIM],
        frame_mask: vec![false; samples.len() * max_frames],
        subject_mask: vec![false; samples.len() * max_subjects],
    };
    for (b, m) in samples.iter().enumerate() {
        if m.frames > max_frames || m.subjects > max_subjects {
            return Err(Error::OversizeSample {
                frames: m.frames,
                subjects: m.subjects,
                max_frames,
                max_subjects,
            });
        }
        out.frame_mask[b * max_frames..b * max_frames + m.frames].copy_from_slice(&m.frame_mask);
        out.subject_mask[b * max_subjects..b * max_subjects + m.subjects].copy_from_slice(&m.subject_mask);
        for f in 0..m.frames {
            for n in 0..m.subjects {
                if m.is_valid(f, n) {
                    let o = out.offset(b, f, n);
                    out.data[o..o + POSE_DIM].copy_from_slice(m.slot(f, n));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Rodrigues written out component-wise, independent of `geom`.
    fn rodrigues(aa: [f64; 3]) -> [[f64; 3]; 3] {
        let th = (aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]).sqrt();
        if th == 0.0 {
            return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        }
        let (x, y, z) = (aa[0] / th, aa[1] / th, aa[2] / th);
        let (s, c) = th.sin_cos();
        let t = 1.0 - c;
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    }

    fn random_aa(rng: &mut ChaCha8Rng) -> [f64; 3] {
        [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> PoseVector {
        let mut p = PoseVector::default();
        for b in p.beta.iter_mut() {
            *b = rng.random_range(-2.0..2.0);
        }
        for r in p.theta.iter_mut() {
            *r = axis_angle_to_rot6d(random_aa(rng));
        }
        p.trans = [rng.random_range(-3.0..3.0), rng.random_range(0.0..1.5), rng.random_range(-3.0..3.0)];
        p
    }

    fn random_motion(rng: &mut ChaCha8Rng, frames: usize, subjects: usize) -> GroupMotion {
        let poses: Vec<Vec<PoseVector>> =
            (0..frames).map(|_| (0..subjects).map(|_| random_pose(rng)).collect()).collect();
        GroupMotion::from_poses(&poses, 20).unwrap()
    }

    #[test]
    fn identity_axis_angle() {
        assert_eq!(axis_angle_to_rot6d([0.0; 3]).0, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = axis_angle_to_rot6d([0.0, 0.0, PI / 2.0]);
        let expected = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for k in 0..6 {
            assert!((r.0[k] - expected[k]).abs() < 1e-12, "{:?}", r.0);
        }
    }

    #[test]
    fn rot6d_matches_rodrigues() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let aa = random_aa(&mut rng);
            let m = rot6d_to_matrix(&axis_angle_to_rot6d(aa)).unwrap();
            let o = rodrigues(aa);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((m[(i, j)] - o[i][j]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn gram_schmidt_scale_invariance() {
        let m = rot6d_to_matrix(&Rotation6D([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap();
        assert!((m - Mat3::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn degenerate_rotations_are_rejected() {
        assert!(matches!(
            rot6d_to_matrix(&Rotation6D([0.0; 6])),
            Err(Error::DegenerateRotation(_))
        ));
        assert!(matches!(
            rot6d_to_matrix(&Rotation6D([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])),
            Err(Error::DegenerateRotation(_))
        ));
    }

    proptest! {
        #[test]
        fn gram_schmidt_projects_to_so3(r in prop::array::uniform6(-5.0f64..5.0)) {
            let rot = Rotation6D(r);
            if let Ok(m) = rot.to_matrix() {
                let e = (m.transpose() * m - Mat3::identity()).abs().max();
                prop_assert!(e < 1e-6);
                prop_assert!((m.determinant() - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn pack_unpack_is_exact(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_pose(&mut rng);
            let v = p.pack();
            prop_assert_eq!(PoseVector::unpack(&v).unwrap(), p);
            prop_assert_eq!(&v[0..11], &p.beta[..]);
            prop_assert_eq!(&v[155..158], &p.trans[..]);
            prop_assert_eq!(&v[11..17], &p.theta[0].0[..]);
        }
    }

    #[test]
    fn pack_zero_fields() {
        let z = pack_pose(&[0.0; 11], &[Rotation6D([0.0; 6]); 24], &[0.0; 3]);
        assert!(z.iter().all(|&x| x == 0.0));
        assert_eq!(z.len(), 158);
    }

    #[test]
    fn unpack_rejects_wrong_length() {
        assert_eq!(
            PoseVector::unpack(&[0.0; 157]),
            Err(Error::LengthMismatch { expected: 158, got: 157 })
        );
    }

    #[test]
    fn canonicalize_single_subject() {
        let mut m = GroupMotion::zeros(5, 1, 20);
        for f in 0..5 {
            m.set_pose(f, 0, &PoseVector::default().with_trans([3.0, 0.0, 4.0]));
        }
        let c = canonicalize_group(&m).unwrap();
        for f in 0..5 {
            assert_eq!(c.trans(f, 0), [0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn canonicalize_two_subjects() {
        let mut m = GroupMotion::zeros(3, 2, 20);
        for f in 0..3 {
            let d = f as f64;
            m.set_pose(f, 0, &PoseVector::default().with_trans([1.0 + d, 0.7, 1.0]));
            m.set_pose(f, 1, &PoseVector::default().with_trans([3.0 + d, 0.9, 3.0]));
        }
        // center frame 1: mean (x, z) = ((2 + 4) / 2, (1 + 3) / 2) = (3, 2)
        let c = canonicalize_group(&m).unwrap();
        for f in 0..3 {
            let d = f as f64;
            assert_eq!(c.trans(f, 0), [1.0 + d - 3.0, 0.7, -1.0]);
            assert_eq!(c.trans(f, 1), [3.0 + d - 3.0, 0.9, 1.0]);
        }
        // the static example: (1,1) and (3,3) shift by (-2,-2)
        let mut s = GroupMotion::zeros(1, 2, 20);
        s.set_pose(0, 0, &PoseVector::default().with_trans([1.0, 0.0, 1.0]));
        s.set_pose(0, 1, &PoseVector::default().with_trans([3.0, 0.0, 3.0]));
        let c = canonicalize_group(&s).unwrap();
        assert_eq!(c.trans(0, 0), [-1.0, 0.0, -1.0]);
        assert_eq!(c.trans(0, 1), [1.0, 0.0, 1.0]);
    }

    #[test]
    fn canonicalize_requires_center_subject() {
        let mut m = GroupMotion::zeros(3, 2, 20);
        m.subject_mask = vec![false, false];
        assert_eq!(canonicalize_group(&m), Err(Error::EmptyCenterFrame(1)));
        let mut m = GroupMotion::zeros(3, 2, 20);
        m.frame_mask[1] = false;
        assert_eq!(canonicalize_group(&m), Err(Error::EmptyCenterFrame(1)));
    }

    #[test]
    fn canonicalize_is_idempotent_and_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = random_motion(&mut rng, 7, 3);
            let once = canonicalize_group(&m).unwrap();
            let twice = canonicalize_group(&once).unwrap();
            for (a, b) in once.data().iter().zip(twice.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            let c = once.center_frame();
            let mx: f64 = (0..3).map(|n| once.trans(c, n)[0]).sum();
            assert!(mx.abs() < 1e-12);
            for f in 0..7 {
                for n in 0..3 {
                    assert_eq!(once.trans(f, n)[1], m.trans(f, n)[1]);
                }
            }
        }
    }

    #[test]
    fn rotate_quarter_turn() {
        let mut m = GroupMotion::zeros(1, 1, 20);
        m.set_pose(0, 0, &PoseVector::default().with_trans([1.0, 0.0, 0.0]));
        let r = rotate_group(&m, PI / 2.0);
        let t = r.trans(0, 0);
        assert!((t[0]).abs() < 1e-12 && (t[1]).abs() < 1e-12 && (t[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotate_zero_and_full_turn() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_motion(&mut rng, 4, 2);
        assert_eq!(rotate_group(&m, 0.0), m);
        let full = rotate_group(&m, 2.0 * PI);
        for (a, b) in full.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rotate_inverse_and_root_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let m = random_motion(&mut rng, 3, 2);
            let a = rng.random_range(-6.0..6.0);
            let r = rotate_group(&m, a);
            let back = rotate_group(&r, -a);
            for (x, y) in back.data().iter().zip(m.data()) {
                assert!((x - y).abs() < 1e-6);
            }
            // non-root joints untouched
            let o = THETA_RANGE.start + ROT6D_DIM;
            assert_eq!(&r.slot(0, 0)[o..THETA_RANGE.end], &m.slot(0, 0)[o..THETA_RANGE.end]);
            // root composed on the left
            let r0 = r.pose(1, 1).theta[0].to_matrix().unwrap();
            let m0 = m.pose(1, 1).theta[0].to_matrix().unwrap();
            assert!((r0 - rot_y(a) * m0).abs().max() < 1e-9);
        }
    }

    #[test]
    fn pad_full_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_motion(&mut rng, 61, 10);
        let b = pad_and_mask(core::slice::from_ref(&m), 61, 10).unwrap();
        assert!(b.frame_mask.iter().all(|&v| v) && b.subject_mask.iter().all(|&v| v));
        assert_eq!(b.data, m.data());
    }

    #[test]
    fn pad_static_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_motion(&mut rng, 1, 3);
        let b = pad_and_mask(&[m], 61, 10).unwrap();
        assert_eq!(b.frame_mask.iter().filter(|&&v| v).count(), 1);
        assert!(b.frame_mask[0]);
        assert_eq!(b.subject_mask, [true, true, true, false, false, false, false, false, false, false]);
    }

    #[test]
    fn pad_mixed_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_motion(&mut rng, 30, 2);
        let c = random_motion(&mut rng, 61, 5);
        let b = pad_and_mask(&[a.clone(), c.clone()], 61, 10).unwrap();
        for f in 0..61 {
            assert_eq!(b.frame_mask[f], f < 30);
            assert!(b.frame_mask[61 + f]);
        }
        for n in 0..10 {
            assert_eq!(b.subject_mask[n], n < 2);
            assert_eq!(b.subject_mask[10 + n], n < 5);
        }
        for f in 0..61 {
            for n in 0..10 {
                let o = b.offset(0, f, n);
                if f < 30 && n < 2 {
                    assert_eq!(&b.data[o..o + POSE_DIM], a.slot(f, n));
                } else {
                    assert!(b.data[o..o + POSE_DIM].iter().all(|&x| x == 0.0));
                }
            }
        }
        assert_eq!(b.unpad(1, 61, 5, 20), c);
    }

    #[test]
    fn pad_rejects_oversize() {
        let m = GroupMotion::zeros(62, 1, 20);
        assert!(matches!(pad_and_mask(&[m], 61, 10), Err(Error::OversizeSample { .. })));
        let m = GroupMotion::zeros(1, 11, 20);
        assert!(matches!(pad_and_mask(&[m], 61, 10), Err(Error::OversizeSample { .. })));
    }

    #[test]
    fn composed_samples_have_empty_text() {
        let s = MotionSample::new(GroupMotion::zeros(1, 2, 20), "ignored", SourceTag::HmlC);
        assert!(s.text.is_empty());
        assert_eq!(SourceTag::parse("HML_C"), Some(SourceTag::HmlC));
    }
}
