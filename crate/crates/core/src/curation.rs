//! Geometric refinement of estimated group poses and synthetic group
//! composition.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::kinematics::{
    forward_kinematics, frame_containment_fraction, penetration_from_joints, projected_bbox, CameraModel,
    CapsuleBody, Joints, Skeleton,
};
use crate::repr::{canonicalize_group, GroupMotion, PoseVector, NUM_JOINTS, TRANS_RANGE};

#[derive(Debug, Clone, PartialEq)]
pub struct CurationConfig {
    pub iou_threshold: f64,
    pub containment_threshold: f64,
    pub separation_steps: usize,
    /// Gradient-descent step size on translations, meters per unit gradient.
    pub separation_lr: f64,
    pub min_group_frames: usize,
    /// Radius of the disc starting translations are drawn from.
    pub compose_radius: f64,
    pub compose_retries: usize,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.25,
            containment_threshold: 0.85,
            separation_steps: 25,
            separation_lr: 0.05,
            min_group_frames: 30,
            compose_radius: 3.0,
            compose_retries: 20,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.iou_threshold) || !unit(self.containment_threshold) {
            return Err(Error::Config("thresholds must lie in (0, 1]"));
        }
        if self.separation_steps == 0 {
            return Err(Error::Config("separation needs at least one step"));
        }
        Ok(())
    }
}

/// Greedy scan in input order: an item is dropped when its overlap with any
/// kept item exceeds `threshold`. Returns kept indices.
pub fn greedy_dedup(count: usize, threshold: f64, mut overlap: impl FnMut(usize, usize) -> f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::with_capacity(count);
    for i in 0..count {
        if kept.iter().all(|&k| overlap(k, i) <= threshold) {
            kept.push(i);
        }
    }
    kept
}

/// Drops later poses whose projected box overlaps an earlier kept one by
/// more than `cfg.iou_threshold`.
pub fn dedup_group(
    poses: &[PoseVector],
    skel: &Skeleton,
    cam: &CameraModel,
    cfg: &CurationConfig,
) -> Result<Vec<PoseVector>> {
    let boxes = poses
        .iter()
        .map(|p| projected_bbox(p, skel, cam))
        .collect::<Result<Vec<_>>>()?;
    let kept = greedy_dedup(poses.len(), cfg.iou_threshold, |a, b| boxes[a].iou(&boxes[b]));
    Ok(kept.into_iter().map(|i| poses[i]).collect())
}

/// Keeps poses with at least `cfg.containment_threshold` of their joints in frame.
pub fn filter_contained(
    poses: &[PoseVector],
    skel: &Skeleton,
    cam: &CameraModel,
    cfg: &CurationConfig,
) -> Result<Vec<PoseVector>> {
    let mut out = Vec::new();
    for p in poses {
        if frame_containment_fraction(p, skel, cam)? >= cfg.containment_threshold {
            out.push(*p);
        }
    }
    Ok(out)
}

/// Moves each pose vertically so its lowest joint sits at `ground_y`.
pub fn height_adjust(poses: &[PoseVector], skel: &Skeleton, ground_y: f64) -> Result<Vec<PoseVector>> {
    poses
        .iter()
        .map(|p| {
            let joints = forward_kinematics(p, skel)?;
            let lowest = joints.iter().map(|j| j.y).fold(f64::INFINITY, f64::min);
            let mut out = *p;
            out.trans[1] += ground_y - lowest;
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub poses: Vec<PoseVector>,
    /// Total penetration at each evaluated step, before that step's update.
    pub loss_history: Vec<f64>,
}

fn shifted(local: &Joints, t: &Vec3) -> Joints {
    let mut j = *local;
    j.iter_mut().for_each(|p| *p += t);
    j
}

/// Total pairwise penetration of a group and its gradient with respect to
/// every translation.
pub fn group_penetration(
    local: &[Joints],
    trans: &[Vec3],
    skel: &Skeleton,
    body: &CapsuleBody,
) -> (f64, Vec<Vec3>) {
    let posed: Vec<Joints> = local.iter().zip(trans).map(|(l, t)| shifted(l, t)).collect();
    let mut total = 0.0;
    let mut grad = vec![Vec3::zeros(); posed.len()];
    for i in 0..posed.len() {
        for k in i + 1..posed.len() {
            let (v, g) = penetration_from_joints(&posed[i], &posed[k], skel, body);
            total += v;
            grad[k] += g;
            grad[i] -= g;
        }
    }
    (total, grad)
}

/// Removes overlap by plain gradient descent on the pairwise penetration,
/// moving translations only, for exactly `cfg.separation_steps` steps.
pub fn separate_meshes(
    poses: &[PoseVector],
    skel: &Skeleton,
    body: &CapsuleBody,
    cfg: &CurationConfig,
) -> Result<Separation> {
    let local = poses
        .iter()
        .map(|p| forward_kinematics(&p.with_trans([0.0; 3]), skel))
        .collect::<Result<Vec<_>>>()?;
    let mut trans: Vec<Vec3> = poses.iter().map(|p| Vec3::from(p.trans)).collect();
    let mut loss_history = Vec::with_capacity(cfg.separation_steps);
    for _ in 0..cfg.separation_steps {
        let (loss, grad) = group_penetration(&local, &trans, skel, body);
        loss_history.push(loss);
        for (t, g) in trans.iter_mut().zip(&grad) {
            *t -= g * cfg.separation_lr;
        }
    }
    let poses = poses
        .iter()
        .zip(&trans)
        .map(|(p, t)| p.with_trans([t.x, t.y, t.z]))
        .collect();
    Ok(Separation { poses, loss_history })
}

/// Outcome of placing single-person motions into a shared scene.
#[derive(Debug, Clone, PartialEq)]
pub enum Composition {
    Accepted(GroupMotion),
    /// Subjects `pair` collide at `frame`.
    Rejected { frame: usize, pair: (usize, usize) },
}

impl Composition {
    pub fn accepted(self) -> Option<GroupMotion> {
        match self {
            Self::Accepted(m) => Some(m),
            Self::Rejected { .. } => None,
        }
    }
}

/// Places single-person motions at the given horizontal offsets and checks
/// every frame for collisions.
///
/// Each motion is truncated to the shortest length and centered on its own
/// center frame before the offset is applied.
pub fn place_group(
    singles: &[&GroupMotion],
    offsets: &[[f64; 2]],
    skel: &Skeleton,
    body: &CapsuleBody,
) -> Result<Composition> {
    assert_eq!(singles.len(), offsets.len(), "one offset per motion");
    let frames = singles.iter().map(|m| m.frames()).min().unwrap_or(0);
    let mut tracks = Vec::with_capacity(singles.len());
    for (m, off) in singles.iter().zip(offsets) {
        let mut t = canonicalize_group(&m.subject_track(0).window(0, frames))?;
        for f in 0..frames {
            let s = t.slot_mut(f, 0);
            s[TRANS_RANGE.start] += off[0];
            s[TRANS_RANGE.start + 2] += off[1];
        }
        tracks.push(t);
    }
    let group = GroupMotion::stack_subjects(&tracks)?;
    let n = group.subjects();
    for f in 0..frames {
        if !group.frame_mask[f] {
            continue;
        }
        let joints = (0..n)
            .map(|s| forward_kinematics(&group.pose(f, s), skel))
            .collect::<Result<Vec<[Vec3; NUM_JOINTS]>>>()?;
        for i in 0..n {
            for k in i + 1..n {
                if penetration_from_joints(&joints[i], &joints[k], skel, body).0 > 0.0 {
                    return Ok(Composition::Rejected { frame: f, pair: (i, k) });
                }
            }
        }
    }
    Ok(Composition::Accepted(group))
}

/// Uniform point in a disc of radius `r`.
pub fn sample_disc<R: Rng + ?Sized>(rng: &mut R, r: f64) -> [f64; 2] {
    let rad = r * libm::sqrt(rng.random::<f64>());
    let ang = rng.random::<f64>() * core::f64::consts::TAU;
    [rad * libm::cos(ang), rad * libm::sin(ang)]
}

/// One composition attempt: picks `n` distinct single-person motions and
/// random starting translations in the configured disc.
pub fn compose_synthetic_group<R: Rng + ?Sized>(
    singles: &[GroupMotion],
    n: usize,
    rng: &mut R,
    skel: &Skeleton,
    body: &CapsuleBody,
    cfg: &CurationConfig,
) -> Result<Composition> {
    if !(2..=6).contains(&n) {
        return Err(Error::InvalidN(n));
    }
    if singles.len() < n {
        return Err(Error::NotEnoughSingles {
            needed: n,
            available: singles.len(),
        });
    }
    let picks = rand::seq::index::sample(rng, singles.len(), n);
    let chosen: Vec<&GroupMotion> = picks.iter().map(|i| &singles[i]).collect();
    let offsets: Vec<[f64; 2]> = (0..n).map(|_| sample_disc(rng, cfg.compose_radius)).collect();
    place_group(&chosen, &offsets, skel, body)
}

/// Retries [`compose_synthetic_group`] up to `cfg.compose_retries` extra times.
pub fn compose_with_retries<R: Rng + ?Sized>(
    singles: &[GroupMotion],
    n: usize,
    rng: &mut R,
    skel: &Skeleton,
    body: &CapsuleBody,
    cfg: &CurationConfig,
) -> Result<Option<GroupMotion>> {
    for _ in 0..=cfg.compose_retries {
        if let Composition::Accepted(m) = compose_synthetic_group(singles, n, rng, skel, body, cfg)? {
            return Ok(Some(m));
        }
    }
    Ok(None)
}

/// Half-open frame interval `[start, end)` during which a subject is tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Presence {
    pub subject: u32,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupClip {
    pub start: usize,
    pub end: usize,
    /// Subjects present at some frame of the clip, ascending.
    pub subjects: Vec<u32>,
}

/// Maximal runs of frames where at least two subjects are present at once,
/// kept when they last at least `min_frames`.
pub fn group_motion_clips(tracks: &[Presence], min_frames: usize) -> Vec<GroupClip> {
    let horizon = tracks.iter().map(|t| t.end).max().unwrap_or(0);
    let mut delta = vec![0i64; horizon + 1];
    for t in tracks.iter().filter(|t| t.end > t.start) {
        delta[t.start] += 1;
        delta[t.end] -= 1;
    }
    let mut clips = Vec::new();
    let mut count = 0i64;
    let mut run_start = None;
    for (f, d) in delta.iter().enumerate() {
        count += d;
        match (count >= 2, run_start) {
            (true, None) => run_start = Some(f),
            (false, Some(s)) => {
                if f - s >= min_frames {
                    clips.push(clip_for(tracks, s, f));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    clips
}

fn clip_for(tracks: &[Presence], start: usize, end: usize) -> GroupClip {
    let mut subjects: Vec<u32> = tracks
        .iter()
        .filter(|t| t.start < end && t.end > start && t.end > t.start)
        .map(|t| t.subject)
        .collect();
    subjects.sort_unstable();
    subjects.dedup();
    GroupClip { start, end, subjects }
}
