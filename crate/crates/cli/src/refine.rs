//! Curation operators lifted from single group poses to whole motions.
//!
//! Subject selection and mesh separation are decided on one representative
//! frame per subject (the center frame when valid) and applied to every
//! frame. Height adjustment moves each subject by the offset that puts its
//! lowest joint over all frames on the ground.

use mpgen_core::curation::{greedy_dedup, separate_meshes, CurationConfig};
use mpgen_core::kinematics::{
    capsule_penetration, forward_kinematics, frame_containment_fraction, gaussian_smooth, projected_bbox,
    CameraModel, CapsuleBody, Skeleton,
};
use mpgen_core::repr::{GroupMotion, MotionSample, PoseVector};

use crate::error::Result;
use crate::records::CurationRecord;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RefineOps {
    pub filter_contained: bool,
    pub dedup: bool,
    pub height_adjust: bool,
    pub separate: bool,
    /// Gaussian smoothing scale in frames.
    pub smooth: Option<f64>,
}

impl RefineOps {
    pub fn any(&self) -> bool {
        self.filter_contained || self.dedup || self.height_adjust || self.separate || self.smooth.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Geometry {
    pub skeleton: Skeleton,
    pub body: CapsuleBody,
    pub camera: CameraModel,
}

/// Valid frame nearest the center for each subject with any valid frame.
fn representative_frames(m: &GroupMotion) -> Vec<(usize, usize)> {
    let c = m.center_frame() as i64;
    (0..m.subjects())
        .filter_map(|n| {
            (0..m.frames())
                .filter(|&f| m.is_valid(f, n))
                .min_by_key(|&f| ((f as i64 - c).abs(), f))
                .map(|f| (n, f))
        })
        .collect()
}

fn keep_subjects(m: &GroupMotion, keep: &[usize]) -> Result<GroupMotion> {
    let tracks: Vec<GroupMotion> = keep.iter().map(|&n| m.subject_track(n)).collect();
    if tracks.is_empty() {
        let mut out = GroupMotion::zeros(m.frames(), 1, m.fps);
        out.frame_mask = m.frame_mask.clone();
        out.subject_mask = vec![false];
        return Ok(out);
    }
    let mut out = GroupMotion::stack_subjects(&tracks)?;
    out.frame_mask = m.frame_mask.clone();
    Ok(out)
}

fn total_penetration(poses: &[PoseVector], geo: &Geometry) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..poses.len() {
        for k in i + 1..poses.len() {
            total += capsule_penetration(&poses[i], &poses[k], &geo.skeleton, &geo.body)?;
        }
    }
    Ok(total)
}

fn shift_subject(m: &mut GroupMotion, n: usize, delta: [f64; 3]) {
    for f in 0..m.frames() {
        if !m.is_valid(f, n) {
            continue;
        }
        let mut p = m.pose(f, n);
        for (t, d) in p.trans.iter_mut().zip(delta) {
            *t += d;
        }
        m.set_pose(f, n, &p);
    }
}

/// Runs the enabled operators in order: containment filter, de-duplication,
/// height adjustment, mesh separation, smoothing.
pub fn refine_sample(
    sample: &MotionSample,
    ops: &RefineOps,
    cfg: &CurationConfig,
    ground_y: f64,
    geo: &Geometry,
    file: &str,
) -> Result<(MotionSample, Vec<CurationRecord>)> {
    cfg.validate()?;
    let mut m = sample.motion.clone();
    let mut records = Vec::new();
    let mut record = |op: &str, before: usize, after: usize, metric: Option<(f64, f64)>| {
        records.push(CurationRecord {
            file: file.to_string(),
            op: op.to_string(),
            subjects_before: before,
            subjects_after: after,
            before: metric.map(|v| v.0),
            after: metric.map(|v| v.1),
        });
    };

    if ops.filter_contained {
        let reps = representative_frames(&m);
        let mut keep = Vec::new();
        for &(n, f) in &reps {
            if frame_containment_fraction(&m.pose(f, n), &geo.skeleton, &geo.camera)? >= cfg.containment_threshold {
                keep.push(n);
            }
        }
        let before = reps.len();
        m = keep_subjects(&m, &keep)?;
        record("filter_contained", before, keep.len(), None);
    }
    if ops.dedup {
        let reps = representative_frames(&m);
        let boxes = reps
            .iter()
            .map(|&(n, f)| projected_bbox(&m.pose(f, n), &geo.skeleton, &geo.camera))
            .collect::<mpgen_core::Result<Vec<_>>>()?;
        let kept = greedy_dedup(reps.len(), cfg.iou_threshold, |a, b| boxes[a].iou(&boxes[b]));
        let keep: Vec<usize> = kept.iter().map(|&i| reps[i].0).collect();
        m = keep_subjects(&m, &keep)?;
        record("dedup", reps.len(), keep.len(), None);
    }
    if ops.height_adjust {
        let mut worst = 0.0f64;
        for n in 0..m.subjects() {
            let mut lowest = f64::INFINITY;
            for f in (0..m.frames()).filter(|&f| m.is_valid(f, n)) {
                let joints = forward_kinematics(&m.pose(f, n), &geo.skeleton)?;
                lowest = joints.iter().map(|j| j.y).fold(lowest, f64::min);
            }
            if lowest.is_finite() {
                worst = worst.max((lowest - ground_y).abs());
                shift_subject(&mut m, n, [0.0, ground_y - lowest, 0.0]);
            }
        }
        let n = m.valid_subject_count();
        record("height_adjust", n, n, Some((worst, 0.0)));
    }
    if ops.separate {
        let reps = representative_frames(&m);
        let poses: Vec<PoseVector> = reps.iter().map(|&(n, f)| m.pose(f, n)).collect();
        let before = total_penetration(&poses, geo)?;
        let sep = separate_meshes(&poses, &geo.skeleton, &geo.body, cfg)?;
        for (&(n, _), (old, new)) in reps.iter().zip(poses.iter().zip(&sep.poses)) {
            let delta = [0, 1, 2].map(|i| new.trans[i] - old.trans[i]);
            shift_subject(&mut m, n, delta);
        }
        let after = total_penetration(&sep.poses, geo)?;
        record("separate", reps.len(), reps.len(), Some((before, after)));
    }
    if let Some(sigma) = ops.smooth {
        m = gaussian_smooth(&m, sigma);
        let n = m.valid_subject_count();
        record("smooth", n, n, None);
    }
    m.zero_invalid();
    let mut out = MotionSample::new(m, sample.text.clone(), sample.source_tag);
    out.height_adjusted = sample.height_adjusted || ops.height_adjust;
    Ok((out, records))
}
