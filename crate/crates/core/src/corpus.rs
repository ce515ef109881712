//! Procedural toy corpus, source mixing and per-sample training preparation.
//!
//! Stand-in datasets are generated from eight parameterized actions whose
//! prompts are produced from templates, so the text/motion correspondence
//! is exact by construction.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::Rng;

use crate::curation::{compose_synthetic_group, place_group, Composition, CurationConfig};
use crate::error::{Error, Result};
use crate::geom::{axis_angle_to_matrix, rot_y, Mat3};
use crate::kinematics::{CapsuleBody, Skeleton};
use crate::repr::{canonicalize_group, rotate_group, GroupMotion, MotionSample, PoseVector, Rotation6D, SourceTag};
use crate::textcond::tokenize;

/// Pelvis height that puts the rest-pose soles on the ground.
pub const STANDING_HEIGHT: f64 = 0.93;
pub const TOY_FPS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ToyAction {
    Walk,
    Wave,
    Spin,
    Circle,
    Jump,
    Squat,
    Bow,
    RaiseHand,
}

impl ToyAction {
    pub const ALL: [ToyAction; 8] = [
        Self::Walk,
        Self::Wave,
        Self::Spin,
        Self::Circle,
        Self::Jump,
        Self::Squat,
        Self::Bow,
        Self::RaiseHand,
    ];

    fn phrases(self) -> (&'static str, &'static str) {
        match self {
            Self::Walk => ("walks forward", "walk forward"),
            Self::Wave => ("waves hello", "wave hello"),
            Self::Spin => ("spins around", "spin around"),
            Self::Circle => ("walks in a circle", "walk in circles"),
            Self::Jump => ("jumps up and down", "jump up and down"),
            Self::Squat => ("squats down", "squat down"),
            Self::Bow => ("bows forward", "bow forward"),
            Self::RaiseHand => ("raises the left hand", "raise their left hands"),
        }
    }
}

const COUNT_WORDS: [&str; 11] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];

/// Template prompt for `n` people performing `action`.
pub fn toy_prompt(action: ToyAction, n: usize) -> String {
    let (sing, plur) = action.phrases();
    if n == 1 {
        format!("one person {sing}")
    } else {
        format!("{} people {plur}", COUNT_WORDS[n.min(10)])
    }
}

/// Inverts [`toy_prompt`].
pub fn parse_toy_prompt(prompt: &str) -> Option<(ToyAction, usize)> {
    let tokens = tokenize(prompt);
    let n = COUNT_WORDS.iter().position(|w| Some(*w) == tokens.first().map(String::as_str))?;
    ToyAction::ALL
        .into_iter()
        .find(|&a| toy_prompt(a, n) == tokens.join(" "))
        .map(|a| (a, n))
}

/// Every `(action, count)` prompt with counts `1..=max_n`.
pub fn toy_prompts(max_n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for n in 1..=max_n {
        for a in ToyAction::ALL {
            out.push(toy_prompt(a, n));
        }
    }
    out
}

fn rx(a: f64) -> Mat3 {
    axis_angle_to_matrix([a, 0.0, 0.0])
}
fn ry(a: f64) -> Mat3 {
    axis_angle_to_matrix([0.0, a, 0.0])
}
fn rz(a: f64) -> Mat3 {
    axis_angle_to_matrix([0.0, 0.0, a])
}

// joint indices used by the primitives
const L_HIP: usize = 1;
const R_HIP: usize = 2;
const SPINE1: usize = 3;
const L_KNEE: usize = 4;
const R_KNEE: usize = 5;
const SPINE2: usize = 6;
const L_SHOULDER: usize = 16;
const R_SHOULDER: usize = 17;
const L_ELBOW: usize = 18;
const R_ELBOW: usize = 19;

/// Per-subject randomization of a primitive.
#[derive(Debug, Clone, Copy)]
struct Style {
    phase: f64,
    amp: f64,
    tempo: f64,
    heading: f64,
    shape: f64,
}

fn arms_down() -> (Mat3, Mat3) {
    (rz(-1.3), rz(1.3))
}

fn stride(pose: &mut [Mat3; 24], cycle: f64, amp: f64) {
    let s = libm::sin(cycle);
    pose[L_HIP] = rx(-0.5 * amp * s);
    pose[R_HIP] = rx(0.5 * amp * s);
    pose[L_KNEE] = rx(0.6 * amp * s.max(0.0));
    pose[R_KNEE] = rx(0.6 * amp * (-s).max(0.0));
}

/// Local joint rotations, root yaw offset and root translation (relative to
/// the start point, before heading) of `action` at time `tau` seconds.
fn primitive(action: ToyAction, tau: f64, st: &Style) -> ([Mat3; 24], f64, [f64; 3]) {
    let mut rot = [Mat3::identity(); 24];
    let w = TAU * st.tempo;
    let cyc = w * tau + st.phase;
    let a = st.amp;
    let mut yaw = 0.0;
    let mut pos = [0.0, STANDING_HEIGHT, 0.0];
    match action {
        ToyAction::Walk => {
            let (l, r) = arms_down();
            rot[L_SHOULDER] = rx(0.3 * a * libm::sin(cyc)) * l;
            rot[R_SHOULDER] = rx(-0.3 * a * libm::sin(cyc)) * r;
            stride(&mut rot, cyc, a);
            pos[2] = 1.0 * st.tempo * tau;
        }
        ToyAction::Wave => {
            rot[L_SHOULDER] = arms_down().0;
            rot[R_SHOULDER] = rz(-1.2);
            rot[R_ELBOW] = rz(-0.4 - 0.5 * a * libm::sin(1.5 * cyc));
        }
        ToyAction::Spin => {
            rot[L_SHOULDER] = rz(0.1);
            rot[R_SHOULDER] = rz(-0.1);
            yaw = 0.5 * w * tau;
        }
        ToyAction::Circle => {
            rot[L_SHOULDER] = ry(-1.4);
            rot[R_SHOULDER] = ry(1.4);
            stride(&mut rot, 2.0 * cyc, a);
            let radius = 0.8;
            let ang = 0.8 * st.tempo * tau;
            // start on the circle at the origin, moving along +z
            pos[0] = radius * (libm::cos(ang) - 1.0);
            pos[2] = radius * libm::sin(ang);
            yaw = -ang;
        }
        ToyAction::Jump => {
            rot[L_SHOULDER] = rz(1.4);
            rot[R_SHOULDER] = rz(-1.4);
            let h = libm::fabs(libm::sin(0.6 * cyc));
            pos[1] += 0.3 * a * h;
            let bend = 0.4 * (1.0 - h);
            rot[L_HIP] = rx(-bend);
            rot[R_HIP] = rx(-bend);
            rot[L_KNEE] = rx(2.0 * bend);
            rot[R_KNEE] = rx(2.0 * bend);
        }
        ToyAction::Squat => {
            let depth = 0.75 + 0.25 * a * libm::sin(cyc);
            rot[L_HIP] = rx(-1.4 * depth);
            rot[R_HIP] = rx(-1.4 * depth);
            rot[L_KNEE] = rx(2.0 * depth);
            rot[R_KNEE] = rx(2.0 * depth);
            rot[L_SHOULDER] = ry(-1.4);
            rot[R_SHOULDER] = ry(1.4);
            rot[L_ELBOW] = ry(-0.3);
            rot[R_ELBOW] = ry(0.3);
            pos[1] -= 0.38 * depth;
        }
        ToyAction::Bow => {
            let depth = 0.7 + 0.25 * a * libm::sin(cyc);
            rot[SPINE1] = rx(0.6 * depth);
            rot[SPINE2] = rx(0.4 * depth);
            let (l, r) = arms_down();
            rot[L_SHOULDER] = l;
            rot[R_SHOULDER] = r;
        }
        ToyAction::RaiseHand => {
            rot[L_SHOULDER] = rz(1.35);
            rot[L_ELBOW] = rz(0.2 * a * libm::sin(cyc));
            rot[R_SHOULDER] = arms_down().1;
            yaw = 0.15 * libm::sin(0.5 * cyc);
        }
    }
    (rot, yaw, pos)
}

fn random_style<R: Rng + ?Sized>(rng: &mut R, heading: f64) -> Style {
    Style {
        phase: rng.random::<f64>() * TAU,
        amp: rng.random_range(0.85..1.15),
        tempo: rng.random_range(0.8..1.2),
        heading,
        shape: rng.random_range(-0.5..0.5),
    }
}

/// Single-person motion of `action`, starting at the origin and facing `heading`.
fn single_motion<R: Rng + ?Sized>(action: ToyAction, frames: usize, heading: f64, rng: &mut R) -> GroupMotion {
    let st = random_style(rng, heading);
    let face = rot_y(st.heading);
    let mut m = GroupMotion::zeros(frames, 1, TOY_FPS);
    for f in 0..frames {
        let tau = f as f64 / TOY_FPS as f64;
        let (rot, yaw, pos) = primitive(action, tau, &st);
        let mut p = PoseVector::default();
        p.beta[0] = st.shape;
        for (j, r) in rot.iter().enumerate() {
            p.theta[j] = Rotation6D::from_matrix(r);
        }
        p.theta[0] = Rotation6D::from_matrix(&(face * ry(yaw)));
        let t = face * crate::geom::Vec3::from(pos);
        p.trans = [t.x, t.y, t.z];
        m.set_pose(f, 0, &p);
    }
    m
}

/// A collision-free group of `n` people all performing `action`, canonicalized.
///
/// Groups share one random heading. Placement draws starting translations
/// through the synthetic-composition routine; if every retry collides the
/// group falls back to a line layout wide enough to never touch.
pub fn toy_group_motion<R: Rng + ?Sized>(
    action: ToyAction,
    n: usize,
    frames: usize,
    rng: &mut R,
    skel: &Skeleton,
    body: &CapsuleBody,
    cfg: &CurationConfig,
) -> Result<GroupMotion> {
    let heading = rng.random::<f64>() * TAU;
    let singles: Vec<GroupMotion> = (0..n).map(|_| single_motion(action, frames, heading, rng)).collect();
    if n == 1 {
        return canonicalize_group(&singles[0]);
    }
    for _ in 0..=cfg.compose_retries {
        if let Composition::Accepted(m) = compose_synthetic_group(&singles, n, rng, skel, body, cfg)? {
            return canonicalize_group(&m);
        }
    }
    let side = rot_y(heading) * crate::geom::Vec3::x();
    let offsets: Vec<[f64; 2]> = (0..n).map(|i| [side.x * 3.5 * i as f64, side.z * 3.5 * i as f64]).collect();
    let refs: Vec<&GroupMotion> = singles.iter().collect();
    match place_group(&refs, &offsets, skel, body)? {
        Composition::Accepted(m) => canonicalize_group(&m),
        Composition::Rejected { .. } => Err(Error::Config("fallback layout collided")),
    }
}

/// Sample counts per source for [`make_toy_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub counts: Vec<(SourceTag, usize)>,
    pub frames: usize,
    /// Largest group size in pose and multi-person motion sources.
    pub max_group: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            counts: vec![
                (SourceTag::Lp, 200),
                (SourceTag::Wvm, 40),
                (SourceTag::Hml, 60),
                (SourceTag::HmlC, 40),
                (SourceTag::Ih, 60),
            ],
            frames: 61,
            max_group: 4,
        }
    }
}

pub type Datasets = BTreeMap<SourceTag, Vec<MotionSample>>;

/// Generates toy stand-ins for every source listed in `spec`.
pub fn make_toy_corpus<R: Rng + ?Sized>(spec: &ToySpec, rng: &mut R) -> Result<Datasets> {
    let (skel, body, cfg) = (Skeleton::default(), CapsuleBody::default(), CurationConfig::default());
    let mut out = Datasets::new();
    let pick_action = |rng: &mut R| ToyAction::ALL[rng.random_range(0..ToyAction::ALL.len())];
    let mut singles_pool: Vec<GroupMotion> = Vec::new();
    for &(tag, count) in &spec.counts {
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let sample = match tag {
                SourceTag::Lp => {
                    let (a, n) = (pick_action(rng), rng.random_range(1..=spec.max_group));
                    let m = toy_group_motion(a, n, spec.frames, rng, &skel, &body, &cfg)?;
                    let f = rng.random_range(0..m.frames());
                    MotionSample::new(canonicalize_group(&m.frame(f))?, toy_prompt(a, n), tag)
                }
                SourceTag::Wvm | SourceTag::Synth => {
                    let (a, n) = (pick_action(rng), rng.random_range(2..=spec.max_group.max(2)));
                    let m = toy_group_motion(a, n, spec.frames, rng, &skel, &body, &cfg)?;
                    MotionSample::new(m, toy_prompt(a, n), tag)
                }
                SourceTag::Ih => {
                    let a = pick_action(rng);
                    let m = toy_group_motion(a, 2, spec.frames, rng, &skel, &body, &cfg)?;
                    MotionSample::new(m, toy_prompt(a, 2), tag)
                }
                SourceTag::Hml => {
                    let a = pick_action(rng);
                    let m = toy_group_motion(a, 1, spec.frames, rng, &skel, &body, &cfg)?;
                    singles_pool.push(m.clone());
                    MotionSample::new(m, toy_prompt(a, 1), tag)
                }
                SourceTag::HmlC => {
                    while singles_pool.len() < 6 {
                        let a = pick_action(rng);
                        singles_pool.push(toy_group_motion(a, 1, spec.frames, rng, &skel, &body, &cfg)?);
                    }
                    let n = rng.random_range(2..=spec.max_group.clamp(2, 6));
                    let mut group = None;
                    while group.is_none() {
                        group = crate::curation::compose_with_retries(&singles_pool, n, rng, &skel, &body, &cfg)?;
                    }
                    let m = canonicalize_group(&group.expect("loop exits with a group"))?;
                    MotionSample::new(m, "", tag)
                }
            };
            samples.push(sample);
        }
        out.insert(tag, samples);
    }
    Ok(out)
}

/// Source proportions for mixed sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub ratios: Vec<(SourceTag, f64)>,
}

impl Default for MixSpec {
    fn default() -> Self {
        Self {
            ratios: vec![
                (SourceTag::Lp, 0.50),
                (SourceTag::Wvm, 0.10),
                (SourceTag::Hml, 0.15),
                (SourceTag::HmlC, 0.10),
                (SourceTag::Ih, 0.15),
            ],
        }
    }
}

impl MixSpec {
    pub fn single(tag: SourceTag) -> Self {
        Self {
            ratios: vec![(tag, 1.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.ratios.iter().map(|r| r.1).sum();
        if (total - 1.0).abs() > 1e-9 || self.ratios.iter().any(|r| r.1 < 0.0) {
            return Err(Error::Config("mix ratios must be non-negative and sum to 1"));
        }
        Ok(())
    }
}

/// Draws a source by ratio, then a uniform sample from it.
#[derive(Debug)]
pub struct MixedSampler<'a> {
    datasets: &'a Datasets,
    cumulative: Vec<(SourceTag, f64)>,
}

impl<'a> MixedSampler<'a> {
    pub fn new(datasets: &'a Datasets, mix: &MixSpec) -> Result<Self> {
        mix.validate()?;
        let mut acc = 0.0;
        let mut cumulative = Vec::new();
        for &(tag, r) in &mix.ratios {
            if r == 0.0 {
                continue;
            }
            if datasets.get(&tag).is_none_or(Vec::is_empty) {
                return Err(Error::EmptySource(tag.as_str()));
            }
            acc += r;
            cumulative.push((tag, acc));
        }
        Ok(Self { datasets, cumulative })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> &'a MotionSample {
        let u = rng.random::<f64>() * self.cumulative.last().map_or(1.0, |c| c.1);
        let tag = self
            .cumulative
            .iter()
            .find(|c| u < c.1)
            .unwrap_or_else(|| self.cumulative.last().expect("non-empty mix"))
            .0;
        let set = &self.datasets[&tag];
        &set[rng.random_range(0..set.len())]
    }
}

/// Per-sample augmentation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augment {
    pub canonicalize: bool,
    pub rotate: bool,
}

impl Default for Augment {
    fn default() -> Self {
        Self {
            canonicalize: true,
            rotate: true,
        }
    }
}

fn augment<R: Rng + ?Sized>(m: &GroupMotion, aug: Augment, rng: &mut R) -> Result<GroupMotion> {
    let mut out = if aug.canonicalize {
        canonicalize_group(m)?
    } else {
        m.clone()
    };
    if aug.rotate {
        out = rotate_group(&out, rng.random::<f64>() * TAU);
    }
    Ok(out)
}

/// One uniformly chosen valid frame, centered and randomly rotated.
/// Returns the frame and its index in the source motion.
pub fn prepare_stage1_sample<R: Rng + ?Sized>(
    sample: &MotionSample,
    aug: Augment,
    rng: &mut R,
) -> Result<(GroupMotion, usize)> {
    let valid: Vec<usize> = (0..sample.motion.frames()).filter(|&f| sample.motion.frame_mask[f]).collect();
    if valid.is_empty() {
        return Err(Error::EmptyCenterFrame(0));
    }
    let f = valid[rng.random_range(0..valid.len())];
    Ok((augment(&sample.motion.frame(f), aug, rng)?, f))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Sample {
    pub motion: GroupMotion,
    /// Center frame as a single-frame group; absent for single-frame samples.
    pub center_pose: Option<GroupMotion>,
    /// First source frame of the kept window.
    pub window_start: usize,
}

/// Random window of at most `max_frames`, centered and rotated, with its
/// center frame as the pose condition.
pub fn prepare_stage2_sample<R: Rng + ?Sized>(
    sample: &MotionSample,
    max_frames: usize,
    aug: Augment,
    rng: &mut R,
) -> Result<Stage2Sample> {
    let frames = sample.motion.frames();
    let (start, len) = if frames > max_frames {
        (rng.random_range(0..=frames - max_frames), max_frames)
    } else {
        (0, frames)
    };
    let motion = augment(&sample.motion.window(start, len), aug, rng)?;
    let center_pose = (len > 1).then(|| motion.frame(motion.center_frame()));
    Ok(Stage2Sample {
        motion,
        center_pose,
        window_start: start,
    })
}
