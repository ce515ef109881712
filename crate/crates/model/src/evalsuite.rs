//! Contrastive feature encoders and decomposed pose/motion evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use candle_core::{Device, Tensor, D};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use mpgen_core::metrics::{
    diversity, frechet_distance, r_precision_top3, similarity, DIVERSITY_PAIRS, MULTIMODALITY_REPEATS, POOL_SIZE,
};
use mpgen_core::repr::{canonicalize_group, rotate_group, GroupMotion, POSE_DIM};
use mpgen_core::schedule::NoiseSchedule;
use mpgen_core::textcond::{subject_count, TextEmbedding, TextEncoder};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::text_tensor;
use crate::diffusion::{sample_motion, sample_pose, SampleOptions};
use crate::error::{ModelError, Result};
use crate::netcore::{Denoiser, Layout};
use crate::params::ParamStore;

/// What a [`FeatureEncoder`] consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    /// A single multi-person frame.
    Pose,
    /// A single-person track.
    Motion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub feat_dim: usize,
    pub hidden: usize,
    pub text_dim: usize,
    /// Divisor of the sum pooling, so group size stays visible.
    pub pool_norm: usize,
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind) -> Self {
        Self {
            kind,
            feat_dim: 64,
            hidden: 128,
            text_dim: mpgen_core::textcond::DEFAULT_TEXT_DIM,
            pool_norm: match kind {
                EncoderKind::Pose => mpgen_core::repr::MAX_SUBJECTS,
                EncoderKind::Motion => mpgen_core::repr::MAX_FRAMES,
            },
        }
    }
}

/// Sample encoder with a paired text head; both emit unit vectors.
#[derive(Debug)]
pub struct FeatureEncoder {
    pub config: EncoderConfig,
    pub params: ParamStore,
}

const LOGIT_SCALE_MAX: f64 = 100.0;

impl FeatureEncoder {
    pub fn new(config: EncoderConfig, seed: u64, device: &Device) -> Result<Self> {
        let mut params = ParamStore::new(device, seed);
        let h = config.hidden;
        let input = match config.kind {
            EncoderKind::Pose => POSE_DIM,
            EncoderKind::Motion => 2 * POSE_DIM,
        };
        params.add_mlp("item", input, h, h, true)?;
        params.add_mlp("head", 2 * h, h, config.feat_dim, true)?;
        params.add_mlp("text", config.text_dim, h, config.feat_dim, true)?;
        params.constant("logit_scale", &[1], 0.0)?;
        Ok(Self { config, params })
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    fn items(&self, samples: &[GroupMotion]) -> Result<(Tensor, Tensor)> {
        let dev = self.device();
        let b = samples.len();
        match self.config.kind {
            EncoderKind::Pose => {
                let n = samples.iter().map(GroupMotion::subjects).max().unwrap_or(1);
                let mut x = vec![0f32; b * n * POSE_DIM];
                let mut m = vec![0f32; b * n];
                for (i, s) in samples.iter().enumerate() {
                    if s.frames() != 1 {
                        return Err(ModelError::ShapeMismatch(format!("pose encoder takes one frame, got {}", s.frames())));
                    }
                    for k in 0..s.subjects() {
                        if s.is_valid(0, k) {
                            m[i * n + k] = 1.0;
                            let o = (i * n + k) * POSE_DIM;
                            for (d, &v) in x[o..o + POSE_DIM].iter_mut().zip(s.slot(0, k)) {
                                *d = v as f32;
                            }
                        }
                    }
                }
                Ok((Tensor::from_vec(x, (b, n, POSE_DIM), dev)?, Tensor::from_vec(m, (b, n), dev)?))
            }
            EncoderKind::Motion => {
                let f = samples.iter().map(GroupMotion::frames).max().unwrap_or(1);
                let mut x = vec![0f32; b * f * 2 * POSE_DIM];
                let mut m = vec![0f32; b * f];
                for (i, s) in samples.iter().enumerate() {
                    if s.subjects() != 1 {
                        return Err(ModelError::ShapeMismatch(format!("motion encoder takes one subject, got {}", s.subjects())));
                    }
                    for fi in 0..s.frames() {
                        if !s.is_valid(fi, 0) {
                            continue;
                        }
                        m[i * f + fi] = 1.0;
                        let o = (i * f + fi) * 2 * POSE_DIM;
                        let prev = if fi > 0 && s.is_valid(fi - 1, 0) { fi - 1 } else { fi };
                        for (d, (&v, &p)) in x[o..o + 2 * POSE_DIM]
                            .chunks_exact_mut(2)
                            .zip(s.slot(fi, 0).iter().zip(s.slot(prev, 0)))
                        {
                            d[0] = v as f32;
                            d[1] = (v - p) as f32;
                        }
                    }
                }
                Ok((Tensor::from_vec(x, (b, f, 2 * POSE_DIM), dev)?, Tensor::from_vec(m, (b, f), dev)?))
            }
        }
    }

    fn encode_tensor(&self, samples: &[GroupMotion]) -> Result<Tensor> {
        let (x, m) = self.items(samples)?;
        let h = self.params.mlp("item", &x)?;
        let m3 = m.unsqueeze(2)?;
        let sum = h.broadcast_mul(&m3)?.sum(1)?;
        let count = m.sum_keepdim(1)?.clamp(1.0, f64::MAX)?;
        let mean = sum.broadcast_div(&count)?;
        let pooled = Tensor::cat(&[&mean, &(sum / self.config.pool_norm as f64)?], 1)?;
        normalize(&self.params.mlp("head", &pooled)?)
    }

    fn encode_text_tensor(&self, text: &Tensor) -> Result<Tensor> {
        normalize(&self.params.mlp("text", text)?)
    }

    /// Unit feature per sample.
    pub fn encode(&self, samples: &[GroupMotion]) -> Result<Vec<Vec<f64>>> {
        rows(&self.encode_tensor(samples)?)
    }

    /// Unit feature per text embedding.
    pub fn encode_text(&self, texts: &[TextEmbedding]) -> Result<Vec<Vec<f64>>> {
        rows(&self.encode_text_tensor(&text_tensor(texts, self.config.text_dim, self.device())?)?)
    }

    /// Symmetric cross-entropy over in-batch similarity logits.
    pub fn contrastive_loss(&self, samples: &[GroupMotion], texts: &[TextEmbedding]) -> Result<Tensor> {
        let s = self.encode_tensor(samples)?;
        let t = self.encode_text_tensor(&text_tensor(texts, self.config.text_dim, self.device())?)?;
        let scale = self.params.get("logit_scale")?.exp()?.clamp(0.0, LOGIT_SCALE_MAX)?;
        let logits = s.matmul(&t.t()?)?.broadcast_mul(&scale)?;
        let b = samples.len();
        let labels = Tensor::arange(0u32, b as u32, self.device())?;
        let a = candle_nn::loss::cross_entropy(&logits, &labels)?;
        let c = candle_nn::loss::cross_entropy(&logits.t()?.contiguous()?, &labels)?;
        Ok(((a + c)? * 0.5)?)
    }
}

fn normalize(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?.clamp(1e-12, f64::MAX)?;
    Ok(x.broadcast_div(&norm)?)
}

fn rows(x: &Tensor) -> Result<Vec<Vec<f64>>> {
    let v: Vec<Vec<f32>> = x.to_vec2()?;
    Ok(v.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Random vertical rotation of every training sample.
    pub rotate: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            rotate: true,
        }
    }
}

/// Canonicalized encoder input: a group frame or a single-subject track.
pub fn encoder_input(kind: EncoderKind, m: &GroupMotion) -> Result<GroupMotion> {
    let expected = match kind {
        EncoderKind::Pose => m.frames() == 1,
        EncoderKind::Motion => m.subjects() == 1,
    };
    if !expected {
        return Err(ModelError::ShapeMismatch(format!("{kind:?} encoder input {}x{}", m.frames(), m.subjects())));
    }
    Ok(canonicalize_group(m)?)
}

/// Trains an encoder and its text head on `(text, sample)` pairs. Each batch
/// holds at most one pair per distinct text so no in-batch negative shares
/// the positive's text.
pub fn train_contrastive(
    pairs: &[(String, GroupMotion)],
    config: EncoderConfig,
    cfg: &ContrastiveConfig,
    encoder: &dyn TextEncoder,
    device: &Device,
) -> Result<(FeatureEncoder, Vec<f64>)> {
    let mut by_text: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (t, _)) in pairs.iter().enumerate() {
        by_text.entry(t.as_str()).or_default().push(i);
    }
    if by_text.len() < 2 {
        return Err(ModelError::Config("contrastive training needs at least two distinct texts".into()));
    }
    let texts: Vec<&str> = by_text.keys().copied().collect();
    let embeddings: BTreeMap<&str, TextEmbedding> = texts.iter().map(|t| (*t, encoder.embed(t))).collect();
    let kind = config.kind;
    let model = FeatureEncoder::new(config, cfg.seed, device)?;
    let params = ParamsAdamW {
        lr: cfg.lr,
        weight_decay: 0.0,
        ..ParamsAdamW::default()
    };
    let mut opt = AdamW::new(model.params.trainable(), params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut losses = Vec::with_capacity(cfg.steps);
    let b = cfg.batch_size.min(texts.len()).max(2);
    for _ in 0..cfg.steps {
        let chosen: Vec<&str> = texts.choose_multiple(&mut rng, b).copied().collect();
        let mut samples = Vec::with_capacity(b);
        let mut embs = Vec::with_capacity(b);
        for t in chosen {
            let idx = &by_text[t];
            let mut m = encoder_input(kind, &pairs[idx[rng.random_range(0..idx.len())]].1)?;
            if cfg.rotate {
                m = rotate_group(&m, rng.random::<f64>() * std::f64::consts::TAU);
            }
            samples.push(m);
            embs.push(embeddings[t].clone());
        }
        let loss = model.contrastive_loss(&samples, &embs)?;
        opt.step(&loss.backward()?)?;
        losses.push(loss.to_scalar::<f32>()? as f64);
    }
    Ok((model, losses))
}

/// Pose-evaluation frame indices: the center and two frames either side,
/// spaced 14 apart (closer for short motions).
pub fn eval_frame_indices(frames: usize) -> Vec<usize> {
    if frames == 0 {
        return Vec::new();
    }
    let c = frames / 2;
    let spacing = 14.min((frames - 1) / 4);
    let mut out: Vec<usize> = (-2i64..=2).map(|k| (c as i64 + k * spacing as i64) as usize).collect();
    out.dedup();
    out
}

/// Encoders used by [`decomposed_evaluate`].
#[derive(Clone, Copy)]
pub struct Encoders<'a> {
    pub pose: &'a FeatureEncoder,
    pub motion: &'a FeatureEncoder,
    pub text: &'a dyn TextEncoder,
}

/// Real-data features for the distribution metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFeatures {
    pub pose: Vec<Vec<f64>>,
    pub motion: Vec<Vec<f64>>,
}

impl ReferenceFeatures {
    /// Encodes group frames at the evaluation indices and every subject track
    /// of `motions`.
    pub fn from_motions(motions: &[GroupMotion], enc: &Encoders<'_>) -> Result<Self> {
        let (mut frames, mut tracks) = (Vec::new(), Vec::new());
        for m in motions {
            for f in eval_frame_indices(m.frames()) {
                frames.push(encoder_input(EncoderKind::Pose, &m.frame(f))?);
            }
            for n in 0..m.subjects() {
                if m.subject_mask[n] && m.frames() > 1 {
                    tracks.push(encoder_input(EncoderKind::Motion, &m.subject_track(n))?);
                }
            }
        }
        Ok(Self {
            pose: encode_chunked(enc.pose, &frames)?,
            motion: encode_chunked(enc.motion, &tracks)?,
        })
    }
}

fn encode_chunked(enc: &FeatureEncoder, items: &[GroupMotion]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(256) {
        out.extend(enc.encode(chunk)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub repeats: usize,
    pub diversity_pairs: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            repeats: MULTIMODALITY_REPEATS,
            diversity_pairs: DIVERSITY_PAIRS,
            seed: 0,
        }
    }
}

/// Decomposed pose-level and motion-level metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Top-1, top-2 and top-3 pose retrieval precision.
    pub pose_r_precision: [f64; 3],
    pub pose_fid: f64,
    pub pose_similarity: f64,
    pub pose_diversity: f64,
    pub pose_multimodality: f64,
    pub motion_fid: f64,
    pub motion_diversity: f64,
    pub motion_multimodality: f64,
    pub eval_frames: Vec<usize>,
    pub prompts: usize,
    pub repeats: usize,
    pub pose_samples: usize,
    pub motion_samples: usize,
    pub seed: u64,
}

impl MetricReport {
    /// `key: value` document, one section per metric family.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let r = &self.pose_r_precision;
        let _ = writeln!(s, "pose:");
        let _ = writeln!(s, "  r_precision_top1: {}", r[0]);
        let _ = writeln!(s, "  r_precision_top2: {}", r[1]);
        let _ = writeln!(s, "  r_precision_top3: {}", r[2]);
        let _ = writeln!(s, "  fid: {}", self.pose_fid);
        let _ = writeln!(s, "  similarity: {}", self.pose_similarity);
        let _ = writeln!(s, "  diversity: {}", self.pose_diversity);
        let _ = writeln!(s, "  multimodality: {}", self.pose_multimodality);
        let _ = writeln!(s, "motion:");
        let _ = writeln!(s, "  fid: {}", self.motion_fid);
        let _ = writeln!(s, "  diversity: {}", self.motion_diversity);
        let _ = writeln!(s, "  multimodality: {}", self.motion_multimodality);
        let _ = writeln!(s, "meta:");
        let frames: Vec<String> = self.eval_frames.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "  eval_frames: {}", frames.join(","));
        let _ = writeln!(s, "  prompts: {}", self.prompts);
        let _ = writeln!(s, "  repeats: {}", self.repeats);
        let _ = writeln!(s, "  pose_samples: {}", self.pose_samples);
        let _ = writeln!(s, "  motion_samples: {}", self.motion_samples);
        let _ = writeln!(s, "  seed: {}", self.seed);
        s
    }
}

/// A motion generator `(prompt, repeat index, rng) -> motion`.
pub type Generator<'a> = dyn FnMut(&str, usize, &mut ChaCha8Rng) -> Result<GroupMotion> + 'a;

fn mean_within(groups: &[Vec<Vec<f64>>], max_pairs: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for g in groups.iter().filter(|g| g.len() >= 2) {
        total += diversity(g, g.len().min(max_pairs), rng)?;
        count += 1;
    }
    if count == 0 {
        return Err(mpgen_core::Error::InsufficientSamples { needed: 2, available: 0 }.into());
    }
    Ok(total / count as f64)
}

/// Generates `cfg.repeats` motions per prompt and scores group frames at the
/// sparse evaluation indices and every subject's track.
///
/// Retrieval pools take one frame per sample: for each repeat and each
/// evaluation index, consecutive chunks of 32 prompts form a pool.
pub fn decomposed_evaluate(
    generator: &mut Generator<'_>,
    prompts: &[String],
    enc: &Encoders<'_>,
    reference: &ReferenceFeatures,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    if prompts.len() < POOL_SIZE {
        return Err(mpgen_core::Error::PoolSizeError(prompts.len()).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let text_emb: Vec<TextEmbedding> = prompts.iter().map(|p| enc.text.embed(p)).collect();
    let text_feats = enc.pose.encode_text(&text_emb)?;
    let mut eval_frames: Option<Vec<usize>> = None;
    // pose_feats[prompt][repeat][eval index]
    let mut pose_feats: Vec<Vec<Vec<Vec<f64>>>> = Vec::with_capacity(prompts.len());
    let mut motion_groups: BTreeMap<(usize, usize), Vec<Vec<f64>>> = BTreeMap::new();
    let mut all_motion = Vec::new();
    for (pi, prompt) in prompts.iter().enumerate() {
        let mut per_repeat = Vec::with_capacity(cfg.repeats);
        for r in 0..cfg.repeats {
            let m = generator(prompt, r, &mut rng)?;
            let idx = eval_frame_indices(m.frames());
            match &eval_frames {
                Some(e) if *e != idx => {
                    return Err(ModelError::ShapeMismatch("generated motions differ in length".into()));
                }
                _ => eval_frames = Some(idx.clone()),
            }
            let frames = idx
                .iter()
                .map(|&f| encoder_input(EncoderKind::Pose, &m.frame(f)))
                .collect::<Result<Vec<_>>>()?;
            per_repeat.push(enc.pose.encode(&frames)?);
            if m.frames() > 1 {
                let tracks = (0..m.subjects())
                    .filter(|&n| m.subject_mask[n])
                    .map(|n| Ok((n, encoder_input(EncoderKind::Motion, &m.subject_track(n))?)))
                    .collect::<Result<Vec<_>>>()?;
                let items: Vec<GroupMotion> = tracks.iter().map(|t| t.1.clone()).collect();
                for ((n, _), feat) in tracks.iter().zip(enc.motion.encode(&items)?) {
                    motion_groups.entry((pi, *n)).or_default().push(feat.clone());
                    all_motion.push(feat);
                }
            }
        }
        pose_feats.push(per_repeat);
    }
    let eval_frames = eval_frames.unwrap_or_default();
    let k = eval_frames.len();

    let mut rp = [0.0; 3];
    let mut pools = 0usize;
    for r in 0..cfg.repeats {
        for e in 0..k {
            for chunk in (0..prompts.len()).collect::<Vec<_>>().chunks_exact(POOL_SIZE) {
                let t: Vec<Vec<f64>> = chunk.iter().map(|&i| text_feats[i].clone()).collect();
                let s: Vec<Vec<f64>> = chunk.iter().map(|&i| pose_feats[i][r][e].clone()).collect();
                let p = r_precision_top3(&t, &s)?;
                for j in 0..3 {
                    rp[j] += p[j];
                }
                pools += 1;
            }
        }
    }
    for v in &mut rp {
        *v /= pools.max(1) as f64;
    }

    let mut matched_text = Vec::new();
    let mut all_pose = Vec::new();
    let mut pose_groups = Vec::new();
    for (pi, per_repeat) in pose_feats.iter().enumerate() {
        for e in 0..k {
            pose_groups.push(per_repeat.iter().map(|fs| fs[e].clone()).collect::<Vec<_>>());
        }
        for fs in per_repeat {
            for f in fs {
                matched_text.push(text_feats[pi].clone());
                all_pose.push(f.clone());
            }
        }
    }
    let motion_groups: Vec<Vec<Vec<f64>>> = motion_groups.into_values().collect();
    let (motion_fid, motion_diversity, motion_multimodality) = if all_motion.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (
            frechet_distance(&all_motion, &reference.motion)?,
            diversity(&all_motion, cfg.diversity_pairs.min(all_motion.len()), &mut rng)?,
            mean_within(&motion_groups, cfg.repeats, &mut rng)?,
        )
    };
    Ok(MetricReport {
        pose_r_precision: rp,
        pose_fid: frechet_distance(&all_pose, &reference.pose)?,
        pose_similarity: similarity(&matched_text, &all_pose)?,
        pose_diversity: diversity(&all_pose, cfg.diversity_pairs, &mut rng)?,
        pose_multimodality: mean_within(&pose_groups, cfg.repeats, &mut rng)?,
        motion_fid,
        motion_diversity,
        motion_multimodality,
        eval_frames,
        prompts: prompts.len(),
        repeats: cfg.repeats,
        pose_samples: all_pose.len(),
        motion_samples: all_motion.len(),
        seed: cfg.seed,
    })
}

/// Stage-1 pose sample held static for `frames` frames.
pub fn baseline_pose_only(
    stage1: &Denoiser,
    prompt: &str,
    text: &dyn TextEncoder,
    sched: &NoiseSchedule,
    opts: &SampleOptions,
    rng: &mut ChaCha8Rng,
) -> Result<GroupMotion> {
    let pose = sample_pose(stage1, &text.embed(prompt), subject_count(prompt), sched, opts, rng)?;
    Ok(pose.repeat_frame(0, opts.frames))
}

/// Stage-1 pose sample as the fixed middle frame, each subject animated
/// independently by the single-person motion model. Returns the motion and
/// the pose frame.
pub fn baseline_motion_only(
    stage1: &Denoiser,
    motion_model: &Denoiser,
    prompt: &str,
    text: &dyn TextEncoder,
    sched: &NoiseSchedule,
    opts: &SampleOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(GroupMotion, GroupMotion)> {
    if motion_model.config.layout != Layout::Motion {
        return Err(ModelError::Config("motion-only baseline needs a motion-layout model".into()));
    }
    let emb = text.embed(prompt);
    let pose = sample_pose(stage1, &emb, subject_count(prompt), sched, opts, rng)?;
    let fixed = SampleOptions {
        fix_center: true,
        ..*opts
    };
    let tracks = (0..pose.subjects())
        .map(|n| sample_motion(motion_model, None, None, &emb, &pose.subject_track(n), sched, &fixed, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok((GroupMotion::stack_subjects(&tracks)?, pose))
}

/// Per-channel variance over frames, summed over valid subjects.
pub fn temporal_variance(m: &GroupMotion) -> f64 {
    let f = m.frames() as f64;
    let mut total = 0.0;
    for n in 0..m.subjects() {
        for d in 0..POSE_DIM {
            let mean = (0..m.frames()).map(|i| m.slot(i, n)[d]).sum::<f64>() / f;
            total += (0..m.frames()).map(|i| (m.slot(i, n)[d] - mean).powi(2)).sum::<f64>() / f;
        }
    }
    total
}

