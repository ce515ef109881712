//! Forward noising, the clean-sample training objective, guidance and DDPM
//! sampling.

use candle_core::{DType, Device, Tensor};
use mpgen_core::repr::{canonicalize_group, GroupMotion, POSE_DIM};
use mpgen_core::schedule::{NoiseSchedule, PosteriorVariance};
use mpgen_core::textcond::{drop_condition, subject_count, TextEmbedding, TextEncoder};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::batch::{group_from_tensor, make_batch, Batch};
use crate::error::{ModelError, Result};
use crate::netcore::{CenterPose, Conditioning, Denoiser, Layout};

/// A clean-sample predictor `(x_t, denoiser timesteps, conditioning) -> x0`.
pub type Predictor<'a> = dyn FnMut(&Tensor, &[usize], &Conditioning) -> Result<Tensor> + 'a;

/// Classifier-free and pose/motion guidance scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub cfg_scale: f64,
    pub pose_scale: f64,
    pub motion_scale: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            cfg_scale: 1.0,
            pose_scale: 0.0,
            motion_scale: 0.0,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> mpgen_core::Result<()> {
        let scales = [self.cfg_scale, self.pose_scale, self.motion_scale];
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(mpgen_core::Error::Config("guidance scales must be finite and non-negative"));
        }
        if self.pose_scale + self.motion_scale > 1.0 + 1e-12 {
            return Err(mpgen_core::Error::ScaleViolation {
                pose: self.pose_scale,
                motion: self.motion_scale,
            });
        }
        Ok(())
    }
}

/// Standard normal tensor drawn from the host generator.
pub fn standard_normal(shape: &[usize], rng: &mut ChaCha8Rng, device: &Device) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
    Ok(Tensor::from_vec(data, shape, device)?)
}

fn per_sample(values: &[f64], rank: usize, device: &Device) -> Result<Tensor> {
    let mut shape = vec![values.len()];
    shape.extend(std::iter::repeat_n(1, rank - 1));
    let data: Vec<f32> = values.iter().map(|&v| v as f32).collect();
    Ok(Tensor::from_vec(data, shape, device)?)
}

/// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise` with per-sample
/// schedule steps `t`; `valid` re-zeroes padded slots.
pub fn q_sample(
    x0: &Tensor,
    t: &[usize],
    noise: &Tensor,
    sched: &NoiseSchedule,
    valid: Option<&Tensor>,
) -> Result<Tensor> {
    let rank = x0.rank();
    if t.len() != x0.dim(0)? || noise.dims() != x0.dims() {
        return Err(ModelError::ShapeMismatch(format!("q_sample {:?} with {} steps", x0.dims(), t.len())));
    }
    let (a, s): (Vec<f64>, Vec<f64>) = t.iter().map(|&t| sched.marginal(t)).unzip();
    let xt = (x0.broadcast_mul(&per_sample(&a, rank, x0.device())?)?
        + noise.broadcast_mul(&per_sample(&s, rank, x0.device())?)?)?;
    Ok(match valid {
        Some(v) => xt.broadcast_mul(v)?,
        None => xt,
    })
}

/// Mean squared error over valid slots and all 158 coordinates.
pub fn masked_mse(pred: &Tensor, target: &Tensor, valid: &Tensor) -> Result<Tensor> {
    let diff = (pred - target)?.broadcast_mul(valid)?;
    let count = valid.sum_all()?.to_scalar::<f32>()? as f64 * POSE_DIM as f64;
    Ok((diff.sqr()?.sum_all()? / count.max(1.0))?)
}

/// Nulls each text row independently with probability `p`.
pub fn drop_text(text: &Tensor, p: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let rows: Vec<Vec<f32>> = text.to_vec2()?;
    let dim = text.dim(1)?;
    let mut data = Vec::with_capacity(rows.len() * dim);
    for row in rows {
        data.extend_from_slice(drop_condition(&TextEmbedding::from_vec(row), p, rng).as_slice());
    }
    Ok(Tensor::from_vec(data, text.dims(), text.device())?)
}

/// `E ||x0 - G(x_t, t, c)||^2` with `t` uniform on `1..=T` and text dropout
/// `text_dropout` applied before the forward pass.
pub fn training_loss(
    predict: &mut Predictor<'_>,
    batch: &Batch,
    sched: &NoiseSchedule,
    text_dropout: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let b = batch.len();
    let t: Vec<usize> = (0..b).map(|_| rng.random_range(1..=sched.len())).collect();
    let noise = standard_normal(batch.x0.dims(), rng, batch.x0.device())?;
    let valid = batch.cond.validity()?;
    let x_t = q_sample(&batch.x0, &t, &noise, sched, Some(&valid))?;
    let cond = Conditioning {
        text: drop_text(&batch.cond.text, text_dropout, rng)?,
        ..batch.cond.clone()
    };
    let model_t: Vec<usize> = t.iter().map(|&t| sched.model_timestep(t)).collect();
    let pred = predict(&x_t, &model_t, &cond)?;
    masked_mse(&pred, &batch.x0, &valid)
}

/// `G(x_t, t, null) + s (G(x_t, t, c) - G(x_t, t, null))`; `s = 1` and
/// `s = 0` return the conditional and unconditional passes unchanged.
pub fn cfg_predict(
    predict: &mut Predictor<'_>,
    x_t: &Tensor,
    t: &[usize],
    cond: &Conditioning,
    s: f64,
) -> Result<Tensor> {
    if s == 1.0 {
        return predict(x_t, t, cond);
    }
    let uncond = predict(x_t, t, &cond.with_null_text()?)?;
    if s == 0.0 {
        return Ok(uncond);
    }
    let c = predict(x_t, t, cond)?;
    Ok(((c - &uncond)? * s)?.add(&uncond)?)
}

/// Frames folded into the batch: `B x F x N x D` to `BF x 1 x N x D`, with
/// text and subject masks repeated per frame and no pose condition.
pub fn fold_frames(x: &Tensor, t: &[usize], cond: &Conditioning) -> Result<(Tensor, Vec<usize>, Conditioning)> {
    let (b, f, n, d) = x.dims4()?;
    let dt = cond.text.dim(1)?;
    let text = cond.text.unsqueeze(1)?.broadcast_as((b, f, dt))?.reshape((b * f, dt))?;
    let subject_mask = cond.subject_mask.unsqueeze(1)?.broadcast_as((b, f, n))?.reshape((b * f, n))?;
    let frame_mask = cond.frame_mask.reshape((b * f, 1))?;
    let tt = t.iter().flat_map(|&v| std::iter::repeat_n(v, f)).collect();
    let folded = Conditioning {
        text,
        frame_mask,
        subject_mask,
        center: None,
    };
    Ok((x.reshape((b * f, 1, n, d))?, tt, folded))
}

/// Subjects folded into the batch: `B x F x N x D` to `BN x F x 1 x D`, with
/// null text and each subject's own slice of the pose condition.
pub fn fold_subjects(x: &Tensor, t: &[usize], cond: &Conditioning) -> Result<(Tensor, Vec<usize>, Conditioning)> {
    let (b, f, n, d) = x.dims4()?;
    let dt = cond.text.dim(1)?;
    let xs = x.permute((0, 2, 1, 3))?.reshape((b * n, f, 1, d))?;
    let frame_mask = cond.frame_mask.unsqueeze(1)?.broadcast_as((b, n, f))?.reshape((b * n, f))?;
    let subject_mask = cond.subject_mask.reshape((b * n, 1))?;
    let center = match &cond.center {
        Some(c) => Some(CenterPose {
            poses: c.poses.reshape((b * n, 1, d))?,
            present: c.present.unsqueeze(1)?.broadcast_as((b, n))?.reshape(b * n)?,
        }),
        None => None,
    };
    let tt = t.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
    let folded = Conditioning {
        text: Tensor::zeros((b * n, dt), DType::F32, x.device())?,
        frame_mask,
        subject_mask,
        center,
    };
    Ok((xs, tt, folded))
}

fn unfold_subjects(y: &Tensor, b: usize, n: usize) -> Result<Tensor> {
    let (_, f, _, d) = y.dims4()?;
    Ok(y.reshape((b, n, f, d))?.permute((0, 2, 1, 3))?.contiguous()?)
}

fn to_host(x: &Tensor) -> Result<Vec<f64>> {
    Ok(x.flatten_all()?.to_vec1::<f32>()?.into_iter().map(f64::from).collect())
}

/// `(1 - s_p - s_m) G + s_p G_p + s_m G_m`, with `G_p` applied frame-wise
/// and `G_m` subject-wise. Terms with zero weight are not evaluated, and
/// the blend is accumulated in double precision.
pub fn guided_predict(
    g: &mut Predictor<'_>,
    g_pose: Option<&mut Predictor<'_>>,
    g_motion: Option<&mut Predictor<'_>>,
    x_t: &Tensor,
    t: &[usize],
    cond: &Conditioning,
    gcfg: &GuidanceConfig,
) -> Result<Tensor> {
    gcfg.validate()?;
    let (sp, sm) = (gcfg.pose_scale, gcfg.motion_scale);
    let base_w = 1.0 - sp - sm;
    if sp == 0.0 && sm == 0.0 {
        return g(x_t, t, cond);
    }
    let (b, f, n, d) = x_t.dims4()?;
    let mut terms: Vec<(f64, Tensor)> = Vec::new();
    if base_w != 0.0 {
        terms.push((base_w, g(x_t, t, cond)?));
    }
    if sp != 0.0 {
        let gp = g_pose.ok_or_else(|| ModelError::Config("pose guidance needs a pose model".into()))?;
        let (xf, tf, cf) = fold_frames(x_t, t, cond)?;
        terms.push((sp, gp(&xf, &tf, &cf)?.reshape((b, f, n, d))?));
    }
    if sm != 0.0 {
        let gm = g_motion.ok_or_else(|| ModelError::Config("motion guidance needs a motion model".into()))?;
        let (xs, ts, cs) = fold_subjects(x_t, t, cond)?;
        terms.push((sm, unfold_subjects(&gm(&xs, &ts, &cs)?, b, n)?));
    }
    let mut acc = vec![0f64; b * f * n * d];
    for (w, term) in &terms {
        for (a, v) in acc.iter_mut().zip(to_host(term)?) {
            *a += w * v;
        }
    }
    let data: Vec<f32> = acc.into_iter().map(|v| v as f32).collect();
    Ok(Tensor::from_vec(data, (b, f, n, d), x_t.device())?)
}

/// Hard replacement of one frame of every prediction.
#[derive(Debug, Clone)]
pub struct FixedFrame {
    pub frame: usize,
    /// `B x 1 x N x 158`.
    pub values: Tensor,
}

/// Ancestral DDPM sampling from `x_T ~ N(0, I)` on valid slots down to
/// `t = 1`, returning the final clean-sample prediction.
#[allow(clippy::too_many_arguments)]
pub fn ddpm_sample(
    predict: &mut Predictor<'_>,
    shape: (usize, usize, usize),
    cond: &Conditioning,
    sched: &NoiseSchedule,
    variance: PosteriorVariance,
    fixed: Option<&FixedFrame>,
    rng: &mut ChaCha8Rng,
    device: &Device,
) -> Result<Tensor> {
    let (b, f, n) = shape;
    let valid = cond.validity()?;
    let fixed_mask = match fixed {
        Some(fx) => {
            let mut m = vec![0f32; f];
            *m.get_mut(fx.frame)
                .ok_or_else(|| ModelError::ShapeMismatch(format!("fixed frame {} of {f}", fx.frame)))? = 1.0;
            Some(Tensor::from_vec(m, (1, f, 1, 1), device)?)
        }
        None => None,
    };
    let mut x = standard_normal(&[b, f, n, POSE_DIM], rng, device)?.broadcast_mul(&valid)?;
    let mut x0 = x.zeros_like()?;
    for step in (1..=sched.len()).rev() {
        let mt = vec![sched.model_timestep(step); b];
        x0 = predict(&x, &mt, cond)?.broadcast_mul(&valid)?;
        if let (Some(fx), Some(m)) = (fixed, &fixed_mask) {
            let keep = m.affine(-1.0, 1.0)?;
            x0 = (x0.broadcast_mul(&keep)? + fx.values.broadcast_mul(m)?)?.broadcast_mul(&valid)?;
        }
        if step > 1 {
            let (c0, ct, var) = sched.posterior(step, variance);
            let mean = ((&x0 * c0)? + (&x * ct)?)?;
            let z = standard_normal(&[b, f, n, POSE_DIM], rng, device)?;
            x = (mean + (z * var.sqrt())?)?.broadcast_mul(&valid)?;
        }
    }
    Ok(x0)
}

/// Sampling options for [`two_stage_sample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub frames: usize,
    pub guidance: GuidanceConfig,
    pub variance: PosteriorVariance,
    /// Overwrite the center frame of every prediction with the pose condition.
    pub fix_center: bool,
    pub fps: u32,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            frames: mpgen_core::repr::MAX_FRAMES,
            guidance: GuidanceConfig::default(),
            variance: PosteriorVariance::Posterior,
            fix_center: false,
            fps: 20,
        }
    }
}

/// Eval-mode prediction closure for a denoiser.
pub fn predictor(model: &Denoiser) -> impl FnMut(&Tensor, &[usize], &Conditioning) -> Result<Tensor> + '_ {
    move |x, t, c| model.forward(x, t, c, None)
}

/// Eval-mode prediction with classifier-free guidance at scale `s`.
pub fn cfg_predictor(model: &Denoiser, s: f64) -> impl FnMut(&Tensor, &[usize], &Conditioning) -> Result<Tensor> + '_ {
    let mut inner = predictor(model);
    move |x, t, c| cfg_predict(&mut inner, x, t, c, s)
}

/// Single multi-person pose frame for `text` with `subjects` people.
pub fn sample_pose(
    stage1: &Denoiser,
    text: &TextEmbedding,
    subjects: usize,
    sched: &NoiseSchedule,
    opts: &SampleOptions,
    rng: &mut ChaCha8Rng,
) -> Result<GroupMotion> {
    let dev = stage1.device();
    let cond = Conditioning::unmasked(&crate::batch::text_tensor(std::slice::from_ref(text), text.dim(), dev)?, 1, subjects)?;
    let mut g = cfg_predictor(stage1, opts.guidance.cfg_scale);
    let x = ddpm_sample(&mut g, (1, 1, subjects), &cond, sched, opts.variance, None, rng, dev)?;
    group_from_tensor(&x, 0, 1, subjects, opts.fps)
}

/// Motion of `opts.frames` frames around the center pose `pose`.
///
/// `stage2` is an interleaved model, or a motion-only model when animating
/// a single subject. `g_pose` and `g_motion` supply the guidance models.
#[allow(clippy::too_many_arguments)]
pub fn sample_motion(
    stage2: &Denoiser,
    g_pose: Option<&Denoiser>,
    g_motion: Option<&Denoiser>,
    text: &TextEmbedding,
    pose: &GroupMotion,
    sched: &NoiseSchedule,
    opts: &SampleOptions,
    rng: &mut ChaCha8Rng,
) -> Result<GroupMotion> {
    opts.guidance.validate()?;
    let dev = stage2.device();
    let n = pose.subjects();
    let frames = opts.frames;
    let dummy = GroupMotion::zeros(frames, n, opts.fps);
    let batch = make_batch(
        std::slice::from_ref(&dummy),
        std::slice::from_ref(text),
        Some(&[Some(pose.clone())]),
        text.dim(),
        dev,
    )?;
    let fixed = if opts.fix_center {
        let center = batch.cond.center.as_ref().expect("center pose given");
        Some(FixedFrame {
            frame: frames / 2,
            values: center.poses.unsqueeze(1)?,
        })
    } else {
        None
    };
    let s = opts.guidance.cfg_scale;
    let mut g = cfg_predictor(stage2, s);
    let mut gp = g_pose.map(|m| cfg_predictor(m, s));
    let mut gm = g_motion.map(predictor);
    let gcfg = opts.guidance;
    let mut guided = |x: &Tensor, t: &[usize], c: &Conditioning| -> Result<Tensor> {
        guided_predict(
            &mut g,
            gp.as_mut().map(|p| p as &mut Predictor<'_>),
            gm.as_mut().map(|p| p as &mut Predictor<'_>),
            x,
            t,
            c,
            &gcfg,
        )
    };
    let x = ddpm_sample(&mut guided, (1, frames, n), &batch.cond, sched, opts.variance, fixed.as_ref(), rng, dev)?;
    group_from_tensor(&x, 0, frames, n, opts.fps)
}

/// Models used by two-stage generation.
#[derive(Debug, Clone, Copy)]
pub struct Models<'a> {
    pub stage1: &'a Denoiser,
    pub stage2: &'a Denoiser,
    /// Single-person motion model for motion guidance.
    pub motion: Option<&'a Denoiser>,
}

/// Text to pose frame to motion. Returns the canonicalized motion and the
/// sampled pose frame.
pub fn two_stage_sample_with_count(
    models: Models<'_>,
    prompt: &str,
    subjects: usize,
    encoder: &dyn TextEncoder,
    sched: &NoiseSchedule,
    opts: &SampleOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(GroupMotion, GroupMotion)> {
    opts.guidance.validate()?;
    if models.stage1.config.layout != Layout::Pose || models.stage2.config.layout != Layout::Interleaved {
        return Err(ModelError::Config("two-stage sampling needs a pose model and an interleaved model".into()));
    }
    let text = encoder.embed(prompt);
    let pose = sample_pose(models.stage1, &text, subjects, sched, opts, rng)?;
    let g_pose = (opts.guidance.pose_scale > 0.0).then_some(models.stage1);
    let motion = sample_motion(models.stage2, g_pose, models.motion, &text, &pose, sched, opts, rng)?;
    Ok((canonicalize_group(&motion)?, pose))
}

/// [`two_stage_sample_with_count`] with the rule-based subject count.
pub fn two_stage_sample(
    models: Models<'_>,
    prompt: &str,
    encoder: &dyn TextEncoder,
    sched: &NoiseSchedule,
    opts: &SampleOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(GroupMotion, GroupMotion)> {
    two_stage_sample_with_count(models, prompt, subject_count(prompt), encoder, sched, opts, rng)
}
