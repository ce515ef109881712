//! Two-stage training orchestration.

use std::path::PathBuf;

use candle_core::Device;
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use mpgen_core::corpus::{prepare_stage1_sample, prepare_stage2_sample, Augment, Datasets, MixSpec, MixedSampler};
use mpgen_core::repr::{canonicalize_group, GroupMotion};
use mpgen_core::schedule::{NoiseSchedule, ScheduleKind};
use mpgen_core::textcond::{HashedNgramEncoder, TextEmbedding, TextEncoder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batch::{make_batch, Batch};
use crate::diffusion::training_loss;
use crate::error::{ModelError, Result};
use crate::netcore::{Conditioning, Denoiser, Layout, ModelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub text_dropout: f64,
    pub max_frames: usize,
    pub max_subjects: usize,
    pub augment: Augment,
    pub seed: u64,
    pub schedule: ScheduleKind,
    pub diffusion_steps: usize,
    /// Record the loss every this many steps.
    pub log_every: usize,
    /// Write an intermediate checkpoint every this many steps into `checkpoint_dir`.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            lr: 1e-4,
            text_dropout: 0.1,
            max_frames: mpgen_core::repr::MAX_FRAMES,
            max_subjects: mpgen_core::repr::MAX_SUBJECTS,
            augment: Augment::default(),
            seed: 0,
            schedule: ScheduleKind::Cosine,
            diffusion_steps: 100,
            log_every: 10,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::new(self.schedule, self.diffusion_steps)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
}

/// Optimizer state bound to one model; frozen parameters are never handed
/// to the optimizer.
#[derive(Debug)]
pub struct Trainer<'m> {
    model: &'m Denoiser,
    opt: AdamW,
    sched: NoiseSchedule,
    text_dropout: f64,
    noise_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m Denoiser, lr: f64, sched: NoiseSchedule, text_dropout: f64, seed: u64) -> Result<Self> {
        let params = ParamsAdamW {
            lr,
            weight_decay: 0.0,
            ..ParamsAdamW::default()
        };
        Ok(Self {
            model,
            opt: AdamW::new(model.params.trainable(), params)?,
            sched,
            text_dropout,
            noise_rng: ChaCha8Rng::seed_from_u64(seed),
            dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn learning_rate(&self) -> f64 {
        self.opt.learning_rate()
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.opt.set_learning_rate(lr);
    }

    /// One optimizer step on `batch`; returns the loss before the update.
    pub fn step(&mut self, batch: &Batch) -> Result<f64> {
        let model = self.model;
        let dropout_rng = &mut self.dropout_rng;
        let mut predict =
            |x: &candle_core::Tensor, t: &[usize], c: &Conditioning| model.forward(x, t, c, Some(&mut *dropout_rng));
        let loss = training_loss(&mut predict, batch, &self.sched, self.text_dropout, &mut self.noise_rng)?;
        let grads = loss.backward()?;
        self.opt.step(&grads)?;
        Ok(loss.to_scalar::<f32>()? as f64)
    }
}

/// Trained model and its loss curve.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Denoiser,
    pub losses: Vec<LossRecord>,
}

fn check_size(m: &GroupMotion, cfg: &TrainConfig) -> Result<()> {
    if m.frames() > cfg.max_frames || m.subjects() > cfg.max_subjects {
        return Err(mpgen_core::Error::OversizeSample {
            frames: m.frames(),
            subjects: m.subjects(),
            max_frames: cfg.max_frames,
            max_subjects: cfg.max_subjects,
        }
        .into());
    }
    Ok(())
}

fn run(
    model: Denoiser,
    cfg: &TrainConfig,
    stage: &str,
    mut next_batch: impl FnMut(&mut ChaCha8Rng) -> Result<Batch>,
) -> Result<TrainOutcome> {
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut losses = Vec::new();
    {
        let mut trainer = Trainer::new(&model, cfg.lr, cfg.schedule()?, cfg.text_dropout, cfg.seed.wrapping_add(2))?;
        for step in 1..=cfg.steps {
            let batch = next_batch(&mut data_rng)?;
            let loss = trainer.step(&batch)?;
            if step == 1 || step % cfg.log_every.max(1) == 0 || step == cfg.steps {
                losses.push(LossRecord { step, loss });
            }
            if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
                if every > 0 && step % every == 0 {
                    std::fs::create_dir_all(dir)?;
                    model.save(&dir.join(format!("{stage}_step{step:07}.safetensors")))?;
                }
            }
        }
    }
    Ok(TrainOutcome { model, losses })
}

fn embed(encoder: &HashedNgramEncoder, text: &str) -> TextEmbedding {
    encoder.embed(text)
}

/// Pose model trained on one random frame per drawn sample.
pub fn train_stage1(cfg: &TrainConfig, model_cfg: &ModelConfig, data: &Datasets, mix: &MixSpec, device: &Device) -> Result<TrainOutcome> {
    if model_cfg.layout != Layout::Pose {
        return Err(ModelError::Config("stage 1 trains a pose-layout model".into()));
    }
    let model = Denoiser::new(model_cfg.clone(), cfg.seed, device)?;
    let sampler = MixedSampler::new(data, mix)?;
    let encoder = HashedNgramEncoder { dim: model_cfg.text_dim };
    let text_dim = model_cfg.text_dim;
    run(model, cfg, "stage1", |rng| {
        let mut motions = Vec::with_capacity(cfg.batch_size);
        let mut texts = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let sample = sampler.draw(rng);
            let (frame, _) = prepare_stage1_sample(sample, cfg.augment, rng)?;
            check_size(&frame, cfg)?;
            motions.push(frame);
            texts.push(embed(&encoder, &sample.text));
        }
        make_batch(&motions, &texts, None, text_dim, device)
    })
}

/// Interleaved model grown from `stage1`, trained on windows of up to
/// `max_frames` frames with their center frames as the pose condition.
pub fn train_stage2(cfg: &TrainConfig, stage1: Option<&Denoiser>, data: &Datasets, mix: &MixSpec) -> Result<TrainOutcome> {
    let stage1 = stage1.ok_or_else(|| ModelError::Config("stage 2 requires a stage-1 checkpoint".into()))?;
    let model = Denoiser::insert_motion_layers(stage1, cfg.seed)?;
    let device = stage1.device().clone();
    let sampler = MixedSampler::new(data, mix)?;
    let text_dim = model.config.text_dim;
    let encoder = HashedNgramEncoder { dim: text_dim };
    run(model, cfg, "stage2", |rng| {
        let mut motions = Vec::with_capacity(cfg.batch_size);
        let mut centers = Vec::with_capacity(cfg.batch_size);
        let mut texts = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let sample = sampler.draw(rng);
            let prepared = prepare_stage2_sample(sample, cfg.max_frames, cfg.augment, rng)?;
            check_size(&prepared.motion, cfg)?;
            motions.push(prepared.motion);
            centers.push(prepared.center_pose);
            texts.push(embed(&encoder, &sample.text));
        }
        make_batch(&motions, &texts, Some(&centers), text_dim, &device)
    })
}

/// Single-person motion model: one random subject track per drawn sample,
/// conditioned on its own center frame.
pub fn train_motion_model(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    data: &Datasets,
    mix: &MixSpec,
    device: &Device,
) -> Result<TrainOutcome> {
    if model_cfg.layout != Layout::Motion {
        return Err(ModelError::Config("the single-person model uses the motion layout".into()));
    }
    let model = Denoiser::new(model_cfg.clone(), cfg.seed, device)?;
    let sampler = MixedSampler::new(data, mix)?;
    let text_dim = model_cfg.text_dim;
    let encoder = HashedNgramEncoder { dim: text_dim };
    run(model, cfg, "motion", |rng| {
        let mut motions = Vec::with_capacity(cfg.batch_size);
        let mut centers = Vec::with_capacity(cfg.batch_size);
        let mut texts = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let sample = sampler.draw(rng);
            let prepared = prepare_stage2_sample(sample, cfg.max_frames, cfg.augment, rng)?;
            let subject = rng.random_range(0..prepared.motion.subjects());
            let track = canonicalize_group(&prepared.motion.subject_track(subject))?;
            let center = (track.frames() > 1).then(|| track.frame(track.center_frame()));
            motions.push(track);
            centers.push(center);
            texts.push(embed(&encoder, &sample.text));
        }
        make_batch(&motions, &texts, Some(&centers), text_dim, device)
    })
}
