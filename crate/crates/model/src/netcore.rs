//! Interleaved pose/motion transformer denoiser.
//!
//! Tensors are laid out `B x F x N x C`. Pose layers fold frames into the
//! batch and attend over subjects; motion layers fold subjects into the batch
//! and attend over frames. Every layer prepends a condition token to its
//! sequence and drops it again on output.

use std::collections::BTreeSet;

use candle_core::{DType, Device, Tensor};
use mpgen_core::repr::POSE_DIM;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::params::{dropout, sinusoid, ParamStore};

/// Which layer stacks a denoiser runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// Stage 1: pose layers only, single frames.
    Pose,
    /// Stage 2: a motion layer after every pose layer.
    Interleaved,
    /// Motion layers only; the single-person motion guide.
    Motion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Pose layers (or motion layers for [`Layout::Motion`]).
    pub n_layers: usize,
    pub max_frames: usize,
    pub max_subjects: usize,
    pub text_dim: usize,
    pub layout: Layout,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            heads: 4,
            ff_dim: 128,
            dropout: 0.1,
            n_layers: 2,
            max_frames: mpgen_core::repr::MAX_FRAMES,
            max_subjects: mpgen_core::repr::MAX_SUBJECTS,
            text_dim: mpgen_core::textcond::DEFAULT_TEXT_DIM,
            layout: Layout::Pose,
        }
    }
}

impl ModelConfig {
    /// Full-scale configuration: latent 512, eight layers.
    pub fn paper_scale() -> Self {
        Self {
            latent_dim: 512,
            heads: 8,
            ff_dim: 1024,
            n_layers: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.latent_dim.is_multiple_of(self.heads) {
            return Err(ModelError::Config("latent_dim must be divisible by heads".into()));
        }
        if self.latent_dim < 2 || self.n_layers == 0 || self.ff_dim == 0 {
            return Err(ModelError::Config("latent_dim, n_layers and ff_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Optional center-frame pose condition.
#[derive(Debug, Clone)]
pub struct CenterPose {
    /// `B x N x 158`, masked by the subject mask of the owning [`Conditioning`].
    pub poses: Tensor,
    /// `B`, 1 where a pose is given and 0 for the null condition.
    pub present: Tensor,
}

/// Text, masks and optional center pose for a batch.
#[derive(Debug, Clone)]
pub struct Conditioning {
    /// `B x d_text`; all-zero rows are the null condition.
    pub text: Tensor,
    /// `B x F`, 1 for valid frames.
    pub frame_mask: Tensor,
    /// `B x N`, 1 for valid subjects.
    pub subject_mask: Tensor,
    pub center: Option<CenterPose>,
}

impl Conditioning {
    /// Full masks, given text and no pose condition.
    pub fn unmasked(text: &Tensor, frames: usize, subjects: usize) -> Result<Self> {
        let b = text.dim(0)?;
        let dev = text.device();
        Ok(Self {
            text: text.clone(),
            frame_mask: Tensor::ones((b, frames), DType::F32, dev)?,
            subject_mask: Tensor::ones((b, subjects), DType::F32, dev)?,
            center: None,
        })
    }

    /// Same masks and pose condition with every text row nulled.
    pub fn with_null_text(&self) -> Result<Self> {
        Ok(Self {
            text: self.text.zeros_like()?,
            ..self.clone()
        })
    }

    /// `B x F x N x 1` validity of every slot.
    pub fn validity(&self) -> Result<Tensor> {
        let (b, f) = self.frame_mask.dims2()?;
        let n = self.subject_mask.dim(1)?;
        let fm = self.frame_mask.reshape((b, f, 1, 1))?;
        let sm = self.subject_mask.reshape((b, 1, n, 1))?;
        Ok(fm.broadcast_mul(&sm)?)
    }
}

/// Transformer denoiser predicting the clean sample.
#[derive(Debug)]
pub struct Denoiser {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn layer_names(prefix: &str) -> [String; 2] {
    [format!("{prefix}.attn.o"), format!("{prefix}.ff.2")]
}

impl Denoiser {
    pub fn new(config: ModelConfig, seed: u64, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new(device, seed);
        let c = config.latent_dim;
        params.add_linear("input", POSE_DIM, c, true, false)?;
        params.add_linear("output", c, POSE_DIM, true, false)?;
        params.add_mlp("time", c, c, c, true)?;
        params.add_mlp("text", config.text_dim, c, c, false)?;
        let mut model = Self { config, params };
        match model.config.layout {
            Layout::Pose => {
                for i in 0..model.config.n_layers {
                    model.add_layer(&format!("pose.{i}"), false)?;
                }
            }
            Layout::Interleaved => {
                model.add_pose_condition()?;
                for i in 0..model.config.n_layers {
                    model.add_layer(&format!("pose.{i}"), false)?;
                    model.add_layer(&format!("motion.{i}"), true)?;
                }
            }
            Layout::Motion => {
                model.add_pose_condition()?;
                for i in 0..model.config.n_layers {
                    model.add_layer(&format!("motion.{i}"), false)?;
                }
            }
        }
        Ok(model)
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    fn add_layer(&mut self, prefix: &str, zero_out: bool) -> Result<()> {
        let (c, ff) = (self.config.latent_dim, self.config.ff_dim);
        let p = &mut self.params;
        p.add_layer_norm(&format!("{prefix}.ln1"), c)?;
        for proj in ["q", "k", "v"] {
            p.add_linear(&format!("{prefix}.attn.{proj}"), c, c, true, false)?;
        }
        p.add_linear(&format!("{prefix}.attn.o"), c, c, true, zero_out)?;
        p.add_layer_norm(&format!("{prefix}.ln2"), c)?;
        p.add_linear(&format!("{prefix}.ff.0"), c, ff, true, false)?;
        p.add_linear(&format!("{prefix}.ff.2"), ff, c, true, zero_out)?;
        Ok(())
    }

    fn add_pose_condition(&mut self) -> Result<()> {
        let c = self.config.latent_dim;
        let input = self.config.max_subjects * POSE_DIM + c;
        self.params.add_mlp("posecond", input, c, c, true)?;
        self.params.add_mlp("posetime", c, c, c, true)?;
        self.params.uniform("posecond.null", &[c], 0.02)
    }

    /// Stage-2 model built from a stage-1 model: every stage-1 parameter is
    /// copied and frozen, and each inserted motion layer starts as the
    /// identity.
    pub fn insert_motion_layers(stage1: &Denoiser, seed: u64) -> Result<Denoiser> {
        if stage1.config.layout != Layout::Pose {
            return Err(ModelError::Config("motion layers are inserted into a pose-only model".into()));
        }
        let config = ModelConfig {
            layout: Layout::Interleaved,
            ..stage1.config.clone()
        };
        let frozen: BTreeSet<String> = stage1.params.names().map(str::to_owned).collect();
        let mut model = Denoiser {
            config,
            params: stage1.params.duplicate(seed)?,
        };
        model.add_pose_condition()?;
        for i in 0..model.config.n_layers {
            model.add_layer(&format!("motion.{i}"), true)?;
        }
        model.params.set_frozen(frozen);
        Ok(model)
    }

    /// Names of the parameters that motion-layer insertion zero-initializes.
    pub fn identity_init_names(&self) -> Vec<String> {
        (0..self.config.n_layers)
            .flat_map(|i| layer_names(&format!("motion.{i}")))
            .flat_map(|n| [format!("{n}.weight"), format!("{n}.bias")])
            .collect()
    }

    /// `MLP(sinusoid(t)) + MLP(text)`; the text MLP has no biases so a null
    /// text contributes exactly zero. Returns `B x C`.
    pub fn condition_token(&self, t: &[usize], text: &Tensor) -> Result<Tensor> {
        let time = self.time_token("time", t)?;
        let text = self.params.mlp("text", text)?;
        Ok((time + text)?)
    }

    fn time_token(&self, name: &str, t: &[usize]) -> Result<Tensor> {
        let pos: Vec<f64> = t.iter().map(|&t| t as f64).collect();
        let emb = sinusoid(&pos, self.config.latent_dim, self.device())?;
        self.params.mlp(name, &emb)
    }

    /// Pose-condition tokens for `frames`-frame inputs, one per subject track.
    /// The track's own center pose leads the flattened, masked group pose,
    /// followed by the others in order; this is concatenated with the
    /// positional encoding of the middle frame, sent through an MLP and summed
    /// with a separate timestep projection. Absent poses use a learned null
    /// token. Returns `B x N x C` for `n` subjects.
    pub fn pose_condition_token(&self, t: &[usize], cond: &Conditioning, frames: usize) -> Result<Tensor> {
        let b = t.len();
        let c = self.config.latent_dim;
        let n = cond.subject_mask.dim(1)?;
        let max_n = self.config.max_subjects;
        if n > max_n {
            return Err(ModelError::ShapeMismatch(format!("{n} subjects exceed {max_n}")));
        }
        let time = self.time_token("posetime", t)?.reshape((b, 1, c))?;
        let null = self.params.get("posecond.null")?.reshape((1, 1, c))?.broadcast_as((b, n, c))?;
        let Some(center) = &cond.center else {
            return Ok(null.broadcast_add(&time)?);
        };
        if center.poses.dims() != [b, n, POSE_DIM] {
            return Err(ModelError::ShapeMismatch(format!("center pose {:?} for {b} x {n}", center.poses.dims())));
        }
        let masked = center.poses.broadcast_mul(&cond.subject_mask.unsqueeze(2)?)?;
        let pad = (n < max_n).then(|| Tensor::zeros((b, max_n - n, POSE_DIM), DType::F32, self.device())).transpose()?;
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let mut parts = vec![masked.narrow(1, i, n - i)?];
            if i > 0 {
                parts.push(masked.narrow(1, 0, i)?);
            }
            parts.extend(pad.clone());
            rows.push(Tensor::cat(&parts, 1)?.reshape((b, 1, max_n * POSE_DIM))?);
        }
        let flat = Tensor::cat(&rows, 1)?;
        let pe = sinusoid(&[(frames / 2) as f64], c, self.device())?.reshape((1, 1, c))?.broadcast_as((b, n, c))?;
        let given = self.params.mlp("posecond", &Tensor::cat(&[&flat, &pe], 2)?)?;
        let present = center.present.reshape((b, 1, 1))?;
        let absent = present.affine(-1.0, 1.0)?;
        let token = (given.broadcast_mul(&present)? + null.broadcast_mul(&absent)?)?;
        Ok(token.broadcast_add(&time)?)
    }

    fn attention(&self, prefix: &str, z: &Tensor, key_mask: &Tensor) -> Result<Tensor> {
        let (b, l, c) = z.dims3()?;
        let h = self.config.heads;
        let d = c / h;
        let split = |name: &str| -> Result<Tensor> {
            let y = self.params.linear(&format!("{prefix}.attn.{name}"), z)?;
            Ok(y.reshape((b, l, h, d))?.transpose(1, 2)?.contiguous()?)
        };
        let (q, k, v) = (split("q")?, split("k")?, split("v")?);
        let scores = (q.matmul(&k.t()?)? * (1.0 / (d as f64).sqrt()))?;
        let bias = key_mask.affine(1e9, -1e9)?.reshape((b, 1, 1, l))?;
        let attn = candle_nn::ops::softmax(&scores.broadcast_add(&bias)?, 3)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, l, c))?;
        self.params.linear(&format!("{prefix}.attn.o"), &out)
    }

    /// Residual increment of one pre-norm encoder layer on `z` (`B' x L x C`).
    fn layer_delta(
        &self,
        prefix: &str,
        z: &Tensor,
        key_mask: &Tensor,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let p = self.config.dropout;
        let a = self.attention(prefix, &self.params.layer_norm(&format!("{prefix}.ln1"), z)?, key_mask)?;
        let a = dropout(&a, p, rng.as_deref_mut())?;
        let z1 = (z + &a)?;
        let hidden = self.params.linear(&format!("{prefix}.ff.0"), &self.params.layer_norm(&format!("{prefix}.ln2"), &z1)?)?;
        let f = self.params.linear(&format!("{prefix}.ff.2"), &hidden.gelu_erf()?)?;
        let f = dropout(&f, p, rng)?;
        Ok((a + f)?)
    }

    /// One pose layer: frames folded into the batch, attention over the
    /// condition token and the valid subjects of each frame.
    pub fn pose_layer_forward(
        &self,
        layer: usize,
        h: &Tensor,
        token: &Tensor,
        subject_mask: &Tensor,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let (b, f, n, c) = h.dims4()?;
        let seq = h.reshape((b * f, n, c))?;
        let tok = token.reshape((b, 1, 1, c))?.broadcast_as((b, f, 1, c))?.reshape((b * f, 1, c))?;
        let z = Tensor::cat(&[&tok, &seq], 1)?;
        let keys = subject_mask.reshape((b, 1, n))?.broadcast_as((b, f, n))?.reshape((b * f, n))?;
        let keys = Tensor::cat(&[&Tensor::ones((b * f, 1), DType::F32, h.device())?, &keys], 1)?;
        let delta = self.layer_delta(&format!("pose.{layer}"), &z, &keys, rng)?;
        Ok((z + delta)?.narrow(1, 1, n)?.reshape((b, f, n, c))?)
    }

    /// One motion layer: subjects folded into the batch, sinusoidal frame
    /// encoding, attention over the condition token and the valid frames.
    /// The positional encoding is not carried into the output.
    pub fn motion_layer_forward(
        &self,
        layer: usize,
        h: &Tensor,
        token: &Tensor,
        frame_mask: &Tensor,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let (b, f, n, c) = h.dims4()?;
        let seq = h.permute((0, 2, 1, 3))?.reshape((b * n, f, c))?;
        let pos: Vec<f64> = (0..f).map(|i| i as f64).collect();
        let pe = sinusoid(&pos, c, h.device())?;
        let tok = token.reshape((b * n, 1, c))?;
        let z = Tensor::cat(&[&tok, &seq.broadcast_add(&pe)?], 1)?;
        let keys = frame_mask.reshape((b, 1, f))?.broadcast_as((b, n, f))?.reshape((b * n, f))?;
        let keys = Tensor::cat(&[&Tensor::ones((b * n, 1), DType::F32, h.device())?, &keys], 1)?;
        let delta = self.layer_delta(&format!("motion.{layer}"), &z, &keys, rng)?;
        let out = (seq + delta.narrow(1, 1, f)?)?;
        Ok(out.reshape((b, n, f, c))?.permute((0, 2, 1, 3))?.contiguous()?)
    }

    /// Predicts `x0` from `x_t` (`B x F x N x 158`) at denoiser timesteps `t`.
    /// `rng` enables dropout. Padded slots of the output are zero.
    pub fn forward(
        &self,
        x_t: &Tensor,
        t: &[usize],
        cond: &Conditioning,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let (b, f, n, d) = x_t.dims4()?;
        if d != POSE_DIM || t.len() != b || cond.frame_mask.dims() != [b, f] || cond.subject_mask.dims() != [b, n] {
            return Err(ModelError::ShapeMismatch(format!(
                "input {:?}, {} timesteps, frame mask {:?}, subject mask {:?}",
                x_t.dims(),
                t.len(),
                cond.frame_mask.dims(),
                cond.subject_mask.dims()
            )));
        }
        if f > self.config.max_frames || n > self.config.max_subjects {
            return Err(ModelError::ShapeMismatch(format!("{f} frames x {n} subjects exceed maxima")));
        }
        if self.config.layout == Layout::Pose && f != 1 {
            return Err(ModelError::ShapeMismatch(format!("pose model takes single frames, got {f}")));
        }
        let valid = cond.validity()?;
        let x = x_t.broadcast_mul(&valid)?;
        let mut h = self.params.linear("input", &x)?.broadcast_mul(&valid)?;
        let text_token = self.condition_token(t, &cond.text)?;
        match self.config.layout {
            Layout::Pose => {
                for i in 0..self.config.n_layers {
                    h = self.pose_layer_forward(i, &h, &text_token, &cond.subject_mask, rng.as_deref_mut())?;
                    h = h.broadcast_mul(&valid)?;
                }
            }
            Layout::Interleaved => {
                let pose_token = self.pose_condition_token(t, cond, f)?;
                for i in 0..self.config.n_layers {
                    h = self.pose_layer_forward(i, &h, &text_token, &cond.subject_mask, rng.as_deref_mut())?;
                    h = h.broadcast_mul(&valid)?;
                    h = self.motion_layer_forward(i, &h, &pose_token, &cond.frame_mask, rng.as_deref_mut())?;
                    h = h.broadcast_mul(&valid)?;
                }
            }
            Layout::Motion => {
                let token = self.pose_condition_token(t, cond, f)?.broadcast_add(&text_token.unsqueeze(1)?)?;
                for i in 0..self.config.n_layers {
                    h = self.motion_layer_forward(i, &h, &token, &cond.frame_mask, rng.as_deref_mut())?;
                    h = h.broadcast_mul(&valid)?;
                }
            }
        }
        Ok(self.params.linear("output", &h)?.broadcast_mul(&valid)?)
    }
}
