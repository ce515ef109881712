//! Run configuration: `key = value` lines, `#` comments.
//!
//! Every command-line flag has a config key of the same meaning. Settings
//! are applied in order (defaults, then flags, then the config file), so a
//! config file overrides flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use mpgen_core::corpus::{MixSpec, TOY_FPS};
use mpgen_core::curation::CurationConfig;
use mpgen_core::repr::SourceTag;
use mpgen_core::schedule::{NoiseSchedule, PosteriorVariance, ScheduleKind};
use mpgen_model::diffusion::{GuidanceConfig, SampleOptions};
use mpgen_model::evalsuite::{ContrastiveConfig, EvalConfig};
use mpgen_model::trainer::TrainConfig;
use mpgen_model::{Layout, ModelConfig};

use crate::error::{CliError, ParseError, Result};
use crate::llm::LlmConfig;

pub const PATH_KEYS: [&str; 11] = [
    "path.data",
    "path.out",
    "path.stage1",
    "path.stage2",
    "path.motion_model",
    "path.pose_encoder",
    "path.motion_encoder",
    "path.reference",
    "path.loss_log",
    "path.checkpoint_dir",
    "path.report",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub schedule: ScheduleKind,
    pub diffusion_steps: usize,
    /// Respaced sampling steps; `None` samples every diffusion step.
    pub sample_steps: Option<usize>,
    pub variance: PosteriorVariance,
    pub guidance: GuidanceConfig,
    pub seed: u64,
    pub frames: usize,
    pub fix_center: bool,
    pub train: TrainConfig,
    pub mix: MixSpec,
    pub encoder: ContrastiveConfig,
    pub eval: EvalConfig,
    pub curation: CurationConfig,
    pub ground_y: f64,
    pub paths: BTreeMap<String, PathBuf>,
    pub llm_endpoint: Option<String>,
    pub llm_api_key_env: String,
    pub llm_max_in_flight: usize,
    pub llm_timeout_secs: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let llm = LlmConfig::new("");
        Self {
            model: ModelConfig::default(),
            schedule: ScheduleKind::Cosine,
            diffusion_steps: 100,
            sample_steps: None,
            variance: PosteriorVariance::Posterior,
            guidance: GuidanceConfig::default(),
            seed: 0,
            frames: mpgen_core::repr::MAX_FRAMES,
            fix_center: false,
            train: TrainConfig::default(),
            mix: MixSpec::default(),
            encoder: ContrastiveConfig::default(),
            eval: EvalConfig::default(),
            curation: CurationConfig::default(),
            ground_y: 0.0,
            paths: BTreeMap::new(),
            llm_endpoint: None,
            llm_api_key_env: llm.api_key_env,
            llm_max_in_flight: llm.max_in_flight,
            llm_timeout_secs: llm.timeout.as_secs(),
        }
    }
}

fn parse<T: std::str::FromStr>(value: &str, what: &str) -> std::result::Result<T, String> {
    value.trim().parse().map_err(|_| format!("expected {what}, found {value:?}"))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        v => Err(format!("expected true or false, found {v:?}")),
    }
}

/// `LP=0.5,WVM=0.1,...`
pub fn parse_mix(value: &str) -> std::result::Result<MixSpec, String> {
    let mut ratios = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (tag, r) = part.split_once('=').ok_or_else(|| format!("expected TAG=ratio, found {part:?}"))?;
        let tag = SourceTag::parse(tag.trim()).ok_or_else(|| format!("unknown source {tag:?}"))?;
        if ratios.iter().any(|(t, _)| *t == tag) {
            return Err(format!("source {tag} listed twice"));
        }
        ratios.push((tag, parse::<f64>(r, "a ratio")?));
    }
    let mix = MixSpec { ratios };
    mix.validate().map_err(|e| e.to_string())?;
    Ok(mix)
}

pub fn mix_text(mix: &MixSpec) -> String {
    mix.ratios
        .iter()
        .map(|(t, r)| format!("{t}={r}"))
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Applies one setting; the error names what was expected.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "model.latent_dim" => self.model.latent_dim = parse(v, "an integer")?,
            "model.heads" => self.model.heads = parse(v, "an integer")?,
            "model.ff_dim" => self.model.ff_dim = parse(v, "an integer")?,
            "model.layers" => self.model.n_layers = parse(v, "an integer")?,
            "model.dropout" => self.model.dropout = parse(v, "a number")?,
            "model.text_dim" => self.model.text_dim = parse(v, "an integer")?,
            "schedule" => self.schedule = ScheduleKind::parse(v).ok_or("expected linear or cosine")?,
            "diffusion_steps" => self.diffusion_steps = parse(v, "an integer")?,
            "sample_steps" => {
                let n: usize = parse(v, "an integer")?;
                self.sample_steps = (n > 0).then_some(n);
            }
            "variance" => {
                self.variance = match v {
                    "posterior" => PosteriorVariance::Posterior,
                    "beta" => PosteriorVariance::Beta,
                    _ => return Err("expected posterior or beta".into()),
                }
            }
            "cfg_scale" => self.guidance.cfg_scale = parse(v, "a number")?,
            "pose_scale" => self.guidance.pose_scale = parse(v, "a number")?,
            "motion_scale" => self.guidance.motion_scale = parse(v, "a number")?,
            "seed" => self.seed = parse(v, "an integer")?,
            "frames" => self.frames = parse(v, "an integer")?,
            "fix_center" => self.fix_center = parse_bool(v)?,
            "train.steps" => self.train.steps = parse(v, "an integer")?,
            "train.batch_size" => self.train.batch_size = parse(v, "an integer")?,
            "train.lr" => self.train.lr = parse(v, "a number")?,
            "train.text_dropout" => self.train.text_dropout = parse(v, "a number")?,
            "train.max_frames" => self.train.max_frames = parse(v, "an integer")?,
            "train.log_every" => self.train.log_every = parse(v, "an integer")?,
            "train.checkpoint_every" => {
                let n: usize = parse(v, "an integer")?;
                self.train.checkpoint_every = (n > 0).then_some(n);
            }
            "train.rotate" => self.train.augment.rotate = parse_bool(v)?,
            "mix" => self.mix = parse_mix(v)?,
            "encoder.steps" => self.encoder.steps = parse(v, "an integer")?,
            "encoder.batch_size" => self.encoder.batch_size = parse(v, "an integer")?,
            "encoder.lr" => self.encoder.lr = parse(v, "a number")?,
            "eval.repeats" => self.eval.repeats = parse(v, "an integer")?,
            "eval.diversity_pairs" => self.eval.diversity_pairs = parse(v, "an integer")?,
            "curation.iou_threshold" => self.curation.iou_threshold = parse(v, "a number")?,
            "curation.containment_threshold" => self.curation.containment_threshold = parse(v, "a number")?,
            "curation.separation_steps" => self.curation.separation_steps = parse(v, "an integer")?,
            "curation.separation_lr" => self.curation.separation_lr = parse(v, "a number")?,
            "curation.ground_y" => self.ground_y = parse(v, "a number")?,
            "llm.endpoint" => self.llm_endpoint = (!v.is_empty()).then(|| v.to_string()),
            "llm.api_key_env" => self.llm_api_key_env = v.to_string(),
            "llm.max_in_flight" => self.llm_max_in_flight = parse(v, "an integer")?,
            "llm.timeout_secs" => self.llm_timeout_secs = parse(v, "an integer")?,
            k if PATH_KEYS.contains(&k) => {
                if v.is_empty() {
                    self.paths.remove(k);
                } else {
                    self.paths.insert(k.to_string(), PathBuf::from(v));
                }
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Applies a config document on top of the current settings.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ParseError::new(i + 1, line, "expected \"key = value\""))?;
            let key = key.trim();
            self.set(key, value).map_err(|msg| ParseError::new(i + 1, key, msg))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::from(e).in_file(path))?;
        self.apply_text(&text).map_err(|e| e.in_file(path))
    }

    /// Every setting in the form [`Self::apply_text`] reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let m = &self.model;
        let t = &self.train;
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("model.latent_dim", m.latent_dim.to_string());
        put("model.heads", m.heads.to_string());
        put("model.ff_dim", m.ff_dim.to_string());
        put("model.layers", m.n_layers.to_string());
        put("model.dropout", m.dropout.to_string());
        put("model.text_dim", m.text_dim.to_string());
        put("schedule", self.schedule.as_str().to_string());
        put("diffusion_steps", self.diffusion_steps.to_string());
        put("sample_steps", self.sample_steps.unwrap_or(0).to_string());
        let variance = match self.variance {
            PosteriorVariance::Posterior => "posterior",
            PosteriorVariance::Beta => "beta",
        };
        put("variance", variance.to_string());
        put("cfg_scale", self.guidance.cfg_scale.to_string());
        put("pose_scale", self.guidance.pose_scale.to_string());
        put("motion_scale", self.guidance.motion_scale.to_string());
        put("seed", self.seed.to_string());
        put("frames", self.frames.to_string());
        put("fix_center", self.fix_center.to_string());
        put("train.steps", t.steps.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.lr", t.lr.to_string());
        put("train.text_dropout", t.text_dropout.to_string());
        put("train.max_frames", t.max_frames.to_string());
        put("train.log_every", t.log_every.to_string());
        put("train.checkpoint_every", t.checkpoint_every.unwrap_or(0).to_string());
        put("train.rotate", t.augment.rotate.to_string());
        put("mix", mix_text(&self.mix));
        put("encoder.steps", self.encoder.steps.to_string());
        put("encoder.batch_size", self.encoder.batch_size.to_string());
        put("encoder.lr", self.encoder.lr.to_string());
        put("eval.repeats", self.eval.repeats.to_string());
        put("eval.diversity_pairs", self.eval.diversity_pairs.to_string());
        let c = &self.curation;
        put("curation.iou_threshold", c.iou_threshold.to_string());
        put("curation.containment_threshold", c.containment_threshold.to_string());
        put("curation.separation_steps", c.separation_steps.to_string());
        put("curation.separation_lr", c.separation_lr.to_string());
        put("curation.ground_y", self.ground_y.to_string());
        put("llm.endpoint", self.llm_endpoint.clone().unwrap_or_default());
        put("llm.api_key_env", self.llm_api_key_env.clone());
        put("llm.max_in_flight", self.llm_max_in_flight.to_string());
        put("llm.timeout_secs", self.llm_timeout_secs.to_string());
        for (k, p) in &self.paths {
            put(k, p.display().to_string());
        }
        s
    }

    /// Guidance invariants, checked before any model is touched.
    pub fn validate_guidance(&self) -> Result<()> {
        self.guidance.validate().map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_guidance()?;
        let usage = |e: String| CliError::Usage(e);
        self.model_config(Layout::Pose).validate().map_err(|e| usage(e.to_string()))?;
        self.curation.validate().map_err(|e| usage(e.to_string()))?;
        if self.frames == 0 || self.frames > mpgen_core::repr::MAX_FRAMES {
            return Err(usage(format!("frames must lie in [1, {}]", mpgen_core::repr::MAX_FRAMES)));
        }
        if self.diffusion_steps == 0 {
            return Err(usage("diffusion_steps must be positive".into()));
        }
        if self.sample_steps.is_some_and(|s| s > self.diffusion_steps) {
            return Err(usage("sample_steps cannot exceed diffusion_steps".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, layout: Layout) -> ModelConfig {
        ModelConfig {
            layout,
            ..self.model.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            schedule: self.schedule,
            diffusion_steps: self.diffusion_steps,
            checkpoint_dir: self.paths.get("path.checkpoint_dir").cloned(),
            ..self.train.clone()
        }
    }

    pub fn contrastive_config(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            seed: self.seed,
            ..self.encoder.clone()
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            seed: self.seed,
            ..self.eval.clone()
        }
    }

    /// Sampling schedule, respaced when `sample_steps` is set.
    pub fn sampling_schedule(&self) -> Result<NoiseSchedule> {
        let full = NoiseSchedule::new(self.schedule, self.diffusion_steps)?;
        Ok(match self.sample_steps {
            Some(n) if n < self.diffusion_steps => full.respaced(n)?,
            _ => full,
        })
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions {
            frames: self.frames,
            guidance: self.guidance,
            variance: self.variance,
            fix_center: self.fix_center,
            fps: TOY_FPS,
        }
    }

    pub fn llm_config(&self) -> Option<LlmConfig> {
        self.llm_endpoint.as_ref().map(|endpoint| LlmConfig {
            endpoint: endpoint.clone(),
            api_key_env: self.llm_api_key_env.clone(),
            max_in_flight: self.llm_max_in_flight,
            timeout: Duration::from_secs(self.llm_timeout_secs),
        })
    }

    pub fn path(&self, key: &str) -> Option<&Path> {
        self.paths.get(key).map(PathBuf::as_path)
    }

    /// A path the command cannot run without.
    pub fn require_path(&self, key: &str, flag: &str) -> Result<&Path> {
        self.path(key)
            .ok_or_else(|| CliError::Usage(format!("{flag} (config key {key}) is required")))
    }
}
