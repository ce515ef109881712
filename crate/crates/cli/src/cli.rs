//! Command-line surface.

use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::Device;
use clap::{Args, Parser, Subcommand};
use mpgen_core::corpus::{make_toy_corpus, parse_toy_prompt, toy_group_motion, toy_prompts, ToySpec};
use mpgen_core::curation::CurationConfig;
use mpgen_core::kinematics::{CapsuleBody, Skeleton};
use mpgen_core::repr::{GroupMotion, MotionSample, SourceTag};
use mpgen_core::textcond::{subject_count, HashedNgramEncoder};
use mpgen_model::diffusion::{two_stage_sample_with_count, Models};
use mpgen_model::evalsuite::{
    baseline_motion_only, baseline_pose_only, decomposed_evaluate, eval_frame_indices, train_contrastive,
    EncoderConfig, EncoderKind, Encoders, FeatureEncoder, ReferenceFeatures,
};
use mpgen_model::trainer::{train_motion_model, train_stage1, train_stage2, TrainOutcome};
use mpgen_model::{Denoiser, Layout};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{motion_files, read_datasets, write_datasets};
use crate::error::{CliError, Result};
use crate::llm::SubjectCounter;
use crate::motion_file::{read_motion_file, write_motion_file, MotionFile};
use crate::records::{save_jsonl, CurationRecord, LossLine};
use crate::refine::{refine_sample, Geometry, RefineOps};
use crate::render::{render_motion, RenderOptions, View};

#[derive(Debug, Parser)]
#[command(name = "mpgen", version, about = "Multi-person text-to-motion generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a procedural toy corpus as DIR/<SOURCE>/NNNNN.motion files
    SynthData(SynthArgs),
    /// Apply curation operators to motion files
    Refine(RefineArgs),
    /// Train the single-frame pose model
    TrainStage1(TrainArgs),
    /// Grow a stage-1 model into the interleaved motion model and train it
    TrainStage2(Stage2Args),
    /// Train the single-person motion model used for motion guidance
    TrainMotion(TrainArgs),
    /// Train the pose and motion feature encoders used for evaluation
    TrainEncoders(EncoderArgs),
    /// Sample a motion from a text prompt
    Generate(GenerateArgs),
    /// Score a generator with the decomposed metric suite
    Evaluate(EvaluateArgs),
    /// Draw a motion file as a PNG sequence
    Render(RenderArgs),
}

/// Setting overrides collected from flags, as config `(key, value)` pairs.
type Overrides = Vec<(&'static str, String)>;

fn push<T: ToString>(out: &mut Overrides, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((key, v.to_string()));
    }
}

fn push_path(out: &mut Overrides, key: &'static str, v: &Option<PathBuf>) {
    if let Some(v) = v {
        out.push((key, v.display().to_string()));
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file of `key = value` lines; its settings override flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    fn collect(&self, out: &mut Overrides) {
        push(out, "seed", &self.seed);
    }
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ff_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

impl ModelFlags {
    fn collect(&self, out: &mut Overrides) {
        push(out, "model.latent_dim", &self.latent_dim);
        push(out, "model.heads", &self.heads);
        push(out, "model.ff_dim", &self.ff_dim);
        push(out, "model.layers", &self.layers);
        push(out, "model.dropout", &self.dropout);
    }
}

#[derive(Debug, Args)]
pub struct ScheduleFlags {
    /// Noise schedule: linear or cosine
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub diffusion_steps: Option<usize>,
}

impl ScheduleFlags {
    fn collect(&self, out: &mut Overrides) {
        push(out, "schedule", &self.schedule);
        push(out, "diffusion_steps", &self.diffusion_steps);
    }
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Corpus directory of motion files
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output checkpoint
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub text_dropout: Option<f64>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    /// Source proportions, e.g. LP=0.5,WVM=0.1,HML=0.15,HML_C=0.1,IH=0.15
    #[arg(long)]
    pub mix: Option<String>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// JSON-lines loss log
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleFlags,
    #[command(flatten)]
    pub common: Common,
}

impl TrainFlags {
    fn collect(&self, out: &mut Overrides) {
        push_path(out, "path.data", &self.data);
        push_path(out, "path.out", &self.out);
        push(out, "train.steps", &self.steps);
        push(out, "train.batch_size", &self.batch_size);
        push(out, "train.lr", &self.lr);
        push(out, "train.text_dropout", &self.text_dropout);
        push(out, "train.max_frames", &self.max_frames);
        push(out, "mix", &self.mix);
        push(out, "train.log_every", &self.log_every);
        push_path(out, "path.loss_log", &self.loss_log);
        push(out, "train.checkpoint_every", &self.checkpoint_every);
        push_path(out, "path.checkpoint_dir", &self.checkpoint_dir);
        self.schedule.collect(out);
        self.common.collect(out);
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Args)]
pub struct Stage2Args {
    /// Stage-1 checkpoint to grow
    #[arg(long)]
    pub stage1: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output corpus directory
    #[arg(long)]
    pub out: PathBuf,
    /// Samples per source, e.g. LP=200,WVM=40,HML=60,HML_C=40,IH=60
    #[arg(long)]
    pub counts: Option<String>,
    #[arg(long, default_value_t = 61)]
    pub frames: usize,
    #[arg(long, default_value_t = 4)]
    pub max_group: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Motion file or directory of motion files
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory; relative paths under the input are kept
    #[arg(long)]
    pub out: PathBuf,
    /// Drop subjects with too few joints inside the camera frame
    #[arg(long)]
    pub filter_contained: bool,
    /// Drop subjects whose projected box overlaps an earlier one
    #[arg(long)]
    pub dedup: bool,
    /// Put every subject's lowest joint on the ground
    #[arg(long)]
    pub height_adjust: bool,
    /// Push interpenetrating subjects apart
    #[arg(long)]
    pub separate: bool,
    /// Gaussian smoothing scale in frames
    #[arg(long)]
    pub smooth: Option<f64>,
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    #[arg(long)]
    pub containment_threshold: Option<f64>,
    #[arg(long)]
    pub separation_steps: Option<usize>,
    #[arg(long)]
    pub separation_lr: Option<f64>,
    #[arg(long)]
    pub ground_y: Option<f64>,
    /// JSON-lines curation report
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EncoderArgs {
    /// Corpus directory of motion files
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory receiving pose_encoder.safetensors and motion_encoder.safetensors
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SamplingFlags {
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub cfg_scale: Option<f64>,
    #[arg(long)]
    pub pose_scale: Option<f64>,
    #[arg(long)]
    pub motion_scale: Option<f64>,
    /// Overwrite the center frame of every prediction with the sampled pose
    #[arg(long)]
    pub fix_center: bool,
    /// Sample on this many respaced steps
    #[arg(long)]
    pub sample_steps: Option<usize>,
    #[arg(long)]
    pub stage1: Option<PathBuf>,
    #[arg(long)]
    pub stage2: Option<PathBuf>,
    /// Single-person motion model for motion guidance
    #[arg(long)]
    pub motion_model: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleFlags,
}

impl SamplingFlags {
    fn collect(&self, out: &mut Overrides) {
        push(out, "frames", &self.frames);
        push(out, "cfg_scale", &self.cfg_scale);
        push(out, "pose_scale", &self.pose_scale);
        push(out, "motion_scale", &self.motion_scale);
        if self.fix_center {
            out.push(("fix_center", "true".into()));
        }
        push(out, "sample_steps", &self.sample_steps);
        push_path(out, "path.stage1", &self.stage1);
        push_path(out, "path.stage2", &self.stage2);
        push_path(out, "path.motion_model", &self.motion_model);
        self.schedule.collect(out);
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub prompt: String,
    /// Output motion file
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the sampled center pose
    #[arg(long)]
    pub pose_out: Option<PathBuf>,
    /// Number of people; otherwise counted from the prompt
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Subject-count service URL
    #[arg(long)]
    pub llm_endpoint: Option<String>,
    /// Environment variable holding the service API key
    #[arg(long)]
    pub llm_key_env: Option<String>,
    #[command(flatten)]
    pub sampling: SamplingFlags,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GeneratorKind {
    TwoStage,
    PoseOnly,
    MotionOnly,
    /// The procedural corpus generator; parses template prompts
    Toy,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum, default_value = "two-stage")]
    pub generator: GeneratorKind,
    /// One prompt per line; defaults to the toy template prompts
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Real motions for the distribution metrics; defaults to procedural ones
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub pose_encoder: Option<PathBuf>,
    #[arg(long)]
    pub motion_encoder: Option<PathBuf>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Report file; printed to stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub sampling: SamplingFlags,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for frame_NNNN.png
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub size: u32,
    /// front or top
    #[arg(long, default_value = "front")]
    pub view: View,
}

/// Defaults, then flags, then the config file; validated.
fn build_config(overrides: &Overrides, config: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (k, v) in overrides {
        cfg.set(k, v).map_err(|e| CliError::Usage(format!("{k}: {e}")))?;
    }
    if let Some(path) = config {
        cfg.apply_file(path).map_err(|e| match e {
            CliError::File { source, .. } if matches!(*source, CliError::Io(_)) => {
                CliError::Usage(format!("cannot read config {}: {source}", path.display()))
            }
            e => CliError::Usage(e.to_string()),
        })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cpu() -> Device {
    Device::Cpu
}

fn write_loss_log(cfg: &RunConfig, stage: &str, outcome: &TrainOutcome) -> Result<()> {
    if let Some(path) = cfg.path("path.loss_log") {
        save_jsonl(path, &LossLine::from_records(stage, &outcome.losses))?;
    }
    Ok(())
}

fn report_training(err: &mut dyn Write, stage: &str, outcome: &TrainOutcome, out: &Path) -> Result<()> {
    if let (Some(first), Some(last)) = (outcome.losses.first(), outcome.losses.last()) {
        writeln!(
            err,
            "{stage}: loss {:.4} at step {} -> {:.4} at step {}",
            first.loss, first.step, last.loss, last.step
        )?;
    }
    writeln!(err, "{stage}: wrote {}", out.display())?;
    Ok(())
}

fn parse_counts(text: &str) -> Result<Vec<(SourceTag, usize)>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let parsed = part.split_once('=').and_then(|(t, c)| Some((SourceTag::parse(t.trim())?, c.trim().parse().ok()?)));
        out.push(parsed.ok_or_else(|| CliError::Usage(format!("--counts: expected TAG=count, found {part:?}")))?);
    }
    Ok(out)
}

fn synth_data(a: &SynthArgs, err: &mut dyn Write) -> Result<()> {
    let mut ov = Overrides::new();
    a.common.collect(&mut ov);
    let cfg = build_config(&ov, a.common.config.as_deref())?;
    if a.frames == 0 || a.frames > mpgen_core::repr::MAX_FRAMES || a.max_group == 0 {
        return Err(CliError::Usage("--frames must lie in [1, 61] and --max-group be positive".into()));
    }
    let mut spec = ToySpec {
        frames: a.frames,
        max_group: a.max_group,
        ..ToySpec::default()
    };
    if let Some(c) = &a.counts {
        spec.counts = parse_counts(c)?;
    }
    let data = make_toy_corpus(&spec, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let n = write_datasets(&a.out, &data)?;
    writeln!(err, "wrote {n} motion files to {}", a.out.display())?;
    Ok(())
}

fn refine(a: &RefineArgs, err: &mut dyn Write) -> Result<()> {
    let mut ov = Overrides::new();
    push(&mut ov, "curation.iou_threshold", &a.iou_threshold);
    push(&mut ov, "curation.containment_threshold", &a.containment_threshold);
    push(&mut ov, "curation.separation_steps", &a.separation_steps);
    push(&mut ov, "curation.separation_lr", &a.separation_lr);
    push(&mut ov, "curation.ground_y", &a.ground_y);
    a.common.collect(&mut ov);
    let cfg = build_config(&ov, a.common.config.as_deref())?;
    let ops = RefineOps {
        filter_contained: a.filter_contained,
        dedup: a.dedup,
        height_adjust: a.height_adjust,
        separate: a.separate,
        smooth: a.smooth,
    };
    if !ops.any() {
        return Err(CliError::Usage("choose at least one of --filter-contained, --dedup, --height-adjust, --separate, --smooth".into()));
    }
    if a.smooth.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
        return Err(CliError::Usage("--smooth must be a positive scale".into()));
    }
    let geo = Geometry::default();
    let files = motion_files(&a.input)?;
    let mut report: Vec<CurationRecord> = Vec::new();
    for path in &files {
        let rel = if a.input.is_dir() {
            path.strip_prefix(&a.input).unwrap_or(path).to_path_buf()
        } else {
            PathBuf::from(path.file_name().unwrap_or_default())
        };
        let file = read_motion_file(path)?;
        let name = rel.display().to_string();
        let (sample, records) = refine_sample(&file.sample, &ops, &cfg.curation, cfg.ground_y, &geo, &name)
            .map_err(|e| e.in_file(path))?;
        write_motion_file(
            &MotionFile {
                sample,
                extra: file.extra,
            },
            &a.out.join(&rel),
        )?;
        report.extend(records);
    }
    if let Some(p) = &a.report {
        save_jsonl(p, &report)?;
    }
    writeln!(err, "refined {} files into {}", files.len(), a.out.display())?;
    Ok(())
}

fn train(a: &TrainArgs, layout: Layout, err: &mut dyn Write) -> Result<()> {
    let mut ov = Overrides::new();
    a.train.collect(&mut ov);
    a.model.collect(&mut ov);
    let cfg = build_config(&ov, a.train.common.config.as_deref())?;
    let data_dir = cfg.require_path("path.data", "--data")?;
    let out = cfg.require_path("path.out", "--out")?.to_path_buf();
    let data = read_datasets(data_dir)?;
    let (stage, outcome) = match layout {
        Layout::Pose => ("stage1", train_stage1(&cfg.train_config(), &cfg.model_config(layout), &data, &cfg.mix, &cpu())?),
        _ => ("motion", train_motion_model(&cfg.train_config(), &cfg.model_config(layout), &data, &cfg.mix, &cpu())?),
    };
    outcome.model.save(&out)?;
    write_loss_log(&cfg, stage, &outcome)?;
    report_training(err, stage, &outcome, &out)
}

fn train_second_stage(a: &Stage2Args, err: &mut dyn Write) -> Result<()> {
    let mut ov = Overrides::new();
    a.train.collect(&mut ov);
    push_path(&mut ov, "path.stage1", &a.stage1);
    let cfg = build_config(&ov, a.train.common.config.as_deref())?;
    let stage1_path = cfg.require_path("path.stage1", "--stage1")?;
    let data_dir = cfg.require_path("path.data", "--data")?;
    let out = cfg.require_path("path.out", "--out")?.to_path_buf();
    let stage1 = Denoiser::load(stage1_path, &cpu())?;
    let data = read_datasets(data_dir)?;
    let outcome = train_stage2(&cfg.train_config(), Some(&stage1), &data, &cfg.mix)?;
    outcome.model.save(&out)?;
    write_loss_log(&cfg, "stage2", &outcome)?;
    report_training(err, "stage2", &outcome, &out)
}

pub const POSE_ENCODER_FILE: &str = "pose_encoder.safetensors";
pub const MOTION_ENCODER_FILE: &str = "motion_encoder.safetensors";

pub type TextPair = (String, GroupMotion);

/// Text-labelled group frames at the evaluation indices and subject tracks.
pub fn encoder_pairs(samples: &[MotionSample]) -> (Vec<TextPair>, Vec<TextPair>) {
    let (mut pose, mut motion) = (Vec::new(), Vec::new());
    for s in samples.iter().filter(|s| !s.text.is_empty()) {
        let m = &s.motion;
        for f in eval_frame_indices(m.frames()) {
            if m.frame_mask[f] && (0..m.subjects()).any(|n| m.is_valid(f, n)) {
                pose.push((s.text.clone(), m.frame(f)));
            }
        }
        if m.frames() > 1 {
            for n in (0..m.subjects()).filter(|&n| m.subject_mask[n]) {
                motion.push((s.text.clone(), m.subject_track(n)));
            }
        }
    }
    (pose, motion)
}

fn train_encoders(a: &EncoderArgs, err: &mut dyn Write) -> Result<()> {
    let mut ov = Overrides::new();
    push_path(&mut ov, "path.data", &a.data);
    push_path(&mut ov, "path.out", &a.out);
    push(&mut ov, "encoder.steps", &a.steps);
    push(&mut ov, "encoder.batch_size", &a.batch_size);
    push(&mut ov, "encoder.lr", &a.lr);
    a.common.collect(&mut ov);
    let cfg = build_config(&ov, a.common.config.as_deref())?;
    let data = read_datasets(cfg.require_path("path.data", "--data")?)?;
    let out = cfg.require_path("path.out", "--out")?;
    let samples: Vec<MotionSample> = data.into_values().flatten().collect();
    let (pose_pairs, motion_pairs) = encoder_pairs(&samples);
    let text = HashedNgramEncoder::default();
    let ccfg = cfg.contrastive_config();
    std::fs::create_dir_all(out)?;
    for (kind, pairs, file) in [
        (EncoderKind::Pose, &pose_pairs, POSE_ENCODER_FILE),
        (EncoderKind::Motion, &motion_pairs, MOTION_ENCODER_FILE),
    ] {
        let (enc, losses) = train_contrastive(pairs, EncoderConfig::new(kind), &ccfg, &text, &cpu())?;
        enc.save(&out.join(file))?;
        let last = losses.last().copied().unwrap_or(f64::NAN);
        writeln!(err, "{kind:?} encoder: {} pairs, final loss {last:.4}", pairs.len())?;
    }
    Ok(())
}

fn counter(cfg: &RunConfig) -> Option<SubjectCounter> {
    cfg.llm_config().map(SubjectCounter::new)
}

fn generate(a: &GenerateArgs, err: &mut dyn Write) -> Result<()> {
    let mut ov = Overrides::new();
    a.sampling.collect(&mut ov);
    push(&mut ov, "llm.endpoint", &a.llm_endpoint);
    push(&mut ov, "llm.api_key_env", &a.llm_key_env);
    a.common.collect(&mut ov);
    // validates guidance before any checkpoint is opened
    let cfg = build_config(&ov, a.common.config.as_deref())?;
    if cfg.guidance.motion_scale > 0.0 && cfg.path("path.motion_model").is_none() {
        return Err(CliError::Usage("--motion-scale needs --motion-model".into()));
    }
    let subjects = match a.subjects {
        Some(n) if (1..=mpgen_core::repr::MAX_SUBJECTS).contains(&n) => n,
        Some(n) => return Err(CliError::Usage(format!("--subjects {n} outside [1, 10]"))),
        None => counter(&cfg).map_or_else(|| subject_count(&a.prompt), |c| c.count(&a.prompt)),
    };
    let stage1_path = cfg.require_path("path.stage1", "--stage1")?;
    let stage2_path = cfg.require_path("path.stage2", "--stage2")?;
    let stage1 = Denoiser::load(stage1_path, &cpu())?;
    let stage2 = Denoiser::load(stage2_path, &cpu())?;
    let motion = cfg.path("path.motion_model").map(|p| Denoiser::load(p, &cpu())).transpose()?;
    let models = Models {
        stage1: &stage1,
        stage2: &stage2,
        motion: motion.as_ref(),
    };
    let text = HashedNgramEncoder {
        dim: stage1.config.text_dim,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (m, pose) = two_stage_sample_with_count(
        models,
        &a.prompt,
        subjects,
        &text,
        &cfg.sampling_schedule()?,
        &cfg.sample_options(),
        &mut rng,
    )?;
    let wrap = |m: GroupMotion| {
        let mut s = MotionSample::new(m, a.prompt.clone(), SourceTag::Synth);
        s.height_adjusted = false;
        MotionFile::from(s)
    };
    write_motion_file(&wrap(m), &a.out)?;
    if let Some(p) = &a.pose_out {
        write_motion_file(&wrap(pose), p)?;
    }
    writeln!(err, "generated {subjects} subjects x {} frames -> {}", cfg.frames, a.out.display())?;
    Ok(())
}

fn toy_motion(prompt: &str, frames: usize, rng: &mut ChaCha8Rng) -> mpgen_model::Result<GroupMotion> {
    let (action, n) = parse_toy_prompt(prompt)
        .ok_or_else(|| mpgen_model::ModelError::Config(format!("not a toy template prompt: {prompt:?}")))?;
    Ok(toy_group_motion(
        action,
        n,
        frames,
        rng,
        &Skeleton::default(),
        &CapsuleBody::default(),
        &CurationConfig::default(),
    )?)
}

fn read_prompts(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::from(e).in_file(path))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn evaluate(a: &EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut ov = Overrides::new();
    a.sampling.collect(&mut ov);
    push(&mut ov, "eval.repeats", &a.repeats);
    push_path(&mut ov, "path.pose_encoder", &a.pose_encoder);
    push_path(&mut ov, "path.motion_encoder", &a.motion_encoder);
    push_path(&mut ov, "path.reference", &a.reference);
    push_path(&mut ov, "path.report", &a.out);
    a.common.collect(&mut ov);
    let cfg = build_config(&ov, a.common.config.as_deref())?;
    if a.generator == GeneratorKind::TwoStage && cfg.guidance.motion_scale > 0.0 && cfg.path("path.motion_model").is_none() {
        return Err(CliError::Usage("--motion-scale needs --motion-model".into()));
    }
    let prompts = match &a.prompts {
        Some(p) => read_prompts(p)?,
        None => toy_prompts(4),
    };
    let pose_enc = FeatureEncoder::load(cfg.require_path("path.pose_encoder", "--pose-encoder")?, &cpu())?;
    let motion_enc = FeatureEncoder::load(cfg.require_path("path.motion_encoder", "--motion-encoder")?, &cpu())?;
    let text = HashedNgramEncoder {
        dim: pose_enc.config.text_dim,
    };
    let enc = Encoders {
        pose: &pose_enc,
        motion: &motion_enc,
        text: &text,
    };
    let frames = cfg.frames;
    let references: Vec<GroupMotion> = match cfg.path("path.reference") {
        Some(p) => read_datasets(p)?.into_values().flatten().map(|s| s.motion).collect(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
            prompts.iter().map(|p| toy_motion(p, frames, &mut rng)).collect::<mpgen_model::Result<_>>()?
        }
    };
    let reference = ReferenceFeatures::from_motions(&references, &enc)?;

    let load = |key: &str, flag: &str| -> Result<Denoiser> { Ok(Denoiser::load(cfg.require_path(key, flag)?, &cpu())?) };
    let sched = cfg.sampling_schedule()?;
    let opts = cfg.sample_options();
    let ecfg = cfg.eval_config();
    let report = match a.generator {
        GeneratorKind::Toy => {
            let mut g = |p: &str, _: usize, rng: &mut ChaCha8Rng| toy_motion(p, frames, rng);
            decomposed_evaluate(&mut g, &prompts, &enc, &reference, &ecfg)?
        }
        GeneratorKind::TwoStage => {
            let stage1 = load("path.stage1", "--stage1")?;
            let stage2 = load("path.stage2", "--stage2")?;
            let motion = cfg.path("path.motion_model").map(|p| Denoiser::load(p, &cpu())).transpose()?;
            let models = Models {
                stage1: &stage1,
                stage2: &stage2,
                motion: motion.as_ref(),
            };
            let counter = counter(&cfg);
            let mut g = |p: &str, _: usize, rng: &mut ChaCha8Rng| {
                let n = counter.as_ref().map_or_else(|| subject_count(p), |c| c.count(p));
                two_stage_sample_with_count(models, p, n, &text, &sched, &opts, rng).map(|r| r.0)
            };
            decomposed_evaluate(&mut g, &prompts, &enc, &reference, &ecfg)?
        }
        GeneratorKind::PoseOnly => {
            let stage1 = load("path.stage1", "--stage1")?;
            let mut g = |p: &str, _: usize, rng: &mut ChaCha8Rng| baseline_pose_only(&stage1, p, &text, &sched, &opts, rng);
            decomposed_evaluate(&mut g, &prompts, &enc, &reference, &ecfg)?
        }
        GeneratorKind::MotionOnly => {
            let stage1 = load("path.stage1", "--stage1")?;
            let motion = load("path.motion_model", "--motion-model")?;
            let mut g = |p: &str, _: usize, rng: &mut ChaCha8Rng| {
                baseline_motion_only(&stage1, &motion, p, &text, &sched, &opts, rng).map(|r| r.0)
            };
            decomposed_evaluate(&mut g, &prompts, &enc, &reference, &ecfg)?
        }
    };
    let body = report.to_text();
    match cfg.path("path.report") {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, &body).map_err(|e| CliError::from(e).in_file(p))?;
            writeln!(err, "wrote {}", p.display())?;
        }
        None => out.write_all(body.as_bytes())?,
    }
    Ok(())
}

fn render(a: &RenderArgs, err: &mut dyn Write) -> Result<()> {
    let file = read_motion_file(&a.input)?;
    let opts = RenderOptions {
        size: a.size,
        view: a.view,
        ..RenderOptions::default()
    };
    let paths = render_motion(&file.sample.motion, &a.out, &opts)?;
    writeln!(err, "wrote {} frames to {}", paths.len(), a.out.display())?;
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::SynthData(a) => synth_data(a, err),
        Command::Refine(a) => refine(a, err),
        Command::TrainStage1(a) => train(a, Layout::Pose, err),
        Command::TrainStage2(a) => train_second_stage(a, err),
        Command::TrainMotion(a) => train(a, Layout::Motion, err),
        Command::TrainEncoders(a) => train_encoders(a, err),
        Command::Generate(a) => generate(a, err),
        Command::Evaluate(a) => evaluate(a, out, err),
        Command::Render(a) => render(a, err),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status: 0 success, 1 runtime error, 2 usage error.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
                2
            } else {
                let _ = out.write_all(text.as_bytes());
                0
            };
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            let code = e.exit_code();
            if code == 2 {
                let _ = writeln!(err, "see `mpgen help` for the command contract");
            }
            code
        }
    }
}
