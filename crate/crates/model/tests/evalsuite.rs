mod common;

use common::*;
use mpgen_core::corpus::{parse_toy_prompt, toy_group_motion, toy_prompt, toy_prompts, ToyAction};
use mpgen_core::curation::CurationConfig;
use mpgen_core::kinematics::{CapsuleBody, Skeleton};
use mpgen_core::repr::GroupMotion;
use mpgen_core::schedule::{NoiseSchedule, ScheduleKind};
use mpgen_core::textcond::{HashedNgramEncoder, TextEncoder};
use mpgen_model::diffusion::SampleOptions;
use mpgen_model::evalsuite::*;
use mpgen_model::{Denoiser, Layout, ModelError};
use rand_chacha::ChaCha8Rng;

fn toy(prompt: &str, frames: usize, rng: &mut ChaCha8Rng) -> GroupMotion {
    let (a, n) = parse_toy_prompt(prompt).unwrap();
    toy_group_motion(a, n, frames, rng, &Skeleton::default(), &CapsuleBody::default(), &CurationConfig::default()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn eval_indices() {
    assert_eq!(eval_frame_indices(61), vec![2, 16, 30, 44, 58]);
    assert_eq!(eval_frame_indices(1), vec![0]);
    assert_eq!(eval_frame_indices(5), vec![0, 1, 2, 3, 4]);
    assert_eq!(eval_frame_indices(3), vec![1]);
    assert_eq!(eval_frame_indices(21), vec![0, 5, 10, 15, 20]);
    for f in 1..=61 {
        let idx = eval_frame_indices(f);
        assert!(idx.contains(&(f / 2)));
        assert!(idx.iter().all(|&i| i < f));
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn features_are_unit_norm() {
    let mut rng = seeded(1);
    let text = HashedNgramEncoder::default();
    for kind in [EncoderKind::Pose, EncoderKind::Motion] {
        let enc = FeatureEncoder::new(EncoderConfig::new(kind), 2, &cpu()).unwrap();
        let samples: Vec<GroupMotion> = (1..=4)
            .map(|n| {
                let m = toy(&toy_prompt(ToyAction::Wave, n), 9, &mut rng);
                let m = match kind {
                    EncoderKind::Pose => m.frame(4),
                    EncoderKind::Motion => m.subject_track(0),
                };
                encoder_input(kind, &m).unwrap()
            })
            .collect();
        for f in enc.encode(&samples).unwrap() {
            assert!((dot(&f, &f) - 1.0).abs() < 1e-5);
        }
        let t = enc.encode_text(&[text.embed("a"), text.embed("three people wave hello")]).unwrap();
        for f in t {
            assert!((dot(&f, &f) - 1.0).abs() < 1e-5);
        }
    }
    assert!(matches!(
        encoder_input(EncoderKind::Pose, &GroupMotion::zeros(3, 1, 20)).unwrap_err(),
        ModelError::ShapeMismatch(_)
    ));
}

#[test]
fn initial_loss_is_near_log_batch_size() {
    let mut rng = seeded(3);
    let text = HashedNgramEncoder::default();
    let prompts = toy_prompts(4);
    let enc = FeatureEncoder::new(EncoderConfig::new(EncoderKind::Pose), 4, &cpu()).unwrap();
    let samples: Vec<GroupMotion> = prompts.iter().map(|p| toy(p, 5, &mut rng).frame(2)).collect();
    let embs: Vec<_> = prompts.iter().map(|p| text.embed(p)).collect();
    let loss = enc.contrastive_loss(&samples, &embs).unwrap().to_scalar::<f32>().unwrap() as f64;
    let expected = (prompts.len() as f64).ln();
    assert!((loss - expected).abs() < 0.1 * expected, "{loss} vs {expected}");
}

#[test]
fn separable_classes_are_retrieved_perfectly() {
    let mut rng = seeded(5);
    let text = HashedNgramEncoder::default();
    let classes = [toy_prompt(ToyAction::Squat, 1), toy_prompt(ToyAction::RaiseHand, 1)];
    let mut pairs = Vec::new();
    for _ in 0..10 {
        for c in &classes {
            let m = toy(c, 21, &mut rng);
            pairs.push((c.clone(), m.frame(10)));
        }
    }
    let cfg = ContrastiveConfig {
        steps: 150,
        ..ContrastiveConfig::default()
    };
    let (enc, losses) = train_contrastive(&pairs, EncoderConfig::new(EncoderKind::Pose), &cfg, &text, &cpu()).unwrap();
    assert!(losses.last().unwrap() < &losses[0]);
    let t = enc.encode_text(&[text.embed(&classes[0]), text.embed(&classes[1])]).unwrap();
    let mut held_out = seeded(6);
    for (k, c) in classes.iter().enumerate() {
        for _ in 0..10 {
            let m = encoder_input(EncoderKind::Pose, &toy(c, 21, &mut held_out).frame(10)).unwrap();
            let f = &enc.encode(&[m]).unwrap()[0];
            let best = if dot(f, &t[0]) > dot(f, &t[1]) { 0 } else { 1 };
            assert_eq!(best, k, "{c}");
        }
    }
}

#[test]
fn contrastive_training_needs_two_texts() {
    let m = GroupMotion::zeros(1, 1, 20);
    let pairs = vec![("same".to_string(), m.clone()), ("same".to_string(), m)];
    let err = train_contrastive(
        &pairs,
        EncoderConfig::new(EncoderKind::Pose),
        &ContrastiveConfig::default(),
        &HashedNgramEncoder::default(),
        &cpu(),
    )
    .unwrap_err();
    assert!(matches!(err, ModelError::Config(_)));
}

fn untrained() -> (FeatureEncoder, FeatureEncoder) {
    (
        FeatureEncoder::new(EncoderConfig::new(EncoderKind::Pose), 7, &cpu()).unwrap(),
        FeatureEncoder::new(EncoderConfig::new(EncoderKind::Motion), 8, &cpu()).unwrap(),
    )
}

#[test]
fn report_counts_and_determinism() {
    let (pose, motion) = untrained();
    let text = HashedNgramEncoder::default();
    let enc = Encoders {
        pose: &pose,
        motion: &motion,
        text: &text,
    };
    let mut prompts = toy_prompts(4);
    prompts.extend(toy_prompts(4));
    let frames = 21;
    let reference_motions: Vec<GroupMotion> = prompts.iter().take(8).map(|p| toy(p, frames, &mut seeded(9))).collect();
    let reference = ReferenceFeatures::from_motions(&reference_motions, &enc).unwrap();
    let cfg = EvalConfig {
        repeats: 2,
        diversity_pairs: 50,
        seed: 10,
    };
    let run = || {
        let mut generator = |p: &str, _: usize, rng: &mut ChaCha8Rng| Ok(toy(p, frames, rng));
        decomposed_evaluate(&mut generator, &prompts, &enc, &reference, &cfg).unwrap()
    };
    let report = run();
    assert_eq!(report.eval_frames, vec![0, 5, 10, 15, 20]);
    assert_eq!(report.prompts, 64);
    assert_eq!(report.pose_samples, 64 * 2 * 5);
    let subjects: usize = prompts.iter().map(|p| parse_toy_prompt(p).unwrap().1).sum();
    assert_eq!(report.motion_samples, subjects * 2);
    for v in [report.pose_fid, report.pose_diversity, report.motion_fid, report.motion_multimodality] {
        assert!(v.is_finite() && v >= 0.0);
    }
    assert!(report.pose_r_precision.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(report.to_text(), run().to_text());
    let text_doc = report.to_text();
    for key in ["r_precision_top3:", "fid:", "multimodality:", "eval_frames: 0,5,10,15,20", "pose_samples: 640"] {
        assert!(text_doc.contains(key), "{key}");
    }
}

#[test]
fn pose_only_generators_have_no_motion_metrics() {
    let (pose, motion) = untrained();
    let text = HashedNgramEncoder::default();
    let enc = Encoders {
        pose: &pose,
        motion: &motion,
        text: &text,
    };
    let prompts = toy_prompts(4);
    let reference = ReferenceFeatures::from_motions(&[toy(&prompts[0], 9, &mut seeded(11))], &enc).unwrap();
    let cfg = EvalConfig {
        repeats: 2,
        diversity_pairs: 20,
        seed: 0,
    };
    let mut single = |p: &str, _: usize, rng: &mut ChaCha8Rng| Ok(toy(p, 3, rng).frame(1));
    let report = decomposed_evaluate(&mut single, &prompts, &enc, &reference, &cfg).unwrap();
    assert_eq!(report.eval_frames, vec![0]);
    assert_eq!(report.motion_samples, 0);
    assert!(report.motion_fid.is_nan() && report.motion_diversity.is_nan());

    let mut single = |p: &str, _: usize, rng: &mut ChaCha8Rng| Ok(toy(p, 3, rng).frame(1));
    let err = decomposed_evaluate(&mut single, &prompts[..31], &enc, &reference, &cfg).unwrap_err();
    assert!(matches!(err, ModelError::Core(mpgen_core::Error::PoolSizeError(31))));
}

#[test]
fn baselines_hold_their_defining_properties() {
    let stage1 = Denoiser::new(config(Layout::Pose), 12, &cpu()).unwrap();
    let motion_model = Denoiser::new(config(Layout::Motion), 13, &cpu()).unwrap();
    let text = HashedNgramEncoder::default();
    let sched = NoiseSchedule::new(ScheduleKind::Cosine, 5).unwrap();
    let opts = SampleOptions {
        frames: 11,
        ..SampleOptions::default()
    };
    let still = baseline_pose_only(&stage1, "three people wave hello", &text, &sched, &opts, &mut seeded(14)).unwrap();
    assert_eq!((still.frames(), still.subjects()), (11, 3));
    assert_eq!(temporal_variance(&still), 0.0);

    let (m, pose) =
        baseline_motion_only(&stage1, &motion_model, "two people squat down", &text, &sched, &opts, &mut seeded(15)).unwrap();
    assert_eq!((m.frames(), m.subjects()), (11, 2));
    assert_eq!(m.frame(m.center_frame()), pose);
    assert!(temporal_variance(&m) > 0.0);
    assert!(baseline_motion_only(&stage1, &stage1, "two people", &text, &sched, &opts, &mut seeded(15)).is_err());
}

#[test]
fn encoder_checkpoints_roundtrip() {
    let (pose, motion) = untrained();
    for enc in [&pose, &motion] {
        let bytes = enc.to_bytes().unwrap();
        let back = FeatureEncoder::from_bytes(&bytes, &cpu()).unwrap();
        assert_eq!(back.config, enc.config);
        assert_eq!(back.params.snapshot().unwrap(), enc.params.snapshot().unwrap());
        assert_eq!(bytes, back.to_bytes().unwrap());
        assert!(Denoiser::from_bytes(&bytes, &cpu()).is_err());
    }
    let denoiser = Denoiser::new(config(Layout::Pose), 16, &cpu()).unwrap();
    assert!(FeatureEncoder::from_bytes(&denoiser.to_bytes().unwrap(), &cpu()).is_err());
}
