mod common;

use common::*;
use mpgen_core::corpus::{make_toy_corpus, prepare_stage1_sample, Augment, Datasets, MixSpec, MixedSampler, ToySpec};
use mpgen_core::repr::SourceTag;
use mpgen_core::textcond::{HashedNgramEncoder, TextEncoder};
use mpgen_model::batch::make_batch;
use mpgen_model::diffusion::{predictor, training_loss};
use mpgen_model::trainer::{train_motion_model, train_stage1, train_stage2, TrainConfig, Trainer};
use mpgen_model::{Denoiser, Layout, ModelError};

fn small_corpus(seed: u64) -> Datasets {
    let spec = ToySpec {
        counts: vec![
            (SourceTag::Lp, 16),
            (SourceTag::Wvm, 4),
            (SourceTag::Hml, 4),
            (SourceTag::HmlC, 4),
            (SourceTag::Ih, 4),
        ],
        frames: 13,
        max_group: 3,
    };
    make_toy_corpus(&spec, &mut seeded(seed)).unwrap()
}

fn quick(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 4,
        lr: 1e-3,
        seed,
        log_every: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn fixed_batch_loss_decreases() {
    let data = small_corpus(1);
    let sampler = MixedSampler::new(&data, &MixSpec::single(SourceTag::Lp)).unwrap();
    let enc = HashedNgramEncoder::default();
    let mut rng = seeded(2);
    let (mut motions, mut texts) = (vec![], vec![]);
    for _ in 0..8 {
        let s = sampler.draw(&mut rng);
        motions.push(prepare_stage1_sample(s, Augment::default(), &mut rng).unwrap().0);
        texts.push(enc.embed(&s.text));
    }
    let batch = make_batch(&motions, &texts, None, 256, &cpu()).unwrap();
    let model = Denoiser::new(config(Layout::Pose), 3, &cpu()).unwrap();
    let cfg = quick(200, 0);
    let sched = cfg.schedule().unwrap();
    let eval = |m: &Denoiser| {
        let mut p = predictor(m);
        training_loss(&mut p, &batch, &sched, 0.0, &mut seeded(4)).unwrap().to_scalar::<f32>().unwrap()
    };
    let before = eval(&model);
    {
        let mut trainer = Trainer::new(&model, 1e-3, sched.clone(), 0.1, 5).unwrap();
        for _ in 0..200 {
            trainer.step(&batch).unwrap();
        }
    }
    let after = eval(&model);
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn stage2_training_never_touches_frozen_parameters() {
    let data = small_corpus(6);
    let mix = MixSpec::default();
    let stage1 = train_stage1(&quick(5, 7), &config(Layout::Pose), &data, &mix, &cpu()).unwrap().model;
    let cfg = TrainConfig {
        max_frames: 9,
        ..quick(10, 8)
    };
    let out = train_stage2(&cfg, Some(&stage1), &data, &mix).unwrap();
    let stage2 = out.model;
    assert_eq!(stage2.params.frozen().len(), stage1.params.names().count());
    for name in stage1.params.names() {
        assert!(stage2.params.is_frozen(name));
        let a: Vec<f32> = stage1.params.get(name).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = stage2.params.get(name).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b, "{name} changed");
    }
    let moved = stage2.identity_init_names().iter().any(|n| {
        let v: Vec<f32> = stage2.params.get(n).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        v.iter().any(|&x| x != 0.0)
    });
    assert!(moved, "motion layers were not trained");
    assert!(out.losses.iter().all(|r| r.loss.is_finite()));
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let data = small_corpus(9);
    let run = || {
        let out = train_stage1(&quick(8, 10), &config(Layout::Pose), &data, &MixSpec::default(), &cpu()).unwrap();
        (out.model.to_bytes().unwrap(), out.losses)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let other = train_stage1(&quick(8, 11), &config(Layout::Pose), &data, &MixSpec::default(), &cpu()).unwrap();
    assert_ne!(a, other.model.to_bytes().unwrap());
}

#[test]
fn loss_history_and_checkpoints() {
    let data = small_corpus(12);
    let dir = std::env::temp_dir().join(format!("mpgen-trainer-{}", std::process::id()));
    let cfg = TrainConfig {
        checkpoint_every: Some(4),
        checkpoint_dir: Some(dir.clone()),
        ..quick(12, 13)
    };
    let out = train_stage1(&cfg, &config(Layout::Pose), &data, &MixSpec::default(), &cpu()).unwrap();
    let steps: Vec<usize> = out.losses.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![1, 5, 10, 12]);
    let mut files: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files, ["stage1_step0000004.safetensors", "stage1_step0000008.safetensors", "stage1_step0000012.safetensors"]);
    let last = Denoiser::load(&dir.join(&files[2]), &cpu()).unwrap();
    assert_eq!(last.to_bytes().unwrap(), out.model.to_bytes().unwrap());
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn configuration_errors() {
    let data = small_corpus(14);
    let mix = MixSpec::default();
    let err = train_stage2(&quick(1, 0), None, &data, &mix).unwrap_err();
    assert!(matches!(err, ModelError::Config(_)));
    assert!(matches!(
        train_stage1(&quick(1, 0), &config(Layout::Interleaved), &data, &mix, &cpu()).unwrap_err(),
        ModelError::Config(_)
    ));
    assert!(matches!(
        train_motion_model(&quick(1, 0), &config(Layout::Pose), &data, &mix, &cpu()).unwrap_err(),
        ModelError::Config(_)
    ));
    let mut missing = data.clone();
    missing.remove(&SourceTag::Ih);
    assert!(train_stage1(&quick(1, 0), &config(Layout::Pose), &missing, &mix, &cpu()).is_err());
    let narrow = TrainConfig {
        max_subjects: 1,
        ..quick(3, 0)
    };
    let err = train_stage1(&narrow, &config(Layout::Pose), &data, &MixSpec::single(SourceTag::Ih), &cpu()).unwrap_err();
    assert!(matches!(err, ModelError::Core(mpgen_core::Error::OversizeSample { .. })));
}

#[test]
fn motion_model_trains_on_single_tracks() {
    let data = small_corpus(15);
    let cfg = TrainConfig {
        max_frames: 9,
        ..quick(6, 16)
    };
    let out = train_motion_model(&cfg, &config(Layout::Motion), &data, &MixSpec::default(), &cpu()).unwrap();
    assert_eq!(out.model.config.layout, Layout::Motion);
    assert!(out.losses.iter().all(|r| r.loss.is_finite()));
}
