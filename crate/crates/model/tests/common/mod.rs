#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use mpgen_model::{CenterPose, Conditioning, Denoiser, Layout, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POSE_DIM: usize = 158;

pub fn cpu() -> Device {
    Device::Cpu
}

pub fn config(layout: Layout) -> ModelConfig {
    ModelConfig {
        dropout: 0.0,
        layout,
        ..ModelConfig::default()
    }
}

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::from_vec(data, shape, &Device::Cpu).unwrap()
}

pub fn mask(b: usize, len: usize, valid: &[usize]) -> Tensor {
    let mut m = vec![0f32; b * len];
    for (i, &v) in valid.iter().enumerate() {
        for j in 0..v {
            m[i * len + j] = 1.0;
        }
    }
    Tensor::from_vec(m, (b, len), &Device::Cpu).unwrap()
}

pub fn conditioning(b: usize, f: usize, n: usize, rng: &mut ChaCha8Rng, center: bool) -> Conditioning {
    Conditioning {
        text: randn(&[b, 256], rng),
        frame_mask: Tensor::ones((b, f), DType::F32, &Device::Cpu).unwrap(),
        subject_mask: Tensor::ones((b, n), DType::F32, &Device::Cpu).unwrap(),
        center: center.then(|| CenterPose {
            poses: randn(&[b, n, POSE_DIM], rng),
            present: Tensor::ones(b, DType::F32, &Device::Cpu).unwrap(),
        }),
    }
}

/// Overwrites every zero-initialized motion-layer parameter with random values.
pub fn randomize_motion_layers(model: &Denoiser, rng: &mut ChaCha8Rng) {
    for name in model.identity_init_names() {
        let var = model.params.var(&name).unwrap();
        let t = (randn(var.dims(), rng) * 0.2).unwrap();
        var.set(&t).unwrap();
    }
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
    (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f32>().unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn interleaved(seed: u64) -> Denoiser {
    let stage1 = Denoiser::new(config(Layout::Pose), seed, &cpu()).unwrap();
    let stage2 = Denoiser::insert_motion_layers(&stage1, seed + 1).unwrap();
    randomize_motion_layers(&stage2, &mut seeded(seed + 2));
    stage2
}
