//! Conversion between host motions and padded batch tensors.

use candle_core::{Device, Tensor};
use mpgen_core::repr::{pad_and_mask, GroupMotion, POSE_DIM};
use mpgen_core::textcond::TextEmbedding;

use crate::error::{ModelError, Result};
use crate::netcore::{CenterPose, Conditioning};

/// Clean samples and their conditioning.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `B x F x N x 158`, zero on padded slots.
    pub x0: Tensor,
    pub cond: Conditioning,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x0.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn bools(mask: &[bool]) -> Vec<f32> {
    mask.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
}

/// Stacks text embeddings into `B x dim`.
pub fn text_tensor(texts: &[TextEmbedding], dim: usize, device: &Device) -> Result<Tensor> {
    let mut data = Vec::with_capacity(texts.len() * dim);
    for t in texts {
        if t.dim() != dim {
            return Err(ModelError::ShapeMismatch(format!("text dim {} != {dim}", t.dim())));
        }
        data.extend_from_slice(t.as_slice());
    }
    Ok(Tensor::from_vec(data, (texts.len(), dim), device)?)
}

/// Pads `motions` to the largest frame and subject count in the batch.
/// `centers`, when given, holds one optional single-frame pose group per
/// sample.
pub fn make_batch(
    motions: &[GroupMotion],
    texts: &[TextEmbedding],
    centers: Option<&[Option<GroupMotion>]>,
    text_dim: usize,
    device: &Device,
) -> Result<Batch> {
    if motions.is_empty() || motions.len() != texts.len() {
        return Err(ModelError::ShapeMismatch(format!("{} motions, {} texts", motions.len(), texts.len())));
    }
    let frames = motions.iter().map(GroupMotion::frames).max().unwrap_or(1);
    let subjects = motions.iter().map(GroupMotion::subjects).max().unwrap_or(1);
    let padded = pad_and_mask(motions, frames, subjects)?;
    let b = motions.len();
    let data: Vec<f32> = padded.data.iter().map(|&v| v as f32).collect();
    let x0 = Tensor::from_vec(data, (b, frames, subjects, POSE_DIM), device)?;
    let frame_mask = Tensor::from_vec(bools(&padded.frame_mask), (b, frames), device)?;
    let subject_mask = Tensor::from_vec(bools(&padded.subject_mask), (b, subjects), device)?;
    let center = match centers {
        None => None,
        Some(cs) => {
            if cs.len() != b {
                return Err(ModelError::ShapeMismatch(format!("{} center poses for {b} samples", cs.len())));
            }
            let mut poses = vec![0f32; b * subjects * POSE_DIM];
            let mut present = vec![0f32; b];
            for (i, c) in cs.iter().enumerate() {
                let Some(c) = c else { continue };
                if c.subjects() > subjects {
                    return Err(ModelError::ShapeMismatch("center pose has extra subjects".into()));
                }
                present[i] = 1.0;
                for n in 0..c.subjects() {
                    if c.is_valid(0, n) {
                        let o = (i * subjects + n) * POSE_DIM;
                        for (dst, &src) in poses[o..o + POSE_DIM].iter_mut().zip(c.slot(0, n)) {
                            *dst = src as f32;
                        }
                    }
                }
            }
            Some(CenterPose {
                poses: Tensor::from_vec(poses, (b, subjects, POSE_DIM), device)?,
                present: Tensor::from_vec(present, b, device)?,
            })
        }
    };
    Ok(Batch {
        x0,
        cond: Conditioning {
            text: text_tensor(texts, text_dim, device)?,
            frame_mask,
            subject_mask,
            center,
        },
    })
}

/// Sample `b` of a `B x F x N x 158` tensor, cropped to `frames x subjects`.
pub fn group_from_tensor(x: &Tensor, b: usize, frames: usize, subjects: usize, fps: u32) -> Result<GroupMotion> {
    let (_, f, n, d) = x.dims4()?;
    if frames > f || subjects > n || d != POSE_DIM {
        return Err(ModelError::ShapeMismatch(format!("crop {frames}x{subjects} from {:?}", x.dims())));
    }
    let sample: Vec<f32> = x.get(b)?.flatten_all()?.to_vec1()?;
    let mut data = Vec::with_capacity(frames * subjects * POSE_DIM);
    for fi in 0..frames {
        for ni in 0..subjects {
            let o = (fi * n + ni) * POSE_DIM;
            data.extend(sample[o..o + POSE_DIM].iter().map(|&v| v as f64));
        }
    }
    Ok(GroupMotion::from_data(frames, subjects, fps, data)?)
}
