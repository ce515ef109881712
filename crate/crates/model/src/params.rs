//! Named parameter storage with seeded initialization and freezing.

use std::collections::{BTreeMap, BTreeSet};

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ModelError, Result};

#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    frozen: BTreeSet<String>,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(device: &Device, seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            frozen: BTreeSet::new(),
            device: device.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// The parameter as a graph tensor; frozen parameters are detached so no
    /// gradient is ever recorded for them.
    pub fn get(&self, name: &str) -> Result<Tensor> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {name}")))?;
        Ok(if self.frozen.contains(name) {
            var.as_tensor().detach()
        } else {
            var.as_tensor().clone()
        })
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: &Tensor) -> Result<()> {
        let value = value.to_dtype(DType::F32)?.to_device(&self.device)?;
        self.vars.insert(name.into(), Var::from_tensor(&value)?);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn freeze_all(&mut self) {
        self.frozen = self.vars.keys().cloned().collect();
    }

    pub fn set_frozen(&mut self, names: impl IntoIterator<Item = String>) {
        self.frozen = names.into_iter().collect();
    }

    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn trainable(&self) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| !self.frozen.contains(*k))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.vars.keys().filter(|k| !self.frozen.contains(*k)).cloned().collect()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Deep copy with independent variables.
    pub fn duplicate(&self, seed: u64) -> Result<Self> {
        let mut out = Self::new(&self.device, seed);
        for (k, v) in &self.vars {
            out.vars.insert(k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?);
        }
        out.frozen = self.frozen.clone();
        Ok(out)
    }

    /// Flattened host copy of every parameter.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f32>>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().flatten_all()?.to_vec1::<f32>()?)))
            .collect()
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<()> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| self.rng.random_range(-bound..=bound) as f32).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?;
        self.insert(name, &t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<()> {
        let t = (Tensor::ones(shape, DType::F32, &self.device)? * value as f64)?;
        self.insert(name, &t)
    }

    /// `name.weight` (`out x in`) and optionally `name.bias`, uniform in
    /// `+-1/sqrt(in)`; `zero` initializes both to zero.
    pub fn add_linear(&mut self, name: &str, input: usize, output: usize, bias: bool, zero: bool) -> Result<()> {
        let bound = if zero { 0.0 } else { 1.0 / (input as f64).sqrt() };
        self.uniform(&format!("{name}.weight"), &[output, input], bound)?;
        if bias {
            self.uniform(&format!("{name}.bias"), &[output], bound)?;
        }
        Ok(())
    }

    pub fn add_layer_norm(&mut self, name: &str, dim: usize) -> Result<()> {
        self.constant(&format!("{name}.weight"), &[dim], 1.0)?;
        self.constant(&format!("{name}.bias"), &[dim], 0.0)
    }

    /// Applies `name` as an affine map over the last dimension.
    pub fn linear(&self, name: &str, x: &Tensor) -> Result<Tensor> {
        let w = self.get(&format!("{name}.weight"))?;
        let dims = x.dims().to_vec();
        let input = *dims.last().ok_or_else(|| ModelError::ShapeMismatch("scalar input".into()))?;
        let rows = x.elem_count() / input.max(1);
        let y = x.reshape((rows, input))?.matmul(&w.t()?)?;
        let bias_name = format!("{name}.bias");
        let y = if self.contains(&bias_name) {
            y.broadcast_add(&self.get(&bias_name)?)?
        } else {
            y
        };
        let mut out_dims = dims;
        *out_dims.last_mut().expect("non-empty dims") = w.dim(0)?;
        Ok(y.reshape(out_dims)?)
    }

    pub fn layer_norm(&self, name: &str, x: &Tensor) -> Result<Tensor> {
        let w = self.get(&format!("{name}.weight"))?;
        let b = self.get(&format!("{name}.bias"))?;
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(xn.broadcast_mul(&w)?.broadcast_add(&b)?)
    }

    /// Two-layer perceptron `name.0 -> SiLU -> name.2`.
    pub fn mlp(&self, name: &str, x: &Tensor) -> Result<Tensor> {
        let h = self.linear(&format!("{name}.0"), x)?.silu()?;
        self.linear(&format!("{name}.2"), &h)
    }

    pub fn add_mlp(&mut self, name: &str, input: usize, hidden: usize, output: usize, bias: bool) -> Result<()> {
        self.add_linear(&format!("{name}.0"), input, hidden, bias, false)?;
        self.add_linear(&format!("{name}.2"), hidden, output, bias, false)
    }
}

/// Inverted dropout with a host-side seeded mask.
pub fn dropout(x: &Tensor, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
    let Some(rng) = rng else { return Ok(x.clone()) };
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| if rng.random::<f64>() < keep { (1.0 / keep) as f32 } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?;
    Ok((x * mask)?)
}

/// Sinusoidal embedding of (possibly fractional) positions, `len x dim`.
pub fn sinusoid(positions: &[f64], dim: usize, device: &Device) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(positions.len() * dim);
    for &p in positions {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            data.push((p * freq).sin() as f32);
        }
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            data.push((p * freq).cos() as f32);
        }
        data.extend(std::iter::repeat_n(0.0, dim - 2 * half));
    }
    Ok(Tensor::from_vec(data, (positions.len(), dim), device)?)
}
