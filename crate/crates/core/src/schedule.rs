//! Diffusion noise schedules and DDPM posterior coefficients.
//!
//! Timesteps are 1-based: `t = 1` is the least noisy step and `t = T` the
//! noisiest; `alpha_bar(0)` is taken to be 1.

use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Self::Linear),
            "cosine" => Some(Self::Cosine),
            _ => None,
        }
    }
}

/// Which variance the reverse step injects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosteriorVariance {
    /// `beta_tilde_t = beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)`.
    Posterior,
    /// `beta_t`.
    Beta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    /// Model timestep fed to the denoiser for each schedule step; the
    /// identity unless the schedule was respaced.
    timesteps: Vec<usize>,
}

const MAX_BETA: f64 = 0.999;

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step"));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => {
                let scale = 1000.0 / steps as f64;
                let (lo, hi) = (scale * 1e-4, (scale * 0.02).min(MAX_BETA));
                (0..steps)
                    .map(|i| {
                        if steps == 1 {
                            lo
                        } else {
                            lo + (hi - lo) * i as f64 / (steps - 1) as f64
                        }
                    })
                    .collect()
            }
            ScheduleKind::Cosine => {
                let f = |t: f64| {
                    let x = (t / steps as f64 + 0.008) / 1.008 * core::f64::consts::FRAC_PI_2;
                    let c = libm::cos(x);
                    c * c
                };
                (1..=steps)
                    .map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).min(MAX_BETA))
                    .collect()
            }
        };
        Ok(Self::from_betas(kind, &betas, (1..=steps).collect()))
    }

    fn from_betas(kind: ScheduleKind, betas: &[f64], timesteps: Vec<usize>) -> Self {
        let alpha: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Self {
            kind,
            alpha,
            alpha_bar,
            timesteps,
        }
    }

    /// Sampling schedule over `steps` evenly spaced timesteps of this one.
    ///
    /// The kept `alpha_bar` values are unchanged; per-step alphas are
    /// recomputed from their ratios so the chain is again Markov.
    pub fn respaced(&self, steps: usize) -> Result<Self> {
        let total = self.len();
        if steps == 0 || steps > total {
            return Err(Error::Config("respaced step count must lie in [1, T]"));
        }
        let keep: Vec<usize> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    total
                } else {
                    1 + ((total - 1) as f64 * i as f64 / (steps - 1) as f64 + 0.5) as usize
                }
            })
            .collect();
        let mut betas = Vec::with_capacity(steps);
        let mut prev = 1.0;
        for &t in &keep {
            let ab = self.alpha_bar(t);
            betas.push(1.0 - ab / prev);
            prev = ab;
        }
        let timesteps = keep.iter().map(|&t| self.timesteps[t - 1]).collect();
        Ok(Self::from_betas(self.kind, &betas, timesteps))
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Denoiser timestep for schedule step `t`.
    pub fn model_timestep(&self, t: usize) -> usize {
        self.timesteps[t - 1]
    }

    /// `(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t))` for the forward marginal.
    pub fn marginal(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        (libm::sqrt(ab), libm::sqrt(1.0 - ab))
    }

    /// Posterior `q(x_{t-1} | x_t, x_0)`: coefficients on `x_0` and `x_t` of
    /// the mean, and the variance.
    pub fn posterior(&self, t: usize, variance: PosteriorVariance) -> (f64, f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let beta = self.beta(t);
        let c0 = libm::sqrt(ab_prev) * beta / (1.0 - ab);
        let ct = libm::sqrt(self.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
        let var = match variance {
            PosteriorVariance::Posterior => beta * (1.0 - ab_prev) / (1.0 - ab),
            PosteriorVariance::Beta => {
                if t == 1 {
                    0.0
                } else {
                    beta
                }
            }
        };
        (c0, ct, var)
    }
}
