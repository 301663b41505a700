//! Forward noising process for the diffusion denoiser.
//!
//! The denoiser sees `[x_t, t / T]`: the timestep is a single continuous
//! input element rather than a positional embedding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("diffusion needs at least one step".into()));
        }
        if !(0.0 < self.beta_min && self.beta_min <= self.beta_max && self.beta_max < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_min <= beta_max < 1, got {} and {}",
                self.beta_min, self.beta_max
            )));
        }
        Ok(())
    }
}

/// Precomputed linear β schedule and cumulative products ᾱ_t.
#[derive(Clone, Debug)]
pub struct Schedule {
    steps: usize,
    alpha_bar: Vec<f64>,
}

impl Schedule {
    pub fn new(cfg: &DiffusionConfig) -> Result<Self> {
        cfg.validate()?;
        let t = cfg.steps;
        let mut prod = 1.0;
        let alpha_bar = (0..t)
            .map(|i| {
                let beta = if t == 1 {
                    cfg.beta_min
                } else {
                    cfg.beta_min + (cfg.beta_max - cfg.beta_min) * i as f64 / (t - 1) as f64
                };
                prod *= 1.0 - beta;
                prod
            })
            .collect();
        Ok(Schedule { steps: t, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// The scalar fed to the denoiser for step `t`.
    pub fn encode_step(&self, t: usize) -> f64 {
        t as f64 / self.steps as f64
    }

    /// `x_t = sqrt(ᾱ_t) x_0 + sqrt(1 - ᾱ_t) ε`.
    pub fn noise(&self, x0: &[f64], eps: &[f64], t: usize) -> Vec<f64> {
        let a = self.alpha_bar[t];
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        x0.iter().zip(eps).map(|(x, e)| sa * x + sn * e).collect()
    }

    /// Denoiser input row: noised pixels followed by the step encoding.
    pub fn denoiser_input(&self, x0: &[f64], eps: &[f64], t: usize) -> Vec<f64> {
        let mut row = self.noise(x0, eps, t);
        row.push(self.encode_step(t));
        row
    }
}
