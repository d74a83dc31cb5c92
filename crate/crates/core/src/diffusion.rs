// SPDX-License-Identifier: Apache-2.0

//! Gaussian noise schedule, forward noising, the conditional noise predictor
//! and deterministic reverse purification.
//!
//! Timesteps are 1-based throughout: `t ∈ [1, T]`, with `alpha_bar(1) =
//! 1 − beta(1)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{CdpError, Result};
use crate::nn::Dense;
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas linearly spaced from `beta_min` to `beta_max` inclusive.
    pub fn linear(beta_min: f64, beta_max: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(CdpError::Config("schedule needs at least one step".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(CdpError::Config(format!(
                "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|k| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * k as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule {
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(CdpError::Usage(format!(
                "timestep {t} outside [1, {}]",
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `(sqrt(ᾱ_t), sqrt(1 − ᾱ_t))`.
    pub fn coefficients(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        (ab.sqrt(), (1.0 - ab).sqrt())
    }
}

pub fn build_linear_schedule(beta_min: f64, beta_max: f64, steps: usize) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(beta_min, beta_max, steps)
}

fn same_len(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CdpError::dim(what, a.shape(), b.shape()));
    }
    Ok(())
}

/// `z_t = sqrt(ᾱ_t)·z0 + sqrt(1 − ᾱ_t)·eps`.
pub fn forward_noise(z0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    same_len(z0, eps, "forward_noise operands")?;
    let (a, s) = sched.coefficients(t);
    let data = z0.data().iter().zip(eps.data()).map(|(z, e)| a * z + s * e).collect();
    Tensor::new(z0.shape().to_vec(), data)
}

/// Inverse of [`forward_noise`] given a noise estimate.
pub fn reconstruct_z0(z_t: &Tensor, t: usize, eps_hat: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    same_len(z_t, eps_hat, "reconstruct_z0 operands")?;
    let (a, s) = sched.coefficients(t);
    // same coefficients as the recorded form, so both agree bit for bit
    let (inv, k) = (1.0 / a, -s / a);
    let data = z_t.data().iter().zip(eps_hat.data()).map(|(z, e)| inv * z + k * e).collect();
    Tensor::new(z_t.shape().to_vec(), data)
}

/// Recorded form of [`forward_noise`].
pub fn forward_noise_var(g: &mut Graph<'_>, z0: Var, t: usize, eps: Var, sched: &NoiseSchedule) -> Result<Var> {
    sched.check_step(t)?;
    let (a, s) = sched.coefficients(t);
    g.lin_comb(&[(a, z0), (s, eps)])
}

/// Recorded form of [`reconstruct_z0`].
pub fn reconstruct_z0_var(g: &mut Graph<'_>, z_t: Var, t: usize, eps_hat: Var, sched: &NoiseSchedule) -> Result<Var> {
    sched.check_step(t)?;
    let (a, s) = sched.coefficients(t);
    g.lin_comb(&[(1.0 / a, z_t), (-s / a, eps_hat)])
}

/// Uniform integer in `[1, steps]`.
pub fn sample_train_timestep<R: Rng + ?Sized>(rng: &mut R, steps: usize) -> usize {
    rng.random_range(1..=steps)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Parameter-free sinusoidal encoding of the integer timestep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimestepEmbedding {
    pub dim: usize,
}

impl TimestepEmbedding {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(CdpError::Config(format!(
                "timestep embedding dim must be positive and even, got {dim}"
            )));
        }
        Ok(TimestepEmbedding { dim })
    }

    pub fn encode(&self, t: usize) -> Vec<f64> {
        let half = self.dim / 2;
        let mut out = vec![0.0; self.dim];
        for i in 0..half {
            let freq = 10_000f64.powf(-(2.0 * i as f64) / self.dim as f64);
            let angle = t as f64 * freq;
            out[i] = angle.sin();
            out[half + i] = angle.cos();
        }
        out
    }
}

/// Anything that estimates the injected noise from `(z_t, t, c)`.
pub trait NoisePredictor {
    fn predict_noise(&self, g: &mut Graph<'_>, z_t: Var, t: usize, c: Var) -> Result<Var>;
}

/// How reverse purification turns noise estimates into `z*`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReverseRule {
    /// Reconstruct `ẑ0` at each selected step and re-noise it
    /// deterministically to the next one.
    #[default]
    Reconstruct,
    /// Feed the network's output back as its own input across the selected
    /// steps, then reconstruct once from the starting point.
    Iterated,
    /// Reconstruct `ẑ0` at each selected step and move to the next one along
    /// the deterministic `η = 0` path, re-using the noise estimate:
    /// `z ← sqrt(ᾱ_next)·ẑ0 + sqrt(1 − ᾱ_next)·ε̂`.
    Ddim,
}

/// `ε_θ(z_t, t, c)`: concat(z_t, emb(t), c) → hidden → hidden → d, ReLU
/// between and a bias-free output projection.
#[derive(Clone, Debug)]
pub struct DenoiserNet {
    pub dim: usize,
    pub time: TimestepEmbedding,
    pub hidden1: Dense,
    pub hidden2: Dense,
    pub out: Dense,
}

impl DenoiserNet {
    pub fn new(store: &mut ParamStore, dim: usize, time_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let time = TimestepEmbedding::new(time_dim)?;
        let input = 2 * dim + time_dim;
        Ok(DenoiserNet {
            dim,
            time,
            hidden1: Dense::new(store, "denoiser.h1", input, hidden, true, seed)?,
            hidden2: Dense::new(store, "denoiser.h2", hidden, hidden, true, seed)?,
            out: Dense::new(store, "denoiser.out", hidden, dim, false, seed)?,
        })
    }

    pub fn input_width(&self) -> usize {
        2 * self.dim + self.time.dim
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.hidden1, &self.hidden2, &self.out]
            .iter()
            .flat_map(|l| l.params())
            .collect()
    }
}

impl NoisePredictor for DenoiserNet {
    fn predict_noise(&self, g: &mut Graph<'_>, z_t: Var, t: usize, c: Var) -> Result<Var> {
        if g.dim(z_t) != self.dim || g.dim(c) != self.dim {
            return Err(CdpError::dim(
                "denoiser inputs (z_t, c)",
                &[self.dim, self.dim],
                &[g.dim(z_t), g.dim(c)],
            ));
        }
        let temb = g.constant(self.time.encode(t));
        let x = g.concat(&[z_t, temb, c]);
        let h = self.hidden1.forward(g, x)?;
        let h = g.relu(h);
        let h = self.hidden2.forward(g, h)?;
        let h = g.relu(h);
        self.out.forward(g, h)
    }
}

/// `n_steps` timesteps evenly spaced over `[1, T]`, descending from `T`.
pub fn inference_timesteps(steps: usize, n_steps: usize) -> Result<Vec<usize>> {
    if n_steps == 0 || n_steps > steps {
        return Err(CdpError::Config(format!(
            "inference steps must be in [1, {steps}], got {n_steps}"
        )));
    }
    if n_steps == 1 {
        return Ok(vec![steps]);
    }
    let span = (steps - 1) as f64;
    Ok((0..n_steps)
        .rev()
        .map(|k| 1 + (span * k as f64 / (n_steps - 1) as f64).round() as usize)
        .collect())
}

/// Deterministic reverse purification from `z_start` (assumed to sit at
/// step `T`). Returns `z*`.
pub fn reverse_denoise<P: NoisePredictor + ?Sized>(
    g: &mut Graph<'_>,
    net: &P,
    z_start: Var,
    c: Var,
    sched: &NoiseSchedule,
    n_steps: usize,
    rule: ReverseRule,
) -> Result<Var> {
    let ts = inference_timesteps(sched.steps(), n_steps)?;
    match rule {
        ReverseRule::Reconstruct => {
            let mut z = z_start;
            let mut z0_hat = z_start;
            for (k, &t) in ts.iter().enumerate() {
                let eps_hat = net.predict_noise(g, z, t, c)?;
                z0_hat = reconstruct_z0_var(g, z, t, eps_hat, sched)?;
                if let Some(&next) = ts.get(k + 1) {
                    let (a, _) = sched.coefficients(next);
                    z = g.scale(z0_hat, a);
                }
            }
            Ok(z0_hat)
        }
        ReverseRule::Ddim => {
            let mut z = z_start;
            let mut z0_hat = z_start;
            for (k, &t) in ts.iter().enumerate() {
                let eps_hat = net.predict_noise(g, z, t, c)?;
                z0_hat = reconstruct_z0_var(g, z, t, eps_hat, sched)?;
                if let Some(&next) = ts.get(k + 1) {
                    let (a, s) = sched.coefficients(next);
                    z = g.lin_comb(&[(a, z0_hat), (s, eps_hat)])?;
                }
            }
            Ok(z0_hat)
        }
        ReverseRule::Iterated => {
            let mut h = z_start;
            for &t in &ts {
                h = net.predict_noise(g, h, t, c)?;
            }
            reconstruct_z0_var(g, z_start, sched.steps(), h, sched)
        }
    }
}
