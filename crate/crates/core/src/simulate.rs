//! Seeded generators for Merton jump-diffusion and Brownian motion plus
//! variance-gamma paths, with ground-truth jump bookkeeping.
//!
//! All randomness comes from a `ChaCha8Rng` seeded with the caller's seed.
//! Within a step the draw order is fixed (diffusion normal, then jump
//! count, then jump sizes), so a seed always reproduces the same path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::estimators::IncrementSeries;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MertonParams {
    pub b: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub mu: f64,
    pub delta: f64,
}

impl MertonParams {
    /// b=0, σ=0.5, λ=10, μ=0, δ=1.5.
    pub const REFERENCE: MertonParams = MertonParams { b: 0.0, sigma: 0.5, lambda: 10.0, mu: 0.0, delta: 1.5 };

    pub fn validate(&self) -> Result<()> {
        let finite = [self.b, self.sigma, self.lambda, self.mu, self.delta].iter().all(|v| v.is_finite());
        if !finite || self.sigma < 0.0 || self.lambda < 0.0 || self.delta < 0.0 {
            return Err(Error::domain(format!("invalid Merton parameters {self:?}")));
        }
        Ok(())
    }

    /// Variance of one increment of length `dt`: (σ² + λ(μ² + δ²))·dt.
    pub fn increment_variance(&self, dt: f64) -> f64 {
        (self.sigma * self.sigma + self.lambda * (self.mu * self.mu + self.delta * self.delta)) * dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VgBmParams {
    pub b: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub k_var: f64,
}

impl VgBmParams {
    /// b=0, σ=0.5, α=0, β=1.5, k=0.004.
    pub const REFERENCE: VgBmParams = VgBmParams { b: 0.0, sigma: 0.5, alpha: 0.0, beta: 1.5, k_var: 0.004 };

    pub fn validate(&self) -> Result<()> {
        let finite = [self.b, self.sigma, self.alpha, self.beta, self.k_var].iter().all(|v| v.is_finite());
        if !finite || self.sigma < 0.0 || self.beta < 0.0 || self.k_var <= 0.0 {
            return Err(Error::domain(format!("invalid VG+BM parameters {self:?}")));
        }
        Ok(())
    }
}

/// Increments with the jump component of each step recorded separately.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub increments: Vec<f64>,
    pub dt: f64,
    pub true_jump_sizes: Vec<f64>,
    pub true_flags: Vec<bool>,
}

impl SimulatedPath {
    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn series(&self) -> Result<IncrementSeries> {
        IncrementSeries::new(self.increments.clone(), self.dt)
    }

    /// Increments minus their jump components.
    pub fn diffusion_increments(&self) -> Vec<f64> {
        self.increments.iter().zip(&self.true_jump_sizes).map(|(x, j)| x - j).collect()
    }

    pub fn jump_count(&self) -> usize {
        self.true_flags.iter().filter(|&&f| f).count()
    }
}

/// Seed for path `index` of a batch started from `base`.
///
/// SplitMix64 finalizer applied to `base + index·φ64`, so neighbouring
/// indices get unrelated ChaCha streams.
pub fn path_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn step_length(n_steps: usize, horizon: f64) -> Result<f64> {
    if n_steps == 0 {
        return Err(Error::domain("n_steps must be at least 1"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
    }
    Ok(horizon / n_steps as f64)
}

pub fn simulate_merton(params: &MertonParams, n_steps: usize, horizon: f64, seed: u64) -> Result<SimulatedPath> {
    params.validate()?;
    let dt = step_length(n_steps, horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = params.lambda * dt;
    let poisson = if rate > 0.0 {
        Some(Poisson::new(rate).map_err(|e| Error::domain(format!("Poisson rate {rate}: {e}")))?)
    } else {
        None
    };
    let sd_dt = dt.sqrt();

    let mut increments = Vec::with_capacity(n_steps);
    let mut sizes = Vec::with_capacity(n_steps);
    let mut flags = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let z: f64 = rng.sample(StandardNormal);
        let count = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as u64);
        let mut jump = 0.0;
        for _ in 0..count {
            let e: f64 = rng.sample(StandardNormal);
            jump += params.mu + params.delta * e;
        }
        increments.push(params.b * dt + params.sigma * sd_dt * z + jump);
        sizes.push(jump);
        flags.push(jump != 0.0);
    }
    Ok(SimulatedPath { increments, dt, true_jump_sizes: sizes, true_flags: flags })
}

pub fn simulate_vgbm(params: &VgBmParams, n_steps: usize, horizon: f64, seed: u64) -> Result<SimulatedPath> {
    params.validate()?;
    let dt = step_length(n_steps, horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(dt / params.k_var, params.k_var)
        .map_err(|e| Error::domain(format!("gamma subordinator: {e}")))?;
    let sd_dt = dt.sqrt();

    let mut increments = Vec::with_capacity(n_steps);
    let mut sizes = Vec::with_capacity(n_steps);
    let mut flags = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let z: f64 = rng.sample(StandardNormal);
        let dv: f64 = gamma.sample(&mut rng);
        let z2: f64 = rng.sample(StandardNormal);
        let vg = params.alpha * dv + params.beta * dv.sqrt() * z2;
        increments.push(params.b * dt + params.sigma * sd_dt * z + vg);
        sizes.push(vg);
        flags.push(vg != 0.0);
    }
    Ok(SimulatedPath { increments, dt, true_jump_sizes: sizes, true_flags: flags })
}

/// Gamma subordinator increments alone, for checking the time change.
pub fn gamma_subordinator(k_var: f64, n_steps: usize, horizon: f64, seed: u64) -> Result<Vec<f64>> {
    let dt = step_length(n_steps, horizon)?;
    if !(k_var > 0.0) {
        return Err(Error::domain("k_var must be positive"));
    }
    let gamma = Gamma::new(dt / k_var, k_var).map_err(|e| Error::domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_steps).map(|_| gamma.sample(&mut rng)).collect())
}
