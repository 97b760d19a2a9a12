//! Integrated-variance estimators and the iterative local-volatility
//! algorithm.
//!
//! * [`threshold_iv`]: sum of squared increments below a fixed level.
//! * [`os_iv`]: single pass of the order-statistic classification. The
//!   sorted increments are visited alternately from the largest and the
//!   smallest end; each is compared with the quantile of the order
//!   statistic it would be in a Gaussian sample of the still-active size.
//! * [`kernel_os_volatility`]: renormalize by the current local volatility,
//!   classify, re-estimate the volatility with a kernel over non-jump
//!   increments, and repeat until the jump set stops changing.

use crate::error::{Error, Result};
use crate::ordstat::{exceeds_quantile, ClassificationState, Side, ToleranceLevel};

pub use crate::ordstat::ClassificationState as ClassState;

/// Minimum local volatility used when renormalizing increments.
pub const VOL_FLOOR: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 50;

/// Discrete increments Δᵢy observed on a grid with spacing `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementSeries {
    values: Vec<f64>,
    dt: f64,
    timestamps: Option<Vec<f64>>,
}

impl IncrementSeries {
    pub const MIN_LEN: usize = 4;

    pub fn new(values: Vec<f64>, dt: f64) -> Result<Self> {
        if values.len() < Self::MIN_LEN {
            return Err(Error::domain(format!(
                "increment series needs at least {} observations, got {}",
                Self::MIN_LEN,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite increment at index {i}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::domain(format!("dt must be positive, got {dt}")));
        }
        Ok(IncrementSeries { values, dt, timestamps: None })
    }

    pub fn with_timestamps(mut self, timestamps: Vec<f64>) -> Result<Self> {
        if timestamps.len() != self.values.len() {
            return Err(Error::domain("timestamps must align with increments"));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("timestamps must be strictly increasing"));
        }
        self.timestamps = Some(timestamps);
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        let mut s = IncrementSeries::new(self.values.iter().map(|v| v * c).collect(), self.dt)?;
        s.timestamps = self.timestamps.clone();
        Ok(s)
    }
}

/// Unbiased sample variance (divisor n − 1).
pub fn sample_variance(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::domain(format!("sample variance needs n >= 2, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(ss / (n - 1) as f64)
}

/// An IV estimate with the jump flags in original time order.
#[derive(Debug, Clone, PartialEq)]
pub struct IvEstimate {
    pub iv: f64,
    pub flags: Vec<bool>,
}

impl IvEstimate {
    pub fn jump_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

fn iv_from_flags(values: &[f64], flags: &[bool]) -> f64 {
    values.iter().zip(flags).filter(|(_, &f)| !f).map(|(v, _)| v * v).sum()
}

/// Fixed-threshold estimator: increments with `|Δ| > threshold` are jumps.
///
/// `threshold` is the comparison level in increment units, e.g.
/// `√(σ̂²·2·log(1/dt))`.
pub fn threshold_iv(series: &IncrementSeries, threshold: f64) -> IvEstimate {
    let flags: Vec<bool> = series.values.iter().map(|v| v.abs() > threshold).collect();
    IvEstimate { iv: iv_from_flags(&series.values, &flags), flags }
}

/// Threshold rule applied during the progressive classification of
/// renormalized (unit-variance) realizations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// Rank-dependent order-statistic quantiles at tolerance `p`.
    OrderStatistic(ToleranceLevel),
    /// One level for every rank, e.g. θ(p̄; n, n) frozen.
    Constant(f64),
}

impl Schedule {
    fn exceeds(&self, x: f64, side: Side, state: &ClassificationState) -> Result<bool> {
        match *self {
            Schedule::OrderStatistic(p) => Ok(exceeds_quantile(x, p, state.next_index(side)?)),
            Schedule::Constant(level) => Ok(x > level),
        }
    }
}

/// Stable argsort; equal values keep their original order.
fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

/// Alternating max/min classification over an ascending-sorted,
/// renormalized sample. Positions flagged in `sticky` are jumps regardless
/// of their size (previous-iteration detections).
///
/// The max side takes ⌈n/2⌉ steps and the min side ⌊n/2⌋.
pub fn classify_sorted(sorted: &[f64], schedule: &Schedule, sticky: Option<&[bool]>) -> Result<ClassificationState> {
    let n = sorted.len();
    let mut state = ClassificationState::new(n);
    let max_steps = n.div_ceil(2);
    let min_steps = n / 2;
    for i in 0..max_steps {
        let pos = n - 1 - i;
        let forced = sticky.is_some_and(|s| s[pos]);
        let jump = forced || schedule.exceeds(sorted[pos], Side::Max, &state)?;
        state.record(Side::Max, pos, jump);

        if i < min_steps {
            let pos = i;
            let forced = sticky.is_some_and(|s| s[pos]);
            let jump = forced || schedule.exceeds(-sorted[pos], Side::Min, &state)?;
            state.record(Side::Min, pos, jump);
        }
    }
    Ok(state)
}

/// Classify `normalized` (time order) and return flags in time order.
fn classify_in_time_order(normalized: &[f64], schedule: &Schedule, sticky: Option<&[bool]>) -> Result<Vec<bool>> {
    let order = argsort(normalized);
    let sorted: Vec<f64> = order.iter().map(|&i| normalized[i]).collect();
    let sticky_sorted: Option<Vec<bool>> = sticky.map(|s| order.iter().map(|&i| s[i]).collect());
    let state = classify_sorted(&sorted, schedule, sticky_sorted.as_deref())?;
    let mut flags = vec![false; normalized.len()];
    for (sorted_pos, flag) in state.into_flags().into_iter().enumerate() {
        flags[order[sorted_pos]] = flag;
    }
    Ok(flags)
}

/// Single-pass order-statistic IV estimator at tolerance `p`, with
/// thresholds rescaled by the sample standard deviation.
pub fn os_iv(series: &IncrementSeries, p: ToleranceLevel) -> Result<IvEstimate> {
    os_iv_with(series, &Schedule::OrderStatistic(p))
}

/// [`os_iv`] with an arbitrary schedule. `Schedule::Constant(θ)` flags
/// exactly the increments with `|Δ| > θ·σ̂`.
pub fn os_iv_with(series: &IncrementSeries, schedule: &Schedule) -> Result<IvEstimate> {
    let sd = sample_variance(&series.values)?.sqrt();
    let normalized: Vec<f64> = series.values.iter().map(|v| v / sd).collect();
    let flags = classify_in_time_order(&normalized, schedule, None)?;
    Ok(IvEstimate { iv: iv_from_flags(&series.values, &flags), flags })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelShape {
    /// Weight 1/h on the h + 1 observations strictly before t.
    OneSidedUniform,
    /// Weight on observations with |i − t| ≤ h.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelSpec {
    bandwidth: usize,
    shape: KernelShape,
}

impl KernelSpec {
    pub fn one_sided(bandwidth: usize) -> Result<Self> {
        Self::new(bandwidth, KernelShape::OneSidedUniform)
    }

    pub fn new(bandwidth: usize, shape: KernelShape) -> Result<Self> {
        if bandwidth == 0 {
            return Err(Error::domain("kernel bandwidth must be at least 1"));
        }
        Ok(KernelSpec { bandwidth, shape })
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    /// Inclusive index window `[lo, hi]` carrying equal weight for grid
    /// index `t` of a length-`n` series.
    ///
    /// The one-sided kernel uses indices `t−h−1 ..= t−1`; until that many
    /// past observations exist it uses the first `min(n, h+1)` observations.
    pub fn window(&self, t: usize, n: usize) -> (usize, usize) {
        let h = self.bandwidth;
        match self.shape {
            KernelShape::OneSidedUniform => {
                if t > h {
                    (t - h - 1, t - 1)
                } else {
                    (0, (h + 1).min(n) - 1)
                }
            }
            KernelShape::Uniform => (t.saturating_sub(h), (t + h).min(n - 1)),
        }
    }
}

/// Kernel variance rate Σ K v² / (Σ K · dt) over the included entries.
pub fn kernel_variance(values: &[f64], included: &[bool], weights: &[f64], dt: f64) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((v, &inc), w) in values.iter().zip(included).zip(weights) {
        if inc {
            num += w * v * v;
            den += w;
        }
    }
    (den > 0.0).then(|| num / (den * dt))
}

/// Local per-step volatility from non-jump increments under `kernel`.
/// Windows without any non-jump increment keep `fallback[t]`.
fn kernel_sigmas(values: &[f64], flags: &[bool], kernel: &KernelSpec, fallback: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut sq = vec![0.0; n + 1];
    let mut cnt = vec![0usize; n + 1];
    for i in 0..n {
        let keep = !flags[i];
        sq[i + 1] = sq[i] + if keep { values[i] * values[i] } else { 0.0 };
        cnt[i + 1] = cnt[i] + usize::from(keep);
    }
    (0..n)
        .map(|t| {
            let (lo, hi) = kernel.window(t, n);
            let c = cnt[hi + 1] - cnt[lo];
            if c == 0 {
                fallback[t]
            } else {
                ((sq[hi + 1] - sq[lo]).max(0.0) / c as f64).sqrt()
            }
        })
        .collect()
}

/// Per-observation volatility (increment units) and jump flags.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityPath {
    pub sigmas: Vec<f64>,
    pub jump_flags: Vec<bool>,
    pub iterations: usize,
    /// False when `max_iter` was reached with the jump set still changing.
    pub converged: bool,
}

impl VolatilityPath {
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn jump_count(&self) -> usize {
        self.jump_flags.iter().filter(|&&f| f).count()
    }

    /// Local variance per unit time, s²/dt.
    pub fn variance_rates(&self, dt: f64) -> Vec<f64> {
        self.sigmas.iter().map(|s| s * s / dt).collect()
    }
}

/// Iterative kernel order-statistic local-volatility estimator.
pub fn kernel_os_volatility(
    series: &IncrementSeries,
    p: ToleranceLevel,
    kernel: KernelSpec,
    max_iter: usize,
) -> Result<VolatilityPath> {
    kernel_volatility_with(series, &Schedule::OrderStatistic(p), kernel, max_iter)
}

/// The iterative algorithm under an arbitrary classification schedule;
/// `Schedule::Constant` gives the fixed-threshold counterpart.
pub fn kernel_volatility_with(
    series: &IncrementSeries,
    schedule: &Schedule,
    kernel: KernelSpec,
    max_iter: usize,
) -> Result<VolatilityPath> {
    if max_iter == 0 {
        return Err(Error::domain("max_iter must be at least 1"));
    }
    let values = &series.values;
    let n = values.len();
    let global_sd = sample_variance(values)?.sqrt();
    let mut sigmas = vec![global_sd.max(VOL_FLOOR); n];
    let mut flags = vec![false; n];
    let mut normalized = vec![0.0; n];

    for iteration in 1..=max_iter {
        for i in 0..n {
            normalized[i] = values[i] / sigmas[i].max(VOL_FLOOR);
        }
        let new_flags = classify_in_time_order(&normalized, schedule, Some(&flags))?;
        sigmas = kernel_sigmas(values, &new_flags, &kernel, &sigmas);
        let unchanged = new_flags == flags;
        flags = new_flags;
        if unchanged {
            return Ok(VolatilityPath { sigmas, jump_flags: flags, iterations: iteration, converged: true });
        }
    }
    log::warn!("kernel volatility estimator hit max_iter={max_iter} before the jump set settled");
    Ok(VolatilityPath { sigmas, jump_flags: flags, iterations: max_iter, converged: false })
}

/// Reclassify detected jumps smaller in absolute value than the local
/// volatility as ordinary observations. Sigmas are left unchanged.
pub fn type1_control(series: &IncrementSeries, path: &VolatilityPath) -> Result<VolatilityPath> {
    if path.len() != series.len() || path.jump_flags.len() != series.len() {
        return Err(Error::domain("volatility path and series lengths differ"));
    }
    let jump_flags = series
        .values
        .iter()
        .zip(&path.sigmas)
        .zip(&path.jump_flags)
        .map(|((v, s), &f)| f && v.abs() >= *s)
        .collect();
    Ok(VolatilityPath { jump_flags, ..path.clone() })
}
