//! VaR model validation: percentile-rank uniformity, exception counts,
//! the Anderson–Darling normality test and a rolling backtest driver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::simulate::path_seed;
use crate::special::{normal_cdf, normal_sf};
use crate::var::{
    historical_distribution, jumping_distribution, normalized_distribution, weighted_quantile, JumpingVarConfig,
    LossWindow, WeightedLossDistribution,
};

pub const DEFAULT_GRID_POINTS: usize = 100;
const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct RankSeries(Vec<f64>);

impl RankSeries {
    pub fn new(ranks: Vec<f64>) -> Result<Self> {
        if let Some(r) = ranks.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::domain(format!("rank {r} outside [0, 1]")));
        }
        Ok(RankSeries(ranks))
    }

    pub fn ranks(&self) -> &[f64] {
        &self.0
    }
}

/// Cumulative weight of support values ≤ `realized`.
pub fn percentile_rank(dist: &WeightedLossDistribution, realized: f64) -> f64 {
    let r: f64 = dist.support().iter().zip(dist.weights()).filter(|(s, _)| **s <= realized).map(|(_, w)| *w).sum();
    r.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityDeviation {
    pub grid: Vec<f64>,
    pub deviations: Vec<f64>,
    pub mean_abs: f64,
}

impl UniformityDeviation {
    /// Mean deviation over grid points inside `[lo, hi]`.
    pub fn band_mean(&self, lo: f64, hi: f64) -> f64 {
        let sel: Vec<f64> = self
            .grid
            .iter()
            .zip(&self.deviations)
            .filter(|(g, _)| **g >= lo - 1e-12 && **g <= hi + 1e-12)
            .map(|(_, d)| *d)
            .collect();
        if sel.is_empty() {
            return 0.0;
        }
        sel.iter().sum::<f64>() / sel.len() as f64
    }
}

/// |F̂(g) − g| for the empirical CDF of the ranks on `grid_points`
/// equally spaced points of [0, 1].
pub fn uniformity_deviation(ranks: &RankSeries, grid_points: usize) -> Result<UniformityDeviation> {
    if ranks.0.is_empty() {
        return Err(Error::domain("uniformity check needs at least one rank"));
    }
    if grid_points == 0 {
        return Err(Error::domain("grid_points must be positive"));
    }
    let mut sorted = ranks.0.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let grid: Vec<f64> = if grid_points == 1 {
        vec![0.5]
    } else {
        (0..grid_points).map(|i| i as f64 / (grid_points - 1) as f64).collect()
    };
    let deviations: Vec<f64> = grid
        .iter()
        .map(|&g| {
            let below = sorted.partition_point(|&r| r <= g) as f64;
            (below / n - g).abs()
        })
        .collect();
    let mean_abs = deviations.iter().sum::<f64>() / deviations.len() as f64;
    Ok(UniformityDeviation { grid, deviations, mean_abs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdStatistic {
    pub value: f64,
    /// Some Φ or 1 − Φ value was clamped at 1e−300 before taking logs.
    pub clamped: bool,
}

/// A² against the fully specified standard normal.
pub fn ad_statistic(sample: &[f64]) -> Result<AdStatistic> {
    let n = sample.len();
    if n < 8 {
        return Err(Error::domain(format!("Anderson-Darling needs at least 8 observations, got {n}")));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("Anderson-Darling sample contains non-finite values"));
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let mut clamped = false;
    let mut ln_clamp = |p: f64| {
        if p < LOG_FLOOR {
            clamped = true;
            LOG_FLOOR.ln()
        } else {
            p.ln()
        }
    };
    let mut s = 0.0;
    for i in 0..n {
        let lo = ln_clamp(normal_cdf(x[i]));
        let hi = ln_clamp(normal_sf(x[n - 1 - i]));
        s += (2 * i + 1) as f64 * (lo + hi);
    }
    Ok(AdStatistic { value: -(n as f64) - s / n as f64, clamped })
}

pub const AD_LEVELS: [f64; 5] = [0.15, 0.10, 0.05, 0.025, 0.01];
/// Sample sizes with calibrated critical values.
pub const AD_TABLE_N: [usize; 3] = [100, 500, 2000];
/// Upper quantiles of A² under H0, one row per entry of [`AD_TABLE_N`],
/// columns in [`AD_LEVELS`] order. Produced by
/// `calibrate_ad_critical(n, &AD_LEVELS, 100_000, AD_CALIBRATION_SEED)`.
pub const AD_CRITICAL: [[f64; 5]; 3] = [
    [1.6122, 1.9213, 2.4802, 3.0601, 3.8707],
    [1.6206, 1.9287, 2.4780, 3.0693, 3.8794],
    [1.6088, 1.9166, 2.4557, 3.0490, 3.8261],
];
/// Large-n limit of the case-0 critical values.
pub const AD_ASYMPTOTIC: [f64; 5] = [1.610, 1.933, 2.492, 3.070, 3.857];
pub const AD_CALIBRATION_SEED: u64 = 0x00AD_2000;

fn level_column(level: f64) -> Result<usize> {
    AD_LEVELS
        .iter()
        .position(|&l| (l - level).abs() < 1e-12)
        .ok_or_else(|| Error::domain(format!("unsupported Anderson-Darling level {level}; use one of {AD_LEVELS:?}")))
}

/// Critical value at `level` for sample size `n`, interpolated linearly in
/// 1/n between calibrated sizes and the asymptote. Sizes below the first
/// calibrated one use that row.
pub fn ad_critical_value(n: usize, level: f64) -> Result<f64> {
    let c = level_column(level)?;
    let inv = 1.0 / n.max(AD_TABLE_N[0]) as f64;
    let mut knots: Vec<(f64, f64)> = AD_TABLE_N.iter().zip(&AD_CRITICAL).map(|(&m, row)| (1.0 / m as f64, row[c])).collect();
    knots.push((0.0, AD_ASYMPTOTIC[c]));
    for w in knots.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if inv <= x0 && inv >= x1 {
            let t = if x0 == x1 { 0.0 } else { (x0 - inv) / (x0 - x1) };
            return Ok(y0 + t * (y1 - y0));
        }
    }
    Ok(knots[0].1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdResult {
    pub statistic: f64,
    pub critical: f64,
    pub reject: bool,
    pub level: f64,
    pub clamped: bool,
}

pub fn ad_test(sample: &[f64], level: f64) -> Result<AdResult> {
    let critical = ad_critical_value(sample.len(), level)?;
    let stat = ad_statistic(sample)?;
    Ok(AdResult { statistic: stat.value, critical, reject: stat.value > critical, level, clamped: stat.clamped })
}

/// Monte Carlo upper quantiles of A² for standard-normal samples of size
/// `n`, one per entry of `levels`.
pub fn calibrate_ad_critical(n: usize, levels: &[f64], reps: usize, seed: u64) -> Result<Vec<f64>> {
    if reps < 100 {
        return Err(Error::domain("calibration needs at least 100 replications"));
    }
    let mut stats: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(path_seed(seed, r));
            let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            ad_statistic(&x).map(|s| s.value)
        })
        .collect::<Result<_>>()?;
    stats.sort_by(f64::total_cmp);
    levels
        .iter()
        .map(|&l| {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::domain(format!("calibration level {l} outside (0, 1)")));
            }
            let k = (((1.0 - l) * reps as f64).ceil() as usize).clamp(1, reps);
            Ok(stats[k - 1])
        })
        .collect()
}

/// Dates where the realized loss exceeds the forecast VaR.
pub fn exception_count(var_series: &[f64], realized_losses: &[f64]) -> Result<usize> {
    if var_series.len() != realized_losses.len() {
        return Err(Error::domain(format!(
            "VaR series has {} entries but realized losses {}",
            var_series.len(),
            realized_losses.len()
        )));
    }
    Ok(var_series.iter().zip(realized_losses).filter(|(v, l)| l > v).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum VarModel {
    /// Jump-reweighted normalized losses.
    #[serde(rename = "FVaRjj")]
    FVaRjj,
    /// Normalized losses, uniform weights.
    #[serde(rename = "FVaR")]
    FVaR,
    /// Historical simulation over 1000 days.
    #[serde(rename = "HVaR")]
    HVaR,
    /// Historical simulation over 250 days.
    #[serde(rename = "HVaR_250")]
    HVaR250,
    /// Normalized losses with externally supplied volatilities.
    #[serde(rename = "EXT")]
    Ext,
}

impl VarModel {
    pub const ALL: [VarModel; 5] = [VarModel::FVaRjj, VarModel::FVaR, VarModel::HVaR, VarModel::HVaR250, VarModel::Ext];

    pub fn name(&self) -> &'static str {
        match self {
            VarModel::FVaRjj => "FVaRjj",
            VarModel::FVaR => "FVaR",
            VarModel::HVaR => "HVaR",
            VarModel::HVaR250 => "HVaR_250",
            VarModel::Ext => "EXT",
        }
    }

    /// Days of history the model needs before its first forecast.
    pub fn history(&self, config: &BacktestConfig) -> usize {
        match self {
            VarModel::FVaRjj | VarModel::FVaR | VarModel::Ext => config.jumping.window_n(),
            VarModel::HVaR => 1000,
            VarModel::HVaR250 => 250,
        }
    }
}

impl std::str::FromStr for VarModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VarModel::ALL
            .iter()
            .copied()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Validation(format!("unknown VaR model '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub jumping: JumpingVarConfig,
    /// First forecast date (index into the return series).
    pub start: usize,
    pub grid_points: usize,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig { jumping: JumpingVarConfig::DEFAULT, start: 1000, grid_points: DEFAULT_GRID_POINTS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BacktestRow {
    pub date: usize,
    pub realized: f64,
    pub var: f64,
    pub rank: f64,
    pub exception: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub model: VarModel,
    pub rows: Vec<BacktestRow>,
    pub uniformity: UniformityDeviation,
    pub central_mean: f64,
    pub exceptions: usize,
}

impl ModelReport {
    pub fn exception_rate(&self) -> f64 {
        self.exceptions as f64 / self.rows.len() as f64
    }

    pub fn ranks(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rank).collect()
    }
}

/// Inputs aligned by date: returns, volatility forecasts for each date
/// (from data strictly before it) and jump flags.
#[derive(Debug, Clone, Copy)]
pub struct BacktestData<'a> {
    pub returns: &'a [f64],
    pub vols: &'a [f64],
    pub flags: &'a [bool],
    pub ext_vols: Option<&'a [f64]>,
}

/// Lower bound of the central band used for the FVaR comparison.
pub const CENTRAL_BAND: (f64, f64) = (0.2, 0.8);

/// Walk forward from `config.start`, forecasting each date from the
/// preceding window, and score every model.
pub fn rolling_backtest(data: &BacktestData, models: &[VarModel], config: &BacktestConfig) -> Result<Vec<ModelReport>> {
    let n = data.returns.len();
    if data.vols.len() != n || data.flags.len() != n {
        return Err(Error::Validation("returns, vols and flags must be aligned".into()));
    }
    if let Some(e) = data.ext_vols {
        if e.len() != n {
            return Err(Error::Validation("external volatility series must align with returns".into()));
        }
    }
    if config.start >= n {
        return Err(Error::Validation(format!("backtest start {} beyond series length {n}", config.start)));
    }
    let losses: Vec<f64> = data.returns.iter().map(|r| -r).collect();
    let lambda = config.jumping.lambda();

    models
        .iter()
        .map(|&model| {
            if model.history(config) > config.start {
                return Err(Error::Validation(format!(
                    "{} needs {} days of history before the first forecast, start is {}",
                    model.name(),
                    model.history(config),
                    config.start
                )));
            }
            let vols = match model {
                VarModel::Ext => data
                    .ext_vols
                    .ok_or_else(|| Error::Validation("model EXT needs an external volatility series".into()))?,
                _ => data.vols,
            };
            let rows: Vec<BacktestRow> = (config.start..n)
                .map(|t| {
                    let dist = forecast_distribution(model, &losses[..t], &vols[..t], &data.flags[..t], config)?;
                    let var = weighted_quantile(&dist, 1.0 - lambda);
                    let realized = losses[t];
                    Ok(BacktestRow { date: t, realized, var, rank: percentile_rank(&dist, realized), exception: realized > var })
                })
                .collect::<Result<_>>()?;
            let ranks = RankSeries::new(rows.iter().map(|r| r.rank).collect())?;
            let uniformity = uniformity_deviation(&ranks, config.grid_points)?;
            let central_mean = uniformity.band_mean(CENTRAL_BAND.0, CENTRAL_BAND.1);
            let exceptions = rows.iter().filter(|r| r.exception).count();
            Ok(ModelReport { model, rows, uniformity, central_mean, exceptions })
        })
        .collect()
}

/// One-day-ahead loss distribution of `model` from the history before the
/// forecast date. For EXT pass the external volatilities as `vols`.
pub fn forecast_distribution(
    model: VarModel,
    losses: &[f64],
    vols: &[f64],
    flags: &[bool],
    config: &BacktestConfig,
) -> Result<WeightedLossDistribution> {
    let n_win = config.jumping.window_n();
    let window = |n: usize| {
        let s = losses.len() - n;
        LossWindow::new(losses[s..].to_vec(), vols[s..].to_vec(), flags[s..].to_vec())
    };
    match model {
        VarModel::FVaRjj => Ok(jumping_distribution(&window(n_win)?, &config.jumping)?.distribution),
        VarModel::FVaR | VarModel::Ext => normalized_distribution(&window(n_win)?),
        VarModel::HVaR => historical_distribution(losses, 1000),
        VarModel::HVaR250 => historical_distribution(losses, 250),
    }
}
