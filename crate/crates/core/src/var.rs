//! Value-at-Risk forecasts: plain historical simulation, the volatility
//! normalized (filtered) variant, and the jump-reweighted variant.
//!
//! Losses are negated returns. `VaR_λ` is the loss quantile at level
//! `1 − λ`, so λ = 0.01 gives the 99% loss quantile. Quantiles use the
//! lower cumulative-weight convention: the smallest support value whose
//! cumulative weight reaches the level.

use crate::error::{Error, Result};

const CLOSURE_TOL: f64 = 1e-12;

/// The last N losses with their volatility estimates and jump flags,
/// most recent last.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWindow {
    losses: Vec<f64>,
    vols: Vec<f64>,
    flags: Vec<bool>,
}

impl LossWindow {
    pub fn new(losses: Vec<f64>, vols: Vec<f64>, flags: Vec<bool>) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::domain("loss window is empty"));
        }
        if losses.len() != vols.len() || losses.len() != flags.len() {
            return Err(Error::domain(format!(
                "loss window misaligned: {} losses, {} vols, {} flags",
                losses.len(),
                vols.len(),
                flags.len()
            )));
        }
        if let Some(i) = vols.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::domain(format!("volatility at position {i} must be positive, got {}", vols[i])));
        }
        if let Some(i) = losses.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite loss at position {i}")));
        }
        Ok(LossWindow { losses, vols, flags })
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn vols(&self) -> &[f64] {
        &self.vols
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// Most recent volatility, used as the forecast.
    pub fn last_vol(&self) -> f64 {
        self.vols[self.vols.len() - 1]
    }

    /// The most recent `n` entries.
    pub fn tail(&self, n: usize) -> Result<LossWindow> {
        if n == 0 || n > self.len() {
            return Err(Error::domain(format!("cannot take the last {n} of {} observations", self.len())));
        }
        let s = self.len() - n;
        Ok(LossWindow {
            losses: self.losses[s..].to_vec(),
            vols: self.vols[s..].to_vec(),
            flags: self.flags[s..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLossDistribution {
    support: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedLossDistribution {
    pub fn new(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != weights.len() {
            return Err(Error::domain("distribution needs equally long, nonempty support and weights"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::domain("weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("weights sum to {total}, not 1")));
        }
        if support.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("support values must be finite"));
        }
        Ok(WeightedLossDistribution { support, weights })
    }

    pub fn uniform(support: Vec<f64>) -> Result<Self> {
        let n = support.len();
        if n == 0 {
            return Err(Error::domain("empty support"));
        }
        let weights = close_weights(vec![1.0 / n as f64; n]);
        Self::new(support, weights)
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scaled(&self, c: f64) -> WeightedLossDistribution {
        WeightedLossDistribution { support: self.support.iter().map(|v| v * c).collect(), weights: self.weights.clone() }
    }

    /// (support, weight) pairs in ascending support order; ties keep
    /// their input order.
    pub fn sorted_pairs(&self) -> Vec<(f64, f64)> {
        let mut pairs: Vec<(f64, f64)> = self.support.iter().copied().zip(self.weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs
    }
}

/// Put the float residual of Σw = 1 on the last weight.
fn close_weights(mut w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    if let Some(last) = w.last_mut() {
        let fix = 1.0 - total;
        if fix.abs() <= CLOSURE_TOL && *last + fix >= 0.0 {
            *last += fix;
        }
    }
    w
}

/// l̂ᵢ = lᵢ/σᵢ.
pub fn normalize_losses(window: &LossWindow) -> Vec<f64> {
    window.losses.iter().zip(&window.vols).map(|(l, s)| l / s).collect()
}

/// Fraction of jump flags among the most recent `t`.
pub fn jump_probability_forecast(flags: &[bool], t: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::domain("forecast horizon T must be positive"));
    }
    if flags.len() < t {
        return Err(Error::domain(format!("need {t} flags for the jump forecast, have {}", flags.len())));
    }
    let recent = &flags[flags.len() - t..];
    Ok(recent.iter().filter(|&&f| f).count() as f64 / t as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccurrenceWeights {
    pub weights: Vec<f64>,
    /// Historical jump frequency p_J in the window.
    pub p_j: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Eq. 12 was undefined for this history and uniform weights were used.
    pub degenerate: bool,
}

/// Jump losses get α/N, others β/N, with α = p_f/p_J and
/// β = (1 − p_f)/(1 − p_J).
pub fn occurrence_weights(flags: &[bool], p_forecast: f64) -> Result<OccurrenceWeights> {
    let n = flags.len();
    if n == 0 {
        return Err(Error::domain("occurrence weights need at least one observation"));
    }
    if !(0.0..=1.0).contains(&p_forecast) {
        return Err(Error::domain(format!("jump probability forecast must lie in [0, 1], got {p_forecast}")));
    }
    let jumps = flags.iter().filter(|&&f| f).count();
    let p_j = jumps as f64 / n as f64;
    let uniform = |degenerate| OccurrenceWeights {
        weights: close_weights(vec![1.0 / n as f64; n]),
        p_j,
        alpha: 1.0,
        beta: 1.0,
        degenerate,
    };
    if jumps == 0 {
        if p_forecast > 0.0 {
            log::warn!("no jumps in the window but forecast {p_forecast} > 0; using uniform weights");
            return Ok(uniform(true));
        }
        return Ok(uniform(false));
    }
    if jumps == n {
        if p_forecast < 1.0 {
            log::warn!("every observation in the window is a jump; using uniform weights");
            return Ok(uniform(true));
        }
        return Ok(uniform(false));
    }
    let alpha = p_forecast / p_j;
    let beta = (1.0 - p_forecast) / (1.0 - p_j);
    let w: Vec<f64> = flags.iter().map(|&f| if f { alpha } else { beta } / n as f64).collect();
    Ok(OccurrenceWeights { weights: close_weights(w), p_j, alpha, beta, degenerate: false })
}

/// Smallest support value whose cumulative weight reaches `level`.
pub fn weighted_quantile(dist: &WeightedLossDistribution, level: f64) -> f64 {
    let pairs = dist.sorted_pairs();
    let mut cum = 0.0;
    for &(x, w) in &pairs {
        cum += w;
        if cum >= level - CLOSURE_TOL {
            return x;
        }
    }
    pairs[pairs.len() - 1].0
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::domain(format!("VaR level must lie in (0, 1), got {lambda}")));
    }
    Ok(())
}

/// Normalized-loss distribution rescaled by the last volatility.
pub fn normalized_distribution(window: &LossWindow) -> Result<WeightedLossDistribution> {
    Ok(WeightedLossDistribution::uniform(normalize_losses(window))?.scaled(window.last_vol()))
}

pub fn var_normalized(window: &LossWindow, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(weighted_quantile(&normalized_distribution(window)?, 1.0 - lambda))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpingVarConfig {
    window_n: usize,
    forecast_t: usize,
    lambda: f64,
}

impl JumpingVarConfig {
    /// N=250, T=60, λ=0.01.
    pub const DEFAULT: JumpingVarConfig = JumpingVarConfig { window_n: 250, forecast_t: 60, lambda: 0.01 };

    pub fn new(window_n: usize, forecast_t: usize, lambda: f64) -> Result<Self> {
        if window_n == 0 || forecast_t == 0 || forecast_t > window_n {
            return Err(Error::domain(format!("need 1 <= T <= N, got N={window_n}, T={forecast_t}")));
        }
        check_lambda(lambda)?;
        Ok(JumpingVarConfig { window_n, forecast_t, lambda })
    }

    pub fn window_n(&self) -> usize {
        self.window_n
    }

    pub fn forecast_t(&self) -> usize {
        self.forecast_t
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Default for JumpingVarConfig {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpingForecast {
    /// Loss distribution in loss units (normalized losses × σ_N).
    pub distribution: WeightedLossDistribution,
    pub p_forecast: f64,
    pub weights: OccurrenceWeights,
}

/// The reweighted loss distribution behind [`var_jumping`].
pub fn jumping_distribution(window: &LossWindow, config: &JumpingVarConfig) -> Result<JumpingForecast> {
    let w = window.tail(config.window_n).map_err(|_| {
        Error::domain(format!("jumping VaR needs {} observations, have {}", config.window_n, window.len()))
    })?;
    let p_forecast = jump_probability_forecast(&w.flags, config.forecast_t)?;
    let weights = occurrence_weights(&w.flags, p_forecast)?;
    let dist = WeightedLossDistribution::new(normalize_losses(&w), weights.weights.clone())?.scaled(w.last_vol());
    Ok(JumpingForecast { distribution: dist, p_forecast, weights })
}

pub fn var_jumping(window: &LossWindow, config: &JumpingVarConfig) -> Result<f64> {
    let f = jumping_distribution(window, config)?;
    Ok(weighted_quantile(&f.distribution, 1.0 - config.lambda))
}

pub fn historical_distribution(losses: &[f64], window: usize) -> Result<WeightedLossDistribution> {
    if window == 0 || losses.len() < window {
        return Err(Error::domain(format!("historical VaR needs {window} losses, have {}", losses.len())));
    }
    WeightedLossDistribution::uniform(losses[losses.len() - window..].to_vec())
}

pub fn var_historical(losses: &[f64], window: usize, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(weighted_quantile(&historical_distribution(losses, window)?, 1.0 - lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn window(losses: Vec<f64>, vols: Vec<f64>, flags: Vec<bool>) -> LossWindow {
        LossWindow::new(losses, vols, flags).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let w = window(vec![2.0, 3.0], vec![2.0, 3.0], vec![false, false]);
        assert_eq!(normalize_losses(&w), vec![1.0, 1.0]);
        let w = window(vec![2.0, -4.0], vec![0.5, 0.5], vec![false, false]);
        assert_eq!(normalize_losses(&w), vec![4.0, -8.0]);
        assert!(LossWindow::new(vec![1.0], vec![0.0], vec![false]).is_err());
        assert!(LossWindow::new(vec![1.0], vec![-1.0], vec![false]).is_err());
        assert!(LossWindow::new(vec![1.0, 2.0], vec![1.0], vec![false]).is_err());
    }

    #[test]
    fn jump_forecast_examples() {
        assert_eq!(jump_probability_forecast(&[false; 60], 60).unwrap(), 0.0);
        assert_eq!(jump_probability_forecast(&[true; 60], 60).unwrap(), 1.0);
        let mut f = vec![true; 100];
        f[40..].iter_mut().for_each(|x| *x = false);
        f[50] = true;
        f[70] = true;
        f[99] = true;
        assert!((jump_probability_forecast(&f, 60).unwrap() - 0.05).abs() < 1e-15);
        assert!(jump_probability_forecast(&f, 101).is_err());
    }

    #[test]
    fn occurrence_weight_examples() {
        let mut flags = vec![false; 100];
        flags[..10].iter_mut().for_each(|f| *f = true);
        let w = occurrence_weights(&flags, 0.1).unwrap();
        assert!(w.weights.iter().all(|x| (x - 0.01).abs() < 1e-15));

        let w = occurrence_weights(&flags, 0.2).unwrap();
        assert!((w.weights[0] - 0.02).abs() < 1e-15);
        assert!((w.weights[50] - 0.8 / 90.0).abs() < 1e-15);
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);

        let w = occurrence_weights(&flags, 0.0).unwrap();
        assert_eq!(w.weights[0], 0.0);
        assert!((w.weights[50] - 1.0 / 90.0).abs() < 1e-15);
    }

    #[test]
    fn occurrence_weight_degenerate_histories() {
        let w = occurrence_weights(&[false; 20], 0.1).unwrap();
        assert!(w.degenerate);
        assert!(w.weights.iter().all(|x| (x - 0.05).abs() < 1e-15));
        let w = occurrence_weights(&[false; 20], 0.0).unwrap();
        assert!(!w.degenerate);
        let w = occurrence_weights(&[true; 20], 0.5).unwrap();
        assert!(w.degenerate);
        assert!(occurrence_weights(&[true], 1.5).is_err());
    }

    #[test]
    fn weighted_quantile_examples() {
        let d = WeightedLossDistribution::new(vec![1.0, -5.0], vec![0.99, 0.01]).unwrap();
        assert_eq!(weighted_quantile(&d, 0.01), -5.0);
        assert_eq!(weighted_quantile(&d, 0.011), 1.0);
        let d = WeightedLossDistribution::uniform((1..=100).map(f64::from).collect()).unwrap();
        assert_eq!(weighted_quantile(&d, 0.5), 50.0);
        assert_eq!(weighted_quantile(&d, 0.99), 99.0);
        assert_eq!(weighted_quantile(&d, 1.0), 100.0);
    }

    #[test]
    fn historical_examples() {
        assert_eq!(var_historical(&[3.5; 10], 10, 0.01).unwrap(), 3.5);
        let l: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(var_historical(&l, 100, 0.5).unwrap(), 50.0);
        assert_eq!(var_historical(&l, 100, 0.01).unwrap(), 99.0);
        assert!(var_historical(&l, 101, 0.01).is_err());
        assert!(var_historical(&l, 10, 1.0).is_err());
    }

    #[test]
    fn normalized_var_reductions() {
        let losses: Vec<f64> = (0..250).map(|i| ((i * 37) % 101) as f64 / 10.0 - 5.0).collect();
        let w = window(losses.clone(), vec![2.0; 250], vec![false; 250]);
        assert_eq!(var_normalized(&w, 0.01).unwrap(), var_historical(&losses, 250, 0.01).unwrap());
        let mut vols = vec![2.0; 250];
        vols[249] = 4.0;
        let base: Vec<f64> = losses.iter().map(|l| l / 2.0).collect();
        let mut shifted = base.clone();
        shifted[249] = losses[249] / 4.0;
        // Last-day volatility doubles: the scale doubles, the normalized sample barely moves.
        let w2 = window(losses.clone(), vols, vec![false; 250]);
        let want = 4.0 * weighted_quantile(&WeightedLossDistribution::uniform(shifted).unwrap(), 0.99);
        assert_eq!(var_normalized(&w2, 0.01).unwrap(), want);
    }

    #[test]
    fn jumping_reduces_to_normalized_without_jumps() {
        let losses: Vec<f64> = (0..300).map(|i| ((i * 53) % 97) as f64 - 48.0).collect();
        let vols: Vec<f64> = (0..300).map(|i| 1.0 + (i % 7) as f64 / 10.0).collect();
        let w = window(losses, vols, vec![false; 300]);
        let cfg = JumpingVarConfig::DEFAULT;
        let nw = w.tail(250).unwrap();
        assert_eq!(var_jumping(&w, &cfg).unwrap(), var_normalized(&nw, 0.01).unwrap());
    }

    #[test]
    fn jump_upweighting_raises_tail_var() {
        // One dominant jump loss, recent enough to push the forecast above p_J.
        let mut losses = vec![0.0; 250];
        for (i, l) in losses.iter_mut().enumerate() {
            *l = (i % 10) as f64 / 10.0;
        }
        losses[240] = 50.0;
        let mut flags = vec![false; 250];
        flags[240] = true;
        let w = window(losses, vec![1.0; 250], flags);
        let cfg = JumpingVarConfig::new(250, 60, 0.01).unwrap();
        let jf = jumping_distribution(&w, &cfg).unwrap();
        assert!(jf.p_forecast > jf.weights.p_j);
        assert!(var_jumping(&w, &cfg).unwrap() >= var_normalized(&w, 0.01).unwrap());
        assert_eq!(var_jumping(&w, &JumpingVarConfig::new(250, 60, 0.005).unwrap()).unwrap(), 50.0);
    }

    #[test]
    fn config_validation() {
        assert!(JumpingVarConfig::new(250, 300, 0.01).is_err());
        assert!(JumpingVarConfig::new(250, 0, 0.01).is_err());
        assert!(JumpingVarConfig::new(250, 60, 0.0).is_err());
        let w = window(vec![1.0; 100], vec![1.0; 100], vec![false; 100]);
        assert!(var_jumping(&w, &JumpingVarConfig::DEFAULT).is_err());
    }

    fn arb_window() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
        (20usize..300).prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(0.1f64..5.0, n),
                prop::collection::vec(prop::bool::weighted(0.1), n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn weights_close_to_one(flags in prop::collection::vec(any::<bool>(), 1..500), p in 0.0f64..=1.0) {
            let w = occurrence_weights(&flags, p).unwrap();
            prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(w.weights.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn jumping_equals_normalized_when_forecast_matches_history((l, v, f) in arb_window(), lam in 0.001f64..0.5) {
            let n = l.len();
            let w = LossWindow::new(l, v, f.clone()).unwrap();
            let p_j = f.iter().filter(|&&x| x).count() as f64 / n as f64;
            let ow = occurrence_weights(&f, p_j).unwrap();
            let dist = WeightedLossDistribution::new(normalize_losses(&w), ow.weights).unwrap().scaled(w.last_vol());
            prop_assert_eq!(weighted_quantile(&dist, 1.0 - lam), var_normalized(&w, lam).unwrap());
        }

        #[test]
        fn positive_homogeneity((l, v, f) in arb_window(), c in 0.01f64..100.0) {
            let n = l.len();
            let w = LossWindow::new(l.clone(), v.clone(), f.clone()).unwrap();
            let ws = LossWindow::new(l.iter().map(|x| x * c).collect(), v.iter().map(|x| x * c).collect(), f).unwrap();
            let cfg = JumpingVarConfig::new(n, n.min(60), 0.01).unwrap();
            let a = var_jumping(&w, &cfg).unwrap();
            let b = var_jumping(&ws, &cfg).unwrap();
            prop_assert!((b - c * a).abs() <= 1e-9 * (1.0 + b.abs()));
            let a = var_historical(&l, n, 0.05).unwrap();
            let b = var_historical(&l.iter().map(|x| x * c).collect::<Vec<_>>(), n, 0.05).unwrap();
            prop_assert!((b - c * a).abs() <= 1e-9 * (1.0 + b.abs()));
        }

        #[test]
        fn var_nonincreasing_in_tail_level((l, v, f) in arb_window(), a in 0.001f64..0.99, b in 0.001f64..0.99) {
            let w = LossWindow::new(l, v, f).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(var_normalized(&w, lo).unwrap() >= var_normalized(&w, hi).unwrap());
        }

        #[test]
        fn quantile_matches_cdf_scan(
            sup in prop::collection::vec(-5.0f64..5.0, 1..50),
            raw in prop::collection::vec(0.0f64..1.0, 50),
            level in 0.0f64..1.0,
        ) {
            let n = sup.len();
            let mut w: Vec<f64> = raw[..n].iter().map(|x| x + 1e-3).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            let d = WeightedLossDistribution::new(sup.clone(), close_weights(w.clone())).unwrap();
            let q = weighted_quantile(&d, level);
            // Brute force: the smallest candidate whose CDF reaches the level.
            let mut cands = sup.clone();
            cands.sort_by(f64::total_cmp);
            let cdf = |x: f64| sup.iter().zip(&w).filter(|(s, _)| **s <= x).map(|(_, w)| *w).sum::<f64>();
            let want = cands.iter().copied().find(|&x| cdf(x) >= level - 1e-9).unwrap_or(cands[n - 1]);
            prop_assert_eq!(q, want);
        }
    }
}
