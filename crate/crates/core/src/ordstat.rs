//! Distribution functions of order statistics of standard normal samples and
//! the jump-classification threshold schedules built on them.
//!
//! `θ(p; k, n')` denotes the (1 − p)-quantile of the k-th smallest of `n'`
//! independent standard normals. A realization above `θ` is "too large to be
//! the k-th order statistic of a Gaussian sample" at tolerance `p`.

use crate::error::{Error, Result};
use crate::special::{brent_root, normal_cdf, normal_sf, reg_inc_beta};

pub use crate::special::normal_cdf as phi;

/// Acceptable type-I error probability, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ToleranceLevel(f64);

impl ToleranceLevel {
    pub fn new(p: f64) -> Result<Self> {
        if p > 0.0 && p < 1.0 {
            Ok(ToleranceLevel(p))
        } else {
            Err(Error::domain(format!("tolerance level must lie in (0,1), got {p}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Rank `k` (1-based, ascending) within a sample of size `n_prime`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OrderIndex {
    k: usize,
    n_prime: usize,
}

impl OrderIndex {
    pub fn new(k: usize, n_prime: usize) -> Result<Self> {
        if k >= 1 && k <= n_prime {
            Ok(OrderIndex { k, n_prime })
        } else {
            Err(Error::domain(format!("order index requires 1 <= k <= n', got k={k}, n'={n_prime}")))
        }
    }

    pub fn k(self) -> usize {
        self.k
    }

    pub fn n_prime(self) -> usize {
        self.n_prime
    }

    /// The rank holding the same distribution after negation:
    /// Z_{k:n'} has the law of −Z_{(n'−k+1):n'}.
    pub fn mirrored(self) -> Self {
        OrderIndex { k: self.n_prime - self.k + 1, n_prime: self.n_prime }
    }
}

/// CDF of Z_{k:n'}: I_{Φ(x)}(k, n' − k + 1).
pub fn order_stat_cdf(x: f64, idx: OrderIndex) -> f64 {
    let a = idx.k as f64;
    let b = (idx.n_prime - idx.k + 1) as f64;
    reg_inc_beta(a, b, normal_cdf(x), normal_sf(x))
}

/// Whether `x` exceeds `θ(p; idx)` without inverting the CDF.
///
/// The CDF is strictly increasing, so `x > θ` iff `F(x) > 1 − p`.
pub fn exceeds_quantile(x: f64, p: ToleranceLevel, idx: OrderIndex) -> bool {
    order_stat_cdf(x, idx) > 1.0 - p.0
}

const QUANTILE_XTOL: f64 = 1e-14;

/// θ(p; k, n') = F⁻¹_{Z_{k:n'}}(1 − p), by Brent iteration on a bracket
/// starting at [−10, 10] and doubled until it straddles the target.
pub fn order_stat_quantile(p: ToleranceLevel, idx: OrderIndex) -> Result<f64> {
    let target = 1.0 - p.0;
    let g = |x: f64| order_stat_cdf(x, idx) - target;
    let (mut lo, mut hi) = (-10.0, 10.0);
    let mut widened = 0;
    while g(lo) > 0.0 || g(hi) < 0.0 {
        lo *= 2.0;
        hi *= 2.0;
        widened += 1;
        if widened > 6 {
            return Err(Error::numeric(format!(
                "could not bracket quantile for p={}, k={}, n'={}",
                p.0, idx.k, idx.n_prime
            )));
        }
    }
    brent_root(g, lo, hi, QUANTILE_XTOL, 300)
}

/// Which end of the ordered sample the progressive classification is
/// currently examining.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Largest remaining realizations, compared as `Δ > θ`.
    Max,
    /// Smallest remaining realizations, compared as `−Δ > θ`.
    Min,
}

/// Bookkeeping of the alternating max/min classification pass.
///
/// `n_active` is the count of observations not (yet) classified as jumps;
/// `k_max`/`k_min` advance by one for every realization accepted as
/// ordinary on the respective side. `flags` is aligned to the ascending
/// sorted sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationState {
    n: usize,
    n_active: usize,
    k_max: usize,
    k_min: usize,
    flags: Vec<bool>,
}

impl ClassificationState {
    pub fn new(n: usize) -> Self {
        ClassificationState { n, n_active: n, k_max: 1, k_min: 1, flags: vec![false; n] }
    }

    /// Rebuild a state from explicit counters, checking the invariants.
    pub fn from_parts(n_active: usize, k_max: usize, k_min: usize, flags: Vec<bool>) -> Result<Self> {
        let n = flags.len();
        let jumps = flags.iter().filter(|&&f| f).count();
        if n_active != n - jumps {
            return Err(Error::domain(format!(
                "inconsistent state: n_active={n_active} but {} unflagged",
                n - jumps
            )));
        }
        if k_max == 0 || k_min == 0 || k_max + k_min + jumps > n + 2 {
            return Err(Error::domain(format!(
                "inconsistent state counters k_max={k_max}, k_min={k_min}, jumps={jumps}, n={n}"
            )));
        }
        Ok(ClassificationState { n, n_active, k_max, k_min, flags })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_active(&self) -> usize {
        self.n_active
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn k_min(&self) -> usize {
        self.k_min
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn jump_count(&self) -> usize {
        self.n - self.n_active
    }

    /// Order index the next realization on `side` is compared against:
    /// rank `n' − k + 1` of the `n'` still-active observations.
    pub fn next_index(&self, side: Side) -> Result<OrderIndex> {
        let k = match side {
            Side::Max => self.k_max,
            Side::Min => self.k_min,
        };
        if self.n_active == 0 || k > self.n_active {
            return Err(Error::DegenerateSchedule {
                rank: (self.n_active + 1).saturating_sub(k),
                size: self.n_active,
            });
        }
        OrderIndex::new(self.n_active - k + 1, self.n_active)
    }

    /// Record the outcome for the realization at `sorted_pos`.
    pub fn record(&mut self, side: Side, sorted_pos: usize, is_jump: bool) {
        if is_jump {
            if !self.flags[sorted_pos] {
                self.flags[sorted_pos] = true;
            }
            self.n_active -= 1;
        } else {
            match side {
                Side::Max => self.k_max += 1,
                Side::Min => self.k_min += 1,
            }
        }
    }

    pub fn into_flags(self) -> Vec<bool> {
        self.flags
    }
}

/// Threshold the next realization on `side` is compared against, scaled by
/// `√sigma2`. With `sigma2 = 1` this is the unscaled schedule applied to
/// renormalized increments.
pub fn threshold_schedule(side: Side, state: &ClassificationState, p: ToleranceLevel, sigma2: f64) -> Result<f64> {
    if !(sigma2 >= 0.0) {
        return Err(Error::domain(format!("sigma2 must be non-negative, got {sigma2}")));
    }
    let idx = state.next_index(side)?;
    Ok(sigma2.sqrt() * order_stat_quantile(p, idx)?)
}

/// Lévy-modulus threshold function 2·log(1/dt).
pub fn levy_modulus_threshold(dt: f64) -> Result<f64> {
    if dt > 0.0 && dt < 1.0 {
        Ok(-2.0 * dt.ln())
    } else {
        Err(Error::domain(format!("dt must lie in (0,1), got {dt}")))
    }
}

/// Time step at which the fixed threshold `2·log(1/dt)` matches the squared
/// maximum-statistic quantile θ(p̄/2; n, n), with p̄ the two-sided tolerance.
pub fn calibrate_equivalent_dt(p_bar: ToleranceLevel, n: usize) -> Result<f64> {
    let half = ToleranceLevel::new(p_bar.0 / 2.0)?;
    let theta = order_stat_quantile(half, OrderIndex::new(n, n)?)?;
    if theta <= 0.0 {
        return Err(Error::domain(format!(
            "calibration needs a positive maximum quantile, got {theta} for p̄={}, n={n}",
            p_bar.0
        )));
    }
    Ok((-0.5 * theta * theta).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tol(p: f64) -> ToleranceLevel {
        ToleranceLevel::new(p).unwrap()
    }

    fn idx(k: usize, n: usize) -> OrderIndex {
        OrderIndex::new(k, n).unwrap()
    }

    #[test]
    fn cdf_small_cases() {
        assert!((order_stat_cdf(0.0, idx(1, 1)) - 0.5).abs() < 1e-15);
        assert!((order_stat_cdf(0.0, idx(2, 2)) - 0.25).abs() < 1e-15);
        // Minimum of two: 1 - (1 - Φ(1))².
        assert!((order_stat_cdf(1.0, idx(1, 2)) - 0.974_828_510_399_944_9).abs() < 1e-12);
        let x = 0.7;
        assert!((order_stat_cdf(x, idx(30, 30)) - normal_cdf(x).powi(30)).abs() < 1e-14);
    }

    // Quantile reference values: mpmath (40 digits) and scipy betaincinv.
    #[test]
    fn quantile_reference_values() {
        let cases = [
            (0.5, 1, 1, 0.0),
            (0.05, 1, 1, 1.644_853_626_951_472_7),
            (0.05, 10, 10, 2.567_875_368_592_571_5),
            (0.05, 9, 9, 2.531_237_371_839_475_8),
            (0.05, 100, 100, 3.283_407_535_273_904_9),
            (0.05, 250, 250, 3.533_365_847_770_586_9),
            (0.05, 5000, 5000, 4.259_186_619_074_232_7),
            (0.01, 500, 1000, 0.090_929_930_492_548_25),
            (0.1, 1, 1000, -2.833_795_738_284_480_4),
            (0.05, 2500, 5000, 0.028_902_337_936_619_77),
            (0.05, 4999, 5000, 3.804_390_514_114_62),
        ];
        for (p, k, n, want) in cases {
            let got = order_stat_quantile(tol(p), idx(k, n)).unwrap();
            assert!((got - want).abs() < 1e-9, "θ({p};{k},{n}) = {got}, want {want}");
        }
    }

    #[test]
    fn quantile_round_trip_grid() {
        for &p in &[0.5, 0.1, 0.05, 0.01] {
            for &n in &[1usize, 10, 250, 1000] {
                for k in [1, (n / 2).max(1), n] {
                    let i = idx(k, n);
                    let q = order_stat_quantile(tol(p), i).unwrap();
                    let err = (order_stat_cdf(q, i) - (1.0 - p)).abs();
                    assert!(err < 1e-10, "round trip p={p} k={k} n={n}: {err}");
                }
            }
        }
    }

    #[test]
    fn quantile_strictly_decreasing_in_p() {
        let i = idx(40, 50);
        let mut last = f64::INFINITY;
        for &p in &[0.001, 0.01, 0.05, 0.2, 0.5, 0.9, 0.99] {
            let q = order_stat_quantile(tol(p), i).unwrap();
            assert!(q < last);
            last = q;
        }
    }

    #[test]
    fn exceeds_quantile_agrees_with_explicit_threshold() {
        let p = tol(0.05);
        for &(k, n) in &[(10, 10), (7, 10), (120, 250), (3, 5)] {
            let i = idx(k, n);
            let q = order_stat_quantile(p, i).unwrap();
            assert!(exceeds_quantile(q + 1e-6, p, i));
            assert!(!exceeds_quantile(q - 1e-6, p, i));
        }
    }

    #[test]
    fn schedule_dispatch() {
        let p = tol(0.05);
        let fresh = ClassificationState::new(10);
        let t1 = threshold_schedule(Side::Max, &fresh, p, 1.0).unwrap();
        assert_eq!(t1, order_stat_quantile(p, idx(10, 10)).unwrap());
        let t4 = threshold_schedule(Side::Max, &fresh, p, 4.0).unwrap();
        assert_eq!(t4, 2.0 * t1);

        // One max-side jump recorded: the first min-side comparison uses θ(p; 9, 9).
        let mut st = ClassificationState::new(10);
        st.record(Side::Max, 9, true);
        let t = threshold_schedule(Side::Min, &st, p, 1.0).unwrap();
        assert_eq!(t, order_stat_quantile(p, idx(9, 9)).unwrap());

        // Max accepted as ordinary: the next max-side rank is the second largest of 10.
        let mut st = ClassificationState::new(10);
        st.record(Side::Max, 9, false);
        assert_eq!(st.next_index(Side::Max).unwrap(), idx(9, 10));
        assert_eq!(st.next_index(Side::Min).unwrap(), idx(10, 10));
    }

    #[test]
    fn degenerate_schedule_is_an_error() {
        let st = ClassificationState::from_parts(0, 1, 1, vec![true; 4]).unwrap();
        assert!(matches!(
            threshold_schedule(Side::Max, &st, tol(0.05), 1.0),
            Err(Error::DegenerateSchedule { .. })
        ));
        assert!(ClassificationState::from_parts(3, 1, 1, vec![true; 4]).is_err());
    }

    #[test]
    fn levy_threshold_values() {
        assert!(levy_modulus_threshold(1.0 - 1e-12).unwrap().abs() < 1e-11);
        assert!((levy_modulus_threshold((-1f64).exp()).unwrap() - 2.0).abs() < 1e-15);
        assert!((levy_modulus_threshold(0.004).unwrap() - 11.042_921_835_724_492).abs() < 1e-12);
        assert!(levy_modulus_threshold(1.0).is_err());
        assert!(levy_modulus_threshold(0.0).is_err());
    }

    #[test]
    fn calibrated_dt_round_trip_and_monotone() {
        let pb = tol(0.10);
        let dt = calibrate_equivalent_dt(pb, 250).unwrap();
        let theta = order_stat_quantile(tol(0.05), idx(250, 250)).unwrap();
        assert!((levy_modulus_threshold(dt).unwrap() - theta * theta).abs() < 1e-10);
        assert!((dt - (-0.5 * 3.533_365_847_770_586_9f64.powi(2)).exp()).abs() < 1e-12);
        let mut last = 1.0;
        for n in [10, 100, 1000, 5000] {
            let dt = calibrate_equivalent_dt(pb, n).unwrap();
            assert!(dt < last);
            last = dt;
        }
    }

    /// 1 − (2Φ(Λ) − 1)ⁿ against 2(1 − Φ(Λ)ⁿ): the two-sided maximum tail is
    /// twice the one-sided one for large Λ.
    fn two_sided_ratio_error(lambda: f64, n: i32) -> f64 {
        let sf = normal_sf(lambda);
        let abs_tail = -(n as f64 * (-2.0 * sf).ln_1p()).exp_m1();
        let one_tail = -(n as f64 * (-sf).ln_1p()).exp_m1();
        (abs_tail - 2.0 * one_tail).abs() / abs_tail
    }

    #[test]
    fn two_sided_tail_approximation_examples() {
        assert!(two_sided_ratio_error(3.0, 1) < 0.01);
        assert!(two_sided_ratio_error(5.0, 10_000) < 0.01);
        // Saturated tail: both sides near one, the factor two is wrong.
        assert!(two_sided_ratio_error(3.0, 10_000) > 0.9);
        assert!(two_sided_ratio_error(4.5, 10_000) > 0.01);
    }

    proptest! {
        #[test]
        fn mirror_symmetry(x in -6.0f64..6.0, n in 1usize..400, kf in 0.0f64..1.0) {
            let k = 1 + ((n - 1) as f64 * kf) as usize;
            let i = idx(k, n);
            let lhs = order_stat_cdf(x, i);
            let rhs = 1.0 - order_stat_cdf(-x, i.mirrored());
            prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
        }

        #[test]
        fn cdf_monotone_in_x(x in -6.0f64..6.0, dx in 0.0f64..1.0, n in 1usize..300, kf in 0.0f64..1.0) {
            let k = 1 + ((n - 1) as f64 * kf) as usize;
            let i = idx(k, n);
            prop_assert!(order_stat_cdf(x, i) <= order_stat_cdf(x + dx, i) + 1e-15);
        }

        #[test]
        fn two_sided_tail_approximation(lambda in 3.0f64..8.0, n in 1i32..=10_000) {
            // Error is about n(1 − Φ(Λ))/2, so the bound needs a thin tail.
            prop_assume!(normal_sf(lambda) * n as f64 <= 0.02);
            let err = two_sided_ratio_error(lambda, n);
            prop_assert!(err < 0.01, "Λ={} n={} err={}", lambda, n, err);
        }
    }
}
