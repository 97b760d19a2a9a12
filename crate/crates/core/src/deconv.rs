//! Jump-size density recovery by characteristic-function deconvolution.
//!
//! Detected jump realizations are the sum of a Gaussian diffusion
//! increment and the jump itself. The pipeline bins them, fills the
//! depleted centre of the histogram with a cubic, takes the characteristic
//! function of the filled histogram, divides out the Gaussian factor and
//! inverts back to a density.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Frequencies where the Gaussian CF falls below this are dropped.
pub const EPS_CUT: f64 = 1e-8;
pub const DEFAULT_U_POINTS: usize = 2048;
pub const DEFAULT_Z_POINTS: usize = 1024;
pub const DEFAULT_N_FIT: usize = 4;
/// A central bin is part of the gap while its count is below this
/// fraction of the largest count on its side.
pub const DEPLETION_RATIO: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicGrid {
    u: Vec<f64>,
    values: Vec<Complex64>,
}

impl CharacteristicGrid {
    pub fn new(u: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if u.len() != values.len() {
            return Err(Error::domain("frequency grid and CF values differ in length"));
        }
        if u.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::domain("frequencies must be finite and nonnegative"));
        }
        if u.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("frequencies must be strictly increasing"));
        }
        Ok(CharacteristicGrid { u, values })
    }

    /// Evaluate a closed-form CF on `u`.
    pub fn from_fn(u: Vec<f64>, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let values = u.iter().map(|&x| f(x)).collect();
        Self::new(u, values)
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// a·self + b·other on a shared grid.
    pub fn combine(&self, a: f64, other: &CharacteristicGrid, b: f64) -> Result<Self> {
        if self.u != other.u {
            return Err(Error::domain("CF grids differ"));
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x * a + y * b).collect();
        Ok(CharacteristicGrid { u: self.u.clone(), values })
    }
}

/// `n` equally spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { hi } else { lo + step * i as f64 }).collect()
        }
    }
}

/// Empirical characteristic function mean(exp(i·u·x)).
pub fn ecf(sample: &[f64], u_grid: &[f64]) -> Result<CharacteristicGrid> {
    if sample.is_empty() {
        return Err(Error::domain("empirical CF of an empty sample"));
    }
    let inv_n = 1.0 / sample.len() as f64;
    let values = u_grid
        .iter()
        .map(|&u| {
            let (mut re, mut im) = (0.0, 0.0);
            for &x in sample {
                let (s, c) = (u * x).sin_cos();
                re += c;
                im += s;
            }
            Complex64::new(re * inv_n, im * inv_n)
        })
        .collect();
    CharacteristicGrid::new(u_grid.to_vec(), values)
}

pub fn gaussian_cf(u: f64, mu: f64, sigma2: f64) -> Complex64 {
    Complex64::from_polar((-0.5 * sigma2 * u * u).exp(), u * mu)
}

/// Divide by the N(mu, sigma2) characteristic function, dropping
/// frequencies where its modulus is below [`EPS_CUT`].
pub fn deconvolve_gaussian(cf: &CharacteristicGrid, mu: f64, sigma2: f64) -> Result<CharacteristicGrid> {
    if !(sigma2.is_finite() && sigma2 >= 0.0) || !mu.is_finite() {
        return Err(Error::domain(format!("invalid Gaussian factor N({mu}, {sigma2})")));
    }
    let mut u = Vec::with_capacity(cf.len());
    let mut values = Vec::with_capacity(cf.len());
    for (&x, &v) in cf.u.iter().zip(&cf.values) {
        let g = gaussian_cf(x, mu, sigma2);
        if g.norm() < EPS_CUT {
            continue;
        }
        u.push(x);
        values.push(v / g);
    }
    Ok(CharacteristicGrid { u, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub z: Vec<f64>,
    /// Values before clipping, kept for diagnostics.
    pub f_raw: Vec<f64>,
    pub f: Vec<f64>,
}

impl DensityEstimate {
    pub fn integral(&self) -> f64 {
        trapezoid(&self.z, &self.f)
    }

    pub fn integral_raw(&self) -> f64 {
        trapezoid(&self.z, &self.f_raw)
    }

    /// ∫|f − g| over the grid, using the clipped values.
    pub fn l1_distance(&self, g: impl Fn(f64) -> f64) -> f64 {
        let d: Vec<f64> = self.z.iter().zip(&self.f).map(|(&z, &f)| (f - g(z)).abs()).collect();
        trapezoid(&self.z, &d)
    }

    pub fn argmax(&self) -> f64 {
        let i = (0..self.f.len()).max_by(|&a, &b| self.f[a].total_cmp(&self.f[b])).unwrap_or(0);
        self.z[i]
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// f(z) = (1/π)·Re ∫₀^{U} Ψ(u)·e^{−iuz} du by the trapezoid rule.
pub fn invert_cf_to_pdf(cf: &CharacteristicGrid, z_grid: &[f64]) -> Result<DensityEstimate> {
    if cf.len() < 2 {
        return Err(Error::Deconvolution(format!(
            "need at least two retained frequencies, have {}",
            cf.len()
        )));
    }
    let f_raw: Vec<f64> = z_grid
        .iter()
        .map(|&z| {
            let re: Vec<f64> = cf.u.iter().zip(&cf.values).map(|(&u, v)| (v * Complex64::from_polar(1.0, -u * z)).re).collect();
            trapezoid(&cf.u, &re) / PI
        })
        .collect();
    let f = f_raw.iter().map(|v| v.max(0.0)).collect();
    Ok(DensityEstimate { z: z_grid.to_vec(), f_raw, f })
}

/// Equal-width histogram with real-valued (possibly filled) counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    lo: f64,
    width: f64,
    counts: Vec<f64>,
}

impl Histogram {
    pub fn new(lo: f64, width: f64, counts: Vec<f64>) -> Result<Self> {
        if !(width > 0.0 && width.is_finite() && lo.is_finite()) {
            return Err(Error::domain("histogram needs a finite origin and positive bin width"));
        }
        if counts.is_empty() || counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::domain("histogram counts must be nonnegative and nonempty"));
        }
        Ok(Histogram { lo, width, counts })
    }

    /// `n_bins` bins over `[lo, hi]`; values outside are ignored.
    pub fn from_sample(sample: &[f64], n_bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if n_bins == 0 || !(hi > lo) {
            return Err(Error::domain("histogram needs n_bins >= 1 and hi > lo"));
        }
        let width = (hi - lo) / n_bins as f64;
        let mut counts = vec![0.0; n_bins];
        for &x in sample {
            if x < lo || x > hi {
                continue;
            }
            let i = (((x - lo) / width) as usize).min(n_bins - 1);
            counts[i] += 1.0;
        }
        Self::new(lo, width, counts)
    }

    /// Bins symmetric about zero, width chosen so `n_bins` cover ±`half_range`.
    pub fn symmetric(sample: &[f64], n_bins: usize, half_range: f64) -> Result<Self> {
        Self::from_sample(sample, n_bins, -half_range, half_range)
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.width * self.counts.len() as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + self.width * (i as f64 + 0.5)
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Index of the bin containing zero, or the middle bin if zero is
    /// outside the range.
    fn central_bin(&self) -> usize {
        let n = self.counts.len();
        if self.lo <= 0.0 && 0.0 < self.hi() {
            (((-self.lo) / self.width) as usize).min(n - 1)
        } else {
            n / 2
        }
    }

    /// Inclusive bin range of the depleted centre, if any.
    pub fn central_gap(&self) -> Option<(usize, usize)> {
        let c = self.central_bin();
        let left_max = self.counts[..c].iter().cloned().fold(0.0, f64::max);
        let right_max = self.counts[c + 1..].iter().cloned().fold(0.0, f64::max);
        let side = left_max.min(right_max);
        if side <= 0.0 || self.counts[c] >= DEPLETION_RATIO * side {
            return None;
        }
        let mut lo = c;
        while lo > 0 && self.counts[lo - 1] < DEPLETION_RATIO * left_max {
            lo -= 1;
        }
        let mut hi = c;
        while hi + 1 < self.counts.len() && self.counts[hi + 1] < DEPLETION_RATIO * right_max {
            hi += 1;
        }
        Some((lo, hi))
    }

    /// CF of the histogram read as a piecewise-uniform density.
    pub fn characteristic(&self, u_grid: &[f64]) -> Result<CharacteristicGrid> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::domain("characteristic function of an empty histogram"));
        }
        let values = u_grid
            .iter()
            .map(|&u| {
                let half = 0.5 * u * self.width;
                let sinc = if half == 0.0 { 1.0 } else { half.sin() / half };
                let mut acc = Complex64::new(0.0, 0.0);
                for (i, &c) in self.counts.iter().enumerate() {
                    if c > 0.0 {
                        acc += Complex64::from_polar(c, u * self.center(i));
                    }
                }
                acc * (sinc / total)
            })
            .collect();
        CharacteristicGrid::new(u_grid.to_vec(), values)
    }
}

/// Least-squares polynomial of degree 3 through (x, y), returned as
/// coefficients in powers of (x − x0)/scale.
fn cubic_fit(x: &[f64], y: &[f64]) -> Result<impl Fn(f64) -> f64> {
    let n = x.len();
    let x0 = x.iter().sum::<f64>() / n as f64;
    let scale = x.iter().map(|v| (v - x0).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut a = [[0.0f64; 5]; 4];
    for (&xi, &yi) in x.iter().zip(y) {
        let t = (xi - x0) / scale;
        let pw = [1.0, t, t * t, t * t * t];
        for r in 0..4 {
            for c in 0..4 {
                a[r][c] += pw[r] * pw[c];
            }
            a[r][4] += pw[r] * yi;
        }
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        if a[piv][col].abs() < 1e-12 {
            return Err(Error::numeric("cubic fit is singular"));
        }
        a.swap(col, piv);
        for r in 0..4 {
            if r != col {
                let k = a[r][col] / a[col][col];
                for c in col..5 {
                    a[r][c] -= k * a[col][c];
                }
            }
        }
    }
    let coef: [f64; 4] = std::array::from_fn(|i| a[i][4] / a[i][i]);
    Ok(move |xv: f64| {
        let t = (xv - x0) / scale;
        coef[0] + t * (coef[1] + t * (coef[2] + t * coef[3]))
    })
}

/// Replace the depleted central bins with a cubic fitted to the
/// `n_fit_points` nearest populated bins on each side. Bins outside the
/// gap are left as they are; negative fitted values become zero.
pub fn fill_histogram_center(hist: &Histogram, n_fit_points: usize) -> Result<Histogram> {
    if n_fit_points == 0 {
        return Err(Error::domain("n_fit_points must be positive"));
    }
    let Some((glo, ghi)) = hist.central_gap() else {
        return Ok(hist.clone());
    };
    let left: Vec<usize> = (0..glo).rev().filter(|&i| hist.counts[i] > 0.0).take(n_fit_points).collect();
    let right: Vec<usize> = (ghi + 1..hist.counts.len()).filter(|&i| hist.counts[i] > 0.0).take(n_fit_points).collect();
    if left.len() + right.len() < 4 {
        return Err(Error::domain(format!(
            "cubic fill needs at least 4 populated bins around the gap, found {}",
            left.len() + right.len()
        )));
    }
    let idx: Vec<usize> = left.into_iter().chain(right).collect();
    let xs: Vec<f64> = idx.iter().map(|&i| hist.center(i)).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| hist.counts[i]).collect();
    let poly = cubic_fit(&xs, &ys)?;
    let mut counts = hist.counts.clone();
    for (i, c) in counts.iter_mut().enumerate().take(ghi + 1).skip(glo) {
        *c = poly(hist.center(i)).max(0.0);
    }
    Histogram::new(hist.lo, hist.width, counts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeconvConfig {
    /// Bin width of the histogram that is filled; `None` uses the diffusion
    /// standard deviation √sigma2 (or the Rice width if sigma2 is zero).
    pub fill_bin_width: Option<f64>,
    pub n_fit: usize,
    /// Largest frequency; `None` uses π over the Rice-rule bin width
    /// (range / ⌈2·n^{1/3}⌉), capped where the Gaussian CF reaches [`EPS_CUT`].
    pub u_max: Option<f64>,
    pub u_points: usize,
    pub z_points: usize,
}

impl Default for DeconvConfig {
    fn default() -> Self {
        DeconvConfig {
            fill_bin_width: None,
            n_fit: DEFAULT_N_FIT,
            u_max: None,
            u_points: DEFAULT_U_POINTS,
            z_points: DEFAULT_Z_POINTS,
        }
    }
}

/// Jump-size density from detected realizations (diffusion + jump) whose
/// diffusion part is N(mu, sigma2).
pub fn jump_size_density(detected: &[f64], mu: f64, sigma2: f64, config: &DeconvConfig) -> Result<DensityEstimate> {
    if detected.len() < 2 {
        return Err(Error::Deconvolution("fewer than two detected realizations".into()));
    }
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(Error::domain(format!("diffusion variance must be nonnegative, got {sigma2}")));
    }
    let half = detected.iter().fold(0.0f64, |m, x| m.max(x.abs())) * (1.0 + 1e-9);
    if !(half > 0.0 && half.is_finite()) {
        return Err(Error::Deconvolution("detected realizations are all zero".into()));
    }
    let rice_width = 2.0 * half / rice_bins(detected.len()) as f64;
    let width = config.fill_bin_width.unwrap_or(if sigma2 > 0.0 { sigma2.sqrt() } else { rice_width });
    if !(width > 0.0) {
        return Err(Error::domain("fill bin width must be positive"));
    }
    let n_bins = ((2.0 * half / width).ceil() as usize).max(1);
    let hist = Histogram::symmetric(detected, n_bins, half)?;
    let filled = fill_histogram_center(&hist, config.n_fit)?;

    let mut u_max = config.u_max.unwrap_or(PI / rice_width);
    if sigma2 > 0.0 {
        u_max = u_max.min((2.0 * (1.0 / EPS_CUT).ln() / sigma2).sqrt());
    }
    let u = linspace(0.0, u_max, config.u_points);
    let cf = filled.characteristic(&u)?;
    let jump_cf = deconvolve_gaussian(&cf, mu, sigma2)?;

    let mean = detected.iter().sum::<f64>() / detected.len() as f64;
    let sd = (detected.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / detected.len() as f64).sqrt();
    let (lo, hi) = detected.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let z = linspace(lo - 4.0 * sd, hi + 4.0 * sd, config.z_points);
    invert_cf_to_pdf(&jump_cf, &z)
}

pub fn rice_bins(n: usize) -> usize {
    (2.0 * (n as f64).cbrt()).ceil() as usize
}

pub fn normal_pdf_scaled(z: f64, mu: f64, var: f64) -> f64 {
    (-(z - mu) * (z - mu) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}
