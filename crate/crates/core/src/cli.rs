//! Command-line driver: data ingestion, configuration and the pipelines
//! behind the `osvol` binary.
//!
//! Configuration files hold flat `key = value` lines. Keys are long flag
//! names (`bandwidth = 100`) and may be qualified by a subcommand
//! (`detect.p = 0.01`). Flags given on the command line win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backtest::{
    ad_test, forecast_distribution, rolling_backtest, AdResult, BacktestConfig, BacktestData,
    VarModel, DEFAULT_GRID_POINTS,
};
use crate::deconv::{jump_size_density, DeconvConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    kernel_os_volatility, os_iv, threshold_iv, type1_control, IncrementSeries, KernelSpec, VolatilityPath,
    DEFAULT_MAX_ITER,
};
use crate::ordstat::ToleranceLevel;
use crate::simulate::{simulate_merton, simulate_vgbm, MertonParams, SimulatedPath, VgBmParams};
use crate::var::{weighted_quantile, JumpingVarConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NumericFailure(_) | Error::DegenerateSchedule { .. } | Error::Deconvolution(_) => EXIT_NUMERIC,
        _ => EXIT_VALIDATION,
    }
}

#[derive(Debug, Parser)]
#[command(name = "osvol", version, about = "Order-statistic jump detection, local volatility and jumping VaR")]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a jump-diffusion path.
    Simulate(SimulateArgs),
    /// Estimate volatility with a chosen method.
    Estimate(EstimateArgs),
    /// Kernel order-statistic volatility and jump flags.
    Detect(DetectArgs),
    /// Jump-size density from a detect output.
    Deconvolve(DeconvolveArgs),
    /// Daily VaR forecasts.
    Var(VarArgs),
    /// Rolling VaR backtest with rank-uniformity report.
    Backtest(BacktestArgs),
    /// Detect jumps, then test normalized returns for normality.
    SanityCheck(SanityArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Estimate(_) => "estimate",
            Command::Detect(_) => "detect",
            Command::Deconvolve(_) => "deconvolve",
            Command::Var(_) => "var",
            Command::Backtest(_) => "backtest",
            Command::SanityCheck(_) => "sanity-check",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SimModel {
    Merton,
    Vgbm,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "merton")]
    pub model: SimModel,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub b: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Jump intensity (merton).
    #[arg(long, default_value_t = 10.0)]
    pub lambda: f64,
    /// Mean jump size (merton).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub mu: f64,
    /// Jump size standard deviation (merton).
    #[arg(long, default_value_t = 1.5)]
    pub delta: f64,
    /// Drift per unit business time (vgbm).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub alpha: f64,
    /// Jump volatility per unit business time (vgbm).
    #[arg(long, default_value_t = 1.5)]
    pub beta: f64,
    /// Variance rate of the gamma subordinator (vgbm).
    #[arg(long, default_value_t = 0.004)]
    pub k_var: f64,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 20.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Where the return series comes from.
#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct InputArgs {
    /// CSV with an `increment` column (optionally `sigma`, `jump_flag`, `date`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// CSV with `date,price` and an optional `tick` column.
    #[arg(long)]
    pub prices: Option<PathBuf>,
    /// Subtract the sample mean from log-returns.
    #[arg(long)]
    pub demean: bool,
    /// Tick size for rows without a `tick` column.
    #[arg(long)]
    pub tick: Option<f64>,
    /// Add seeded uniform noise in [0, tick) to every price.
    #[arg(long)]
    pub adjust_seed: Option<u64>,
    /// Time step of one increment.
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct DetectionArgs {
    /// Tolerance level of the order-statistic thresholds.
    #[arg(long, default_value_t = 0.05)]
    pub p: f64,
    /// Kernel bandwidth in observations.
    #[arg(long, default_value_t = 100)]
    pub bandwidth: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Unflag detected jumps smaller than the local volatility.
    #[arg(long)]
    pub type1_control: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateMethod {
    /// Iterative kernel estimator.
    Kernel,
    /// Single-pass order-statistic integrated variance.
    Os,
    /// Fixed threshold in increment units.
    Threshold,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EstimateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "kernel")]
    pub method: EstimateMethod,
    #[command(flatten)]
    #[serde(flatten)]
    pub detection: DetectionArgs,
    /// Threshold for `--method threshold`, in increment units.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct DetectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub detection: DetectionArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct DeconvolveArgs {
    /// Detect output (`increment`, `sigma`, `jump_flag` columns).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Mean of the diffusion component of a detected increment.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub mu: f64,
    /// Diffusion variance per increment; defaults to the mean of sigma².
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long, default_value_t = crate::deconv::DEFAULT_N_FIT)]
    pub n_fit: usize,
    #[arg(long)]
    pub u_max: Option<f64>,
    #[arg(long)]
    pub fill_width: Option<f64>,
    #[arg(long, default_value_t = crate::deconv::DEFAULT_U_POINTS)]
    pub u_points: usize,
    #[arg(long, default_value_t = crate::deconv::DEFAULT_Z_POINTS)]
    pub z_points: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct VarModelArgs {
    /// Loss window length.
    #[arg(long = "N", default_value_t = 250)]
    #[serde(rename = "N")]
    pub window_n: usize,
    /// Jump-frequency forecast horizon.
    #[arg(long = "T", default_value_t = 60)]
    #[serde(rename = "T")]
    pub forecast_t: usize,
    /// VaR tail probability.
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    #[arg(long, value_delimiter = ',', default_value = "FVaRjj,FVaR,HVaR,HVaR_250", value_parser = parse_model)]
    #[serde(serialize_with = "ser_models")]
    pub models: Vec<VarModel>,
    /// External volatility CSV (`sigma` column, one row per return) for EXT.
    #[arg(long)]
    pub ext_vol: Option<PathBuf>,
    /// First forecast date; defaults to the longest history the models need.
    #[arg(long)]
    pub start: Option<usize>,
}

fn parse_model(s: &str) -> std::result::Result<VarModel, String> {
    s.parse::<VarModel>().map_err(|e| e.to_string())
}

fn ser_models<S: serde::Serializer>(m: &[VarModel], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&m.iter().map(|m| m.name()).collect::<Vec<_>>().join(","))
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct VarArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub detection: DetectionArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub var: VarModelArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct BacktestArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub detection: DetectionArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub var: VarModelArgs,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    /// Anderson-Darling level for the normalized-return check.
    #[arg(long, default_value_t = 0.15)]
    pub level: f64,
    /// Per-date report CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON summary; stdout when omitted.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SanityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub detection: DetectionArgs,
    #[arg(long, default_value_t = 0.15)]
    pub level: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Price data

/// Daily closing prices with the quotation tick of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    dates: Vec<NaiveDate>,
    prices: Vec<f64>,
    ticks: Vec<f64>,
}

impl PriceSeries {
    pub fn new(dates: Vec<NaiveDate>, prices: Vec<f64>, ticks: Vec<f64>) -> Result<Self> {
        if dates.len() != prices.len() || ticks.len() != prices.len() {
            return Err(Error::Validation("dates, prices and ticks must have equal length".into()));
        }
        if let Some(i) = prices.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Validation(format!("row {}: price {} is not positive", i + 1, prices[i])));
        }
        if let Some(i) = ticks.iter().position(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Validation(format!("row {}: tick {} is negative", i + 1, ticks[i])));
        }
        if let Some(i) = dates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!("row {}: date {} does not follow {}", i + 2, dates[i + 1], dates[i])));
        }
        Ok(PriceSeries { dates, prices, ticks })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn ticks(&self) -> &[f64] {
        &self.ticks
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?)
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.eq_ignore_ascii_case(name))
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, col: usize, what: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line() as usize);
    let raw = rec.get(col).unwrap_or("");
    raw.parse::<T>().map_err(|_| Error::Parse { line, message: format!("cannot parse {what} '{raw}'") })
}

/// Read a `date,price[,tick]` file. Rows without a tick column use
/// `default_tick`.
pub fn load_price_csv(path: &Path, default_tick: f64) -> Result<PriceSeries> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    let (dc, pc) = match (column(&headers, "date"), column(&headers, "price")) {
        (Some(d), Some(p)) => (d, p),
        _ => return Err(Error::Parse { line: 1, message: "expected header with `date` and `price` columns".into() }),
    };
    let tc = column(&headers, "tick");
    let (mut dates, mut prices, mut ticks) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let raw = rec.get(dc).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw, "%Y-%m-%d")
            .map_err(|_| Error::Parse { line, message: format!("cannot parse date '{raw}'") })?;
        let price: f64 = parse_field(&rec, pc, "price")?;
        if !(price.is_finite() && price > 0.0) {
            return Err(Error::Validation(format!("line {line}: price {price} is not positive")));
        }
        let tick = match tc {
            Some(c) => parse_field(&rec, c, "tick")?,
            None => default_tick,
        };
        if let Some(&prev) = dates.last() {
            if date <= prev {
                return Err(Error::Validation(format!("line {line}: date {date} does not follow {prev}")));
            }
        }
        dates.push(date);
        prices.push(price);
        ticks.push(tick);
    }
    PriceSeries::new(dates, prices, ticks)
}

/// ln(P_{t+1}/P_t), optionally demeaned.
pub fn log_returns(series: &PriceSeries, demean: bool) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::Validation("need at least two prices for a return".into()));
    }
    let mut r: Vec<f64> = series.prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    if demean {
        let m = r.iter().sum::<f64>() / r.len() as f64;
        r.iter_mut().for_each(|x| *x -= m);
    }
    Ok(r)
}

/// Log-returns as a daily increment series.
pub fn to_log_returns(series: &PriceSeries, demean: bool) -> Result<IncrementSeries> {
    IncrementSeries::new(log_returns(series, demean)?, 1.0)
}

/// Add independent U[0, tick) noise to every price.
pub fn price_adjust(series: &PriceSeries, seed: u64) -> PriceSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prices = series.prices.iter().zip(&series.ticks).map(|(p, t)| p + t * rng.random::<f64>()).collect();
    PriceSeries { dates: series.dates.clone(), prices, ticks: series.ticks.clone() }
}

// ---------------------------------------------------------------------------
// Increment data

/// Returns plus whatever volatility and flag columns came with them.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnTable {
    pub labels: Option<Vec<String>>,
    pub returns: Vec<f64>,
    pub sigmas: Option<Vec<f64>>,
    pub flags: Option<Vec<bool>>,
}

fn parse_flag(rec: &csv::StringRecord, col: usize) -> Result<bool> {
    let line = rec.position().map_or(0, |p| p.line() as usize);
    match rec.get(col).unwrap_or("") {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" => Ok(false),
        other => Err(Error::Parse { line, message: format!("cannot parse jump flag '{other}'") }),
    }
}

pub fn load_increment_csv(path: &Path) -> Result<ReturnTable> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    let ic = column(&headers, "increment")
        .ok_or_else(|| Error::Parse { line: 1, message: "expected an `increment` column".into() })?;
    let sc = column(&headers, "sigma");
    let fc = column(&headers, "jump_flag");
    let dc = column(&headers, "date");
    let mut t = ReturnTable {
        labels: dc.map(|_| Vec::new()),
        returns: Vec::new(),
        sigmas: sc.map(|_| Vec::new()),
        flags: fc.map(|_| Vec::new()),
    };
    for rec in rdr.records() {
        let rec = rec?;
        let v: f64 = parse_field(&rec, ic, "increment")?;
        if !v.is_finite() {
            let line = rec.position().map_or(0, |p| p.line() as usize);
            return Err(Error::Validation(format!("line {line}: increment is not finite")));
        }
        t.returns.push(v);
        if let (Some(c), Some(s)) = (sc, t.sigmas.as_mut()) {
            s.push(parse_field(&rec, c, "sigma")?);
        }
        if let (Some(c), Some(f)) = (fc, t.flags.as_mut()) {
            f.push(parse_flag(&rec, c)?);
        }
        if let (Some(c), Some(l)) = (dc, t.labels.as_mut()) {
            l.push(rec.get(c).unwrap_or("").to_string());
        }
    }
    Ok(t)
}

fn load_returns(input: &InputArgs) -> Result<ReturnTable> {
    match (&input.input, &input.prices) {
        (Some(_), Some(_)) => Err(Error::Validation("give either --input or --prices, not both".into())),
        (None, None) => Err(Error::Validation("no data: give --input or --prices".into())),
        (Some(path), None) => load_increment_csv(path),
        (None, Some(path)) => {
            let mut series = load_price_csv(path, input.tick.unwrap_or(0.0))?;
            if let Some(seed) = input.adjust_seed {
                series = price_adjust(&series, seed);
            }
            let returns = log_returns(&series, input.demean)?;
            let labels = series.dates[1..].iter().map(|d| d.to_string()).collect();
            Ok(ReturnTable { labels: Some(labels), returns, sigmas: None, flags: None })
        }
    }
}

fn label(t: &ReturnTable, i: usize) -> String {
    match &t.labels {
        Some(l) => l[i].clone(),
        None => i.to_string(),
    }
}

fn detect(series: &IncrementSeries, d: &DetectionArgs) -> Result<VolatilityPath> {
    let p = ToleranceLevel::new(d.p)?;
    let path = kernel_os_volatility(series, p, KernelSpec::one_sided(d.bandwidth)?, d.max_iter)?;
    if d.type1_control {
        type1_control(series, &path)
    } else {
        Ok(path)
    }
}

/// Volatility and flags from the table when present, otherwise detected.
fn vols_and_flags(table: &ReturnTable, dt: f64, d: &DetectionArgs) -> Result<(Vec<f64>, Vec<bool>)> {
    match (&table.sigmas, &table.flags) {
        (Some(s), Some(f)) => {
            if let Some(bad) = s.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::Validation(format!("sigma column holds non-positive value {bad}")));
            }
            Ok((s.clone(), f.clone()))
        }
        _ => {
            let path = detect(&IncrementSeries::new(table.returns.clone(), dt)?, d)?;
            Ok((path.sigmas, path.jump_flags))
        }
    }
}

fn load_ext_vol(path: &Path, n: usize) -> Result<Vec<f64>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    let c = column(&headers, "sigma")
        .ok_or_else(|| Error::Parse { line: 1, message: "external volatility file needs a `sigma` column".into() })?;
    let mut v = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let s: f64 = parse_field(&rec, c, "sigma")?;
        if !(s.is_finite() && s > 0.0) {
            let line = rec.position().map_or(0, |p| p.line() as usize);
            return Err(Error::Validation(format!("line {line}: external sigma {s} is not positive")));
        }
        v.push(s);
    }
    if v.len() != n {
        return Err(Error::Validation(format!("external volatility has {} rows, returns have {n}", v.len())));
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// Configuration

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, message: format!("expected `key = value`, got '{line}'") })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse { line: i + 1, message: "empty key".into() });
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn find_config(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Append config entries not already given as flags.
fn merge_config(argv: Vec<OsString>, config: &BTreeMap<String, String>) -> Result<Vec<OsString>> {
    let cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let Some(sub_name) = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).find(|a| names.contains(a))
    else {
        return Ok(argv);
    };
    let sub = cmd.find_subcommand(&sub_name).expect("listed subcommand");
    let known_anywhere = |key: &str| cmd.get_subcommands().any(|s| s.get_arguments().any(|a| a.get_long() == Some(key)));
    let given: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();

    let mut extra = Vec::new();
    for (key, value) in config {
        let key = match key.split_once('.') {
            Some((scope, k)) if names.iter().any(|n| n == scope) => {
                if scope != sub_name {
                    continue;
                }
                if !sub.get_arguments().any(|a| a.get_long() == Some(k)) {
                    return Err(Error::Validation(format!("config key '{scope}.{k}' is not an option of {scope}")));
                }
                k
            }
            Some(_) => return Err(Error::Validation(format!("config key '{key}' has an unknown scope"))),
            None => {
                if !known_anywhere(key) {
                    return Err(Error::Validation(format!("unknown config key '{key}'")));
                }
                key.as_str()
            }
        };
        if key == "config" {
            continue;
        }
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key)) else {
            continue;
        };
        let flag = format!("--{key}");
        if given.iter().any(|g| *g == flag || g.starts_with(&format!("{flag}="))) {
            continue;
        }
        if arg.get_action().takes_values() {
            extra.push(OsString::from(format!("{flag}={value}")));
        } else {
            match value.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" => extra.push(OsString::from(flag)),
                "false" | "0" | "no" => {}
                _ => return Err(Error::Validation(format!("config key '{key}' expects true or false, got '{value}'"))),
            }
        }
    }
    let mut out = argv;
    out.extend(extra);
    Ok(out)
}

/// `# key=value` lines describing a resolved argument struct.
pub fn config_header<T: Serialize>(command: &str, args: &T) -> Result<String> {
    let mut s = format!("# osvol {} {}\n", command, env!("CARGO_PKG_VERSION"));
    if let serde_json::Value::Object(map) = serde_json::to_value(args)? {
        for (k, v) in map {
            let v = match v {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            s.push_str(&format!("# {k}={v}\n"));
        }
    }
    Ok(s)
}

// ---------------------------------------------------------------------------
// Entry points

enum ParseFailure {
    Clap(clap::Error),
    Config(Error),
}

fn parse(argv: Vec<OsString>) -> std::result::Result<Cli, ParseFailure> {
    let argv = match find_config(&argv) {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| ParseFailure::Config(e.into()))?;
            let cfg = parse_config(&text).map_err(ParseFailure::Config)?;
            merge_config(argv, &cfg).map_err(ParseFailure::Config)?
        }
        None => argv,
    };
    Cli::try_parse_from(argv).map_err(ParseFailure::Clap)
}

/// Run the CLI on `argv` (program name first) and return the exit code.
pub fn main_entry(argv: Vec<OsString>) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    match parse(argv) {
        Err(ParseFailure::Clap(e)) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            }
        }
        Err(ParseFailure::Config(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
        Ok(cli) => match run(&cli) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Deconvolve(a) => cmd_deconvolve(a),
        Command::Var(a) => cmd_var(a),
        Command::Backtest(a) => cmd_backtest(a),
        Command::SanityCheck(a) => cmd_sanity(a),
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_csv(
    path: Option<&Path>,
    header: &str,
    columns: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut out = open_out(path)?;
    out.write_all(header.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut out = open_out(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn bit(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let path: SimulatedPath = match a.model {
        SimModel::Merton => {
            let p = MertonParams { b: a.b, sigma: a.sigma, lambda: a.lambda, mu: a.mu, delta: a.delta };
            simulate_merton(&p, a.steps, a.horizon, a.seed)?
        }
        SimModel::Vgbm => {
            let p = VgBmParams { b: a.b, sigma: a.sigma, alpha: a.alpha, beta: a.beta, k_var: a.k_var };
            simulate_vgbm(&p, a.steps, a.horizon, a.seed)?
        }
    };
    let header = config_header("simulate", a)?;
    let rows = (0..path.len()).map(|i| {
        vec![
            i.to_string(),
            path.increments[i].to_string(),
            path.true_jump_sizes[i].to_string(),
            bit(path.true_flags[i]),
        ]
    });
    write_csv(a.out.as_deref(), &header, &["index", "increment", "true_jump_size", "true_flag"], rows)
}

fn write_vol_path(
    out: Option<&Path>,
    header: &str,
    table: &ReturnTable,
    sigmas: &[f64],
    flags: &[bool],
) -> Result<()> {
    let mut cols = vec!["index", "increment", "sigma", "jump_flag"];
    if table.labels.is_some() {
        cols.push("date");
    }
    let rows = (0..table.returns.len()).map(|i| {
        let mut r = vec![i.to_string(), table.returns[i].to_string(), sigmas[i].to_string(), bit(flags[i])];
        if let Some(l) = &table.labels {
            r.push(l[i].clone());
        }
        r
    });
    write_csv(out, header, &cols, rows)
}

fn cmd_detect(a: &DetectArgs) -> Result<()> {
    let table = load_returns(&a.input)?;
    let series = IncrementSeries::new(table.returns.clone(), a.input.dt)?;
    let path = detect(&series, &a.detection)?;
    let mut header = config_header("detect", a)?;
    header.push_str(&format!(
        "# jumps={}\n# iterations={}\n# converged={}\n",
        path.jump_count(),
        path.iterations,
        path.converged
    ));
    write_vol_path(a.out.as_deref(), &header, &table, &path.sigmas, &path.jump_flags)
}

fn cmd_estimate(a: &EstimateArgs) -> Result<()> {
    let table = load_returns(&a.input)?;
    let series = IncrementSeries::new(table.returns.clone(), a.input.dt)?;
    let mut header = config_header("estimate", a)?;
    let (sigmas, flags) = match a.method {
        EstimateMethod::Kernel => {
            let path = detect(&series, &a.detection)?;
            header.push_str(&format!("# jumps={}\n# iterations={}\n", path.jump_count(), path.iterations));
            (path.sigmas, path.jump_flags)
        }
        EstimateMethod::Os | EstimateMethod::Threshold => {
            let est = if a.method == EstimateMethod::Os {
                os_iv(&series, ToleranceLevel::new(a.detection.p)?)?
            } else {
                let th = a.threshold.ok_or_else(|| Error::Validation("--method threshold needs --threshold".into()))?;
                if !(th.is_finite() && th > 0.0) {
                    return Err(Error::Validation(format!("threshold must be positive, got {th}")));
                }
                threshold_iv(&series, th)
            };
            header.push_str(&format!("# iv={}\n# jumps={}\n", est.iv, est.jump_count()));
            let s = (est.iv / series.len() as f64).sqrt();
            (vec![s; series.len()], est.flags)
        }
    };
    write_vol_path(a.out.as_deref(), &header, &table, &sigmas, &flags)
}

fn cmd_deconvolve(a: &DeconvolveArgs) -> Result<()> {
    let path = a.input.as_deref().ok_or_else(|| Error::Validation("deconvolve needs --input".into()))?;
    let table = load_increment_csv(path)?;
    let flags = table.flags.as_ref().ok_or_else(|| Error::Validation("input lacks a jump_flag column".into()))?;
    let sigma2 = match (a.sigma2, &table.sigmas) {
        (Some(s), _) => s,
        (None, Some(s)) => s.iter().map(|v| v * v).sum::<f64>() / s.len().max(1) as f64,
        (None, None) => return Err(Error::Validation("give --sigma2 or an input with a sigma column".into())),
    };
    let detected: Vec<f64> = table.returns.iter().zip(flags).filter(|(_, &f)| f).map(|(v, _)| *v).collect();
    let cfg = DeconvConfig {
        fill_bin_width: a.fill_width,
        n_fit: a.n_fit,
        u_max: a.u_max,
        u_points: a.u_points,
        z_points: a.z_points,
    };
    let d = jump_size_density(&detected, a.mu, sigma2, &cfg)?;
    let mut header = config_header("deconvolve", a)?;
    header.push_str(&format!("# detected={}\n# sigma2_used={}\n", detected.len(), sigma2));
    let rows = (0..d.z.len()).map(|i| vec![d.z[i].to_string(), d.f_raw[i].to_string(), d.f[i].to_string()]);
    write_csv(a.out.as_deref(), &header, &["z", "f_raw", "f_clipped"], rows)
}

struct VarSetup {
    table: ReturnTable,
    vols: Vec<f64>,
    flags: Vec<bool>,
    ext: Option<Vec<f64>>,
    config: BacktestConfig,
}

fn var_setup(input: &InputArgs, d: &DetectionArgs, v: &VarModelArgs, grid_points: usize) -> Result<VarSetup> {
    if v.models.is_empty() {
        return Err(Error::Validation("no VaR models selected".into()));
    }
    let table = load_returns(input)?;
    let (vols, flags) = vols_and_flags(&table, input.dt, d)?;
    let ext = match (&v.ext_vol, v.models.contains(&VarModel::Ext)) {
        (Some(p), _) => Some(load_ext_vol(p, table.returns.len())?),
        (None, true) => return Err(Error::Validation("model EXT needs --ext-vol".into())),
        (None, false) => None,
    };
    let jumping = JumpingVarConfig::new(v.window_n, v.forecast_t, v.lambda)?;
    let mut config = BacktestConfig { jumping, start: 0, grid_points };
    config.start = v.start.unwrap_or_else(|| v.models.iter().map(|m| m.history(&config)).max().unwrap_or(0));
    Ok(VarSetup { table, vols, flags, ext, config })
}

fn cmd_var(a: &VarArgs) -> Result<()> {
    let s = var_setup(&a.input, &a.detection, &a.var, DEFAULT_GRID_POINTS)?;
    let n = s.table.returns.len();
    if s.config.start > n {
        return Err(Error::Validation(format!("start {} beyond series length {n}", s.config.start)));
    }
    for m in &a.var.models {
        if m.history(&s.config) > s.config.start {
            return Err(Error::Validation(format!("{} needs start >= {}", m.name(), m.history(&s.config))));
        }
    }
    let losses: Vec<f64> = s.table.returns.iter().map(|r| -r).collect();
    let mut rows = Vec::new();
    // Date n is the out-of-sample forecast for the day after the data.
    for t in s.config.start..=n {
        let date = if t < n { label(&s.table, t) } else { "next".to_string() };
        for &m in &a.var.models {
            let vols = if m == VarModel::Ext { s.ext.as_deref().unwrap_or(&s.vols) } else { &s.vols };
            let dist = forecast_distribution(m, &losses[..t], &vols[..t], &s.flags[..t], &s.config)?;
            let var = weighted_quantile(&dist, 1.0 - a.var.lambda);
            rows.push(vec![date.clone(), m.name().to_string(), var.to_string(), (-var).to_string()]);
        }
    }
    let header = config_header("var", a)?;
    write_csv(a.out.as_deref(), &header, &["date", "model", "var", "return_threshold"], rows.into_iter())
}

#[derive(Debug, Serialize)]
struct ModelSummary {
    model: String,
    forecasts: usize,
    mean_abs_deviation: f64,
    central_mean_deviation: f64,
    exceptions: usize,
    exception_rate: f64,
}

#[derive(Debug, Serialize)]
struct BacktestSummary {
    config: BTreeMap<String, String>,
    start: usize,
    models: Vec<ModelSummary>,
    normalized_returns_ad: Option<AdResult>,
}

fn header_map<T: Serialize>(args: &T) -> Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    if let serde_json::Value::Object(map) = serde_json::to_value(args)? {
        for (k, v) in map {
            match v {
                serde_json::Value::Null => {}
                serde_json::Value::String(s) => {
                    m.insert(k, s);
                }
                other => {
                    m.insert(k, other.to_string());
                }
            }
        }
    }
    Ok(m)
}

/// Non-jump returns divided by their local volatility.
fn normalized_nonjump(returns: &[f64], vols: &[f64], flags: &[bool]) -> Vec<f64> {
    returns.iter().zip(vols).zip(flags).filter(|(_, &f)| !f).map(|((r, s), _)| r / s).collect()
}

fn cmd_backtest(a: &BacktestArgs) -> Result<()> {
    let s = var_setup(&a.input, &a.detection, &a.var, a.grid_points)?;
    let data = BacktestData { returns: &s.table.returns, vols: &s.vols, flags: &s.flags, ext_vols: s.ext.as_deref() };
    let reports = rolling_backtest(&data, &a.var.models, &s.config)?;

    if let Some(out) = &a.out {
        let header = config_header("backtest", a)?;
        let table = &s.table;
        let rows = reports.iter().flat_map(|rep| {
            rep.rows.iter().map(move |r| {
                vec![
                    rep.model.name().to_string(),
                    label(table, r.date),
                    r.realized.to_string(),
                    r.var.to_string(),
                    r.rank.to_string(),
                    bit(r.exception),
                ]
            })
        });
        write_csv(Some(out), &header, &["model", "date", "realized", "var", "rank", "exception"], rows)?;
    }

    let z = normalized_nonjump(&s.table.returns, &s.vols, &s.flags);
    let ad = if z.len() >= 8 { Some(ad_test(&z, a.level)?) } else { None };
    let summary = BacktestSummary {
        config: header_map(a)?,
        start: s.config.start,
        models: reports
            .iter()
            .map(|r| ModelSummary {
                model: r.model.name().to_string(),
                forecasts: r.rows.len(),
                mean_abs_deviation: r.uniformity.mean_abs,
                central_mean_deviation: r.central_mean,
                exceptions: r.exceptions,
                exception_rate: r.exception_rate(),
            })
            .collect(),
        normalized_returns_ad: ad,
    };
    write_json(a.summary.as_deref(), &summary)
}

#[derive(Debug, Serialize)]
struct SanityReport {
    config: BTreeMap<String, String>,
    observations: usize,
    jumps: usize,
    zero_return_fraction: f64,
    normalized_mean: f64,
    normalized_sd: f64,
    ad: AdResult,
}

fn cmd_sanity(a: &SanityArgs) -> Result<()> {
    let table = load_returns(&a.input)?;
    let (vols, flags) = vols_and_flags(&table, a.input.dt, &a.detection)?;
    let z = normalized_nonjump(&table.returns, &vols, &flags);
    let ad = ad_test(&z, a.level)?;
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let sd = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let report = SanityReport {
        config: header_map(a)?,
        observations: table.returns.len(),
        jumps: flags.iter().filter(|&&f| f).count(),
        zero_return_fraction: table.returns.iter().filter(|&&r| r == 0.0).count() as f64 / table.returns.len() as f64,
        normalized_mean: mean,
        normalized_sd: sd,
        ad,
    };
    write_json(a.out.as_deref(), &report)
}
