use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn osvol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osvol")).args(args).output().expect("spawn osvol")
}

fn ok(args: &[&str]) -> Output {
    let out = osvol(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
}

fn p(dir: &tempfile::TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

#[test]
fn simulate_detect_deconvolve_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sim = p(&dir, "sim.csv");
    ok(&[
        "simulate", "--model", "merton", "--sigma", "0.5", "--lambda", "10", "--delta", "1.5", "--mu", "0", "--steps",
        "5000", "--horizon", "20", "--seed", "7", "--out", &sim,
    ]);
    let rows = data_rows(Path::new(&sim));
    assert_eq!(rows[0], "index,increment,true_jump_size,true_flag");
    assert_eq!(rows.len(), 5001);
    let text = fs::read_to_string(&sim).unwrap();
    assert!(text.contains("# seed=7\n") && text.contains("# steps=5000\n"));

    let det1 = p(&dir, "det1.csv");
    let det2 = p(&dir, "det2.csv");
    ok(&["detect", "--input", &sim, "--p", "0.05", "--bandwidth", "100", "--out", &det1]);
    ok(&["detect", "--input", &sim, "--p", "0.05", "--bandwidth", "100", "--out", &det2]);
    let a = data_rows(Path::new(&det1));
    assert_eq!(a, data_rows(Path::new(&det2)));
    assert_eq!(a[0], "index,increment,sigma,jump_flag");
    assert_eq!(a.len(), 5001);
    let jumps = a[1..].iter().filter(|r| r.ends_with(",1")).count();
    assert!((100..400).contains(&jumps), "{jumps}");

    let dens = p(&dir, "dens.csv");
    ok(&["deconvolve", "--input", &det1, "--out", &dens]);
    let d = data_rows(Path::new(&dens));
    assert_eq!(d[0], "z,f_raw,f_clipped");
    assert_eq!(d.len(), 1025);
    for r in &d[1..] {
        let f: f64 = r.split(',').nth(2).unwrap().parse().unwrap();
        assert!(f >= 0.0);
    }
}

#[test]
fn simulate_output_is_byte_identical() {
    let a = ok(&["simulate", "--model", "vgbm", "--steps", "300", "--seed", "11"]).stdout;
    let b = ok(&["simulate", "--model", "vgbm", "--steps", "300", "--seed", "11"]).stdout;
    assert_eq!(a, b);
    let c = ok(&["simulate", "--model", "vgbm", "--steps", "300", "--seed", "12"]).stdout;
    assert_ne!(a, c);
}

#[test]
fn estimate_methods() {
    let dir = tempfile::tempdir().unwrap();
    let sim = p(&dir, "sim.csv");
    ok(&["simulate", "--steps", "1000", "--horizon", "4", "--seed", "3", "--out", &sim]);
    for method in ["kernel", "os"] {
        let out = ok(&["estimate", "--input", &sim, "--method", method]);
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains(&format!("# method={method}\n")));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1001);
    }
    let out = osvol(&["estimate", "--input", &sim, "--method", "threshold"]);
    assert_eq!(out.status.code(), Some(2));
    ok(&["estimate", "--input", &sim, "--method", "threshold", "--threshold", "0.1"]);
}

fn write_prices(path: &str, n: usize) {
    let mut s = String::from("date,price\n");
    let start = chrono::NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
    let mut price = 50.0f64;
    for i in 0..n {
        // Deterministic wiggle with occasional large moves.
        let r = 0.01 * ((i as f64 * 0.7).sin() + 0.5 * (i as f64 * 2.3).cos()) + if i % 97 == 0 { 0.08 } else { 0.0 };
        price *= r.exp();
        s.push_str(&format!("{},{:.4}\n", start + chrono::Days::new(i as u64), price));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn price_input_backtest_and_var() {
    let dir = tempfile::tempdir().unwrap();
    let prices = p(&dir, "prices.csv");
    write_prices(&prices, 700);
    let summary = p(&dir, "summary.json");
    let report = p(&dir, "report.csv");
    ok(&[
        "backtest", "--prices", &prices, "--demean", "--models", "FVaRjj,HVaR_250", "--N", "250", "--T", "60",
        "--lambda", "0.01", "--out", &report, "--summary", &summary,
    ]);
    let js: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(js["start"], 250);
    let models = js["models"].as_array().unwrap();
    assert_eq!(models.len(), 2);
    assert_eq!(models[0]["model"], "FVaRjj");
    assert_eq!(models[0]["forecasts"], 699 - 250);
    assert!(js["normalized_returns_ad"]["statistic"].as_f64().unwrap() >= 0.0);
    let rows = data_rows(Path::new(&report));
    assert_eq!(rows[0], "model,date,realized,var,rank,exception");
    assert_eq!(rows.len(), 1 + 2 * (699 - 250));
    assert!(rows[1].starts_with("FVaRjj,2001-"));

    let out = ok(&["var", "--prices", &prices, "--models", "FVaR", "--start", "690"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("next,FVaR,"), "{last}");
    let cols: Vec<f64> = last.split(',').skip(2).map(|c| c.parse().unwrap()).collect();
    assert_eq!(cols[0], -cols[1]);
}

#[test]
fn external_volatility_model() {
    let dir = tempfile::tempdir().unwrap();
    let prices = p(&dir, "prices.csv");
    write_prices(&prices, 400);
    let ext = p(&dir, "ext.csv");
    let mut s = String::from("index,sigma\n");
    for i in 0..399 {
        s.push_str(&format!("{i},0.012\n"));
    }
    fs::write(&ext, s).unwrap();
    let out = ok(&["backtest", "--prices", &prices, "--models", "EXT,FVaR", "--ext-vol", &ext]);
    let js: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(js["models"][0]["model"], "EXT");
    let short = p(&dir, "short.csv");
    fs::write(&short, "sigma\n0.01\n").unwrap();
    assert_eq!(osvol(&["backtest", "--prices", &prices, "--models", "EXT", "--ext-vol", &short]).status.code(), Some(2));
}

#[test]
fn sanity_check_reports_ad_result() {
    let dir = tempfile::tempdir().unwrap();
    let sim = p(&dir, "sim.csv");
    ok(&["simulate", "--steps", "3000", "--horizon", "12", "--seed", "21", "--out", &sim]);
    let out = ok(&["sanity-check", "--input", &sim, "--level", "0.15"]);
    let js: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(js["observations"], 3000);
    assert_eq!(js["ad"]["level"], 0.15);
    assert!(js["ad"]["reject"].is_boolean());
    assert_eq!(osvol(&["sanity-check", "--input", &sim, "--level", "0.2"]).status.code(), Some(2));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(&dir, "run.cfg");
    fs::write(&cfg, "# shared settings\nsteps = 200\nseed = 5\ndetect.bandwidth = 30\n").unwrap();
    let out = ok(&["simulate", "--config", &cfg, "--seed", "6"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# steps=200\n"));
    assert!(text.contains("# seed=6\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 201);

    let bad = p(&dir, "bad.cfg");
    fs::write(&bad, "stepz = 3\n").unwrap();
    assert_eq!(osvol(&["simulate", "--config", &bad]).status.code(), Some(2));
}

#[test]
fn exit_codes() {
    assert_eq!(osvol(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(osvol(&["detect", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(osvol(&["--help"]).status.code(), Some(0));
    assert_eq!(osvol(&["detect", "--input", "/nonexistent/x.csv"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let prices = p(&dir, "bad.csv");
    fs::write(&prices, "date,price\n2020-01-01,10\n2020-01-02,-3\n").unwrap();
    let out = osvol(&["detect", "--prices", &prices]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    // All-zero increments: nothing to flag, zero volatility.
    let flat = p(&dir, "flat.csv");
    fs::write(&flat, "increment\n0\n0\n0\n0\n0\n0\n").unwrap();
    let out = ok(&["detect", "--input", &flat]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# jumps=0\n"));
    assert!(text.lines().filter(|l| !l.starts_with('#')).skip(1).all(|l| l.ends_with(",0,0")));
}
