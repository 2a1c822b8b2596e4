use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tbpsurv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbpsurv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Simulates a dataset and shortens the chain in its generated config.
fn simulate(dir: &Path, design: &str, seed: &str) -> std::path::PathBuf {
    let sim = dir.join("sim");
    ok(&tbpsurv(&[
        "simulate",
        "--design",
        design,
        "--model",
        "ph",
        "--seed",
        seed,
        "--out",
        sim.to_str().unwrap(),
    ]));
    let cfg = sim.join("fit.toml");
    let text = fs::read_to_string(&cfg).unwrap();
    let text = text
        .replace("prerun = 2000", "prerun = 60")
        .replace("nburn = 1000", "nburn = 30")
        .replace("nsave = 1000", "nsave = 40")
        .replace("adapt_start = 5000", "adapt_start = 20");
    fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn missing_data_file_exits_with_2_and_names_it() {
    let out = tbpsurv(&["fit", "--data", "/no/such/records.csv", "--out", "/tmp/unused"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/records.csv"));
}

#[test]
fn malformed_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[mcmc]\nnburnn = 3\n").unwrap();
    let out = tbpsurv(&["fit", "-c", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}

#[test]
fn dry_run_prints_derived_hyperparameters_without_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&tbpsurv(&["simulate", "--design", "grf", "--seed", "2", "--out", sim.to_str().unwrap()]));
    let cfg = sim.join("fit.toml");
    let fit_dir = dir.path().join("fit");
    let text = ok(&tbpsurv(&[
        "fit",
        "-c",
        cfg.to_str().unwrap(),
        "--selection",
        "--dry-run",
        "--out",
        fit_dir.to_str().unwrap(),
    ]));
    assert!(text.contains("# phi0 = "), "{text}");
    assert!(text.contains("# g (selection) = "), "{text}");
    assert!(text.contains("selection = true"));
    assert!(!fit_dir.exists());
}

#[test]
fn simulate_fit_diagnose_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulate(dir.path(), "icar", "5");
    for f in ["data.csv", "adjacency.txt", "truth.json", "fit.toml"] {
        assert!(dir.path().join("sim").join(f).exists(), "{f}");
    }
    let fit = dir.path().join("fit");
    let summary = ok(&tbpsurv(&["fit", "-c", cfg.to_str().unwrap(), "--out", fit.to_str().unwrap()]));
    assert!(summary.contains("LPML"));
    assert!(summary.contains("beta_x1"));
    for f in ["summary.txt", "draws.csv", "loglik.csv", "meta.json"] {
        assert!(fit.join(f).exists(), "{f}");
    }

    let report = ok(&tbpsurv(&["diagnose", "--fit", fit.to_str().unwrap(), "--svg"]));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(fit.join("meta.json")).unwrap()).unwrap();
    let stored = meta["criteria"]["lpml"].as_f64().unwrap();
    let line = report.lines().find(|l| l.starts_with("LPML recomputed")).unwrap();
    let recomputed: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((recomputed - stored).abs() <= 1e-8 * stored.abs().max(1.0), "{recomputed} vs {stored}");

    let csv = fs::read_to_string(fit.join("coxsnell.csv")).unwrap();
    assert!(csv.starts_with("draw_id,r,cumhaz\n"));
    assert!(csv.lines().count() > 10);

    let svg = fs::read_to_string(fit.join("coxsnell.svg")).unwrap();
    assert_well_formed(&svg);
}

#[test]
fn meta_json_replays_identical_draws() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulate(dir.path(), "sel1", "8");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&tbpsurv(&["fit", "-c", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]));
    let summary = fs::read_to_string(a.join("summary.txt")).unwrap();
    assert!(summary.contains("submodels"));
    ok(&tbpsurv(&[
        "fit",
        "-c",
        a.join("meta.json").to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]));
    assert_eq!(fs::read(a.join("draws.csv")).unwrap(), fs::read(b.join("draws.csv")).unwrap());
}

#[test]
fn mc_study_writes_replicates_and_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulate(dir.path(), "icar", "1");
    let out = dir.path().join("study");
    ok(&tbpsurv(&[
        "mc-study",
        "--replicates",
        "2",
        "--jobs",
        "2",
        "-c",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    let reps = fs::read_to_string(out.join("replicates.csv")).unwrap();
    assert_eq!(reps.lines().count(), 3);
    assert!(reps.starts_with("replicate,seed,x1_mean"));
    let cov = fs::read_to_string(out.join("coverage.txt")).unwrap();
    assert!(cov.contains("tau2 median bias"));
}

/// Minimal XML check: one root, every element closed in order.
fn assert_well_formed(xml: &str) {
    let body = xml.trim();
    let body = body.strip_prefix("<?xml").map_or(body, |r| &r[r.find("?>").unwrap() + 2..]);
    let mut stack: Vec<String> = Vec::new();
    let mut roots = 0;
    let mut rest = body;
    while let Some(start) = rest.find('<') {
        assert!(rest[..start].trim().is_empty() || !stack.is_empty(), "text outside the root");
        let end = start + rest[start..].find('>').expect("unterminated tag");
        let tag = &rest[start + 1..end];
        if let Some(name) = tag.strip_prefix('/') {
            assert_eq!(stack.pop().as_deref(), Some(name.trim()), "mismatched close");
        } else {
            let name = tag.split_whitespace().next().unwrap().trim_end_matches('/').to_string();
            if stack.is_empty() {
                roots += 1;
            }
            if !tag.ends_with('/') {
                stack.push(name);
            }
        }
        rest = &rest[end + 1..];
    }
    assert!(stack.is_empty(), "unclosed {stack:?}");
    assert_eq!(roots, 1);
}
