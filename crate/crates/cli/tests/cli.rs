//! End-to-end runs of the `bablr` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bablr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bablr")).args(args).args(["--log-level", "warn"]).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = bablr(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let out = dir.join("sim");
    ok(&["simulate", "--out", s(&out), "--n-subjects", &n.to_string(), "--data-seed", &seed.to_string()]);
    out.join("dataset.csv")
}

fn quick_fit(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["fit", "--data", s(data), "--out", s(out), "--warmup", "200", "--samples", "100", "--seed", "7"];
    args.extend_from_slice(extra);
    bablr(&args)
}

fn lines(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p).unwrap().lines().map(String::from).collect()
}

#[test]
fn simulate_then_fit_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 12, 1);
    let out = dir.path().join("fit");
    let res = quick_fit(&data, &out, &["--no-strict", "--prior", "sigma_u2=lognormal(0,0.2)"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let summary = lines(&out.join("summary.csv"));
    assert_eq!(summary.len(), 1 + 9);
    assert_eq!(summary[0], "parameter,mean,sd,median,q2.5,q97.5,rhat,ess_bulk");

    let draws = lines(&out.join("draws.csv"));
    assert_eq!(draws[0], "# bablr-draws v1");
    assert_eq!(draws.len(), 2 + 4 * 100);
    let header: Vec<&str> = draws[1].split(',').collect();
    assert_eq!(&header[..2], &["chain", "iteration"]);
    assert!(header.contains(&"sigma_u4") && header.contains(&"u4[s0012]"));

    let diag: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    assert!(diag["divergences"].is_u64());
    assert_eq!(diag["parameters"].as_array().unwrap().len(), 9 + 4 * 12);

    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"prior.sigma_u2\": \"lognormal(0,0.2)\""), "{manifest}");
    assert!(manifest.contains("\"sampler.seed\": \"7\""));
}

#[test]
fn same_seed_gives_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 8, 2);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(quick_fit(&data, out, &["--no-strict"]).status.success());
    }
    for f in ["draws.csv", "summary.csv", "diagnostics.json", "manifest.json"] {
        // Manifests record input paths but not the output directory, so they match too.
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn strict_gate_fails_on_undefined_rhat_but_keeps_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 5, 3);
    let out = dir.path().join("fit");
    let args = ["fit", "--data", s(&data), "--out", s(&out), "--warmup", "150", "--samples", "2"];
    let res = bablr(&args);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stderr).contains("convergence gate"));
    assert!(out.join("draws.csv").exists() && out.join("summary.csv").exists());

    let mut lenient = args.to_vec();
    lenient.push("--no-strict");
    assert!(bablr(&lenient).status.success());
}

#[test]
fn holdout_then_validate_reports_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 20, 4);
    let out = dir.path().join("fit");
    let res = quick_fit(&data, &out, &["--no-strict", "--holdout-fraction", "0.5"]);
    assert!(res.status.success());
    let heldout = lines(&out.join("heldout.csv"));
    assert_eq!(heldout.len(), 1 + 10);

    let report = dir.path().join("validate.csv");
    let res = ok(&["validate", "--draws", s(&out.join("draws.csv")), "--heldout", s(&out.join("heldout.csv")), "--out", s(&report)]);
    assert!(String::from_utf8_lossy(&res.stdout).starts_with("coverage "));
    let rows = lines(&report);
    assert_eq!(rows[0], "subject,time,y,q025,q50,q975,inside");
    assert_eq!(rows.len(), 1 + 10 + 1);
    assert!(rows.last().unwrap().starts_with("# coverage "));
}

#[test]
fn curves_for_one_subject_population_are_identical_across_quantiles() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("one.csv");
    std::fs::write(&data, "subject_id,time,outcome\nx,0,0.1\nx,2,0.2\nx,4,0.0\nx,6,-0.3\n").unwrap();
    let out = dir.path().join("fit");
    assert!(quick_fit(&data, &out, &["--no-strict"]).status.success());
    let curves = dir.path().join("curves.csv");
    ok(&["curves", "--draws", s(&out.join("draws.csv")), "--out", s(&curves), "--grid", "-2:8:2", "--quantiles", "0.1,0.5,0.9"]);
    let rows = lines(&curves);
    assert_eq!(rows[0], "age,quantile,value");
    assert_eq!(rows.len(), 1 + 6 * 3);
    for chunk in rows[1..].chunks(3) {
        let values: Vec<&str> = chunk.iter().map(|r| r.rsplit(',').next().unwrap()).collect();
        assert!(values.iter().all(|v| *v == values[0]), "{chunk:?}");
    }
}

#[test]
fn sim_study_coverage_is_a_multiple_of_one_third() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("study");
    ok(&[
        "sim-study", "--out", s(&out), "--replicates", "3", "--n-subjects", "8", "--warmup", "150", "--samples", "60",
        "--chains", "2", "--seed", "5",
    ]);
    let rows = lines(&out.join("study.csv"));
    assert_eq!(rows[0], "parameter,truth,estimate,se,bias,coverage");
    assert_eq!(rows.len(), 1 + 9);
    for r in &rows[1..] {
        let cov: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert!([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0].iter().any(|c| (c - cov).abs() < 1e-12), "{r}");
    }
}

#[test]
fn summarize_compares_several_fits() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 6, 6);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(quick_fit(&data, &a, &["--no-strict"]).status.success());
    assert!(quick_fit(&data, &b, &["--no-strict", "--prior", "sigma_u2=half_normal(0,1)"]).status.success());
    let out = dir.path().join("cmp");
    ok(&[
        "summarize", "--draws", s(&a.join("draws.csv")), "--draws", s(&b.join("draws.csv")), "--label", "cauchy",
        "--label", "normal", "--out", s(&out),
    ]);
    let rows = lines(&out.join("comparison.csv"));
    assert_eq!(rows[0], "parameter,cauchy,normal");
    assert_eq!(rows.len(), 10);
    assert!(out.join("cauchy/summary.csv").exists() && out.join("normal/correlations.csv").exists());
}

#[test]
fn input_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "subject_id,time,outcome\n").unwrap();
    let res = quick_fit(&empty, &dir.path().join("o"), &[]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("empty dataset"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "subject_id,time,outcome\na,1,2\na,two,3\n").unwrap();
    let res = quick_fit(&bad, &dir.path().join("o"), &[]);
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 3"));

    let draws = dir.path().join("old.csv");
    std::fs::write(&draws, "# bablr-draws v0\nchain,iteration,x\n0,0,1\n").unwrap();
    let res = bablr(&["summarize", "--draws", s(&draws), "--out", s(&dir.path().join("o"))]);
    assert!(String::from_utf8_lossy(&res.stderr).contains("version mismatch"));

    let res = quick_fit(&dir.path().join("missing.csv"), &dir.path().join("o"), &[]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn config_file_is_applied_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 6, 8);
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "schema_version = 1\n[sampler]\nwarmup = 150\nsamples = 40\nseed = 1\n[prior.priors]\nsigma_u3 = \"half_normal(0,2)\"\n",
    )
    .unwrap();
    let out = dir.path().join("fit");
    ok(&["fit", "--data", s(&data), "--out", s(&out), "--config", s(&cfg), "--seed", "9", "--no-strict"]);
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"sampler.seed\": \"9\""));
    assert!(manifest.contains("\"sampler.samples\": \"40\""));
    assert!(manifest.contains("\"prior.sigma_u3\": \"half_normal(0,2)\""));
    assert_eq!(lines(&out.join("draws.csv")).len(), 2 + 4 * 40);
}
