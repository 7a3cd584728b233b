//! Exit-code and file-format contracts of the `heisenreg` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::Parser;
use heisenreg::hoperators::{pucci_minus, EllipticityBracket};
use heisenreg::hsolver::GridFunction;
use heisenreg::verify::Suite;
use heisenreg::Sym2;
use heisenreg_cli::{run_with_suite, sidecar_path, Cli};
use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heisenreg"))
        .args(args)
        .output()
        .unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cfg(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_problem() -> Value {
    serde_json::json!({
        "operator": { "kind": "sublaplacian" },
        "c": 1,
        "f": "x1^2 - 1",
        "boundary": 0,
        "grid": { "lower": [-1, -1, -1], "upper": [1, 1, 1], "n": [9, 9, 9] }
    })
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

#[test]
fn verify_filter_runs_only_that_module() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify.json");
    let o = bin(&[
        "verify",
        "--filter",
        "sumslab",
        "--seed",
        "3",
        "--out",
        path(&out),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let rep: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let checks = rep["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["module"] == "sumslab"));
    assert_eq!(rep["seed"], 3);
    assert_eq!(rep["pass"], true);
}

#[test]
fn verify_unknown_filter_fails() {
    let o = bin(&["verify", "--filter", "no-such-check"]);
    assert_eq!(o.status.code(), Some(1));
}

fn flipped_plus(h: &Sym2, b: &EllipticityBracket) -> f64 {
    // max and min sets exchanged
    pucci_minus(h, b)
}

#[test]
fn flipped_pucci_build_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify.json");
    let suite = Suite {
        pucci_plus: flipped_plus,
        ..Suite::default()
    };
    let cli = Cli::parse_from([
        "heisenreg",
        "verify",
        "--filter",
        "hoperators",
        "--out",
        path(&out),
    ]);
    assert_ne!(run_with_suite(cli, &suite), 0);
    let rep: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let failed: Vec<&str> = rep["failed"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(failed.contains(&"pucci-brute-force"), "{failed:?}");
}

#[test]
fn manufactured_solve_converges_within_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("u.csv");
    let o = bin(&[
        "solve",
        "--config",
        &cfg("manufactured.json"),
        "--out",
        path(&out),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let side: Value =
        serde_json::from_str(&fs::read_to_string(sidecar_path(&out)).unwrap()).unwrap();
    assert_eq!(side["diagnostics"]["converged"], true);
    assert!(side["max_error"].as_f64().unwrap() <= 5e-2);
    let u = GridFunction::read_csv(&out).unwrap();
    assert_eq!(u.grid.n, [33, 33, 33]);
}

#[test]
fn one_iteration_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_problem();
    v["max_iters"] = 1.into();
    let c = write(dir.path(), "p.json", &v);
    let out = dir.path().join("u.csv");
    let o = bin(&["solve", "--config", path(&c), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let side: Value =
        serde_json::from_str(&fs::read_to_string(sidecar_path(&out)).unwrap()).unwrap();
    assert_eq!(side["diagnostics"]["converged"], false);
}

#[test]
fn missing_field_exits_one_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_problem();
    v.as_object_mut().unwrap().remove("grid");
    let c = write(dir.path(), "p.json", &v);
    let o = bin(&[
        "solve",
        "--config",
        path(&c),
        "--out",
        path(&dir.path().join("u.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid"));
}

#[test]
fn unknown_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_problem();
    v["colour"] = "blue".into();
    let c = write(dir.path(), "p.json", &v);
    let o = bin(&[
        "solve",
        "--config",
        path(&c),
        "--out",
        path(&dir.path().join("u.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn lifted_form_is_rejected_by_the_solver() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_problem();
    v["operator"]["form"] = "lifted".into();
    let c = write(dir.path(), "p.json", &v);
    let o = bin(&[
        "solve",
        "--config",
        path(&c),
        "--out",
        path(&dir.path().join("u.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn pipeline_rejects_zero_c0() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: Value =
        serde_json::from_str(&fs::read_to_string(cfg("pipeline_small.json")).unwrap()).unwrap();
    v["holder"]["c0"] = 0.into();
    let c = write(dir.path(), "p.json", &v);
    let o = bin(&[
        "pipeline",
        "--config",
        path(&c),
        "--out",
        path(&dir.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("c0"));
    assert!(!dir.path().join("out/report.json").exists());
}

#[test]
fn pipeline_emits_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = bin(&[
        "pipeline",
        "--config",
        &cfg("pipeline_small.json"),
        "--out",
        path(&out),
        "--emit-plot-data",
    ]);
    assert!(
        matches!(o.status.code(), Some(0 | 1)),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let rep: Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["holder"]["alpha_target"], 0.45);
    assert_eq!(o.status.code() == Some(0), rep["pass"] == true);
    let plot = fs::read_to_string(out.join("modulus.csv")).unwrap();
    let mut lines = plot.lines();
    assert_eq!(lines.next(), Some("r,omega"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (r, w) = l.split_once(',').unwrap();
            (r.parse().unwrap(), w.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), heisenreg::hregularity::FIT_RADII);
    assert!(rows.windows(2).all(|w| w[1].1 >= w[0].1));
}

#[test]
fn pipeline_without_plot_flag_writes_no_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    bin(&[
        "pipeline",
        "--config",
        &cfg("pipeline_small.json"),
        "--out",
        path(&out),
    ]);
    assert!(out.join("report.json").exists());
    assert!(!out.join("modulus.csv").exists());
}

#[test]
fn holder_reads_solutions_and_needs_the_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let mut p: Value =
        serde_json::from_str(&fs::read_to_string(cfg("pipeline_small.json")).unwrap()).unwrap();
    p["problem"]["grid"]["n"] = serde_json::json!([17, 17, 17]);
    let pc = write(dir.path(), "pipeline.json", &p);
    let sc = write(dir.path(), "problem.json", &p["problem"]);
    let u = dir.path().join("u.csv");
    assert_eq!(
        bin(&["solve", "--config", path(&sc), "--out", path(&u)])
            .status
            .code(),
        Some(0)
    );

    let rep = dir.path().join("holder.json");
    let o = bin(&[
        "holder",
        "--grid",
        path(&u),
        "--config",
        path(&pc),
        "--out",
        path(&rep),
    ]);
    assert!(
        matches!(o.status.code(), Some(0 | 1)),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let r: Value = serde_json::from_str(&fs::read_to_string(&rep).unwrap()).unwrap();
    for key in [
        "alpha_fit",
        "L_fit",
        "seminorm_at_target",
        "alpha_target",
        "bound_c0_2Lambda",
        "pass",
    ] {
        assert!(r.get(key).is_some(), "missing {key}");
    }

    fs::remove_file(sidecar_path(&u)).unwrap();
    let o = bin(&[
        "holder",
        "--grid",
        path(&u),
        "--config",
        path(&pc),
        "--out",
        path(&rep),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sidecar"));
}
