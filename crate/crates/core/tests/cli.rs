use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seasonal-ir"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_truth(dir: &Path) {
    std::fs::write(
        dir.join("truth.cfg"),
        "# one-harmonic truth\nnu = 1e-4\nalpha = 2.7e-5\ndelta = 1.2e-5\nomega = 1/52\nI0 = 400\nR0 = 3000\n",
    )
    .unwrap();
    std::fs::write(dir.join("run.cfg"), "scheme = 2\nomega_star = 0.0192\npool = 8\nseed = 5\n").unwrap();
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_truth(d);
    ok(d, &["synth", "--params", "truth.cfg", "--weeks", "260", "--out", "data.csv", "--svg"]);
    ok(d, &["filter", "--input", "data.csv", "--window", "13", "--out", "smooth.csv"]);
    ok(d, &["spectrum", "--input", "data.csv", "--peaks", "2", "--out", "spec.csv", "--peaks-out", "peaks.json"]);
    ok(d, &["--config", "run.cfg", "fit", "--train-csv", "data.csv", "--n-train", "208", "--out", "fit.json"]);
    ok(d, &["stability", "--fit", "fit.json", "--transient-periods", "10", "--out", "stab.json"]);
    ok(d, &["forecast", "--fit", "fit.json", "--horizon", "52", "--data", "data.csv", "--out", "fc.csv"]);
    ok(
        d,
        &["report", "--fit", "fit.json", "--stability", "stab.json", "--forecast", "fc.csv", "--out", "report.json"],
    );

    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["status"], "converged");
    let omega = fit["parameters"]["omegas"][0].as_f64().unwrap();
    assert!((omega - 1.0 / 52.0).abs() < 1e-4, "omega {omega}");

    let peaks = std::fs::read_to_string(d.join("peaks.json")).unwrap();
    assert!(peaks.contains("1/52"), "{peaks}");

    let fc = std::fs::read_to_string(d.join("fc.csv")).unwrap();
    let rows: Vec<Vec<&str>> = fc
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("t,"))
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.last().unwrap()[0], "259");
    let observed = rows.iter().filter(|r| !r[4].is_empty()).count();
    assert_eq!(observed, 260);
    assert_eq!(rows.iter().filter(|r| r[3] == "test").count() % 4, 0);

    let svg = std::fs::read_to_string(d.join("data.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["fits"].as_array().unwrap().len(), 1);
}

#[test]
fn missing_input_is_a_usage_error_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = run(d, &["filter", "--input", "absent.csv", "--out", "smooth.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error["));
    assert!(!d.join("smooth.csv").exists());
    let leftovers: Vec<_> = std::fs::read_dir(d).unwrap().collect();
    assert!(leftovers.is_empty());
}

#[test]
fn bad_flags_and_config_keys_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(run(d, &["fit", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(d, &["frobnicate"]).status.code(), Some(1));
    std::fs::write(d.join("bad.cfg"), "not_a_key = 3\n").unwrap();
    assert_eq!(run(d, &["--config", "bad.cfg", "synth", "--params", "x.cfg"]).status.code(), Some(1));
    assert_eq!(run(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn synth_is_reproducible_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_truth(d);
    for (out, seed) in [("a.csv", "3"), ("b.csv", "3"), ("c.csv", "4")] {
        ok(d, &["synth", "--params", "truth.cfg", "--weeks", "60", "--noise", "0.05", "--seed", seed, "--out", out]);
    }
    let a = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.csv")).unwrap());
    assert_ne!(a, std::fs::read(d.join("c.csv")).unwrap());
}
