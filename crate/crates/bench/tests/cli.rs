use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use csdi_bench::{RunManifest, RunStatus};
use csdi_core::world::WorldSpec;
use serde_json::Value;

fn bench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csdi-bench"))
        .args(args)
        .current_dir(dir)
        .env("CSDI_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bench(dir, args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const TINY_TRAIN: &str = r#"{
  "plan": {"d": 12, "d_c": 2, "d_s": 2, "d_c1": 1, "d_c2": 1, "d_s1": 1, "domains": 2},
  "iters": 12, "batch": 8, "audit_every": 5, "seed": 1,
  "arch": {"latent_width": 6, "latent_layers": 1, "gen_width": 10, "gen_hidden": 1, "disc_width": 10, "disc_hidden": 1}
}"#;

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage:"));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["train", "--bogus"][..],
        &["frobnicate"],
        &["sweep", "--param", "lambda", "--values", "0,1"],
        &[
            "sweep",
            "--param",
            "lambda_orth",
            "--values",
            "0",
            "--jobs",
            "0",
        ],
        &["jacobian-report"],
        &["make-world", "--xi", "not-a-number"],
        &["train", "--probe-kind", "uniform"],
    ] {
        let out = bench(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(
            err.contains("Usage") || err.contains("usage"),
            "{args:?}: {err}"
        );
    }
    assert_eq!(
        fs::read_dir(dir.path()).unwrap().count(),
        0,
        "usage errors write nothing"
    );
    let help = bench(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("jacobian-report"));
}

#[test]
fn forged_tilt_is_reported_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("w.json"), r#"{"xi": 0.1, "seed": 4}"#).unwrap();
    ok(
        d,
        &[
            "make-world",
            "--config",
            "w.json",
            "--xi",
            "0.3",
            "--out",
            "world.json",
        ],
    );
    let world = WorldSpec::load(&d.join("world.json")).unwrap();
    assert_eq!((world.xi, world.seed), (0.3, 4));

    let m = manifest(&d.join("world.manifest.json"));
    assert_eq!(m.status, RunStatus::Succeeded);
    assert_eq!(m.effective_config["xi"], 0.3);
    assert_eq!(m.outputs, vec![Path::new("world.json").to_path_buf()]);

    let stdout = ok(
        d,
        &["jacobian-report", "--world", "world.json", "--out", "rep"],
    );
    assert!(stdout.contains("smallest principal angle"));
    let summary = json(&d.join("rep/summary.json"));
    let smallest = summary["smallest_angle"].as_f64().unwrap();
    assert!((smallest - (FRAC_PI_2 - 0.3)).abs() < 1e-8, "{smallest}");
    assert_eq!(summary["points"], 32);
    let points = json(&d.join("rep/report.json"));
    let first = &points.as_array().unwrap()[0];
    for key in [
        "point_id",
        "angles",
        "xi_implied",
        "sigma_min",
        "ranks",
        "orth_loss_exact",
        "orth_loss_probe",
        "bound_lhs",
        "bound_rhs",
    ] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    let csv = fs::read_to_string(d.join("rep/report.csv")).unwrap();
    let hash = manifest(&d.join("rep/run_manifest.json")).config_hash;
    assert!(csv.lines().skip(1).all(|l| l.ends_with(&hash)));
}

#[test]
fn training_twice_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.json"), TINY_TRAIN).unwrap();
    for out in ["a", "b"] {
        ok(
            d,
            &["train", "--config", "c.json", "--seed", "7", "--out", out],
        );
    }
    let read = |p: &str| fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/metrics.csv"), read("b/metrics.csv"));
    assert_eq!(read("a/checkpoint.json"), read("b/checkpoint.json"));
    assert_eq!(
        fs::read_to_string(d.join("a/metrics.csv"))
            .unwrap()
            .lines()
            .count(),
        13
    );

    let m = manifest(&d.join("a/run_manifest.json"));
    assert_eq!(m.status, RunStatus::Succeeded);
    assert_eq!(m.seed, 7);
    assert_eq!(
        m.effective_config["experiment"]["seed"], 7,
        "flags override the file"
    );
    assert_eq!(m.effective_config["experiment"]["iters"], 12);
    assert!(m.finished_at.is_some());
    assert_eq!(m.determinism_mode, "bit-exact");
    assert!(m.code_version.starts_with("csdi-bench "));
    assert_eq!(m.inputs.len(), 1);
    assert_eq!(m.outputs.len(), 4);

    // The echoed config reproduces the run on its own.
    ok(d, &["train", "--config", "a/config.json", "--out", "c"]);
    assert_eq!(read("a/metrics.csv"), read("c/metrics.csv"));

    ok(
        d,
        &[
            "train", "--config", "c.json", "--seed", "8", "--out", "other",
        ],
    );
    assert_ne!(read("a/metrics.csv"), read("other/metrics.csv"));
}

#[test]
fn inputs_are_never_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("w.json"), r#"{"xi": 0.2}"#).unwrap();
    let before = fs::read(d.join("w.json")).unwrap();
    let out = bench(d, &["make-world", "--config", "w.json", "--out", "w.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(fs::read(d.join("w.json")).unwrap(), before);
    let m = manifest(&d.join("w.manifest.json"));
    assert_eq!(m.status, RunStatus::Failed);
    assert!(m.error.unwrap().contains("overwrite"));

    ok(
        d,
        &["make-world", "--config", "w.json", "--out", "world.json"],
    );
    let world = fs::read(d.join("world.json")).unwrap();
    ok(
        d,
        &[
            "jacobian-report",
            "--world",
            "world.json",
            "--out",
            "rep",
            "--points",
            "4",
        ],
    );
    ok(
        d,
        &[
            "estimator-study",
            "--world",
            "world.json",
            "--out",
            "est",
            "--probes",
            "8",
        ],
    );
    assert_eq!(fs::read(d.join("world.json")).unwrap(), world);
    assert_eq!(fs::read(d.join("w.json")).unwrap(), before);
}

#[test]
fn runtime_failures_exit_2_and_finalize_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        bench(d, &["train", "--config", "missing.json"])
            .status
            .code(),
        Some(2)
    );
    fs::write(
        d.join("bad.json"),
        r#"{"plan": {}, "iters": 1, "surprise": 1}"#,
    )
    .unwrap();
    assert_eq!(
        bench(d, &["train", "--config", "bad.json"]).status.code(),
        Some(2)
    );

    let mut diverging: Value = serde_json::from_str(TINY_TRAIN).unwrap();
    diverging["weights"] = serde_json::json!({"lambda_inv": 1e12});
    fs::write(d.join("div.json"), diverging.to_string()).unwrap();
    let out = bench(d, &["train", "--config", "div.json", "--out", "div"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("divergence"));
    let m = manifest(&d.join("div/run_manifest.json"));
    assert_eq!(m.status, RunStatus::Halted);
    assert!(d.join("div/summary.json").is_file());

    ok(d, &["make-world", "--out", "world.json"]);
    fs::write(d.join("x.csv"), "1,2,3\n4,5,6\n").unwrap();
    let out = bench(
        d,
        &[
            "invert",
            "--world",
            "world.json",
            "--input",
            "x.csv",
            "--out",
            "inv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let m = manifest(&d.join("inv/run_manifest.json"));
    assert_eq!(m.status, RunStatus::Failed);
    assert!(m.error.is_some());
}

#[test]
fn world_samples_invert_and_translate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "make-world",
            "--samples",
            "6",
            "--seed",
            "2",
            "--out",
            "world.json",
        ],
    );
    fs::write(
        d.join("inv.json"),
        r#"{"steps": 400, "lr": 0.02, "restarts": 3, "seed": 0}"#,
    )
    .unwrap();
    ok(
        d,
        &[
            "invert",
            "--world",
            "world.json",
            "--input",
            "world_domain0_x.csv",
            "--config",
            "inv.json",
            "--out",
            "inv",
        ],
    );

    let mut found = csv::Reader::from_path(d.join("inv/latents.csv")).unwrap();
    let mut truth = csv::Reader::from_path(d.join("world_domain0_latents.csv")).unwrap();
    for (a, b) in found.records().zip(truth.records()) {
        let (a, b) = (a.unwrap(), b.unwrap());
        for j in 0..4 {
            let (x, y): (f64, f64) = (a[j].parse().unwrap(), b[j].parse().unwrap());
            assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
    }

    ok(
        d,
        &[
            "translate",
            "--world",
            "world.json",
            "--input",
            "world_domain0_x.csv",
            "--style-ref",
            "world_domain1_x.csv",
            "--target-domain",
            "1",
            "--config",
            "inv.json",
            "--out",
            "tr",
        ],
    );
    let world = WorldSpec::load(&d.join("world.json")).unwrap();
    let read = |p: &str| {
        let mut r = csv::Reader::from_path(d.join(p)).unwrap();
        r.records()
            .map(|x| {
                x.unwrap()
                    .iter()
                    .map(|v| v.parse::<f64>().unwrap())
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    };
    let source = read("world_domain0_latents.csv");
    let style = read("world_domain1_latents.csv");
    let translated = read("tr/translated.csv");
    for i in 0..6 {
        let c = csdi_core::autodiff::Tensor::matrix(1, 2, source[i][..2].to_vec()).unwrap();
        let s = csdi_core::autodiff::Tensor::matrix(1, 2, style[i][2..].to_vec()).unwrap();
        let expected = world.generate(&c, &s).unwrap();
        for (a, b) in expected.data().iter().zip(&translated[i]) {
            assert!((a - b).abs() < 1e-3, "row {i}: {a} vs {b}");
        }
    }
}

#[test]
fn eval_rows_carry_the_run_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.json"), TINY_TRAIN).unwrap();
    ok(d, &["make-world", "--out", "world.json"]);
    ok(
        d,
        &[
            "train",
            "--config",
            "c.json",
            "--world",
            "world.json",
            "--out",
            "run",
        ],
    );
    fs::write(d.join("e.json"), r#"{"samples": 200}"#).unwrap();
    let stdout = ok(
        d,
        &[
            "eval",
            "--checkpoint",
            "run",
            "--world",
            "world.json",
            "--config",
            "e.json",
            "--out",
            "ev",
        ],
    );
    assert!(stdout.contains("style R²"));
    let hash = csdi_core::train::ExperimentConfig::load(&d.join("run/config.json"))
        .unwrap()
        .hash();
    let text = fs::read_to_string(d.join("ev/eval.csv")).unwrap();
    assert!(text.lines().count() > 5);
    assert!(text.lines().skip(1).all(|l| l.ends_with(&hash)));
    let report = json(&d.join("ev/eval.json"));
    assert_eq!(report["r2"]["config_hash"], hash.as_str());
    assert_eq!(report["mmd_per_domain"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_writes_reports_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.json"), TINY_TRAIN).unwrap();
    fs::write(d.join("e.json"), r#"{"samples": 150}"#).unwrap();
    let common = [
        "sweep",
        "--config",
        "c.json",
        "--param",
        "lambda_orth",
        "--values",
        "0,1",
        "--repeats",
        "2",
        "--eval-config",
        "e.json",
    ];
    let mut one = common.to_vec();
    one.extend(["--out", "s1"]);
    let mut two = common.to_vec();
    two.extend(["--jobs", "2", "--out", "s2"]);
    ok(d, &one);
    ok(d, &two);
    for f in ["sweep.csv", "runs.csv", "plot_data.csv", "sweep.json"] {
        assert_eq!(
            fs::read(d.join("s1").join(f)).unwrap(),
            fs::read(d.join("s2").join(f)).unwrap(),
            "{f}"
        );
    }
    let runs = fs::read_to_string(d.join("s1/runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5);
    assert!(fs::read_to_string(d.join("s1/plot_data.csv"))
        .unwrap()
        .starts_with("x,y,series"));
}

#[test]
fn basis_probes_are_exact_in_the_study() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("s.json"), r#"{"pairs": 20, "d": 16, "trials": 2}"#).unwrap();
    ok(
        d,
        &[
            "estimator-study",
            "--config",
            "s.json",
            "--probe-kind",
            "basis-enumeration",
            "--probes",
            "4",
            "--out",
            "est",
        ],
    );
    let rows = json(&d.join("est/estimator.json"));
    let row = &rows.as_array().unwrap()[0];
    assert!(row["max"].as_f64().unwrap() <= 1e-10);
    assert_eq!(row["samples"], 40);
}

/// IDX files for `n` 8×8 digits whose label is the index mod 10.
fn write_idx(dir: &Path, n: usize) {
    let mut images = vec![0, 0, 8, 3];
    for v in [n as u32, 8, 8] {
        images.extend(v.to_be_bytes());
    }
    for i in 0..n {
        images.extend((0..64).map(|p| if (p + i) % 3 == 0 { 255 } else { 0 }));
    }
    let mut labels = vec![0, 0, 8, 1];
    labels.extend((n as u32).to_be_bytes());
    labels.extend((0..n).map(|i| (i % 10) as u8));
    fs::write(dir.join("images.idx"), images).unwrap();
    fs::write(dir.join("labels.idx"), labels).unwrap();
}

#[test]
fn colorized_datasets_are_reproducible_and_trainable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::create_dir(d.join("src")).unwrap();
    write_idx(&d.join("src"), 12);
    fs::write(
        d.join("src/data.json"),
        r#"{"source": {"idx": {"images": "images.idx", "labels": "labels.idx"}}, "colorize": {"seed": 3}}"#,
    )
    .unwrap();
    ok(
        d,
        &[
            "colorize-dataset",
            "--config",
            "src/data.json",
            "--out",
            "set1",
        ],
    );
    ok(
        d,
        &[
            "colorize-dataset",
            "--config",
            "src/data.json",
            "--out",
            "set2",
        ],
    );
    let manifest_csv = fs::read_to_string(d.join("set1/manifest.csv")).unwrap();
    assert_eq!(manifest_csv.lines().count(), 25);
    assert_eq!(
        manifest_csv,
        fs::read_to_string(d.join("set2/manifest.csv")).unwrap()
    );
    for name in ["domain1/000005.png", "domain2/000011.png"] {
        assert_eq!(
            fs::read(d.join("set1").join(name)).unwrap(),
            fs::read(d.join("set2").join(name)).unwrap()
        );
    }
    let m = manifest(&d.join("set1/run_manifest.json"));
    assert_eq!(m.inputs.len(), 3);
    assert_eq!(m.seed, 3);

    ok(
        d,
        &[
            "colorize-dataset",
            "--config",
            "src/data.json",
            "--seed",
            "4",
            "--limit",
            "6",
            "--out",
            "set3",
        ],
    );
    assert_eq!(
        fs::read_to_string(d.join("set3/manifest.csv"))
            .unwrap()
            .lines()
            .count(),
        13
    );

    let mut cfg: Value = serde_json::from_str(TINY_TRAIN).unwrap();
    cfg["plan"]["d"] = (32 * 32 * 3).into();
    cfg["iters"] = 2.into();
    fs::write(d.join("img.json"), cfg.to_string()).unwrap();
    ok(
        d,
        &[
            "train",
            "--config",
            "img.json",
            "--dataset",
            "set1",
            "--out",
            "img",
        ],
    );
    assert_eq!(
        fs::read_to_string(d.join("img/metrics.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}
