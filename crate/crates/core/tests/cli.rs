//! End-to-end checks of the `cfe-dic` binary: synthetic data generation,
//! correlation runs, metrics, and error reporting through the process
//! boundary.

use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cfe-dic"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[test]
fn missing_input_yields_io_error_json_and_exit_2() {
    let out = run(&[
        "run",
        "--ref",
        "/nonexistent/ref.png",
        "--def",
        "/nonexistent/def.png",
        "--zoi",
        "0,0,40,40",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let json: serde_json::Value =
        serde_json::from_str(stdout.trim()).expect("machine-readable error JSON on stdout");
    assert_eq!(json["kind"], "io");
}

#[test]
fn synth_is_deterministic_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let result = run(&[
            "synth",
            "--preset",
            "translation",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(result.status.success());
    }
    for name in ["ref.png", "def.png", "truth.json"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name} not reproducible"
        );
    }
}

#[test]
fn run_on_identical_images_produces_near_zero_fields() {
    let dir = tempfile::tempdir().unwrap();
    let synth_dir = dir.path().join("synth");
    assert!(run(&[
        "synth",
        "--preset",
        "translation",
        "--seed",
        "3",
        "--out",
        synth_dir.to_str().unwrap(),
    ])
    .status
    .success());

    // Correlate the reference against itself.
    let out_dir = dir.path().join("out");
    let result = run(&[
        "run",
        "--ref",
        synth_dir.join("ref.png").to_str().unwrap(),
        "--def",
        synth_dir.join("ref.png").to_str().unwrap(),
        "--zoi",
        "100,100,240,240",
        "--h",
        "40",
        "--stride",
        "40",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );

    for name in [
        "solution.json",
        "manifest.json",
        "u.csv",
        "v.csv",
        "exx.csv",
        "u.png",
        "u.json",
    ] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }

    // Near-zero displacement everywhere.
    let csv = std::fs::read_to_string(out_dir.join("u.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let value: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(value.abs() < 1e-8, "non-zero u: {line}");
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["version"], 1);
    assert_eq!(manifest["inputs"][0]["sha256"], manifest["inputs"][1]["sha256"]);
    assert_eq!(manifest["config"]["element_size"], 40);
}

#[test]
fn run_plus_metrics_pipeline_on_translation_pair() {
    let dir = tempfile::tempdir().unwrap();
    let synth_dir = dir.path().join("synth");
    assert!(run(&[
        "synth",
        "--preset",
        "translation",
        "--seed",
        "5",
        "--out",
        synth_dir.to_str().unwrap(),
    ])
    .status
    .success());

    let out_dir = dir.path().join("out");
    // The zone comes from the truth sidecar; report.json appears because
    // ground truth was found next to the images.
    let result = run(&[
        "run",
        "--ref",
        synth_dir.join("ref.png").to_str().unwrap(),
        "--def",
        synth_dir.join("def.png").to_str().unwrap(),
        "--h",
        "50",
        "--stride",
        "10",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    let u = &report["components"][0];
    assert_eq!(u["component"], "u");
    let rmse = u["rmse"].as_f64().unwrap();
    assert!(rmse < 5e-3, "u rmse {rmse}");

    // Standalone metrics command reproduces the report.
    let metrics_dir = dir.path().join("metrics");
    let result = run(&[
        "metrics",
        "--solution",
        out_dir.join("solution.json").to_str().unwrap(),
        "--truth",
        synth_dir.join("truth.json").to_str().unwrap(),
        "--out",
        metrics_dir.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let again: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(metrics_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(
        again["components"][0]["rmse"].as_f64().unwrap(),
        rmse,
        "metrics recomputation differs"
    );
    let md = std::fs::read_to_string(metrics_dir.join("report.md")).unwrap();
    assert!(md.contains("| Method |"));
}

#[test]
fn shapes_command_emits_curve_counts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curves.csv");
    let result = run(&[
        "shapes",
        "--element",
        "cfe",
        "--p",
        "2",
        "--s",
        "2",
        "--a",
        "2",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap().split(',').count(), 7);
}

#[test]
fn config_file_round_trip_and_typo_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "version = 1\n[element]\nkind = \"q4\"\nsize = 40\n[zoi]\nx0 = 100\ny0 = 100\nwidth = 240\nheight = 240\n",
    )
    .unwrap();
    let synth_dir = dir.path().join("synth");
    assert!(run(&[
        "synth",
        "--preset",
        "translation",
        "--seed",
        "9",
        "--out",
        synth_dir.to_str().unwrap(),
    ])
    .status
    .success());
    let out_dir = dir.path().join("out");
    let result = run(&[
        "run",
        "--ref",
        synth_dir.join("ref.png").to_str().unwrap(),
        "--def",
        synth_dir.join("def.png").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--stride",
        "40",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["element"], "q4");
    assert_eq!(manifest["zoi"]["x0"], 100);

    // A typo in the config is a config error (exit 3).
    std::fs::write(&config, "version = 1\n[element]\ndilatation = 4.0\n").unwrap();
    let result = run(&[
        "run",
        "--ref",
        synth_dir.join("ref.png").to_str().unwrap(),
        "--def",
        synth_dir.join("def.png").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(3));
    let json: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&result.stdout).trim()).unwrap();
    assert_eq!(json["kind"], "config");
}

#[test]
fn mesh_export_lists_nodes_and_elements() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.csv");
    let result = run(&[
        "mesh",
        "--zoi",
        "0,0,40,40",
        "--h",
        "20",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("node,x,y\n"));
    assert!(text.contains("element,nodes"));
}

#[test]
fn help_runs() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["run", "synth", "metrics", "shapes", "mesh"] {
        assert!(text.contains(sub));
    }
}
