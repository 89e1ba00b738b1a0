mod common;

use std::fs;

use common::{larvacount, ok, read_counts, read_json, synth, write_counts};

#[test]
fn validate_reports_summary_and_integrity_errors() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 4, &[0.4], false, 1);
    let out = ok(dir.path(), &["validate", "--manifest", manifest.to_str().unwrap()]);
    let n_ann = read_json(&manifest)["annotations"].as_array().unwrap().len();
    assert!(out.starts_with(&format!("4 images, {n_ann} annotations")), "{out}");
    assert!(!dir.path().join("runs").exists(), "validate must not create a run");

    let mut m = read_json(&manifest);
    m["annotations"][0]["image_id"] = "ghost-image".into();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, m.to_string()).unwrap();
    let out = larvacount(dir.path(), &["validate", "--manifest", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ghost-image"));

    fs::write(dir.path().join("empty.json"), "").unwrap();
    assert_eq!(
        larvacount(dir.path(), &["validate", "--manifest", "empty.json"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn config_errors_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.json"), r#"{"manifets": "m.json"}"#).unwrap();
    assert_eq!(
        larvacount(dir.path(), &["--config", "run.json", "validate"])
            .status
            .code(),
        Some(4)
    );
    assert_eq!(larvacount(dir.path(), &["frobnicate"]).status.code(), Some(4));
    let manifest = synth(dir.path(), 2, &[0.4], false, 1);
    let m = manifest.to_str().unwrap();
    let out = larvacount(
        dir.path(),
        &[
            "count",
            "--manifest",
            m,
            "--backend",
            "nope",
            "--scale",
            "0.4",
            "--conf",
            "0.5",
        ],
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown backend"));
    assert_eq!(
        larvacount(dir.path(), &["count", "--manifest", m, "--backend", "oracle"])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn existing_run_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 3, &[0.4], false, 2);
    let m = manifest.to_str().unwrap();
    ok(
        dir.path(),
        &["split", "--manifest", m, "--ratios", "0.4,0.3,0.3", "--run-id", "a"],
    );
    let out = larvacount(
        dir.path(),
        &["split", "--manifest", m, "--ratios", "0.4,0.3,0.3", "--run-id", "a"],
    );
    assert_eq!(out.status.code(), Some(4));
    let index = fs::read_to_string(dir.path().join("runs/index.jsonl")).unwrap();
    assert_eq!(index.lines().count(), 1);
}

#[test]
fn perfect_oracle_counts_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 10, &[0.4], false, 3);
    let m = manifest.to_str().unwrap();
    let out = ok(
        dir.path(),
        &[
            "count",
            "--manifest",
            m,
            "--backend",
            "oracle",
            "--scale",
            "0.4",
            "--conf",
            "0.5",
            "--run-id",
            "c",
        ],
    );
    assert!(out.contains("10 images counted, 10 exact"), "{out}");
    let rows = read_counts(&dir.path().join("runs/c/counts.csv"));
    assert_eq!(rows.len(), 10);
    for (id, truth, pred) in rows {
        assert_eq!(truth, pred, "{id}");
    }
    let run = read_json(&dir.path().join("runs/c/run.json"));
    assert_eq!(run["status"], "complete");
    assert_eq!(run["artifacts"], serde_json::json!(["counts.csv", "counts.json"]));
}

#[test]
fn split_is_seeded_and_feeds_count() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 20, &[0.4], false, 4);
    let m = manifest.to_str().unwrap();
    ok(
        dir.path(),
        &[
            "split",
            "--manifest",
            m,
            "--ratios",
            "0.5,0.25,0.25",
            "--seed",
            "9",
            "--run-id",
            "s1",
        ],
    );
    ok(
        dir.path(),
        &[
            "split",
            "--manifest",
            m,
            "--ratios",
            "0.5,0.25,0.25",
            "--seed",
            "9",
            "--run-id",
            "s2",
        ],
    );
    let a = fs::read(dir.path().join("runs/s1/splits.json")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("runs/s2/splits.json")).unwrap());
    ok(
        dir.path(),
        &[
            "split",
            "--manifest",
            m,
            "--ratios",
            "0.5,0.25,0.25",
            "--seed",
            "10",
            "--run-id",
            "s3",
        ],
    );
    assert_ne!(a, fs::read(dir.path().join("runs/s3/splits.json")).unwrap());

    ok(
        dir.path(),
        &[
            "count",
            "--manifest",
            m,
            "--splits",
            "runs/s1/splits.json",
            "--backend",
            "oracle",
            "--scale",
            "0.4",
            "--conf",
            "0.5",
            "--run-id",
            "c",
        ],
    );
    assert_eq!(read_counts(&dir.path().join("runs/c/counts.csv")).len(), 5);
}

#[test]
fn tile_dump_writes_tile_images() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 2, &[0.5], true, 5);
    let m = manifest.to_str().unwrap();
    let out = ok(
        dir.path(),
        &["tile", "--manifest", m, "--scale", "0.5", "--dump", "--run-id", "t"],
    );
    assert!(out.starts_with("2 images, 8 tiles"), "{out}");
    let tiles = read_json(&dir.path().join("runs/t/tiles.json"));
    assert_eq!(tiles[0]["grid"]["side"], 800);
    let names: Vec<String> = fs::read_dir(dir.path().join("runs/t/tiles"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.iter().filter(|n| n.ends_with(".png")).count(), 8);
    assert_eq!(names.iter().filter(|n| n.ends_with("_tiles.json")).count(), 2);
}

#[test]
fn eval_ranks_models_and_report_renders() {
    let dir = tempfile::tempdir().unwrap();
    // errors proportional to a per-model magnitude keep all three metrics in the same order
    let models = [("m-b", 541u64), ("m-a", 544), ("m-c", 731), ("m-d", 1847)];
    let mut args = vec!["eval".to_string()];
    for (name, mag) in models {
        let rows: Vec<(String, u64, u64)> = (0..12u64)
            .map(|i| {
                let truth = 5000 + 250 * i;
                let pred = if i % 2 == 0 { truth + mag } else { truth - mag };
                (format!("img{i:02}"), truth, pred)
            })
            .collect();
        write_counts(&dir.path().join(format!("{name}.csv")), &rows);
        args.push("--counts".into());
        args.push(format!("{name}={name}.csv"));
    }
    args.extend(["--run-id".into(), "e".into()]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = ok(dir.path(), &args);
    assert!(out.contains("ANOVA MAE"), "{out}");

    let metrics = fs::read_to_string(dir.path().join("runs/e/metrics.csv")).unwrap();
    let order: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(order, ["m-b", "m-a", "m-c", "m-d"]);
    for name in ["m-a", "m-b", "m-c", "m-d"] {
        assert!(dir.path().join(format!("runs/e/plots/{name}.svg")).is_file());
    }
    let stats = read_json(&dir.path().join("runs/e/stats.json"));
    assert_eq!(stats["anova_mae"]["df_between"], 3.0);

    let out = ok(
        dir.path(),
        &["report", "--metrics", "runs/e/metrics.csv", "--run-id", "r"],
    );
    assert!(out.starts_with("# Model comparison"));
    let report = fs::read_to_string(dir.path().join("runs/r/report.md")).unwrap();
    assert!(report.contains("| m-b | 541.00 ± 0.00"), "{report}");
}

#[test]
fn eval_needs_two_models() {
    let dir = tempfile::tempdir().unwrap();
    write_counts(&dir.path().join("a.csv"), &[("x".into(), 3, 4), ("y".into(), 5, 5)]);
    let out = larvacount(dir.path(), &["eval", "--counts", "a=a.csv"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn tune_recovers_planted_optimum_and_report_lists_it() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 12, &[0.4], false, 6);
    let m = manifest.to_str().unwrap();
    let out = ok(
        dir.path(),
        &[
            "tune",
            "--manifest",
            m,
            "--backend",
            "planted",
            "--model",
            "planted",
            "--no-augment",
            "--run-id",
            "t",
        ],
    );
    assert!(out.starts_with("| planted | 45% | 40% |"), "{out}");
    let tune = read_json(&dir.path().join("runs/t/tune.json"));
    assert!((tune["best"]["confidence"].as_f64().unwrap() - 0.45).abs() < 1e-9);
    assert!((tune["best"]["scale"].as_f64().unwrap() - 0.40).abs() < 1e-9);
    assert_eq!(tune["rounds"].as_array().unwrap().len(), 2);

    write_counts(
        &dir.path().join("a.csv"),
        &[("x".into(), 3, 4), ("y".into(), 5, 5), ("z".into(), 8, 6)],
    );
    write_counts(
        &dir.path().join("b.csv"),
        &[("x".into(), 3, 3), ("y".into(), 5, 7), ("z".into(), 8, 9)],
    );
    ok(
        dir.path(),
        &[
            "eval",
            "--counts",
            "planted=a.csv",
            "--counts",
            "other=b.csv",
            "--run-id",
            "e",
        ],
    );
    ok(
        dir.path(),
        &[
            "report",
            "--metrics",
            "runs/e/metrics.csv",
            "--tune-result",
            "runs/t/tune.json",
            "--run-id",
            "r",
        ],
    );
    let report = fs::read_to_string(dir.path().join("runs/r/report.md")).unwrap();
    assert!(report.contains("## Inference settings"));
    assert!(report.contains("| planted | 45% | 40% |"), "{report}");
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("data")).unwrap();
    synth(&dir.path().join("data"), 5, &[0.4], false, 7);
    fs::write(
        dir.path().join("run.json"),
        r#"{"manifest": "data/manifest.json", "backend": {"kind": "oracle"},
            "count": {"scale": 0.4, "confidence": 0.5}, "model": "cfg-model", "seed": 11}"#,
    )
    .unwrap();
    ok(dir.path(), &["--config", "run.json", "count", "--run-id", "c"]);
    let counts = read_json(&dir.path().join("runs/c/counts.json"));
    assert_eq!(counts["model"], "cfg-model");
    let run = read_json(&dir.path().join("runs/c/run.json"));
    assert_eq!(run["seed"], 11);
    let cfg = read_json(&dir.path().join("runs/c/config.json"));
    assert_eq!(cfg["count"]["scale"], 0.4);
}
