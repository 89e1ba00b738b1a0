#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use larvacount::synthetic::{generate, write_dataset, SyntheticConfig};

pub fn larvacount(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_larvacount"))
        .current_dir(dir)
        .env_remove("LARVACOUNT_RUN_ROOT")
        .args(args)
        .output()
        .expect("spawn larvacount")
}

/// Run and require success; returns stdout.
pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = larvacount(dir, args);
    assert!(
        out.status.success(),
        "larvacount {args:?} exited {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn synth(dir: &Path, images: usize, interior: &[f64], rasters: bool, seed: u64) -> PathBuf {
    let cfg = SyntheticConfig {
        images,
        interior_scales: interior.to_vec(),
        seed,
        ..SyntheticConfig::default()
    };
    let m = generate(&cfg).unwrap();
    write_dataset(&m, dir, rasters).unwrap()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Parse counts.csv into (image_id, truth, predicted).
pub fn read_counts(path: &Path) -> Vec<(String, i64, i64)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "image_id,truth,predicted,abs_err,pct_err");
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

/// Write a counts file the way `count` does.
pub fn write_counts(path: &Path, rows: &[(String, u64, u64)]) {
    let mut s = String::from("image_id,truth,predicted,abs_err,pct_err\n");
    for (id, t, p) in rows {
        let abs = t.abs_diff(*p);
        s.push_str(&format!("{id},{t},{p},{abs},{}\n", abs as f64 / *t as f64 * 100.0));
    }
    fs::write(path, s).unwrap();
}
