#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

/// Small frame volume: 64 x 64 x 8 voxels of 0.8 m, same footprint as KITTI.
pub const SMALL: [&str; 6] = ["--dims", "64,64,8", "--voxel-size", "0.8", "--origin", "0,-25.6,-2"];

pub fn occrefine(args: &[&str]) -> Output {
    occrefine_with(args, &[])
}

pub fn occrefine_with(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_occrefine"));
    cmd.args(args).env_remove("OCCREFINE_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a small noisy synthetic sequence under `root`.
pub fn synth(root: &Path, seed: u64, extra: &[&str]) {
    let seed = seed.to_string();
    let mut args = vec!["synth", "--out", p(root), "--seed", &seed, "--scans", "30", "--scan-step", "2", "--step", "0.8"];
    args.extend(SMALL);
    args.extend(extra);
    ok(&occrefine(&args));
}

/// `(band, iou, miou)` rows of an eval CSV.
pub fn read_eval_csv(path: &Path) -> Vec<(String, f64, f64, Vec<String>)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (
                rec[0].to_string(),
                rec[1].parse().unwrap_or(f64::NAN),
                rec[2].parse().unwrap(),
                rec.iter().skip(3).map(String::from).collect(),
            )
        })
        .collect()
}
