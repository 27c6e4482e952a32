use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use occrefine::kitti::{write_calib, write_camera_poses, write_label_grid};
use occrefine::synth::{random_urban_scene, render_sequence, straight_trajectory, FrustumMask, NoiseModel};
use occrefine::{Error, FrameCalib, Pose};

use crate::config::{FileConfig, GridArgs, RunConfig};
use crate::Outcome;

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output sequence directory
    #[arg(long)]
    out: PathBuf,
    /// Scene and noise seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Poses along the drive
    #[arg(long, default_value_t = 100)]
    scans: usize,
    /// Every n-th scan gets a voxel frame
    #[arg(long, default_value_t = 5)]
    scan_step: usize,
    /// Meters travelled between scans
    #[arg(long, default_value_t = 0.4)]
    step: f64,
    /// Peak yaw oscillation in radians
    #[arg(long, default_value_t = 0.0)]
    yaw: f64,
    /// Probability that an occupied voxel changes class
    #[arg(long, default_value_t = 0.3)]
    flip: f64,
    /// Probability that an occupied voxel becomes free
    #[arg(long, default_value_t = 0.1)]
    delete: f64,
    /// Probability that a free voxel becomes occupied
    #[arg(long, default_value_t = 0.02)]
    hallucinate: f64,
    /// Range-dependent confusion rate reached at 51.2 m
    #[arg(long, default_value_t = 0.0)]
    confusion: f64,
    /// Keep only voxels inside the camera frustum
    #[arg(long)]
    frustum: bool,
    #[command(flatten)]
    grid: GridArgs,
}

pub fn run(a: SynthArgs, file: &FileConfig) -> Result<Outcome> {
    let spec = a.grid.spec(file)?;
    let map = a.grid.label_map(file)?;
    let seed = a.seed.or(file.seed).unwrap_or(0);
    if a.scans == 0 {
        bail!(Error::Config("need at least one scan".into()));
    }
    let v = spec.voxel_size[0];
    let calib = FrameCalib::default();
    let noise = NoiseModel {
        flip_rate: a.flip,
        deletion_rate: a.delete,
        hallucination_rate: a.hallucinate,
        range_confusion: (a.confusion > 0.0).then_some((a.confusion, 51.2)),
        frustum: a.frustum.then(FrustumMask::default),
        num_classes: map.num_classes(),
    };
    noise.validate()?;

    // world wide enough that frame voxels stay aligned laterally
    let frame_w = spec.dims[1] as f64 * v;
    let pad = (12.8 / v).round() * v;
    let width = frame_w + 2.0 * pad;
    let frame_l = spec.dims[0] as f64 * v;
    let length = a.step * (a.scans - 1) as f64 + frame_l + 20.0;
    let height = spec.dims[2] + (1.0 / v).ceil() as usize;
    let mut scene = random_urban_scene(seed, length, width, v, height)?;
    scene.trajectory = straight_trajectory(a.scans, a.step, [0.0, 0.0, 0.0], a.yaw);
    let seq = render_sequence(&scene, &spec, &noise, a.scan_step)?;

    let voxels = a.out.join("voxels");
    let preds = a.out.join("predictions");
    for d in [&voxels, &preds] {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    write_calib(&calib, &a.out.join("calib.txt"))?;
    let tr = calib.lidar_to_cam;
    let cam: Vec<Pose> = seq.poses.iter().map(|l| tr * *l * tr.invert()).collect();
    write_camera_poses(&cam, &a.out.join("poses.txt"))?;
    for (f, t) in seq.frames.iter().zip(&seq.truth) {
        let name = format!("{:06}.label", f.frame_id);
        write_label_grid(t, &voxels.join(&name), &map)?;
        write_label_grid(f, &preds.join(&name), &map)?;
    }

    let mut rc = RunConfig {
        subcommand: "synth".into(),
        output: Some(a.out.clone()),
        seed: Some(seed),
        ..Default::default()
    };
    a.grid.fill(&spec, &mut rc);
    rc.echo(Some(&a.out))?;
    let total = seq.stats.iter().fold([0usize; 5], |s, r| {
        [s[0] + r.occupied, s[1] + r.flipped, s[2] + r.deleted, s[3] + r.hallucinated, s[4] + r.masked]
    });
    println!(
        "wrote {} frames of {} scans to {}: {} occupied, {} flipped, {} deleted, {} hallucinated, {} masked",
        seq.frames.len(),
        a.scans,
        a.out.display(),
        total[0],
        total[1],
        total[2],
        total[3],
        total[4]
    );
    Ok(Outcome::Ok)
}
