use std::collections::VecDeque;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use occrefine::fusion::{fuse_prepared, window_range, PreparedFrame};
use occrefine::kitti::{write_label_grid, SequenceManifest};

use crate::config::{resolve_profile, FileConfig, GridArgs, RunConfig, DEFAULT_RADIUS};
use crate::Outcome;

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// Sequence directory with calib.txt and poses.txt
    #[arg(long)]
    sequence: PathBuf,
    /// Directory of per-frame predictions [default: <sequence>/voxels]
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output directory for refined labels
    #[arg(long)]
    out: PathBuf,
    /// Temporal radius n: frames t-n..=t+n are fused [default: 25]
    #[arg(long)]
    radius: Option<usize>,
    /// Vote weighting: uniform, camera or lidar [default: camera]
    #[arg(long)]
    profile: Option<String>,
    /// Weight profile file (overrides --profile)
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
}

pub fn run(a: FuseArgs, file: &FileConfig) -> Result<Outcome> {
    let spec = a.grid.spec(file)?;
    let map = a.grid.label_map(file)?;
    let seq = SequenceManifest::load(&a.sequence, a.labels.as_deref())?;
    let radius = a.radius.or(file.radius).unwrap_or(DEFAULT_RADIUS);
    let profile = resolve_profile(a.profile.as_deref(), a.weights.as_deref(), file, &seq.calib, "camera")?;
    profile.validate()?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let mut rc = RunConfig {
        subcommand: "fuse".into(),
        inputs: vec![a.sequence.clone(), seq.labels_dir.clone()],
        output: Some(a.out.clone()),
        radius: Some(radius),
        profile: Some(profile.name().into()),
        weights: Some(profile.to_config_string()),
        ..Default::default()
    };
    a.grid.fill(&spec, &mut rc);
    rc.echo(Some(&a.out))?;

    let ids = &seq.frame_ids;
    let num_classes = map.num_classes();
    // sliding cache of prepared frames covering the current window
    let mut cache: VecDeque<PreparedFrame> = VecDeque::new();
    let mut cache_start = 0usize;
    let mut total_dropped = 0usize;
    let started = Instant::now();
    for t in 0..ids.len() {
        let t0 = Instant::now();
        let w = window_range(ids.len(), t, radius);
        while cache_start < *w.start() {
            cache.pop_front();
            cache_start += 1;
        }
        while cache_start + cache.len() <= *w.end() {
            let id = ids[cache_start + cache.len()];
            let g = seq.load_frame(id, spec, &map)?;
            cache.push_back(PreparedFrame::new(&g, &profile)?);
        }
        let (fused, stats) = fuse_prepared(cache.make_contiguous(), &seq.poses, t - cache_start, &spec, num_classes)?;
        write_label_grid(&fused, &a.out.join(format!("{:06}.label", ids[t])), &map)?;
        total_dropped += stats.dropped;
        println!(
            "frame {:06}: {} frames, {} points, {} dropped, {:.1} ms",
            ids[t],
            stats.frames,
            stats.points,
            stats.dropped,
            t0.elapsed().as_secs_f64() * 1e3
        );
    }
    println!(
        "fused {} frames in {:.2} s, {} points dropped outside target volumes",
        ids.len(),
        started.elapsed().as_secs_f64(),
        total_dropped
    );
    Ok(Outcome::Ok)
}
