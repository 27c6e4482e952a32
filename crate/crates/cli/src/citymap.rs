use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use occrefine::citymap::{
    accumulate_city, compute_world_bounds, export_city, AccumulatorOptions, CityMapSpec, DEFAULT_CHUNK_DIMS,
    DEFAULT_MAX_ACTIVE_CHUNKS, DEFAULT_SCALE,
};
use occrefine::kitti::SequenceManifest;
use occrefine::{Pose, Taxonomy};

use crate::config::{resolve_profile, triple, FileConfig, GridArgs, RunConfig};
use crate::Outcome;

#[derive(Args, Debug)]
pub struct CitymapArgs {
    /// Sequence directory with calib.txt and poses.txt
    #[arg(long)]
    sequence: PathBuf,
    /// Directory of per-frame predictions [default: <sequence>/voxels]
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output directory for chunks and manifest
    #[arg(long)]
    out: PathBuf,
    /// Chunk size in voxels [default: 256,256,32]
    #[arg(long, value_delimiter = ',')]
    chunk: Option<Vec<usize>>,
    /// Most chunks held in memory at once [default: 64]
    #[arg(long)]
    max_active: Option<usize>,
    /// Directory for evicted chunks; without it exceeding --max-active fails
    #[arg(long)]
    spill: Option<PathBuf>,
    /// Weight to counter multiplier [default: 100]
    #[arg(long)]
    scale: Option<f64>,
    /// Vote weighting: uniform, camera or lidar [default: camera]
    #[arg(long)]
    profile: Option<String>,
    /// Weight profile file (overrides --profile)
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Keep dynamic classes (vehicles, people) in the map
    #[arg(long)]
    all_classes: bool,
    /// Also export a colored point cloud (map.ply)
    #[arg(long)]
    ply: bool,
    #[command(flatten)]
    grid: GridArgs,
}

pub fn run(a: CitymapArgs, file: &FileConfig) -> Result<Outcome> {
    let spec = a.grid.spec(file)?;
    let map = a.grid.label_map(file)?;
    let seq = SequenceManifest::load(&a.sequence, a.labels.as_deref())?;
    let profile = resolve_profile(a.profile.as_deref(), a.weights.as_deref(), file, &seq.calib, "camera")?;
    let taxonomy = if map.num_classes() == 19 {
        Taxonomy::semantic_kitti()
    } else {
        let names = (1..=map.num_classes()).map(|c| format!("class_{c}")).collect();
        Taxonomy::custom(names, &[], None)?
    };
    let classes = if a.all_classes {
        taxonomy.occupied_classes().collect()
    } else {
        taxonomy.static_classes()
    };
    let chunk = match &a.chunk {
        Some(c) => triple(c, "chunk")?,
        None => file.chunk.unwrap_or(DEFAULT_CHUNK_DIMS),
    };
    let options = AccumulatorOptions {
        scale: a.scale.or(file.scale).unwrap_or(DEFAULT_SCALE),
        max_active_chunks: a.max_active.or(file.max_active_chunks).unwrap_or(DEFAULT_MAX_ACTIVE_CHUNKS),
        spill_dir: a.spill.clone(),
    };
    if let Some(d) = &options.spill_dir {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let poses: Vec<Pose> = seq.frame_ids.iter().map(|&i| seq.poses[i as usize]).collect();
    let world = compute_world_bounds(&poses, &spec)?;
    let city = CityMapSpec::new(world, chunk, classes)?;

    let mut rc = RunConfig {
        subcommand: "citymap".into(),
        inputs: vec![a.sequence.clone(), seq.labels_dir.clone()],
        output: Some(a.out.clone()),
        profile: Some(profile.name().into()),
        weights: Some(profile.to_config_string()),
        chunk: Some(chunk),
        max_active_chunks: Some(options.max_active_chunks),
        scale: Some(options.scale),
        ..Default::default()
    };
    a.grid.fill(&spec, &mut rc);
    rc.echo(Some(&a.out))?;
    println!(
        "world volume {:?} voxels, {} chunks of {:?}",
        world.dims,
        city.num_chunks(),
        chunk
    );

    let started = Instant::now();
    let frames = seq
        .frame_ids
        .iter()
        .map(|&id| seq.load_frame(id, spec, &map).map(|g| (g, seq.poses[id as usize])));
    let mut acc = accumulate_city(frames, city, &profile, options)?;
    let summary = export_city(&mut acc, &a.out, &map, &taxonomy, a.ply)?;
    let stats = acc.stats;
    println!(
        "{} frames, {} votes accepted, {} outside the world, {} dynamic filtered",
        stats.frames, stats.accepted, stats.dropped, stats.filtered
    );
    println!(
        "peak {} active chunks, {} spills, {} reloads",
        stats.peak_active_chunks, stats.spills, stats.reloads
    );
    println!(
        "wrote {} chunks with {} occupied voxels in {:.2} s",
        summary.chunks,
        summary.occupied,
        started.elapsed().as_secs_f64()
    );
    Ok(Outcome::Ok)
}
