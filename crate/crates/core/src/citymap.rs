//! Whole-sequence static map: every frame registered into one world grid,
//! accumulated as saturating 8-bit votes in fixed-size chunks, then resolved
//! by a per-chunk argmax.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::classes::Taxonomy;
use crate::error::{Error, Result};
use crate::fusion::{devoxelize, WeightProfile};
use crate::geometry::Pose;
use crate::grid::{ClassId, GridSpec, VoxelGrid};
use crate::kitti::{encode_labels, LabelMap};

pub const DEFAULT_SCALE: f64 = 100.0;
pub const DEFAULT_CHUNK_DIMS: [usize; 3] = [256, 256, 32];
pub const DEFAULT_MAX_ACTIVE_CHUNKS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct CityMapSpec {
    pub world_spec: GridSpec,
    pub chunk_dims: [usize; 3],
    /// Classes that vote, ascending.
    pub static_classes: Vec<ClassId>,
}

impl CityMapSpec {
    pub fn new(world_spec: GridSpec, chunk_dims: [usize; 3], mut static_classes: Vec<ClassId>) -> Result<Self> {
        if chunk_dims.contains(&0) {
            return Err(Error::Config(format!("chunk dims must be positive, got {chunk_dims:?}")));
        }
        static_classes.sort_unstable();
        static_classes.dedup();
        if static_classes.is_empty() || static_classes.iter().any(|c| !c.is_occupied()) {
            return Err(Error::Config("static classes must be a non-empty set of occupied classes".into()));
        }
        Ok(Self {
            world_spec,
            chunk_dims,
            static_classes,
        })
    }

    /// Number of chunks along each axis; the last chunk of an axis may be partial.
    pub fn chunk_grid(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.world_spec.dims[a].div_ceil(self.chunk_dims[a]))
    }

    pub fn num_chunks(&self) -> usize {
        self.chunk_grid().iter().product()
    }

    pub fn chunk_index(&self, id: usize) -> [usize; 3] {
        let [_, gy, gz] = self.chunk_grid();
        [id / (gy * gz), (id / gz) % gy, id % gz]
    }

    pub fn chunk_start(&self, chunk: [usize; 3]) -> [usize; 3] {
        std::array::from_fn(|a| chunk[a] * self.chunk_dims[a])
    }

    /// Voxel extent of a chunk, clipped at the world boundary.
    pub fn chunk_extent(&self, chunk: [usize; 3]) -> [usize; 3] {
        std::array::from_fn(|a| {
            let start = chunk[a] * self.chunk_dims[a];
            self.chunk_dims[a].min(self.world_spec.dims[a] - start)
        })
    }

    pub fn chunk_spec(&self, chunk: [usize; 3]) -> GridSpec {
        self.world_spec.sub_spec(self.chunk_start(chunk), self.chunk_extent(chunk))
    }

    fn slot_table(&self) -> [Option<u8>; 256] {
        let mut t = [None; 256];
        for (i, c) in self.static_classes.iter().enumerate() {
            t[c.index()] = Some(i as u8);
        }
        t
    }

    /// `(chunk id, voxel offset inside the chunk)` of a world voxel.
    #[inline]
    fn route(&self, index: [usize; 3]) -> (usize, usize) {
        let grid = self.chunk_grid();
        let c: [usize; 3] = std::array::from_fn(|a| index[a] / self.chunk_dims[a]);
        let ext = self.chunk_extent(c);
        let l: [usize; 3] = std::array::from_fn(|a| index[a] - c[a] * self.chunk_dims[a]);
        ((c[0] * grid[1] + c[1]) * grid[2] + c[2], (l[0] * ext[1] + l[1]) * ext[2] + l[2])
    }
}

/// Tight world volume around every frame volume placed at its pose. `dims`
/// round the extent up to whole voxels.
pub fn compute_world_bounds(poses: &[Pose], frame_spec: &GridSpec) -> Result<GridSpec> {
    if poses.is_empty() {
        return Err(Error::invalid("world bounds need at least one pose"));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for pose in poses {
        for c in frame_spec.corners() {
            let p = pose.transform_point(c);
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    let dv = frame_spec.voxel_size;
    let dims = std::array::from_fn(|a| (((hi[a] - lo[a]) / dv[a]) - 1e-6).ceil().max(1.0) as usize);
    GridSpec::new(dims, lo, dv)
}

/// Accumulator options.
#[derive(Clone, Debug)]
pub struct AccumulatorOptions {
    /// Weight to counter multiplier.
    pub scale: f64,
    /// Most chunks held in memory at once.
    pub max_active_chunks: usize,
    /// Where evicted chunks go. Without it, needing more than
    /// `max_active_chunks` chunks is an error.
    pub spill_dir: Option<PathBuf>,
}

impl Default for AccumulatorOptions {
    fn default() -> Self {
        Self {
            scale: DEFAULT_SCALE,
            max_active_chunks: DEFAULT_MAX_ACTIVE_CHUNKS,
            spill_dir: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CityStats {
    pub frames: usize,
    pub accepted: usize,
    /// Votes landing outside the world volume.
    pub dropped: usize,
    /// Votes of non-static classes.
    pub filtered: usize,
    pub spills: usize,
    pub reloads: usize,
    pub peak_active_chunks: usize,
}

/// Per-chunk `u8` counters laid out `[voxel][static class slot]`.
#[derive(Debug)]
pub struct QuantizedAccumulator {
    spec: CityMapSpec,
    options: AccumulatorOptions,
    active: HashMap<usize, Vec<u8>>,
    last_used: HashMap<usize, u64>,
    spilled: Vec<bool>,
    clock: u64,
    slots: [Option<u8>; 256],
    pub stats: CityStats,
}

/// Counter increment for one vote.
#[inline]
pub fn quantize(weight: f64, scale: f64) -> u8 {
    (weight * scale).round().clamp(0.0, 255.0) as u8
}

impl QuantizedAccumulator {
    pub fn new(spec: CityMapSpec, options: AccumulatorOptions) -> Result<Self> {
        if !(options.scale > 0.0 && options.scale.is_finite()) {
            return Err(Error::Config(format!("quantization scale must be positive, got {}", options.scale)));
        }
        if options.max_active_chunks == 0 {
            return Err(Error::Config("max active chunks must be positive".into()));
        }
        if let Some(d) = &options.spill_dir {
            fs::create_dir_all(d)?;
        }
        Ok(Self {
            slots: spec.slot_table(),
            spilled: vec![false; spec.num_chunks()],
            spec,
            options,
            active: HashMap::new(),
            last_used: HashMap::new(),
            clock: 0,
            stats: CityStats::default(),
        })
    }

    pub fn spec(&self) -> &CityMapSpec {
        &self.spec
    }

    pub fn scale(&self) -> f64 {
        self.options.scale
    }

    pub fn num_slots(&self) -> usize {
        self.spec.static_classes.len()
    }

    fn chunk_len(&self, id: usize) -> usize {
        self.spec.chunk_extent(self.spec.chunk_index(id)).iter().product::<usize>() * self.num_slots()
    }

    fn spill_path(&self, id: usize) -> Option<PathBuf> {
        self.options
            .spill_dir
            .as_ref()
            .map(|d| d.join(format!("chunk-{id}.u8")))
    }

    /// Makes room for and loads `id`, never evicting chunks in `pinned`.
    fn activate(&mut self, id: usize, pinned: &[usize]) -> Result<()> {
        self.clock += 1;
        self.last_used.insert(id, self.clock);
        if self.active.contains_key(&id) {
            return Ok(());
        }
        if self.active.len() >= self.options.max_active_chunks {
            if self.options.spill_dir.is_none() {
                return Err(Error::ActiveChunkLimit {
                    limit: self.options.max_active_chunks,
                    requested: self.active.len() + 1,
                });
            }
            let victim = self
                .active
                .keys()
                .filter(|k| !pinned.contains(k))
                .min_by_key(|k| (self.last_used[k], **k))
                .copied()
                .ok_or_else(|| Error::Internal("every active chunk is pinned".into()))?;
            let data = self.active.remove(&victim).expect("victim is active");
            fs::write(self.spill_path(victim).expect("spill dir set"), &data)?;
            self.spilled[victim] = true;
            self.stats.spills += 1;
        }
        let len = self.chunk_len(id);
        let data = if self.spilled[id] {
            let path = self.spill_path(id).expect("spilled chunks have a path");
            let d = fs::read(&path)?;
            if d.len() != len {
                return Err(Error::format(path, format!("spill file has {} bytes, expected {len}", d.len())));
            }
            self.stats.reloads += 1;
            d
        } else {
            vec![0u8; len]
        };
        self.active.insert(id, data);
        self.stats.peak_active_chunks = self.stats.peak_active_chunks.max(self.active.len());
        Ok(())
    }

    /// Registers one frame (`pose` is LiDAR to world). Votes are weighted in
    /// the frame's own LiDAR coordinates.
    pub fn add_frame(&mut self, grid: &VoxelGrid, pose: &Pose, profile: &WeightProfile) -> Result<()> {
        let mut cloud = devoxelize(grid)?;
        profile.apply(&mut cloud);
        let world = self.spec.world_spec;
        let scale = self.options.scale;
        let slots = self.slots;
        let n_slots = self.num_slots();
        let spec = &self.spec;
        // (chunk, offset * slots + slot, increment); None marks a dropped vote
        let routed: Vec<Option<(u32, u32, u8)>> = cloud
            .points
            .par_iter()
            .filter_map(|p| {
                let slot = slots[p.class.index()]?;
                Some(world.point_to_index(pose.transform_point(p.pos)).map(|i| {
                    let (chunk, off) = spec.route(i);
                    (chunk as u32, (off * n_slots + slot as usize) as u32, quantize(p.weight, scale))
                }))
            })
            .collect();
        self.stats.frames += 1;
        self.stats.filtered += cloud.len() - routed.len();
        let mut by_chunk: HashMap<u32, Vec<(u32, u8)>> = HashMap::new();
        for r in routed {
            match r {
                Some((c, off, q)) => {
                    self.stats.accepted += 1;
                    by_chunk.entry(c).or_default().push((off, q));
                }
                None => self.stats.dropped += 1,
            }
        }
        let mut ids: Vec<usize> = by_chunk.keys().map(|&c| c as usize).collect();
        ids.sort_unstable();
        for batch in ids.chunks(self.options.max_active_chunks) {
            for &id in batch {
                self.activate(id, batch)?;
            }
            let mut work: Vec<(usize, Vec<u8>)> = batch
                .iter()
                .map(|id| (*id, self.active.remove(id).expect("activated")))
                .collect();
            work.par_iter_mut().for_each(|(id, data)| {
                for &(off, q) in &by_chunk[&(*id as u32)] {
                    let c = &mut data[off as usize];
                    *c = c.saturating_add(q);
                }
            });
            self.active.extend(work);
        }
        Ok(())
    }

    /// Counters of one chunk, loading it if needed.
    pub fn chunk_counts(&mut self, id: usize) -> Result<Vec<u8>> {
        if !self.active.contains_key(&id) && !self.spilled[id] {
            return Ok(vec![0u8; self.chunk_len(id)]);
        }
        self.activate(id, &[id])?;
        Ok(self.active[&id].clone())
    }

    fn take_chunk(&mut self, id: usize) -> Result<Option<Vec<u8>>> {
        if let Some(d) = self.active.remove(&id) {
            self.last_used.remove(&id);
            if self.spilled[id] {
                fs::remove_file(self.spill_path(id).expect("spilled chunks have a path"))?;
                self.spilled[id] = false;
            }
            return Ok(Some(d));
        }
        if self.spilled[id] {
            let path = self.spill_path(id).expect("spilled chunks have a path");
            let d = fs::read(&path)?;
            fs::remove_file(&path)?;
            self.spilled[id] = false;
            self.stats.reloads += 1;
            return Ok(Some(d));
        }
        Ok(None)
    }
}

/// Argmax over `[voxel][slot]` counters with the fusion tie rule: the
/// strictly largest count wins, ties go to the lowest class, all-zero is free.
pub fn argmax_counts(counts: &[u8], classes: &[ClassId]) -> Vec<ClassId> {
    counts
        .chunks_exact(classes.len())
        .map(|v| {
            let mut best = ClassId::FREE;
            let mut best_n = 0u8;
            for (k, &n) in v.iter().enumerate() {
                if n > best_n {
                    best_n = n;
                    best = classes[k];
                }
            }
            best
        })
        .collect()
}

/// One resolved chunk of the map.
#[derive(Clone, Debug, PartialEq)]
pub struct CityChunk {
    pub index: [usize; 3],
    pub grid: VoxelGrid,
}

/// Resolves every chunk in chunk order and hands it to `sink`, releasing the
/// chunk's counters afterwards. Chunks that never received a vote are
/// emitted as all free.
pub fn city_argmax(acc: &mut QuantizedAccumulator, mut sink: impl FnMut(CityChunk) -> Result<()>) -> Result<()> {
    let batch = acc.options.max_active_chunks.max(1);
    let n = acc.spec.num_chunks();
    let classes = acc.spec.static_classes.clone();
    let mut start = 0;
    while start < n {
        let ids: Vec<usize> = (start..(start + batch).min(n)).collect();
        let mut data = Vec::with_capacity(ids.len());
        for &id in &ids {
            data.push(acc.take_chunk(id)?);
        }
        let spec = &acc.spec;
        let chunks: Vec<CityChunk> = ids
            .par_iter()
            .zip(data.into_par_iter())
            .map(|(&id, counts)| {
                let index = spec.chunk_index(id);
                let cs = spec.chunk_spec(index);
                let labels = match counts {
                    Some(c) => argmax_counts(&c, &classes),
                    None => vec![ClassId::FREE; cs.num_voxels()],
                };
                CityChunk {
                    index,
                    grid: VoxelGrid::from_labels_unchecked(cs, labels, 0),
                }
            })
            .collect();
        for c in chunks {
            sink(c)?;
        }
        start += batch;
    }
    Ok(())
}

/// Pastes chunks into one world grid.
pub fn assemble(spec: &CityMapSpec, chunks: &[CityChunk]) -> Result<VoxelGrid> {
    let world = spec.world_spec;
    let mut labels = vec![ClassId::FREE; world.num_voxels()];
    for ch in chunks {
        let start = spec.chunk_start(ch.index);
        let [ex, ey, ez] = ch.grid.spec().dims;
        if [ex, ey, ez] != spec.chunk_extent(ch.index) {
            return Err(Error::invalid(format!("chunk {:?} has wrong extent", ch.index)));
        }
        for x in 0..ex {
            for y in 0..ey {
                let dst = world.linear_unchecked([start[0] + x, start[1] + y, start[2]]);
                let src = (x * ey + y) * ez;
                labels[dst..dst + ez].copy_from_slice(&ch.grid.labels()[src..src + ez]);
            }
        }
    }
    Ok(VoxelGrid::from_labels_unchecked(world, labels, 0))
}

/// Streams `(frame, LiDAR-to-world pose)` pairs into a fresh accumulator.
pub fn accumulate_city<I>(
    frames: I,
    spec: CityMapSpec,
    profile: &WeightProfile,
    options: AccumulatorOptions,
) -> Result<QuantizedAccumulator>
where
    I: IntoIterator<Item = Result<(VoxelGrid, Pose)>>,
{
    profile.validate()?;
    let mut acc = QuantizedAccumulator::new(spec, options)?;
    for f in frames {
        let (grid, pose) = f?;
        acc.add_frame(&grid, &pose, profile)?;
    }
    Ok(acc)
}

pub fn chunk_file_name(index: [usize; 3]) -> String {
    format!("chunk_{:04}_{:04}_{:04}.label", index[0], index[1], index[2])
}

/// Writes chunk label files, `manifest.txt` and optionally `map.ply` into
/// `dir`, consuming the accumulator.
pub fn export_city(
    acc: &mut QuantizedAccumulator,
    dir: &Path,
    map: &LabelMap,
    taxonomy: &Taxonomy,
    ply: bool,
) -> Result<ExportSummary> {
    fs::create_dir_all(dir)?;
    let spec = acc.spec.clone();
    let mut summary = ExportSummary::default();
    let mut entries = Vec::new();
    let mut ply_body = if ply {
        Some(BufWriter::new(fs::File::create(dir.join("map.ply.body"))?))
    } else {
        None
    };
    city_argmax(acc, |chunk| {
        let name = chunk_file_name(chunk.index);
        fs::write(dir.join(&name), encode_labels(&chunk.grid, map)?)?;
        let occupied = chunk.grid.occupied_count();
        summary.chunks += 1;
        summary.occupied += occupied;
        entries.push(format!(
            "chunk {} {} {} {} {} {} {name}",
            chunk.index[0],
            chunk.index[1],
            chunk.index[2],
            chunk.grid.spec().dims[0],
            chunk.grid.spec().dims[1],
            chunk.grid.spec().dims[2]
        ));
        if let Some(w) = ply_body.as_mut() {
            let cs = chunk.grid.spec();
            for (l, c) in chunk.grid.labels().iter().enumerate() {
                if c.is_occupied() {
                    let p = cs.center_unchecked(cs.index_unchecked(l));
                    let [r, g, b] = taxonomy.color(*c);
                    writeln!(w, "{:.3} {:.3} {:.3} {r} {g} {b}", p[0], p[1], p[2])?;
                }
            }
        }
        Ok(())
    })?;

    let w = spec.world_spec;
    let mut m = String::new();
    m.push_str(&format!("origin {} {} {}\n", w.origin[0], w.origin[1], w.origin[2]));
    m.push_str(&format!("voxel_size {} {} {}\n", w.voxel_size[0], w.voxel_size[1], w.voxel_size[2]));
    m.push_str(&format!("dims {} {} {}\n", w.dims[0], w.dims[1], w.dims[2]));
    m.push_str(&format!(
        "chunk_dims {} {} {}\n",
        spec.chunk_dims[0], spec.chunk_dims[1], spec.chunk_dims[2]
    ));
    let g = spec.chunk_grid();
    m.push_str(&format!("chunk_grid {} {} {}\n", g[0], g[1], g[2]));
    m.push_str(&format!("quantization_scale {}\n", acc.scale()));
    for c in &spec.static_classes {
        let [r, gg, b] = taxonomy.color(*c);
        m.push_str(&format!(
            "class {} {} {r} {gg} {b}\n",
            c.0,
            taxonomy.name(*c).unwrap_or("unknown")
        ));
    }
    for e in &entries {
        m.push_str(e);
        m.push('\n');
    }
    fs::write(dir.join("manifest.txt"), m)?;

    if let Some(mut body) = ply_body {
        body.flush()?;
        drop(body);
        let body_path = dir.join("map.ply.body");
        let mut out = BufWriter::new(fs::File::create(dir.join("map.ply"))?);
        write!(
            out,
            "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
            summary.occupied
        )?;
        std::io::copy(&mut fs::File::open(&body_path)?, &mut out)?;
        out.flush()?;
        fs::remove_file(body_path)?;
    }
    Ok(summary)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExportSummary {
    pub chunks: usize,
    pub occupied: usize,
}
