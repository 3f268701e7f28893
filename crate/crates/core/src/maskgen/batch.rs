use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::{sample_mask, sample_task_from, MaskError, MaskRanges, MaskSpec, TaskKind};
use crate::gridmap::{
    crop_context, fuse_scan, generate_map, load_map, raycast_scan, BeliefMap, CellPos, ContextMap,
    MapSpec, MapStyle, OccupancyGrid, SensorCfg,
};

/// Named source weights, e.g. `rooms:0.5,maze:0.25,cluttered:0.25`.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainMixCfg {
    pub entries: Vec<(String, f64)>,
}

impl PretrainMixCfg {
    pub fn single(name: &str) -> Self {
        Self {
            entries: vec![(name.to_string(), 1.0)],
        }
    }

    pub fn parse(s: &str) -> Result<Self, MaskError> {
        let mut entries = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, w) = part
                .rsplit_once(':')
                .ok_or_else(|| MaskError::Config(format!("mix entry '{part}' lacks ':weight'")))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| MaskError::Config(format!("mix weight '{w}' is not a number")))?;
            entries.push((name.trim().to_string(), w));
        }
        let cfg = Self { entries };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MaskError> {
        if self.entries.is_empty() {
            return Err(MaskError::Config("empty mix".into()));
        }
        if let Some((n, w)) = self.entries.iter().find(|(_, w)| !(*w >= 0.0 && w.is_finite())) {
            return Err(MaskError::Config(format!("mix weight {w} for {n} must be >= 0")));
        }
        let sum: f64 = self.entries.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(MaskError::Config(format!("mix weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

impl std::fmt::Display for PretrainMixCfg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.entries.iter().map(|(n, w)| format!("{n}:{w}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// A named set of ground-truth maps.
#[derive(Debug, Clone)]
pub struct MapPool {
    pub name: String,
    pub maps: Vec<Arc<OccupancyGrid>>,
}

impl MapPool {
    /// `count` generated maps of one style with densities drawn from `density`.
    pub fn synthetic(
        style: MapStyle,
        count: usize,
        size: usize,
        density: (f64, f64),
        seed: u64,
    ) -> Result<Self, MaskError> {
        let mut rng = crate::rng::substream(seed, style as u64 + 1);
        let mut maps = Vec::with_capacity(count);
        while maps.len() < count {
            let d = if density.1 > density.0 {
                rng.random_range(density.0..density.1)
            } else {
                density.0
            };
            let spec = MapSpec::new(size, style, d, rng.random());
            // a rare degenerate draw is skipped rather than aborting the pool
            if let Ok(m) = generate_map(&spec) {
                maps.push(Arc::new(m));
            }
        }
        Ok(Self {
            name: style.as_str().to_string(),
            maps,
        })
    }

    /// Every `*.pgm` in `dir`, in file-name order.
    pub fn from_dir(name: &str, dir: &Path) -> Result<Self, MaskError> {
        let rd = std::fs::read_dir(dir)
            .map_err(|e| MaskError::Config(format!("map directory {}: {e}", dir.display())))?;
        let mut paths: Vec<_> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(MaskError::Config(format!("map directory {} has no .pgm maps", dir.display())));
        }
        let maps = paths
            .iter()
            .map(|p| load_map(p).map(Arc::new))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            name: name.to_string(),
            maps,
        })
    }
}

/// Pools paired with their mixing weights.
#[derive(Debug, Clone)]
pub struct PretrainSources {
    pools: Vec<MapPool>,
    dist: WeightedIndex<f64>,
}

impl PretrainSources {
    /// Orders `pools` by the mix entries; every entry needs a non-empty pool.
    pub fn new(mix: &PretrainMixCfg, mut pools: Vec<MapPool>) -> Result<Self, MaskError> {
        mix.validate()?;
        let mut ordered = Vec::with_capacity(mix.entries.len());
        let mut weights = Vec::with_capacity(mix.entries.len());
        for (name, w) in &mix.entries {
            let pos = pools
                .iter()
                .position(|p| &p.name == name)
                .ok_or_else(|| MaskError::Config(format!("no map pool named '{name}'")))?;
            let pool = pools.swap_remove(pos);
            if pool.maps.is_empty() {
                return Err(MaskError::Config(format!("map pool '{name}' is empty")));
            }
            ordered.push(pool);
            weights.push(*w);
        }
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| MaskError::Config(format!("mix weights: {e}")))?;
        Ok(Self {
            pools: ordered,
            dist,
        })
    }

    pub fn pools(&self) -> &[MapPool] {
        &self.pools
    }

    pub fn draw_source<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }

    pub fn draw_map<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, &Arc<OccupancyGrid>) {
        let s = self.draw_source(rng);
        let pool = &self.pools[s];
        (s, &pool.maps[rng.random_range(0..pool.maps.len())])
    }
}

/// How pretraining contexts are cut from ground-truth maps: a random free pose,
/// then 1 to `max_scans` scans from nearby free cells fused into a fresh belief.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextSampler {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub sensor: SensorCfg,
    pub max_scans: usize,
    pub scan_radius_m: f64,
}

impl ContextSampler {
    pub fn new(size: usize, patch: usize) -> Self {
        Self {
            height: size,
            width: size,
            patch,
            sensor: SensorCfg::default(),
            max_scans: 4,
            scan_radius_m: 3.0,
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }
}

pub fn sample_context<R: Rng + ?Sized>(
    map: &OccupancyGrid,
    sampler: &ContextSampler,
    rng: &mut R,
) -> Result<ContextMap, MaskError> {
    let free: Vec<CellPos> = map.free_cells().collect();
    if free.is_empty() {
        return Err(MaskError::Argument("map has no free cell".into()));
    }
    let geom = *map.geometry();
    let agent = free[rng.random_range(0..free.len())];
    let mut belief = BeliefMap::unknown_like(map);
    let scans = rng.random_range(1..=sampler.max_scans.max(1));
    let radius = sampler.scan_radius_m / geom.resolution;
    for k in 0..scans {
        let at = if k == 0 {
            agent
        } else {
            // a few rejection tries for a nearby free cell, else rescan at the agent
            (0..16)
                .map(|_| free[rng.random_range(0..free.len())])
                .find(|c| c.dist(agent) <= radius)
                .unwrap_or(agent)
        };
        fuse_scan(&mut belief, &raycast_scan(map, geom.center_of(at), sampler.sensor));
    }
    Ok(crop_context(
        &belief,
        geom.center_of(agent),
        sampler.height,
        sampler.width,
        sampler.patch,
    )?)
}

/// One pretraining step's data: a single task shared by every item.
#[derive(Debug, Clone)]
pub struct PretrainBatch {
    pub task: TaskKind,
    pub items: Vec<(ContextMap, MaskSpec)>,
    /// Source pool index of each item.
    pub sources: Vec<usize>,
}

/// Draws a task from `tasks`, then `batch` items, each from a source chosen by
/// the mix weights and with its own mask of that task. Empty masks are redrawn.
pub fn build_pretrain_batch<R: Rng + ?Sized>(
    sources: &PretrainSources,
    tasks: &[TaskKind],
    ranges: &MaskRanges,
    sampler: &ContextSampler,
    batch: usize,
    rng: &mut R,
) -> Result<PretrainBatch, MaskError> {
    if tasks.is_empty() {
        return Err(MaskError::Config("no pretraining task enabled".into()));
    }
    let task = sample_task_from(tasks, rng);
    let grid = sampler.grid();
    let mut items = Vec::with_capacity(batch);
    let mut src = Vec::with_capacity(batch);
    for _ in 0..batch {
        let (s, map) = sources.draw_map(rng);
        let ctx = sample_context(map, sampler, rng)?;
        let mut mask = sample_mask(task, grid, ranges, rng)?;
        let mut tries = 0;
        while mask.masked.is_empty() {
            tries += 1;
            if tries > 100 {
                return Err(MaskError::Config(format!(
                    "task {task} keeps producing empty masks on a {}x{} patch grid",
                    grid.0, grid.1
                )));
            }
            mask = sample_mask(task, grid, ranges, rng)?;
        }
        items.push((ctx, mask));
        src.push(s);
    }
    Ok(PretrainBatch {
        task,
        items,
        sources: src,
    })
}
