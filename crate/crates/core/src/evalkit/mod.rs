//! Episode runner, Success Rate / SPL metrics, classical baselines, difficulty
//! suites and report files.

mod actors;
mod report;
mod runner;

pub use actors::{
    nearest_frontier_choice, Actor, ActorKind, Decision, FarthestActor, NearestFrontierActor,
    OracleActor, PolicyActor, RandomActor,
};
pub use report::{emit_report, overlay_pixels, read_episodes_csv, CsvRow, ReportFiles, SummaryRow};
pub use runner::{evaluate, run_episode, EpisodeRecord};

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gridmap::{
    counts_to_meters, generate_map, move_allowed, CellPos, GridError, MapSpec, MapStyle,
    OccupancyGrid, Pose, NEIGHBORS8,
};
use crate::navenv::{sample_start_goal, NavError, Outcome};
use crate::policy::PolicyError;
use crate::rng::substream;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Easy,
    Medium,
    Hard,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Easy, Level::Medium, Level::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Easy => "easy",
            Level::Medium => "medium",
            Level::Hard => "hard",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "easy" => Ok(Level::Easy),
            "medium" => Ok(Level::Medium),
            "hard" => Ok(Level::Hard),
            other => Err(EvalError::Argument(format!("unknown level '{other}'"))),
        }
    }
}

/// Which pool of maps an episode is drawn from. Training and test maps never share
/// a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Map family and start/goal distance band of one difficulty level.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultySpec {
    pub level: Level,
    pub size_m: f64,
    pub density: f64,
    pub lstar_min_m: f64,
    pub lstar_max_m: f64,
    pub styles: Vec<MapStyle>,
    pub resolution: f64,
}

/// One reproducible episode setup.
#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    pub id: usize,
    pub map: Arc<OccupancyGrid>,
    pub style: MapStyle,
    pub start: Pose,
    pub goal: Pose,
    pub env_seed: u64,
}

impl DifficultySpec {
    pub fn for_level(level: Level) -> Self {
        let (size_m, density, lo, hi) = match level {
            Level::Easy => (12.8, 0.1, 3.0, 8.0),
            Level::Medium => (25.6, 0.2, 8.0, 18.0),
            Level::Hard => (38.4, 0.3, 18.0, 35.0),
        };
        Self {
            level,
            size_m,
            density,
            lstar_min_m: lo,
            lstar_max_m: hi,
            styles: vec![MapStyle::Rooms, MapStyle::Cluttered],
            resolution: 0.1,
        }
    }

    /// Cells per map side.
    pub fn cells(&self) -> usize {
        (self.size_m / self.resolution).round() as usize
    }

    /// Episode `id` of `split`. A map without a start/goal pair in the distance
    /// band is replaced by the next one drawn from the same stream.
    pub fn episode(&self, seed: u64, split: Split, id: usize) -> Result<EpisodeSpec, EvalError> {
        if self.styles.is_empty() {
            return Err(EvalError::Argument("difficulty has no map style".into()));
        }
        let stream = match split {
            Split::Train => 0,
            Split::Test => 1u64 << 40,
        } | ((self.level as u64) << 36)
            | id as u64;
        let mut rng = substream(seed, stream);
        for _ in 0..16 {
            let style = self.styles[rng.random_range(0..self.styles.len())];
            let mut spec = MapSpec::new(self.cells(), style, self.density, rng.random());
            spec.resolution = self.resolution;
            let map = match generate_map(&spec) {
                Ok(m) => m,
                Err(GridError::Generation(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            match sample_start_goal(&map, (self.lstar_min_m, self.lstar_max_m), &mut rng) {
                Ok((start, goal)) => {
                    return Ok(EpisodeSpec {
                        id,
                        map: Arc::new(map),
                        style,
                        start,
                        goal,
                        env_seed: rng.random(),
                    })
                }
                Err(NavError::Setup(_)) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Err(EvalError::Argument(format!(
            "no usable {} map for episode {id} after 16 draws",
            self.level
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    /// Percent.
    pub sr: f64,
    /// Percent.
    pub spl: f64,
}

/// `SR = 100 * successes / M`, `SPL = 100 / M * sum S_i * l*_i / max(p_i, l*_i)`.
pub fn compute_sr_spl(records: &[EpisodeRecord]) -> Result<Metrics, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Argument("no episodes".into()));
    }
    let m = records.len() as f64;
    let wins = records.iter().filter(|r| r.outcome == Outcome::Success).count() as f64;
    let spl: f64 = records.iter().map(EpisodeRecord::spl_term).sum();
    Ok(Metrics {
        episodes: records.len(),
        sr: 100.0 * wins / m,
        spl: 100.0 * spl / m,
    })
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    g: f64,
    index: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&other.g))
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Ground-truth shortest path length in meters by A* with the octile heuristic,
/// over the same 8-connected move rules as the distance fields.
pub fn oracle_astar(map: &OccupancyGrid, start: Pose, goal: Pose) -> Result<f64, EvalError> {
    let s = map.validate_pose(start)?;
    let t = map.validate_pose(goal)?;
    let geom = *map.geometry();
    let h = |c: CellPos| {
        let dx = c.x.abs_diff(t.x) as u32;
        let dy = c.y.abs_diff(t.y) as u32;
        counts_to_meters((dx.max(dy) - dx.min(dy), dx.min(dy)), 1.0)
    };
    let n = geom.width * geom.height;
    let mut best: Vec<Option<(u32, u32)>> = vec![None; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    best[geom.index(s)] = Some((0, 0));
    heap.push(Open {
        f: h(s),
        g: 0.0,
        index: geom.index(s),
    });
    while let Some(Open { index, .. }) = heap.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        let c = geom.pos(index);
        let (a, b) = best[index].expect("opened cells have a cost");
        if c == t {
            return Ok(counts_to_meters((a, b), geom.resolution));
        }
        for &(dx, dy) in &NEIGHBORS8 {
            if !move_allowed(map, c, dx, dy) {
                continue;
            }
            let nb = CellPos::new((c.x as isize + dx) as usize, (c.y as isize + dy) as usize);
            let ni = geom.index(nb);
            if closed[ni] {
                continue;
            }
            let cand = if dx != 0 && dy != 0 { (a, b + 1) } else { (a + 1, b) };
            let g = counts_to_meters(cand, 1.0);
            if best[ni].is_none_or(|old| g < counts_to_meters(old, 1.0)) {
                best[ni] = Some(cand);
                heap.push(Open {
                    f: g + h(nb),
                    g,
                    index: ni,
                });
            }
        }
    }
    Err(EvalError::Argument(format!("goal {t} unreachable from {s}")))
}

#[cfg(test)]
mod tests;
