//! Patch-grid masking patterns for the three self-supervised tasks and
//! pretraining batch assembly.
//!
//! Patch indices are row-major over a `(rows, cols)` grid; distances between
//! patches are measured between patch centers in patch units.

mod batch;

pub use batch::{
    build_pretrain_batch, sample_context, ContextSampler, MapPool, PretrainBatch, PretrainMixCfg,
    PretrainSources,
};

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] crate::gridmap::GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    Spm,
    Fov,
    Mae,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Spm, TaskKind::Fov, TaskKind::Mae];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Spm => "spm",
            Self::Fov => "fov",
            Self::Mae => "mae",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = MaskError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spm" => Ok(Self::Spm),
            "fov" => Ok(Self::Fov),
            "mae" => Ok(Self::Mae),
            other => Err(MaskError::Argument(format!("unknown task '{other}'"))),
        }
    }
}

/// Parses a comma-separated task list such as `spm,mae`.
pub fn parse_task_list(s: &str) -> Result<Vec<TaskKind>, MaskError> {
    let mut out: Vec<TaskKind> = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let t: TaskKind = part.parse()?;
        if !out.contains(&t) {
            out.push(t);
        }
    }
    if out.is_empty() {
        return Err(MaskError::Argument("empty task list".into()));
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskParams {
    None,
    Spm { rho: f64, smoothness: f64 },
    Fov { rho_fov: f64, rho_expand: f64, center: usize, r_fov: f64, r_expand: f64 },
    Mae { ratio: f64 },
}

/// A masking pattern over a patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub task: Option<TaskKind>,
    pub grid: (usize, usize),
    /// Sorted, distinct patch indices to reconstruct.
    pub masked: Vec<usize>,
    /// FOV only: the visible core.
    pub core: Vec<usize>,
    pub params: MaskParams,
}

impl MaskSpec {
    /// No masking: every patch visible.
    pub fn none(grid: (usize, usize)) -> Self {
        Self {
            task: None,
            grid,
            masked: Vec::new(),
            core: Vec::new(),
            params: MaskParams::None,
        }
    }

    pub fn n(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked.binary_search(&i).is_ok()
    }

    /// Patch indices fed to the encoder, in increasing order: all patches for
    /// SPM / unmasked, core plus ring for FOV, the unmasked patches for MAE.
    pub fn encoder_positions(&self) -> Vec<usize> {
        match self.task {
            None | Some(TaskKind::Spm) => (0..self.n()).collect(),
            Some(TaskKind::Fov) => {
                let mut v: Vec<usize> = self.core.iter().chain(&self.masked).copied().collect();
                v.sort_unstable();
                v
            }
            Some(TaskKind::Mae) => (0..self.n()).filter(|i| !self.is_masked(*i)).collect(),
        }
    }

    /// Checks index ranges against `n` patches.
    pub fn validate(&self, n: usize) -> Result<(), MaskError> {
        if self.n() != n {
            return Err(MaskError::Argument(format!(
                "mask grid {}x{} does not match {n} patches",
                self.grid.0, self.grid.1
            )));
        }
        if let Some(&bad) = self.masked.iter().chain(&self.core).find(|&&i| i >= n) {
            return Err(MaskError::Argument(format!("patch index {bad} out of range {n}")));
        }
        Ok(())
    }
}

/// 8 unit moves on the patch grid.
const DIRS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Stochastic path masking: a persistence-controlled random walk of
/// `floor(rho * N)` steps. The start patch is step 1; revisits count as steps.
pub fn spm_mask<R: Rng + ?Sized>(
    grid: (usize, usize),
    rho: f64,
    smoothness: f64,
    rng: &mut R,
) -> Result<MaskSpec, MaskError> {
    let (rows, cols) = grid;
    let n = rows * cols;
    if n == 0 {
        return Err(MaskError::Argument("empty patch grid".into()));
    }
    if !(0.0..=1.0).contains(&rho) || !(0.0..=1.0).contains(&smoothness) {
        return Err(MaskError::Argument(format!("spm rho {rho} / s {smoothness} outside [0, 1]")));
    }
    let steps = (rho * n as f64).floor() as usize;
    let mut hit = vec![false; n];
    if steps > 0 {
        let (mut r, mut c) = (rng.random_range(0..rows), rng.random_range(0..cols));
        hit[r * cols + c] = true;
        let mut dir: Option<(isize, isize)> = None;
        let inside = |r: usize, c: usize, (dr, dc): (isize, isize)| {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols
        };
        for _ in 1..steps {
            let keep = dir.filter(|_| rng.random::<f64>() < smoothness);
            let d = match keep.filter(|d| inside(r, c, *d)) {
                Some(d) => d,
                None => {
                    // uniform over the 8 directions, re-drawing moves that leave the grid
                    let valid: Vec<(isize, isize)> =
                        DIRS.iter().copied().filter(|d| inside(r, c, *d)).collect();
                    if valid.is_empty() {
                        break;
                    }
                    valid[rng.random_range(0..valid.len())]
                }
            };
            r = (r as isize + d.0) as usize;
            c = (c as isize + d.1) as usize;
            hit[r * cols + c] = true;
            dir = Some(d);
        }
    }
    Ok(MaskSpec {
        task: Some(TaskKind::Spm),
        grid,
        masked: (0..n).filter(|&i| hit[i]).collect(),
        core: Vec::new(),
        params: MaskParams::Spm { rho, smoothness },
    })
}

/// FOV radii in patch units for `n` patches.
pub fn fov_radii(n: usize, rho_fov: f64, rho_expand: f64) -> (f64, f64) {
    let pi = std::f64::consts::PI;
    (
        (rho_fov * n as f64 / pi).sqrt(),
        ((rho_fov + rho_expand) * n as f64 / pi).sqrt(),
    )
}

/// FOV prediction mask around a uniformly random center patch.
pub fn fov_mask<R: Rng + ?Sized>(
    grid: (usize, usize),
    rho_fov: f64,
    rho_expand: f64,
    rng: &mut R,
) -> Result<MaskSpec, MaskError> {
    let n = grid.0 * grid.1;
    if n == 0 {
        return Err(MaskError::Argument("empty patch grid".into()));
    }
    let center = rng.random_range(0..n);
    fov_mask_at(grid, rho_fov, rho_expand, center)
}

/// FOV mask with a given center: the core (distance <= r_fov) stays visible and
/// the ring (r_fov < distance <= r_expand) is masked.
pub fn fov_mask_at(
    grid: (usize, usize),
    rho_fov: f64,
    rho_expand: f64,
    center: usize,
) -> Result<MaskSpec, MaskError> {
    let (rows, cols) = grid;
    let n = rows * cols;
    if !(rho_fov > 0.0 && rho_fov.is_finite()) || !(rho_expand >= 0.0 && rho_expand.is_finite()) {
        return Err(MaskError::Argument(format!(
            "fov rho {rho_fov} / expand {rho_expand} out of range"
        )));
    }
    if center >= n {
        return Err(MaskError::Argument(format!("fov center {center} out of range {n}")));
    }
    let (r_fov, r_expand) = fov_radii(n, rho_fov, rho_expand);
    let (cr, cc) = ((center / cols) as f64, (center % cols) as f64);
    let mut core = Vec::new();
    let mut ring = Vec::new();
    for i in 0..n {
        let (r, c) = ((i / cols) as f64, (i % cols) as f64);
        let d = ((r - cr).powi(2) + (c - cc).powi(2)).sqrt();
        if d <= r_fov {
            core.push(i);
        } else if d <= r_expand {
            ring.push(i);
        }
    }
    Ok(MaskSpec {
        task: Some(TaskKind::Fov),
        grid,
        masked: ring,
        core,
        params: MaskParams::Fov {
            rho_fov,
            rho_expand,
            center,
            r_fov,
            r_expand,
        },
    })
}

/// Uniform random subset of `floor(ratio * N)` patches.
pub fn mae_mask<R: Rng + ?Sized>(
    grid: (usize, usize),
    ratio: f64,
    rng: &mut R,
) -> Result<MaskSpec, MaskError> {
    let n = grid.0 * grid.1;
    if !(0.0..=1.0).contains(&ratio) {
        return Err(MaskError::Argument(format!("mae ratio {ratio} outside [0, 1]")));
    }
    let k = (ratio * n as f64).floor() as usize;
    let mut masked = index::sample(rng, n, k).into_vec();
    masked.sort_unstable();
    Ok(MaskSpec {
        task: Some(TaskKind::Mae),
        grid,
        masked,
        core: Vec::new(),
        params: MaskParams::Mae { ratio },
    })
}

/// Uniform draw over the given tasks (all three by default).
pub fn sample_task<R: Rng + ?Sized>(rng: &mut R) -> TaskKind {
    TaskKind::ALL[rng.random_range(0..3)]
}

pub fn sample_task_from<R: Rng + ?Sized>(tasks: &[TaskKind], rng: &mut R) -> TaskKind {
    tasks[rng.random_range(0..tasks.len())]
}

/// Parameter ranges drawn per mask during pretraining.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskRanges {
    pub spm_rho: (f64, f64),
    pub spm_smoothness: (f64, f64),
    pub fov_rho: (f64, f64),
    pub fov_expand: (f64, f64),
    pub mae_ratio: f64,
}

impl Default for MaskRanges {
    fn default() -> Self {
        Self {
            spm_rho: (0.2, 0.6),
            spm_smoothness: (0.5, 0.95),
            fov_rho: (0.05, 0.2),
            fov_expand: (0.05, 0.15),
            mae_ratio: 0.75,
        }
    }
}

fn uniform<R: Rng + ?Sized>((lo, hi): (f64, f64), rng: &mut R) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws one mask of `task` with parameters from `ranges`.
pub fn sample_mask<R: Rng + ?Sized>(
    task: TaskKind,
    grid: (usize, usize),
    ranges: &MaskRanges,
    rng: &mut R,
) -> Result<MaskSpec, MaskError> {
    match task {
        TaskKind::Spm => {
            let rho = uniform(ranges.spm_rho, rng);
            let s = uniform(ranges.spm_smoothness, rng);
            spm_mask(grid, rho, s, rng)
        }
        TaskKind::Fov => {
            let rf = uniform(ranges.fov_rho, rng);
            let re = uniform(ranges.fov_expand, rng);
            fov_mask(grid, rf, re, rng)
        }
        TaskKind::Mae => mae_mask(grid, ranges.mae_ratio, rng),
    }
}
