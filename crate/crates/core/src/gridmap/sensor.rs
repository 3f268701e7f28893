use super::{BeliefMap, Cell, CellPos, OccupancyGrid, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorCfg {
    pub range_m: f64,
    pub n_rays: usize,
}

impl Default for SensorCfg {
    fn default() -> Self {
        Self {
            range_m: 5.0,
            n_rays: 360,
        }
    }
}

/// Observed cells, each listed once, ordered by grid index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanResult {
    pub cells: Vec<(CellPos, Cell)>,
}

impl ScanResult {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

const TIE_EPS: f64 = 1e-9;

/// Walks the cells pierced by a ray (grid units), calling `visit(cell, entry_t)`
/// until it returns `false` or the ray leaves the grid. Exact corner crossings step
/// diagonally.
pub(crate) fn trace_ray(
    width: usize,
    height: usize,
    ox: f64,
    oy: f64,
    dx: f64,
    dy: f64,
    mut visit: impl FnMut(CellPos, f64) -> bool,
) {
    let mut ix = ox.floor() as isize;
    let mut iy = oy.floor() as isize;
    let step_x: isize = if dx > 0.0 { 1 } else { -1 };
    let step_y: isize = if dy > 0.0 { 1 } else { -1 };
    let inf = f64::INFINITY;
    let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { inf };
    let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { inf };
    let mut t_max_x = if dx > 0.0 {
        (ix as f64 + 1.0 - ox) / dx
    } else if dx < 0.0 {
        (ox - ix as f64) / -dx
    } else {
        inf
    };
    let mut t_max_y = if dy > 0.0 {
        (iy as f64 + 1.0 - oy) / dy
    } else if dy < 0.0 {
        (oy - iy as f64) / -dy
    } else {
        inf
    };
    let mut t = 0.0;
    loop {
        if ix < 0 || iy < 0 || ix as usize >= width || iy as usize >= height {
            return;
        }
        if !visit(CellPos::new(ix as usize, iy as usize), t) {
            return;
        }
        if (t_max_x - t_max_y).abs() < TIE_EPS {
            t = t_max_x;
            ix += step_x;
            iy += step_y;
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
        } else if t_max_x < t_max_y {
            t = t_max_x;
            ix += step_x;
            t_max_x += t_delta_x;
        } else {
            t = t_max_y;
            iy += step_y;
            t_max_y += t_delta_y;
        }
        if !t.is_finite() {
            return;
        }
    }
}

/// Casts `n_rays` evenly spaced rays from `pose`. Cells whose entry distance along a
/// ray is below `range_m` are reported FREE up to the first OCCUPIED cell, which is
/// reported OCCUPIED; cells beyond it are not reported.
pub fn raycast_scan(grid: &OccupancyGrid, pose: Pose, sensor: SensorCfg) -> ScanResult {
    let geom = grid.geometry();
    if sensor.range_m <= 0.0 || sensor.n_rays == 0 {
        return ScanResult::default();
    }
    let ox = (pose.x - geom.origin.0) / geom.resolution;
    let oy = (pose.y - geom.origin.1) / geom.resolution;
    let range = sensor.range_m / geom.resolution;
    let mut seen = vec![false; geom.width * geom.height];
    let mut cells = Vec::new();
    for k in 0..sensor.n_rays {
        let theta = std::f64::consts::TAU * k as f64 / sensor.n_rays as f64;
        let (dy, dx) = theta.sin_cos();
        trace_ray(geom.width, geom.height, ox, oy, dx, dy, |c, t| {
            if t >= range {
                return false;
            }
            let state = grid.get(c);
            let i = geom.index(c);
            if !seen[i] {
                seen[i] = true;
                cells.push((c, state));
            }
            state == Cell::Free
        });
    }
    cells.sort_by_key(|(c, _)| geom.index(*c));
    ScanResult { cells }
}

/// Writes observed states into UNKNOWN belief cells; known cells never flip.
pub fn fuse_scan(belief: &mut BeliefMap, scan: &ScanResult) {
    for (c, state) in &scan.cells {
        belief.observe(*c, *state);
    }
}
