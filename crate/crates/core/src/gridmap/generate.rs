use std::collections::VecDeque;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Cell, CellPos, GridError, OccupancyGrid, NEIGHBORS8};
use crate::rng::{seeded, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapStyle {
    Rooms,
    Maze,
    Cluttered,
}

impl FromStr for MapStyle {
    type Err = GridError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rooms" => Ok(Self::Rooms),
            "maze" => Ok(Self::Maze),
            "cluttered" => Ok(Self::Cluttered),
            other => Err(GridError::Argument(format!("unknown map style '{other}'"))),
        }
    }
}

impl MapStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rooms => "rooms",
            Self::Maze => "maze",
            Self::Cluttered => "cluttered",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapSpec {
    /// Cells per side.
    pub size: usize,
    pub style: MapStyle,
    /// Fraction of the structural free space covered by random clutter.
    pub density: f64,
    pub seed: u64,
    pub resolution: f64,
}

impl MapSpec {
    pub fn new(size: usize, style: MapStyle, density: f64, seed: u64) -> Self {
        Self {
            size,
            style,
            density,
            seed,
            resolution: 0.1,
        }
    }
}

/// Minimum free fraction of the interior for a usable map.
const MIN_FREE_FRACTION: f64 = 0.05;

/// Procedural square map with a single connected free region.
pub fn generate_map(spec: &MapSpec) -> Result<OccupancyGrid, GridError> {
    let n = spec.size;
    if n < 32 {
        return Err(GridError::Argument(format!("map size {n} < 32")));
    }
    if !(0.0..=1.0).contains(&spec.density) {
        return Err(GridError::Argument(format!("density {} outside [0, 1]", spec.density)));
    }
    let mut rng = seeded(spec.seed);
    let mut cells = vec![Cell::Occupied; n * n];
    match spec.style {
        MapStyle::Cluttered => fill_interior(&mut cells, n),
        MapStyle::Rooms => {
            fill_interior(&mut cells, n);
            let min_room = (n / 6).max(6);
            let door = (n / 16).clamp(3, 10);
            divide(&mut cells, n, (1, 1, n - 2, n - 2), min_room, door, &mut rng);
        }
        MapStyle::Maze => carve_maze(&mut cells, n, &mut rng),
    }
    add_clutter(&mut cells, n, spec.density, &mut rng);
    keep_largest_component(&mut cells, n);
    let free = cells.iter().filter(|c| **c == Cell::Free).count();
    let frac = free as f64 / ((n - 2) * (n - 2)) as f64;
    if frac < MIN_FREE_FRACTION {
        return Err(GridError::Generation(format!(
            "free fraction {frac:.3} below {MIN_FREE_FRACTION}"
        )));
    }
    OccupancyGrid::new(n, n, spec.resolution, cells)
}

fn fill_interior(cells: &mut [Cell], n: usize) {
    for y in 1..n - 1 {
        for x in 1..n - 1 {
            cells[y * n + x] = Cell::Free;
        }
    }
}

/// Recursive division of the inclusive region `(x0, y0, x1, y1)` by one-cell walls
/// with a `door`-wide gap each.
fn divide(
    cells: &mut [Cell],
    n: usize,
    (x0, y0, x1, y1): (usize, usize, usize, usize),
    min_room: usize,
    door: usize,
    rng: &mut SimRng,
) {
    let w = x1 + 1 - x0;
    let h = y1 + 1 - y0;
    let can_v = w > 2 * min_room;
    let can_h = h > 2 * min_room;
    if !can_v && !can_h {
        return;
    }
    let vertical = if can_v && can_h { w >= h } else { can_v };
    if vertical {
        let x = rng.random_range(x0 + min_room..=x1 - min_room);
        let gap = rng.random_range(y0..=y1 + 1 - door.min(h));
        for y in y0..=y1 {
            if y < gap || y >= gap + door {
                cells[y * n + x] = Cell::Occupied;
            }
        }
        divide(cells, n, (x0, y0, x - 1, y1), min_room, door, rng);
        divide(cells, n, (x + 1, y0, x1, y1), min_room, door, rng);
    } else {
        let y = rng.random_range(y0 + min_room..=y1 - min_room);
        let gap = rng.random_range(x0..=x1 + 1 - door.min(w));
        for x in x0..=x1 {
            if x < gap || x >= gap + door {
                cells[y * n + x] = Cell::Occupied;
            }
        }
        divide(cells, n, (x0, y0, x1, y - 1), min_room, door, rng);
        divide(cells, n, (x0, y + 1, x1, y1), min_room, door, rng);
    }
}

/// Depth-first backtracker over a lattice of `cw`-wide corridor blocks separated by
/// one-cell walls.
fn carve_maze(cells: &mut [Cell], n: usize, rng: &mut SimRng) {
    let cw = (n / 16).max(2);
    let pitch = cw + 1;
    let m = (n - 2 - cw) / pitch + 1;
    let block = |cells: &mut [Cell], bx: usize, by: usize| {
        let (ox, oy) = (1 + bx * pitch, 1 + by * pitch);
        for y in oy..oy + cw {
            for x in ox..ox + cw {
                cells[y * n + x] = Cell::Free;
            }
        }
    };
    let mut seen = vec![false; m * m];
    let start = (rng.random_range(0..m), rng.random_range(0..m));
    seen[start.1 * m + start.0] = true;
    block(cells, start.0, start.1);
    let mut stack = vec![start];
    while let Some(&(bx, by)) = stack.last() {
        let mut options = Vec::with_capacity(4);
        for (dx, dy) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (bx as isize + dx, by as isize + dy);
            if nx >= 0 && ny >= 0 && (nx as usize) < m && (ny as usize) < m {
                let (nx, ny) = (nx as usize, ny as usize);
                if !seen[ny * m + nx] {
                    options.push((nx, ny));
                }
            }
        }
        if options.is_empty() {
            stack.pop();
            continue;
        }
        let (nx, ny) = options[rng.random_range(0..options.len())];
        seen[ny * m + nx] = true;
        block(cells, nx, ny);
        // open the wall between the two blocks
        if nx != bx {
            let wx = 1 + bx.min(nx) * pitch + cw;
            let oy = 1 + by * pitch;
            for y in oy..oy + cw {
                cells[y * n + wx] = Cell::Free;
            }
        } else {
            let wy = 1 + by.min(ny) * pitch + cw;
            let ox = 1 + bx * pitch;
            for x in ox..ox + cw {
                cells[wy * n + x] = Cell::Free;
            }
        }
        stack.push((nx, ny));
    }
}

/// Covers `round(density * free)` free interior cells with random rectangles,
/// topping up with single cells when the rectangle budget runs out.
fn add_clutter(cells: &mut [Cell], n: usize, density: f64, rng: &mut SimRng) {
    let free = cells.iter().filter(|c| **c == Cell::Free).count();
    let target = (density * free as f64).round() as usize;
    if target == 0 {
        return;
    }
    let max_side = (n / 20).max(2);
    let mut covered = 0;
    let mut attempts = 20 * target + 100;
    while covered < target && attempts > 0 {
        attempts -= 1;
        let w = rng.random_range(1..=max_side);
        let h = rng.random_range(1..=max_side);
        let x0 = rng.random_range(1..n - 1);
        let y0 = rng.random_range(1..n - 1);
        'rect: for y in y0..(y0 + h).min(n - 1) {
            for x in x0..(x0 + w).min(n - 1) {
                if covered == target {
                    break 'rect;
                }
                if cells[y * n + x] == Cell::Free {
                    cells[y * n + x] = Cell::Occupied;
                    covered += 1;
                }
            }
        }
    }
    if covered < target {
        let mut rest: Vec<usize> = (0..cells.len()).filter(|&i| cells[i] == Cell::Free).collect();
        rest.shuffle(rng);
        for i in rest.into_iter().take(target - covered) {
            cells[i] = Cell::Occupied;
        }
    }
}

/// Turns every free cell outside the largest connected free region into obstacle.
/// Connectivity uses the same no-corner-cutting moves as the geodesic planner.
fn keep_largest_component(cells: &mut [Cell], n: usize) {
    let mut label = vec![usize::MAX; cells.len()];
    let mut best = (0usize, usize::MAX);
    let mut next = 0;
    let free = |cells: &[Cell], x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < n && (y as usize) < n && cells[y as usize * n + x as usize] == Cell::Free
    };
    for s in 0..cells.len() {
        if cells[s] != Cell::Free || label[s] != usize::MAX {
            continue;
        }
        let mut size = 0;
        let mut queue = VecDeque::from([s]);
        label[s] = next;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let c = CellPos::new(i % n, i / n);
            for &(dx, dy) in &NEIGHBORS8 {
                let (tx, ty) = (c.x as isize + dx, c.y as isize + dy);
                if !free(cells, tx, ty) {
                    continue;
                }
                if dx != 0 && dy != 0 && !(free(cells, tx, c.y as isize) && free(cells, c.x as isize, ty)) {
                    continue;
                }
                let t = ty as usize * n + tx as usize;
                if label[t] == usize::MAX {
                    label[t] = next;
                    queue.push_back(t);
                }
            }
        }
        if size > best.0 {
            best = (size, next);
        }
        next += 1;
    }
    for i in 0..cells.len() {
        if cells[i] == Cell::Free && label[i] != best.1 {
            cells[i] = Cell::Occupied;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain 8-connected flood fill over the raw cells (corner touching counts).
    fn flood8(grid: &OccupancyGrid, start: CellPos) -> Vec<bool> {
        let (w, h) = (grid.width(), grid.height());
        let mut seen = vec![false; w * h];
        let mut stack = vec![start];
        seen[start.y * w + start.x] = true;
        while let Some(c) = stack.pop() {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (x, y) = (c.x as isize + dx, c.y as isize + dy);
                    if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
                        continue;
                    }
                    let i = y as usize * w + x as usize;
                    if !seen[i] && grid.cells()[i] == Cell::Free {
                        seen[i] = true;
                        stack.push(CellPos::new(x as usize, y as usize));
                    }
                }
            }
        }
        seen
    }

    fn assert_connected(grid: &OccupancyGrid) {
        let start = grid.free_cells().next().expect("some free cell");
        let seen = flood8(grid, start);
        for c in grid.free_cells() {
            assert!(seen[c.y * grid.width() + c.x], "cell {c} disconnected");
        }
    }

    #[test]
    fn same_seed_same_map() {
        let spec = MapSpec::new(64, MapStyle::Rooms, 0.2, 7);
        assert_eq!(generate_map(&spec).unwrap(), generate_map(&spec).unwrap());
        let other = MapSpec { seed: 8, ..spec };
        assert_ne!(generate_map(&spec).unwrap(), generate_map(&other).unwrap());
    }

    #[test]
    fn maze_corridors_mutually_reachable() {
        let grid = generate_map(&MapSpec::new(32, MapStyle::Maze, 0.0, 1)).unwrap();
        assert_connected(&grid);
        // with zero clutter nothing is pruned: every carved block survives
        let free = grid.free_cells().count();
        assert!(free > 32 * 32 / 3, "free {free}");
    }

    #[test]
    fn degenerate_density_errors() {
        let r = generate_map(&MapSpec::new(32, MapStyle::Rooms, 0.99, 3));
        assert!(matches!(r, Err(GridError::Generation(_))));
    }

    #[test]
    fn all_styles_connected_with_closed_boundary() {
        for (i, style) in [MapStyle::Rooms, MapStyle::Maze, MapStyle::Cluttered].into_iter().enumerate() {
            for density in [0.0, 0.1, 0.3] {
                let grid = generate_map(&MapSpec::new(96, style, density, 40 + i as u64)).unwrap();
                assert_connected(&grid);
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_map(&MapSpec::new(31, MapStyle::Rooms, 0.1, 0)).is_err());
        assert!(generate_map(&MapSpec::new(64, MapStyle::Rooms, 1.5, 0)).is_err());
        assert!("hall".parse::<MapStyle>().is_err());
        assert_eq!("maze".parse::<MapStyle>().unwrap(), MapStyle::Maze);
    }
}
