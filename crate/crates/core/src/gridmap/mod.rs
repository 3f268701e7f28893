//! Ground-truth occupancy grids, simulated range sensing, belief fusion, frontier
//! detection, geodesic distance fields, context crops and map file I/O.
//!
//! Grid coordinates: cell `(x, y)` covers the world rectangle
//! `[origin + x*res, origin + (x+1)*res) x [origin + y*res, origin + (y+1)*res)`.
//! Row `y = 0` is stored (and written to PGM) first.

mod context;
mod frontier;
mod generate;
mod geodesic;
mod io;
mod sensor;

pub use context::{
    crop_context, encode_cell, ContextMap, FREE_VALUE, OCCUPIED_VALUE, UNKNOWN_VALUE,
};
pub use frontier::{detect_frontiers, is_frontier};
pub use generate::{generate_map, MapSpec, MapStyle};
pub use geodesic::{
    counts_to_meters, geodesic_field, move_allowed, multi_source_field, DistanceField, Walkable,
};
pub use io::{
    load_map, meta_path, read_pgm, save_belief_pgm, save_map, write_pgm, MapMeta, PGM_FREE,
    PGM_OCCUPIED, PGM_UNKNOWN,
};
pub use sensor::{fuse_scan, raycast_scan, ScanResult, SensorCfg};
pub(crate) use sensor::trace_ray;

use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("map generation failed: {0}")]
    Generation(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("map format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Cell {
    Free = 0,
    Occupied = 1,
    Unknown = 2,
}

/// Integer cell coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellPos {
    pub x: usize,
    pub y: usize,
}

impl CellPos {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Euclidean distance in cells.
    pub fn dist(self, other: CellPos) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        (dx * dx + dy * dy).sqrt()
    }
}

impl fmt::Display for CellPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// World position in meters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Pose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Shared dimensions and world placement of a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: (f64, f64),
}

impl GridGeometry {
    pub fn contains(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn index(&self, c: CellPos) -> usize {
        c.y * self.width + c.x
    }

    pub fn pos(&self, index: usize) -> CellPos {
        CellPos::new(index % self.width, index / self.width)
    }

    pub fn cell_of(&self, p: Pose) -> Option<CellPos> {
        let fx = ((p.x - self.origin.0) / self.resolution).floor();
        let fy = ((p.y - self.origin.1) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (x, y) = (fx as usize, fy as usize);
        (x < self.width && y < self.height).then_some(CellPos::new(x, y))
    }

    pub fn center_of(&self, c: CellPos) -> Pose {
        Pose::new(
            self.origin.0 + (c.x as f64 + 0.5) * self.resolution,
            self.origin.1 + (c.y as f64 + 0.5) * self.resolution,
        )
    }
}

/// Ground-truth map: every cell FREE or OCCUPIED, boundary ring OCCUPIED.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    geom: GridGeometry,
    cells: Vec<Cell>,
}

impl OccupancyGrid {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        cells: Vec<Cell>,
    ) -> Result<Self, GridError> {
        if width < 3 || height < 3 {
            return Err(GridError::Argument(format!(
                "grid {width}x{height} too small for a closed boundary"
            )));
        }
        if width * height != cells.len() {
            return Err(GridError::Argument(format!(
                "{} cells for a {width}x{height} grid",
                cells.len()
            )));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(GridError::Argument(format!("resolution {resolution}")));
        }
        if cells.contains(&Cell::Unknown) {
            return Err(GridError::Argument("ground truth cannot contain UNKNOWN".into()));
        }
        let grid = Self {
            geom: GridGeometry {
                width,
                height,
                resolution,
                origin: (0.0, 0.0),
            },
            cells,
        };
        for x in 0..width {
            for y in [0, height - 1] {
                if grid.get(CellPos::new(x, y)) != Cell::Occupied {
                    return Err(GridError::Argument("boundary ring must be OCCUPIED".into()));
                }
            }
        }
        for y in 0..height {
            for x in [0, width - 1] {
                if grid.get(CellPos::new(x, y)) != Cell::Occupied {
                    return Err(GridError::Argument("boundary ring must be OCCUPIED".into()));
                }
            }
        }
        Ok(grid)
    }

    /// Free interior with an occupied boundary ring.
    pub fn empty_room(width: usize, height: usize, resolution: f64) -> Self {
        let mut cells = vec![Cell::Free; width * height];
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x == width - 1 || y == height - 1 {
                    cells[y * width + x] = Cell::Occupied;
                }
            }
        }
        Self::new(width, height, resolution, cells).expect("valid empty room")
    }

    /// Builds a grid from ASCII art (`#` occupied, anything else free); first line is `y = 0`.
    pub fn from_ascii(rows: &[&str], resolution: f64) -> Result<Self, GridError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut cells = Vec::with_capacity(width * height);
        for r in rows {
            if r.chars().count() != width {
                return Err(GridError::Argument("ragged ascii map".into()));
            }
            cells.extend(r.chars().map(|c| if c == '#' { Cell::Occupied } else { Cell::Free }));
        }
        Self::new(width, height, resolution, cells)
    }

    pub fn with_origin(mut self, origin: (f64, f64)) -> Self {
        self.geom.origin = origin;
        self
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    pub fn width(&self) -> usize {
        self.geom.width
    }

    pub fn height(&self) -> usize {
        self.geom.height
    }

    pub fn resolution(&self) -> f64 {
        self.geom.resolution
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn get(&self, c: CellPos) -> Cell {
        self.cells[self.geom.index(c)]
    }

    pub fn is_free(&self, c: CellPos) -> bool {
        self.get(c) == Cell::Free
    }

    pub fn free_cells(&self) -> impl Iterator<Item = CellPos> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == Cell::Free)
            .map(|(i, _)| self.geom.pos(i))
    }

    /// A pose is valid when it lies in the grid on a FREE cell.
    pub fn validate_pose(&self, p: Pose) -> Result<CellPos, GridError> {
        let c = self
            .geom
            .cell_of(p)
            .ok_or_else(|| GridError::Argument(format!("pose ({}, {}) outside grid", p.x, p.y)))?;
        if !self.is_free(c) {
            return Err(GridError::Argument(format!("pose cell {c} is not FREE")));
        }
        Ok(c)
    }
}

/// Agent-known map: FREE / OCCUPIED only where some scan observed the cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefMap {
    geom: GridGeometry,
    cells: Vec<Cell>,
}

impl BeliefMap {
    pub fn unknown_like(grid: &OccupancyGrid) -> Self {
        Self::unknown(*grid.geometry())
    }

    pub fn unknown(geom: GridGeometry) -> Self {
        Self {
            cells: vec![Cell::Unknown; geom.width * geom.height],
            geom,
        }
    }

    /// Belief identical to ground truth (a fully explored map).
    pub fn fully_known(grid: &OccupancyGrid) -> Self {
        Self {
            geom: *grid.geometry(),
            cells: grid.cells().to_vec(),
        }
    }

    pub fn from_cells(geom: GridGeometry, cells: Vec<Cell>) -> Result<Self, GridError> {
        if cells.len() != geom.width * geom.height {
            return Err(GridError::Argument("belief cell count mismatch".into()));
        }
        Ok(Self { geom, cells })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    pub fn width(&self) -> usize {
        self.geom.width
    }

    pub fn height(&self) -> usize {
        self.geom.height
    }

    pub fn resolution(&self) -> f64 {
        self.geom.resolution
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn get(&self, c: CellPos) -> Cell {
        self.cells[self.geom.index(c)]
    }

    /// Cell state with out-of-grid reads treated as UNKNOWN.
    pub fn get_signed(&self, x: isize, y: isize) -> Cell {
        if self.geom.contains(x, y) {
            self.cells[y as usize * self.geom.width + x as usize]
        } else {
            Cell::Unknown
        }
    }

    pub fn is_free(&self, c: CellPos) -> bool {
        self.get(c) == Cell::Free
    }

    pub fn known_count(&self) -> usize {
        self.cells.iter().filter(|c| **c != Cell::Unknown).count()
    }

    /// Records an observation. Known cells never change; returns whether it was new.
    pub fn observe(&mut self, c: CellPos, state: Cell) -> bool {
        let i = self.geom.index(c);
        if self.cells[i] == Cell::Unknown && state != Cell::Unknown {
            self.cells[i] = state;
            true
        } else {
            false
        }
    }
}

/// The 8-neighborhood offsets, straight moves first.
pub const NEIGHBORS8: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];
