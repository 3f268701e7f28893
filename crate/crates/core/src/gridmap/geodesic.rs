use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{BeliefMap, CellPos, GridError, GridGeometry, OccupancyGrid, NEIGHBORS8};

/// Something a geodesic can be computed over.
pub trait Walkable {
    fn geometry(&self) -> &GridGeometry;
    fn walkable(&self, c: CellPos) -> bool;
}

impl Walkable for OccupancyGrid {
    fn geometry(&self) -> &GridGeometry {
        OccupancyGrid::geometry(self)
    }
    fn walkable(&self, c: CellPos) -> bool {
        self.is_free(c)
    }
}

/// Only cells known to be FREE are walkable.
impl Walkable for BeliefMap {
    fn geometry(&self) -> &GridGeometry {
        BeliefMap::geometry(self)
    }
    fn walkable(&self, c: CellPos) -> bool {
        self.is_free(c)
    }
}

const NO_PARENT: u32 = u32::MAX;

/// Shortest 8-connected path lengths to a source set. Lengths are kept as exact
/// (straight, diagonal) move counts; meters are `res * (straight + diagonal * sqrt 2)`.
#[derive(Debug, Clone)]
pub struct DistanceField {
    geom: GridGeometry,
    counts: Vec<Option<(u32, u32)>>,
    parent: Vec<u32>,
}

impl DistanceField {
    pub fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    /// Distance in meters, `f64::INFINITY` when unreachable.
    pub fn get(&self, c: CellPos) -> f64 {
        match self.counts[self.geom.index(c)] {
            Some(k) => counts_to_meters(k, self.geom.resolution),
            None => f64::INFINITY,
        }
    }

    pub fn counts(&self, c: CellPos) -> Option<(u32, u32)> {
        self.counts[self.geom.index(c)]
    }

    pub fn is_reachable(&self, c: CellPos) -> bool {
        self.counts[self.geom.index(c)].is_some()
    }

    /// Optimal path from `c` to the nearest source, both ends included.
    pub fn path_from(&self, c: CellPos) -> Option<Vec<CellPos>> {
        self.counts(c)?;
        let mut path = vec![c];
        let mut i = self.geom.index(c);
        while self.parent[i] != NO_PARENT {
            i = self.parent[i] as usize;
            path.push(self.geom.pos(i));
        }
        Some(path)
    }
}

pub fn counts_to_meters((straight, diag): (u32, u32), res: f64) -> f64 {
    res * (straight as f64 + diag as f64 * std::f64::consts::SQRT_2)
}

#[derive(PartialEq)]
struct Entry {
    key: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on (key, index)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Whether the 8-neighbor move `from -> from + (dx, dy)` is legal: the target is
/// walkable and a diagonal does not squeeze between two blocked orthogonal cells.
pub fn move_allowed<W: Walkable + ?Sized>(map: &W, from: CellPos, dx: isize, dy: isize) -> bool {
    let g = map.geometry();
    let (tx, ty) = (from.x as isize + dx, from.y as isize + dy);
    if !g.contains(tx, ty) || !map.walkable(CellPos::new(tx as usize, ty as usize)) {
        return false;
    }
    if dx != 0 && dy != 0 {
        let a = CellPos::new(tx as usize, from.y);
        let b = CellPos::new(from.x, ty as usize);
        return map.walkable(a) && map.walkable(b);
    }
    true
}

/// Distance field to a single goal cell.
pub fn geodesic_field<W: Walkable + ?Sized>(
    map: &W,
    goal: CellPos,
) -> Result<DistanceField, GridError> {
    multi_source_field(map, &[goal])
}

/// Distance field to the nearest of several source cells.
pub fn multi_source_field<W: Walkable + ?Sized>(
    map: &W,
    sources: &[CellPos],
) -> Result<DistanceField, GridError> {
    let geom = *map.geometry();
    let n = geom.width * geom.height;
    let mut counts: Vec<Option<(u32, u32)>> = vec![None; n];
    let mut parent = vec![NO_PARENT; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        if s.x >= geom.width || s.y >= geom.height || !map.walkable(s) {
            return Err(GridError::Argument(format!("source cell {s} is not walkable")));
        }
        let i = geom.index(s);
        counts[i] = Some((0, 0));
        heap.push(Entry { key: 0.0, index: i });
    }
    while let Some(Entry { index, .. }) = heap.pop() {
        if done[index] {
            continue;
        }
        done[index] = true;
        let c = geom.pos(index);
        let (a, b) = counts[index].expect("queued cells have a distance");
        for &(dx, dy) in &NEIGHBORS8 {
            if !move_allowed(map, c, dx, dy) {
                continue;
            }
            let t = CellPos::new((c.x as isize + dx) as usize, (c.y as isize + dy) as usize);
            let ti = geom.index(t);
            if done[ti] {
                continue;
            }
            let cand = if dx != 0 && dy != 0 { (a, b + 1) } else { (a + 1, b) };
            let key = counts_to_meters(cand, 1.0);
            let better = match counts[ti] {
                None => true,
                Some(old) => key < counts_to_meters(old, 1.0),
            };
            if better {
                counts[ti] = Some(cand);
                parent[ti] = index as u32;
                heap.push(Entry { key, index: ti });
            }
        }
    }
    Ok(DistanceField {
        geom,
        counts,
        parent,
    })
}
