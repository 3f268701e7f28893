use rand::seq::SliceRandom;

use super::{NavError, NavNode};
use crate::gridmap::{
    geodesic_field, move_allowed, trace_ray, BeliefMap, CellPos, DistanceField, Pose, SensorCfg,
    NEIGHBORS8,
};
use crate::rng::SimRng;

/// Candidate cells for one decision and the belief-space field used to reach them.
#[derive(Debug, Clone)]
pub struct WaypointSample {
    pub cells: Vec<CellPos>,
    pub goal_included: bool,
    /// The disk held no candidate and the agent's free neighbors were used.
    pub fallback: bool,
    /// Belief geodesic field rooted at the agent cell.
    pub field: DistanceField,
}

/// Samples up to `k` distinct belief-FREE cells within `r_local` meters of `pose`
/// that are reachable from it through belief-FREE cells. A qualifying goal cell is
/// always the first candidate. Candidates closer than `min_sep` to an accepted one
/// are only used when nothing else is left.
#[allow(clippy::too_many_arguments)]
pub fn sample_waypoints(
    belief: &BeliefMap,
    pose: Pose,
    goal: CellPos,
    k: usize,
    r_local: f64,
    min_sep: f64,
    rng: &mut SimRng,
) -> Result<WaypointSample, NavError> {
    let geom = *belief.geometry();
    let agent = geom
        .cell_of(pose)
        .ok_or_else(|| NavError::Argument("pose outside grid".into()))?;
    let field = geodesic_field(belief, agent)?;
    let within = |c: CellPos| geom.center_of(c).dist(pose) <= r_local;

    let (x0, x1, y0, y1) = {
        let r = (r_local / geom.resolution).ceil() as isize + 1;
        let (ax, ay) = (agent.x as isize, agent.y as isize);
        (
            (ax - r).max(0) as usize,
            ((ax + r) as usize).min(geom.width - 1),
            (ay - r).max(0) as usize,
            ((ay + r) as usize).min(geom.height - 1),
        )
    };
    let mut pool = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let c = CellPos::new(x, y);
            if c != agent && c != goal && field.is_reachable(c) && within(c) {
                pool.push(c);
            }
        }
    }
    let goal_ok = goal != agent && field.is_reachable(goal) && within(goal);

    let mut cells = Vec::with_capacity(k);
    if goal_ok && k > 0 {
        cells.push(goal);
    }
    pool.shuffle(rng);
    let sep_ok = |cells: &[CellPos], c: CellPos| {
        cells
            .iter()
            .all(|o| geom.center_of(*o).dist(geom.center_of(c)) >= min_sep)
    };
    let mut rejected = Vec::new();
    for c in pool {
        if cells.len() >= k {
            break;
        }
        if sep_ok(&cells, c) {
            cells.push(c);
        } else {
            rejected.push(c);
        }
    }
    for c in rejected {
        if cells.len() >= k {
            break;
        }
        cells.push(c);
    }

    let mut fallback = false;
    if cells.is_empty() {
        fallback = true;
        for (dx, dy) in NEIGHBORS8 {
            if cells.len() < k && move_allowed(belief, agent, dx, dy) {
                cells.push(CellPos::new(
                    (agent.x as isize + dx) as usize,
                    (agent.y as isize + dy) as usize,
                ));
            }
        }
    }
    Ok(WaypointSample {
        cells,
        goal_included: goal_ok,
        fallback,
        field,
    })
}

/// Links every node to its `min(k, n - 1)` nearest nodes (ties by lower index) and
/// symmetrizes. Edges are `(i, j)` with `i < j`, sorted.
pub fn build_graph(nodes: &[Pose], k: usize) -> Vec<(usize, usize)> {
    let n = nodes.len();
    let mut edges = Vec::new();
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|j| *j != i)
            .map(|j| (nodes[i].dist(nodes[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k.min(n.saturating_sub(1))) {
            edges.push((i.min(j), i.max(j)));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Whether the segment between the centers of `from` and `to` passes only through
/// belief-FREE cells (both ends included).
pub fn line_of_sight(belief: &BeliefMap, from: CellPos, to: CellPos) -> bool {
    if !belief.is_free(from) || !belief.is_free(to) {
        return false;
    }
    if from == to {
        return true;
    }
    let dx = to.x as f64 - from.x as f64;
    let dy = to.y as f64 - from.y as f64;
    let mut clear = true;
    let mut reached = false;
    trace_ray(
        belief.width(),
        belief.height(),
        from.x as f64 + 0.5,
        from.y as f64 + 0.5,
        dx,
        dy,
        |c, t| {
            if c == to {
                reached = true;
                return false;
            }
            if t > 1.0 || !belief.is_free(c) {
                clear = false;
                return false;
            }
            true
        },
    );
    clear && reached
}

/// Features of the node at cell `node`. `frontiers` is the current frontier set and
/// `visited` flags trajectory cells by grid index.
#[allow(clippy::too_many_arguments)]
pub fn node_features(
    node: CellPos,
    agent: Pose,
    goal: CellPos,
    belief: &BeliefMap,
    frontiers: &[CellPos],
    visited: &[bool],
    sensor: SensorCfg,
    r_local: f64,
) -> NavNode {
    let geom = belief.geometry();
    let pos = geom.center_of(node);
    let g = geom.center_of(goal);
    let (gx, gy) = (g.x - pos.x, g.y - pos.y);
    let norm = (gx * gx + gy * gy).sqrt();
    let dir_goal = if node == goal || norm == 0.0 {
        [0.0, 0.0]
    } else {
        [gx / norm, gy / norm]
    };
    let range_cells = sensor.range_m / geom.resolution;
    let utility = frontiers
        .iter()
        .filter(|f| f.dist(node) <= range_cells && line_of_sight(belief, node, **f))
        .count() as u32;
    NavNode {
        pos,
        dir_goal,
        utility,
        visited: visited[geom.index(node)],
        rel_pos: [
            ((pos.x - agent.x) / r_local).clamp(-1.0, 1.0),
            ((pos.y - agent.y) / r_local).clamp(-1.0, 1.0),
        ],
    }
}
