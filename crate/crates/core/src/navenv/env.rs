use std::sync::Arc;

use rand::Rng;

use super::graph::{build_graph, node_features, sample_waypoints, WaypointSample};
use super::log::LogRecord;
use super::{NavEnvCfg, NavError, Observation, Outcome, StepResult, TopoGraph};
use crate::gridmap::{
    counts_to_meters, crop_context, detect_frontiers, fuse_scan, geodesic_field, move_allowed,
    raycast_scan, BeliefMap, CellPos, DistanceField, OccupancyGrid, Pose,
};
use crate::rng::{seeded, SimRng};

/// One navigation episode on a shared ground-truth map.
///
/// Distances to the goal are ground-truth geodesics between cells. The agent
/// stands on cell centers after its first move.
#[derive(Debug, Clone)]
pub struct NavEnv {
    cfg: NavEnvCfg,
    map: Arc<OccupancyGrid>,
    belief: BeliefMap,
    goal: CellPos,
    goal_field: DistanceField,
    pose: Pose,
    cell: CellPos,
    visited: Vec<bool>,
    trajectory: Vec<CellPos>,
    steps: usize,
    outcome: Outcome,
    rng: SimRng,
    sample: WaypointSample,
    obs: Observation,
    path_counts: (u32, u32),
    shortest_m: f64,
    d_goal: f64,
    reward_sum: f64,
    log: Vec<LogRecord>,
}

impl NavEnv {
    /// Starts an episode: all-UNKNOWN belief, one scan fused at `start`.
    pub fn reset(
        cfg: NavEnvCfg,
        map: Arc<OccupancyGrid>,
        start: Pose,
        goal: Pose,
        seed: u64,
    ) -> Result<Self, NavError> {
        cfg.validate()?;
        let start_cell = map
            .validate_pose(start)
            .map_err(|e| NavError::Setup(format!("start: {e}")))?;
        let goal_cell = map
            .validate_pose(goal)
            .map_err(|e| NavError::Setup(format!("goal: {e}")))?;
        let goal_field = geodesic_field(map.as_ref(), goal_cell)?;
        let d0 = goal_field.get(start_cell);
        if !d0.is_finite() {
            return Err(NavError::Setup(format!(
                "goal {goal_cell} unreachable from start {start_cell}"
            )));
        }
        if d0 <= cfg.success_radius_m {
            return Err(NavError::Setup("start already within the success radius".into()));
        }
        let mut belief = BeliefMap::unknown_like(&map);
        fuse_scan(&mut belief, &raycast_scan(&map, start, cfg.sensor));
        let mut visited = vec![false; map.width() * map.height()];
        visited[map.geometry().index(start_cell)] = true;
        let mut rng = seeded(seed);
        let (sample, obs) = observe(&cfg, &belief, start, goal_cell, &visited, &mut rng)?;
        let mut env = Self {
            cfg,
            map,
            belief,
            goal: goal_cell,
            goal_field,
            pose: start,
            cell: start_cell,
            visited,
            trajectory: vec![start_cell],
            steps: 0,
            outcome: Outcome::Running,
            rng,
            sample,
            obs,
            path_counts: (0, 0),
            shortest_m: d0,
            d_goal: d0,
            reward_sum: 0.0,
            log: Vec::new(),
        };
        if env.obs.graph.is_empty() {
            env.outcome = Outcome::Stuck;
        }
        env.log.push(LogRecord {
            step: 0,
            pose: start,
            action_node: None,
            reward: 0.0,
            d_goal: d0,
            outcome: env.outcome,
        });
        Ok(env)
    }

    /// Moves to candidate `action` along its belief-space geodesic.
    pub fn step(&mut self, action: usize) -> Result<StepResult, NavError> {
        if self.outcome.is_done() {
            return Err(NavError::Finished);
        }
        let n = self.sample.cells.len();
        if action >= n {
            return Err(NavError::Argument(format!("action {action} out of range for {n} nodes")));
        }
        let target = self.sample.cells[action];
        let mut path = self
            .sample
            .field
            .path_from(target)
            .ok_or_else(|| NavError::Argument("candidate not reachable".into()))?;
        path.reverse();
        self.advance(&path[1..], Some(action))
    }

    /// Privileged move along an explicit cell path starting next to the agent.
    /// Every move must be legal in the current belief.
    pub fn step_path(&mut self, path: &[CellPos]) -> Result<StepResult, NavError> {
        if self.outcome.is_done() {
            return Err(NavError::Finished);
        }
        if path.is_empty() {
            return Err(NavError::Argument("empty path".into()));
        }
        self.advance(path, None)
    }

    /// The next stretch of the ground-truth optimal path, at most `r_local` long.
    pub fn oracle_segment(&self) -> Vec<CellPos> {
        let full = self
            .goal_field
            .path_from(self.cell)
            .expect("agent stays in the goal's component");
        let res = self.map.resolution();
        let mut out = Vec::new();
        let mut len = 0.0;
        for w in full.windows(2) {
            let diag = w[0].x != w[1].x && w[0].y != w[1].y;
            let step = if diag { res * std::f64::consts::SQRT_2 } else { res };
            if !out.is_empty() && len + step > self.cfg.r_local_m {
                break;
            }
            len += step;
            out.push(w[1]);
        }
        out
    }

    fn advance(&mut self, path: &[CellPos], action: Option<usize>) -> Result<StepResult, NavError> {
        let d_prev = self.d_goal;
        let before = self.path_counts;
        for &next in path {
            let dx = next.x as isize - self.cell.x as isize;
            let dy = next.y as isize - self.cell.y as isize;
            if dx.abs() > 1 || dy.abs() > 1 || (dx, dy) == (0, 0) {
                return Err(NavError::Argument(format!("{next} is not adjacent to {}", self.cell)));
            }
            if !move_allowed(&self.belief, self.cell, dx, dy) {
                return Err(NavError::Argument(format!("move to {next} not known to be safe")));
            }
            if dx != 0 && dy != 0 {
                self.path_counts.1 += 1;
            } else {
                self.path_counts.0 += 1;
            }
            self.cell = next;
            self.pose = self.map.geometry().center_of(next);
            fuse_scan(&mut self.belief, &raycast_scan(&self.map, self.pose, self.cfg.sensor));
            self.visited[self.map.geometry().index(next)] = true;
            self.trajectory.push(next);
            if self.goal_field.get(next) <= self.cfg.success_radius_m {
                break;
            }
        }
        self.steps += 1;
        let d_new = self.goal_field.get(self.cell);
        let reached = d_new <= self.cfg.success_radius_m && self.steps <= self.cfg.max_steps;
        let reward = self.cfg.reward.reward(reached, d_prev, d_new);
        let (sample, obs) = observe(&self.cfg, &self.belief, self.pose, self.goal, &self.visited, &mut self.rng)?;
        self.sample = sample;
        self.obs = obs;
        self.outcome = if reached {
            Outcome::Success
        } else if self.steps > self.cfg.max_steps {
            Outcome::Timeout
        } else if self.obs.graph.is_empty() {
            Outcome::Stuck
        } else {
            Outcome::Running
        };
        self.d_goal = d_new;
        self.reward_sum += reward;
        self.log.push(LogRecord {
            step: self.steps,
            pose: self.pose,
            action_node: action,
            reward,
            d_goal: d_new,
            outcome: self.outcome,
        });
        let res = self.map.resolution();
        let delta = counts_to_meters(self.path_counts, res) - counts_to_meters(before, res);
        Ok(StepResult {
            obs: self.obs.clone(),
            reward,
            done: self.outcome.is_done(),
            outcome: self.outcome,
            path_len_delta: delta,
        })
    }

    pub fn cfg(&self) -> &NavEnvCfg {
        &self.cfg
    }

    pub fn map(&self) -> &Arc<OccupancyGrid> {
        &self.map
    }

    pub fn belief(&self) -> &BeliefMap {
        &self.belief
    }

    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    /// Cells of the current candidates, in node order.
    pub fn candidates(&self) -> &[CellPos] {
        &self.sample.cells
    }

    pub fn used_fallback(&self) -> bool {
        self.sample.fallback
    }

    /// Belief-space distances from the agent cell.
    pub fn belief_field(&self) -> &DistanceField {
        &self.sample.field
    }

    pub fn goal_field(&self) -> &DistanceField {
        &self.goal_field
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn cell(&self) -> CellPos {
        self.cell
    }

    pub fn goal(&self) -> CellPos {
        self.goal
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    pub fn is_done(&self) -> bool {
        self.outcome.is_done()
    }

    pub fn d_goal(&self) -> f64 {
        self.d_goal
    }

    /// Ground-truth geodesic from the start cell to the goal.
    pub fn shortest_m(&self) -> f64 {
        self.shortest_m
    }

    pub fn path_length_m(&self) -> f64 {
        counts_to_meters(self.path_counts, self.map.resolution())
    }

    pub fn reward_sum(&self) -> f64 {
        self.reward_sum
    }

    pub fn trajectory(&self) -> &[CellPos] {
        &self.trajectory
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }
}

fn observe(
    cfg: &NavEnvCfg,
    belief: &BeliefMap,
    pose: Pose,
    goal: CellPos,
    visited: &[bool],
    rng: &mut SimRng,
) -> Result<(WaypointSample, Observation), NavError> {
    let sample = sample_waypoints(
        belief,
        pose,
        goal,
        cfg.k_nodes,
        cfg.r_local_m,
        cfg.min_separation_m,
        rng,
    )?;
    let frontiers = detect_frontiers(belief);
    let nodes: Vec<_> = sample
        .cells
        .iter()
        .map(|c| node_features(*c, pose, goal, belief, &frontiers, visited, cfg.sensor, cfg.r_local_m))
        .collect();
    let positions: Vec<Pose> = nodes.iter().map(|n| n.pos).collect();
    let edges = build_graph(&positions, cfg.knn);
    let context = crop_context(belief, pose, cfg.context_h, cfg.context_w, cfg.patch)?;
    let obs = Observation {
        context,
        graph: TopoGraph { nodes, edges },
        goal_in_nodes: sample.goal_included,
        pose,
    };
    Ok((sample, obs))
}

/// Draws a start and goal on cell centers whose ground-truth geodesic lies in
/// `[lo, hi]` meters.
pub fn sample_start_goal(
    map: &OccupancyGrid,
    (lo, hi): (f64, f64),
    rng: &mut SimRng,
) -> Result<(Pose, Pose), NavError> {
    let free: Vec<CellPos> = map.free_cells().collect();
    if free.is_empty() {
        return Err(NavError::Setup("map has no free cell".into()));
    }
    for _ in 0..64 {
        let goal = free[rng.random_range(0..free.len())];
        let field = geodesic_field(map, goal)?;
        let ok: Vec<CellPos> = free
            .iter()
            .copied()
            .filter(|c| {
                let d = field.get(*c);
                d >= lo && d <= hi
            })
            .collect();
        if !ok.is_empty() {
            let start = ok[rng.random_range(0..ok.len())];
            let g = map.geometry();
            return Ok((g.center_of(start), g.center_of(goal)));
        }
    }
    Err(NavError::Setup(format!("no start/goal pair with geodesic in [{lo}, {hi}] m")))
}
