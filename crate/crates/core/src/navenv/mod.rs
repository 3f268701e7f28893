//! Decision-level navigation environment: candidate waypoints on a kNN graph,
//! node features, traversal with per-cell sensing, reward and termination.

mod env;
mod graph;
mod log;

pub use env::{sample_start_goal, NavEnv};
pub use graph::{build_graph, line_of_sight, node_features, sample_waypoints, WaypointSample};
pub use log::{read_episode_log, write_episode_log, LogRecord};

use serde::{Deserialize, Serialize};

use crate::gridmap::{ContextMap, GridError, Pose, SensorCfg};

#[derive(Debug, thiserror::Error)]
pub enum NavError {
    #[error("setup error: {0}")]
    Setup(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("episode already finished")]
    Finished,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("episode log: {0}")]
    Log(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Running,
    Success,
    Timeout,
    /// No candidate waypoint could be produced; counted as a failure.
    Stuck,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Running => "RUNNING",
            Outcome::Success => "SUCCESS",
            Outcome::Timeout => "TIMEOUT",
            Outcome::Stuck => "STUCK",
        }
    }

    pub fn is_done(self) -> bool {
        self != Outcome::Running
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Outcome {
    type Err = NavError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "RUNNING" => Ok(Outcome::Running),
            "SUCCESS" => Ok(Outcome::Success),
            "TIMEOUT" => Ok(Outcome::Timeout),
            "STUCK" => Ok(Outcome::Stuck),
            _ => Err(NavError::Argument(format!("unknown outcome {s:?}"))),
        }
    }
}

/// Reward constants: `r = r_goal * 1[goal] + lambda_s * r_s + lambda_h * (d_prev - d_new)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardCfg {
    pub r_goal: f64,
    pub lambda_s: f64,
    pub r_s: f64,
    pub lambda_h: f64,
}

impl Default for RewardCfg {
    fn default() -> Self {
        Self {
            r_goal: 20.0,
            lambda_s: 1.0,
            r_s: -1.0,
            lambda_h: 2.0,
        }
    }
}

impl RewardCfg {
    /// The reward of one decision. Logged rewards are produced by this function
    /// alone so replay reproduces them bit for bit.
    pub fn reward(&self, reached_goal: bool, d_prev: f64, d_new: f64) -> f64 {
        let goal = if reached_goal { self.r_goal } else { 0.0 };
        goal + self.lambda_s * self.r_s + self.lambda_h * (d_prev - d_new)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavEnvCfg {
    /// Candidate waypoints per decision.
    pub k_nodes: usize,
    pub r_local_m: f64,
    pub knn: usize,
    pub min_separation_m: f64,
    pub sensor: SensorCfg,
    pub context_h: usize,
    pub context_w: usize,
    pub patch: usize,
    pub max_steps: usize,
    pub success_radius_m: f64,
    pub reward: RewardCfg,
}

impl Default for NavEnvCfg {
    fn default() -> Self {
        Self {
            k_nodes: 20,
            r_local_m: 3.0,
            knn: 10,
            min_separation_m: 0.3,
            sensor: SensorCfg::default(),
            context_h: 128,
            context_w: 128,
            patch: 8,
            max_steps: 128,
            success_radius_m: 0.2,
            reward: RewardCfg::default(),
        }
    }
}

impl NavEnvCfg {
    pub fn validate(&self) -> Result<(), NavError> {
        let bad = |m: &str| Err(NavError::Argument(m.into()));
        if self.k_nodes == 0 {
            return bad("k_nodes must be positive");
        }
        if !(self.r_local_m > 0.0) {
            return bad("r_local must be positive");
        }
        if self.min_separation_m < 0.0 || self.success_radius_m < 0.0 {
            return bad("distances must be non-negative");
        }
        if self.patch == 0 || self.context_h % self.patch != 0 || self.context_w % self.patch != 0 {
            return bad("context size must be divisible by the patch size");
        }
        Ok(())
    }
}

/// One candidate waypoint and its features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavNode {
    pub pos: Pose,
    /// Unit vector toward the goal; zero when the node is the goal.
    pub dir_goal: [f64; 2],
    /// Frontier cells within sensor range with line of sight from the node.
    pub utility: u32,
    pub visited: bool,
    /// `(node - agent) / r_local`.
    pub rel_pos: [f64; 2],
}

/// Per-node input width of the policy.
pub const NODE_FEATURES: usize = 6;

impl NavNode {
    /// `[dir_x, dir_y, ln(1 + utility) / 5, visited, rel_x, rel_y]`.
    pub fn feature_vector(&self) -> [f32; NODE_FEATURES] {
        [
            self.dir_goal[0] as f32,
            self.dir_goal[1] as f32,
            ((1.0 + self.utility as f64).ln() / 5.0) as f32,
            if self.visited { 1.0 } else { 0.0 },
            self.rel_pos[0] as f32,
            self.rel_pos[1] as f32,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopoGraph {
    pub nodes: Vec<NavNode>,
    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
}

impl TopoGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Row-major `[n, NODE_FEATURES]` feature matrix.
    pub fn feature_matrix(&self) -> Vec<f32> {
        self.nodes.iter().flat_map(|n| n.feature_vector()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub context: ContextMap,
    pub graph: TopoGraph,
    pub goal_in_nodes: bool,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub outcome: Outcome,
    pub path_len_delta: f64,
}

#[cfg(test)]
mod tests;
