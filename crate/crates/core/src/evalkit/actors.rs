use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use super::EvalError;
use crate::gridmap::{
    detect_frontiers, geodesic_field, multi_source_field, BeliefMap, Cell, CellPos, GridGeometry,
    Walkable,
};
use crate::navenv::{NavEnv, Observation, StepResult};
use crate::policy::{select_action, ActionMode, Agent, LstmState, ObsRecord, PrevInfo};
use crate::nn::ParamStore;
use crate::rng::{seeded, SimRng};

/// What an actor asks the environment to do.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// Go to candidate node `i`.
    Node(usize),
    /// Privileged move along explicit cells (oracle only).
    Path(Vec<CellPos>),
}

pub trait Actor: Send {
    fn name(&self) -> &str;

    /// Called once after reset.
    fn begin(&mut self, _env: &NavEnv) {}

    fn decide(&mut self, env: &NavEnv) -> Result<Decision, EvalError>;

    /// Called after every executed decision.
    fn observe(&mut self, _decision: &Decision, _result: &StepResult) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorKind {
    Oracle,
    NearestFrontier,
    Random,
    Farthest,
    Policy,
}

impl ActorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActorKind::Oracle => "oracle",
            ActorKind::NearestFrontier => "frontier",
            ActorKind::Random => "random",
            ActorKind::Farthest => "farthest",
            ActorKind::Policy => "policy",
        }
    }
}

impl FromStr for ActorKind {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "oracle" => ActorKind::Oracle,
            "frontier" | "nearest-frontier" => ActorKind::NearestFrontier,
            "random" => ActorKind::Random,
            "farthest" => ActorKind::Farthest,
            "policy" => ActorKind::Policy,
            other => return Err(EvalError::Argument(format!("unknown actor '{other}'"))),
        })
    }
}

/// Follows the ground-truth shortest path, one `r_local` stretch per decision.
#[derive(Debug, Clone, Default)]
pub struct OracleActor;

impl Actor for OracleActor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn decide(&mut self, env: &NavEnv) -> Result<Decision, EvalError> {
        Ok(Decision::Path(env.oracle_segment()))
    }
}

/// Belief treated optimistically: everything not known to be occupied.
struct Optimistic<'a>(&'a BeliefMap);

impl Walkable for Optimistic<'_> {
    fn geometry(&self) -> &GridGeometry {
        self.0.geometry()
    }
    fn walkable(&self, c: CellPos) -> bool {
        self.0.get(c) != Cell::Occupied
    }
}

/// Candidate minimizing belief-space distance to the nearest frontier plus
/// optimistic distance to the goal. When the goal is a candidate it is taken
/// directly. With no frontier left the first term is zero, which leaves the
/// node nearest the goal. Ties go to the lower index.
pub fn nearest_frontier_choice(belief: &BeliefMap, obs: &Observation, goal: CellPos) -> usize {
    if obs.goal_in_nodes {
        return 0;
    }
    let geom = belief.geometry();
    let cells: Vec<CellPos> = obs
        .graph
        .nodes
        .iter()
        .map(|n| geom.cell_of(n.pos).expect("nodes lie on the grid"))
        .collect();
    let frontiers = detect_frontiers(belief);
    let front = if frontiers.is_empty() {
        None
    } else {
        multi_source_field(belief, &frontiers).ok()
    };
    let to_goal = geodesic_field(&Optimistic(belief), goal).ok();
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for (i, c) in cells.iter().enumerate() {
        let df = front.as_ref().map_or(0.0, |f| f.get(*c));
        let dg = to_goal.as_ref().map_or(f64::INFINITY, |f| f.get(*c));
        let score = df + dg;
        if score < best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Default)]
pub struct NearestFrontierActor;

impl Actor for NearestFrontierActor {
    fn name(&self) -> &str {
        "frontier"
    }

    fn decide(&mut self, env: &NavEnv) -> Result<Decision, EvalError> {
        Ok(Decision::Node(nearest_frontier_choice(env.belief(), env.observation(), env.goal())))
    }
}

/// Uniform over candidates.
#[derive(Debug, Clone)]
pub struct RandomActor {
    rng: SimRng,
}

impl RandomActor {
    pub fn new(seed: u64) -> Self {
        Self { rng: seeded(seed) }
    }
}

impl Actor for RandomActor {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, env: &NavEnv) -> Result<Decision, EvalError> {
        let n = env.observation().graph.len();
        Ok(Decision::Node(self.rng.random_range(0..n)))
    }
}

/// Always the candidate farthest (straight line) from the goal.
#[derive(Debug, Clone, Default)]
pub struct FarthestActor;

impl Actor for FarthestActor {
    fn name(&self) -> &str {
        "farthest"
    }

    fn decide(&mut self, env: &NavEnv) -> Result<Decision, EvalError> {
        let goal = env.map().geometry().center_of(env.goal());
        let nodes = &env.observation().graph.nodes;
        let mut best = 0;
        for (i, n) in nodes.iter().enumerate() {
            if n.pos.dist(goal) > nodes[best].pos.dist(goal) {
                best = i;
            }
        }
        Ok(Decision::Node(best))
    }
}

/// The learned actor with its recurrent state.
pub struct PolicyActor {
    agent: Arc<(Agent, ParamStore)>,
    mode: ActionMode,
    rng: SimRng,
    state: LstmState,
    prev: PrevInfo,
    pending: Option<[f32; crate::navenv::NODE_FEATURES]>,
}

impl PolicyActor {
    pub fn new(agent: Arc<(Agent, ParamStore)>, mode: ActionMode, seed: u64) -> Self {
        let dim = agent.0.cfg.lstm_dim;
        Self {
            agent,
            mode,
            rng: seeded(seed),
            state: LstmState::zeros(dim),
            prev: PrevInfo::default(),
            pending: None,
        }
    }
}

impl Actor for PolicyActor {
    fn name(&self) -> &str {
        "policy"
    }

    fn begin(&mut self, _env: &NavEnv) {
        self.state = LstmState::zeros(self.agent.0.cfg.lstm_dim);
        self.prev = PrevInfo::default();
        self.pending = None;
    }

    fn decide(&mut self, env: &NavEnv) -> Result<Decision, EvalError> {
        let (agent, store) = &*self.agent;
        let obs = ObsRecord::from_observation(env.observation());
        let (probs, next) = agent.act(store, &obs, &self.state, &self.prev)?;
        let a = select_action(&probs, self.mode, &mut self.rng);
        self.state = next;
        self.pending = Some(obs.node_features(a));
        Ok(Decision::Node(a))
    }

    fn observe(&mut self, _decision: &Decision, result: &StepResult) {
        if let Some(features) = self.pending.take() {
            self.prev = PrevInfo {
                features,
                reward: result.reward as f32,
            };
        }
    }
}
