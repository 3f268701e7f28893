use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use super::actors::{Actor, Decision};
use super::{DifficultySpec, EvalError, Split};
use crate::gridmap::{CellPos, OccupancyGrid};
use crate::navenv::{LogRecord, NavEnv, NavEnvCfg, Outcome};

/// Result of one finished episode.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub episode_id: usize,
    pub level: String,
    pub outcome: Outcome,
    pub steps: usize,
    /// Traversed path length.
    pub p_m: f64,
    /// Ground-truth shortest path length.
    pub lstar_m: f64,
    pub reward_sum: f64,
    pub wall_ms: f64,
    /// Start cell first.
    pub trajectory: Vec<CellPos>,
    pub log: Vec<LogRecord>,
    pub map: Option<Arc<OccupancyGrid>>,
}

impl EpisodeRecord {
    /// This episode's share of SPL: `S * l* / max(p, l*)`.
    pub fn spl_term(&self) -> f64 {
        if self.outcome == Outcome::Success {
            self.lstar_m / self.p_m.max(self.lstar_m)
        } else {
            0.0
        }
    }
}

/// Plays `actor` in `env` until the episode ends.
pub fn run_episode(env: &mut NavEnv, actor: &mut dyn Actor) -> Result<EpisodeRecord, EvalError> {
    let t0 = Instant::now();
    actor.begin(env);
    while !env.is_done() {
        let d = actor.decide(env)?;
        let r = match &d {
            Decision::Node(i) => env.step(*i)?,
            Decision::Path(p) => env.step_path(p)?,
        };
        actor.observe(&d, &r);
    }
    Ok(EpisodeRecord {
        episode_id: 0,
        level: String::new(),
        outcome: env.outcome(),
        steps: env.steps(),
        p_m: env.path_length_m(),
        lstar_m: env.shortest_m(),
        reward_sum: env.reward_sum(),
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        trajectory: env.trajectory().to_vec(),
        log: env.log().to_vec(),
        map: Some(env.map().clone()),
    })
}

/// Runs test episodes `0..episodes` of `spec` on `workers` threads. Records come
/// back in episode order and do not depend on the worker count.
pub fn evaluate(
    spec: &DifficultySpec,
    env_cfg: &NavEnvCfg,
    episodes: usize,
    seed: u64,
    workers: usize,
    make_actor: &(dyn Fn(usize) -> Box<dyn Actor> + Sync),
) -> Result<Vec<EpisodeRecord>, EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| EvalError::Argument(format!("worker pool: {e}")))?;
    pool.install(|| {
        (0..episodes)
            .into_par_iter()
            .map(|id| {
                let ep = spec.episode(seed, Split::Test, id)?;
                let mut env = NavEnv::reset(*env_cfg, ep.map, ep.start, ep.goal, ep.env_seed)?;
                let mut actor = make_actor(id);
                let mut rec = run_episode(&mut env, actor.as_mut())?;
                rec.episode_id = id;
                rec.level = spec.level.to_string();
                Ok(rec)
            })
            .collect()
    })
}
