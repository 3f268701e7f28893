//! A two-state, two-action deterministic MDP with a soft value-iteration oracle,
//! used to check the SAC machinery end to end on the real networks.

use super::net::{Agent, LstmState, ObsRecord, PrevInfo};
use super::sac::{sac_update, SacCfg, Transition};
use super::{PolicyCfg, PolicyError};
use crate::encoder::EncoderCfg;
use crate::navenv::NODE_FEATURES;
use crate::nn::{AdamW, AdamWConfig, ParamStore};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyMdp {
    /// `next[s][a]`.
    pub next: [[usize; 2]; 2],
    /// `reward[s][a]`.
    pub reward: [[f64; 2]; 2],
    pub gamma: f64,
}

impl Default for ToyMdp {
    fn default() -> Self {
        Self {
            next: [[0, 1], [0, 1]],
            reward: [[0.0, 1.0], [0.5, 0.0]],
            gamma: 0.5,
        }
    }
}

impl ToyMdp {
    /// Soft-optimal action values for temperature `alpha`:
    /// `Q(s, a) = r + gamma * alpha * ln sum_b exp(Q(s', b) / alpha)`.
    pub fn soft_q(&self, alpha: f64) -> [[f64; 2]; 2] {
        let mut q = [[0.0f64; 2]; 2];
        for _ in 0..10_000 {
            let v: Vec<f64> = (0..2)
                .map(|s| {
                    let m = q[s][0].max(q[s][1]);
                    let sum: f64 = q[s].iter().map(|v| ((v - m) / alpha).exp()).sum();
                    m + alpha * sum.ln()
                })
                .collect();
            let mut next = [[0.0; 2]; 2];
            for s in 0..2 {
                for a in 0..2 {
                    next[s][a] = self.reward[s][a] + self.gamma * v[self.next[s][a]];
                }
            }
            let delta = (0..4).map(|i| (next[i / 2][i % 2] - q[i / 2][i % 2]).abs()).fold(0.0, f64::max);
            q = next;
            if delta < 1e-14 {
                break;
            }
        }
        q
    }

    /// State `s` as an observation: a uniform context and one node per action.
    pub fn observation(&self, s: usize, ctx: usize) -> ObsRecord {
        let code = if s == 0 { 2 } else { 0 };
        let mut nodes = Vec::with_capacity(2 * NODE_FEATURES);
        for a in 0..2 {
            let mut f = [0.0f32; NODE_FEATURES];
            f[0] = if a == 0 { 1.0 } else { -1.0 };
            f[2] = s as f32;
            f[4] = if s == 0 { 0.5 } else { -0.5 };
            f[5] = a as f32 * 0.5;
            nodes.extend_from_slice(&f);
        }
        ObsRecord {
            ctx_h: ctx,
            ctx_w: ctx,
            context: vec![code; ctx * ctx],
            nodes,
        }
    }

    /// The four transitions with a zero recurrent context.
    pub fn transitions(&self, ctx: usize, lstm_dim: usize) -> Vec<Transition> {
        let mut out = Vec::new();
        for s in 0..2 {
            for a in 0..2 {
                out.push(Transition {
                    obs: self.observation(s, ctx),
                    state: LstmState::zeros(lstm_dim),
                    prev: PrevInfo::default(),
                    action: a,
                    reward: self.reward[s][a] as f32,
                    next_obs: self.observation(self.next[s][a], ctx),
                    next_state: LstmState::zeros(lstm_dim),
                    next_prev: PrevInfo::default(),
                    done: false,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyRunCfg {
    pub mdp: ToyMdp,
    pub alpha: f32,
    pub steps: usize,
    pub lr: f32,
    pub tau: f32,
    pub seed: u64,
}

impl Default for ToyRunCfg {
    fn default() -> Self {
        Self {
            mdp: ToyMdp::default(),
            alpha: 0.2,
            steps: 3000,
            lr: 1e-3,
            tau: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyReport {
    pub oracle: [[f64; 2]; 2],
    pub q1: [[f64; 2]; 2],
    pub q2: [[f64; 2]; 2],
    /// Largest deviation of either critic from the oracle.
    pub max_err: f64,
    /// Mean policy entropy over the first and last hundredth of the updates.
    pub entropy_early: f64,
    pub entropy_late: f64,
}

/// Trains a tiny agent with fixed temperature on the full transition table each
/// step and compares both critics with the soft value-iteration oracle.
pub fn run_toy(cfg: &ToyRunCfg) -> Result<ToyReport, PolicyError> {
    let ctx = 8;
    let enc = EncoderCfg {
        d: 8,
        layers: 1,
        heads: 2,
        patch: 8,
        map_h: ctx,
        map_w: ctx,
        dec_dim: 8,
        dec_layers: 0,
        dec_heads: 1,
    };
    let pcfg = PolicyCfg {
        d_model: 16,
        layers: 1,
        heads: 2,
        lstm_dim: 16,
    };
    let mut store = ParamStore::new();
    let agent = Agent::init(&mut store, enc, pcfg, cfg.alpha, &mut seeded(cfg.seed))?;
    let sac = SacCfg {
        gamma: cfg.mdp.gamma as f32,
        tau: cfg.tau,
        lr: cfg.lr,
        init_alpha: cfg.alpha,
        fixed_alpha: true,
        ..SacCfg::default()
    };
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr,
        ..Default::default()
    });
    let mut alpha_opt = AdamW::new(AdamWConfig::default());
    let table = cfg.mdp.transitions(ctx, pcfg.lstm_dim);
    let batch: Vec<&Transition> = table.iter().collect();
    let window = (cfg.steps / 100).max(1);
    let (mut early, mut late) = (0.0, 0.0);
    for step in 0..cfg.steps {
        let l = sac_update(&agent, &mut store, &mut opt, &mut alpha_opt, &batch, &sac)?;
        if step < window {
            early += l.entropy / window as f64;
        }
        if step >= cfg.steps - window {
            late += l.entropy / window as f64;
        }
    }
    let oracle = cfg.mdp.soft_q(cfg.alpha as f64);
    let (mut q1, mut q2) = ([[0.0; 2]; 2], [[0.0; 2]; 2]);
    let mut max_err = 0.0f64;
    for s in 0..2 {
        let obs = cfg.mdp.observation(s, ctx);
        let (v1, v2) = agent.q_values(&store, &obs, &LstmState::zeros(pcfg.lstm_dim), &PrevInfo::default())?;
        for a in 0..2 {
            q1[s][a] = v1[a] as f64;
            q2[s][a] = v2[a] as f64;
            max_err = max_err
                .max((q1[s][a] - oracle[s][a]).abs())
                .max((q2[s][a] - oracle[s][a]).abs());
        }
    }
    Ok(ToyReport {
        oracle,
        q1,
        q2,
        max_err,
        entropy_early: early,
        entropy_late: late,
    })
}
