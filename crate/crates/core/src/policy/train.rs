use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;

use super::net::{Agent, LstmState, ObsRecord, PrevInfo};
use super::sac::{sac_update, select_action, ActionMode, ReplayBuffer, SacCfg, SacLosses, Transition};
use super::{PolicyCfg, PolicyError};
use crate::encoder::{encoder_cfg_from_store, EncoderCfg, ENCODER_PREFIX};
use crate::evalkit::{
    compute_sr_spl, evaluate, DifficultySpec, Level, Metrics, PolicyActor, Split,
};
use crate::navenv::{NavEnv, NavEnvCfg, Outcome};
use crate::nn::{load_store, save_store, AdamW, AdamWConfig, ParamStore, Tensor};
use crate::rng::{seeded, SimRng};

/// Everything a reinforcement-learning run depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct RlCfg {
    pub env: NavEnvCfg,
    pub level: Level,
    pub encoder: EncoderCfg,
    pub policy: PolicyCfg,
    pub sac: SacCfg,
    pub replay_capacity: usize,
    pub batch: usize,
    /// Environment decisions to collect.
    pub steps: usize,
    /// Decisions taken uniformly at random before learning starts.
    pub warmup: usize,
    /// Gradient updates after each decision once warm.
    pub updates_per_step: usize,
    /// Size of the training map pool; episode `i` uses map `i % train_maps`.
    pub train_maps: usize,
    /// Held-out evaluation every this many decisions (0 disables).
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    /// Pretrained encoder to start from; random initialisation when absent.
    pub encoder_ckpt: Option<PathBuf>,
}

impl Default for RlCfg {
    fn default() -> Self {
        Self {
            env: NavEnvCfg::default(),
            level: Level::Easy,
            encoder: EncoderCfg::default(),
            policy: PolicyCfg::default(),
            sac: SacCfg::default(),
            replay_capacity: 10_000,
            batch: 32,
            steps: 20_000,
            warmup: 500,
            updates_per_step: 1,
            train_maps: 500,
            eval_every: 0,
            eval_episodes: 100,
            seed: 0,
            encoder_ckpt: None,
        }
    }
}

impl RlCfg {
    pub fn validate(&self) -> Result<(), PolicyError> {
        self.env
            .validate()
            .map_err(|e| PolicyError::Config(e.to_string()))?;
        self.encoder
            .validate()
            .map_err(|e| PolicyError::Config(e.to_string()))?;
        self.policy.validate()?;
        self.sac.validate()?;
        let mut bad = Vec::new();
        if (self.env.context_h, self.env.context_w) != (self.encoder.map_h, self.encoder.map_w) {
            bad.push("context_h/context_w (must equal the encoder map size)");
        }
        if self.env.patch != self.encoder.patch {
            bad.push("patch (must equal the encoder patch)");
        }
        if self.replay_capacity == 0 {
            bad.push("replay_capacity");
        }
        if self.batch == 0 {
            bad.push("batch");
        }
        if self.train_maps == 0 {
            bad.push("train_maps");
        }
        if self.eval_every > 0 && self.eval_episodes == 0 {
            bad.push("eval_episodes");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(PolicyError::Config(format!("invalid: {}", bad.join(", "))))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStat {
    pub index: usize,
    /// Decisions collected when the episode ended.
    pub env_step: usize,
    pub outcome: Outcome,
    pub steps: usize,
    pub reward_sum: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RlLog {
    pub episodes: Vec<EpisodeStat>,
    /// `(decision count, losses)` per update.
    pub updates: Vec<(usize, SacLosses)>,
    pub evals: Vec<(usize, Metrics)>,
}

/// What one [`RlTrainer::step`] produced.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub finished: Option<EpisodeStat>,
    pub losses: Option<SacLosses>,
    pub eval: Option<Metrics>,
}

/// Owns the agent, optimizers, replay and the running episode.
pub struct RlTrainer {
    pub cfg: RlCfg,
    pub agent: Agent,
    pub store: ParamStore,
    pub opt: AdamW,
    pub alpha_opt: AdamW,
    pub replay: ReplayBuffer,
    pub log: RlLog,
    pub env_steps: usize,
    pub episodes: usize,
    spec: DifficultySpec,
    env: Option<NavEnv>,
    state: LstmState,
    prev: PrevInfo,
    rng: SimRng,
}

impl RlTrainer {
    pub fn new(cfg: RlCfg) -> Result<Self, PolicyError> {
        cfg.validate()?;
        let mut rng = seeded(cfg.seed);
        let mut store = ParamStore::new();
        let agent = Agent::init(&mut store, cfg.encoder, cfg.policy, cfg.sac.init_alpha, &mut rng)?;
        if let Some(path) = &cfg.encoder_ckpt {
            load_pretrained_encoder(&mut store, &cfg.encoder, path)?;
        }
        let opt = AdamW::new(AdamWConfig {
            lr: cfg.sac.lr,
            weight_decay: cfg.sac.weight_decay,
            ..Default::default()
        });
        let alpha_opt = AdamW::new(AdamWConfig {
            lr: cfg.sac.alpha_lr,
            ..Default::default()
        });
        Ok(Self {
            spec: DifficultySpec::for_level(cfg.level),
            replay: ReplayBuffer::new(cfg.replay_capacity),
            state: LstmState::zeros(cfg.policy.lstm_dim),
            prev: PrevInfo::default(),
            agent,
            store,
            opt,
            alpha_opt,
            log: RlLog::default(),
            env_steps: 0,
            episodes: 0,
            env: None,
            rng,
            cfg,
        })
    }

    fn start_episode(&mut self) -> Result<(), PolicyError> {
        let id = self.episodes % self.cfg.train_maps;
        let ep = self
            .spec
            .episode(self.cfg.seed, Split::Train, id)
            .map_err(|e| PolicyError::Env(e.to_string()))?;
        let env_seed = ep.env_seed ^ (self.episodes as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        self.env = Some(NavEnv::reset(self.cfg.env, ep.map, ep.start, ep.goal, env_seed)?);
        self.state = LstmState::zeros(self.cfg.policy.lstm_dim);
        self.prev = PrevInfo::default();
        Ok(())
    }

    /// One decision in the running episode, followed by the configured updates.
    pub fn step(&mut self) -> Result<StepReport, PolicyError> {
        if self.env.as_ref().is_none_or(NavEnv::is_done) {
            self.start_episode()?;
        }
        let env = self.env.as_mut().expect("episode started");
        let obs = ObsRecord::from_observation(env.observation());
        let (probs, next_state) = self.agent.act(&self.store, &obs, &self.state, &self.prev)?;
        let action = if self.env_steps < self.cfg.warmup {
            self.rng.random_range(0..probs.len())
        } else {
            select_action(&probs, ActionMode::Sample, &mut self.rng)
        };
        let result = env.step(action)?;
        let next_prev = PrevInfo {
            features: obs.node_features(action),
            reward: result.reward as f32,
        };
        self.replay.push(Transition {
            obs,
            state: self.state.clone(),
            prev: self.prev,
            action,
            reward: result.reward as f32,
            next_obs: ObsRecord::from_observation(&result.obs),
            next_state: next_state.clone(),
            next_prev,
            done: result.done,
        });
        self.state = next_state;
        self.prev = next_prev;
        self.env_steps += 1;

        let mut report = StepReport::default();
        if result.done {
            let stat = EpisodeStat {
                index: self.episodes,
                env_step: self.env_steps,
                outcome: result.outcome,
                steps: env.steps(),
                reward_sum: env.reward_sum(),
            };
            self.log.episodes.push(stat);
            self.episodes += 1;
            report.finished = Some(stat);
        }
        if self.env_steps >= self.cfg.warmup && self.replay.len() >= self.cfg.batch {
            for _ in 0..self.cfg.updates_per_step {
                let batch = self.replay.sample(self.cfg.batch, &mut self.rng);
                let l = sac_update(
                    &self.agent,
                    &mut self.store,
                    &mut self.opt,
                    &mut self.alpha_opt,
                    &batch,
                    &self.cfg.sac,
                )?;
                self.log.updates.push((self.env_steps, l));
                report.losses = Some(l);
            }
        }
        if self.cfg.eval_every > 0 && self.env_steps % self.cfg.eval_every == 0 {
            let m = self.evaluate(self.cfg.eval_episodes, 1)?;
            self.log.evals.push((self.env_steps, m));
            report.eval = Some(m);
        }
        Ok(report)
    }

    /// Collects decisions until `cfg.steps`, calling `on_step` after each.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, &StepReport)) -> Result<(), PolicyError> {
        while self.env_steps < self.cfg.steps {
            let r = self.step()?;
            on_step(self, &r);
        }
        Ok(())
    }

    /// Greedy policy on held-out episodes of the training level.
    pub fn evaluate(&self, episodes: usize, workers: usize) -> Result<Metrics, PolicyError> {
        let shared = Arc::new((self.agent.clone(), self.store.clone()));
        let records = evaluate(&self.spec, &self.cfg.env, episodes, self.cfg.seed, workers, &|id| {
            Box::new(PolicyActor::new(shared.clone(), ActionMode::Argmax, id as u64))
        })
        .map_err(|e| PolicyError::Env(e.to_string()))?;
        compute_sr_spl(&records).map_err(|e| PolicyError::Env(e.to_string()))
    }

    /// Parameters of all networks, both optimizers, the architecture and the
    /// decision / episode counters. Replay contents are not saved.
    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let mut extra = self.opt.export(&self.store, "opt.");
        extra.extend(self.alpha_opt.export(&self.store, "opt_alpha."));
        extra.extend(meta_tensors(&self.agent));
        extra.push((
            "meta.counters".into(),
            Tensor::from_vec(&[2], vec![self.env_steps as f32, self.episodes as f32])?,
        ));
        save_store(path, &self.store, &extra)?;
        Ok(())
    }
}

fn meta_tensors(agent: &Agent) -> Vec<(String, Tensor)> {
    let p = agent.cfg;
    vec![
        (
            "meta.encoder_cfg".into(),
            crate::encoder::encoder_cfg_tensor(&agent.enc_cfg),
        ),
        (
            "meta.policy_cfg".into(),
            Tensor::from_vec(
                &[4],
                [p.d_model, p.layers, p.heads, p.lstm_dim].iter().map(|v| *v as f32).collect(),
            )
            .expect("fixed length"),
        ),
    ]
}

/// Copies `enc.*` weights from a pretraining checkpoint. The stored architecture
/// must match `expected`.
pub fn load_pretrained_encoder(
    store: &mut ParamStore,
    expected: &EncoderCfg,
    path: &Path,
) -> Result<usize, PolicyError> {
    let ckpt = load_store(path)?;
    let found = encoder_cfg_from_store(&ckpt)?;
    if found != *expected {
        return Err(PolicyError::Config(format!(
            "encoder checkpoint has {found:?}, run expects {expected:?}"
        )));
    }
    let want = store.ids_with_prefix(ENCODER_PREFIX).len();
    let copied = store.load_matching(&ckpt, ENCODER_PREFIX, ENCODER_PREFIX)?;
    if copied != want {
        return Err(PolicyError::Format(format!(
            "encoder checkpoint provides {copied} of {want} encoder tensors"
        )));
    }
    Ok(copied)
}

/// Rebuilds an agent from a checkpoint written by [`RlTrainer::save`].
pub fn load_agent(path: &Path) -> Result<(Agent, ParamStore), PolicyError> {
    let ckpt = load_store(path)?;
    let enc = encoder_cfg_from_store(&ckpt)?;
    let p = ckpt
        .by_name("meta.policy_cfg")
        .ok_or_else(|| PolicyError::Format("checkpoint lacks meta.policy_cfg".into()))?;
    let v: Vec<usize> = p.data().iter().map(|x| *x as usize).collect();
    if v.len() != 4 {
        return Err(PolicyError::Format("malformed meta.policy_cfg".into()));
    }
    let cfg = PolicyCfg {
        d_model: v[0],
        layers: v[1],
        heads: v[2],
        lstm_dim: v[3],
    };
    let mut store = ParamStore::new();
    let agent = Agent::init(&mut store, enc, cfg, 1.0, &mut seeded(0))?;
    let want = store.len();
    let copied = store.load_matching(&ckpt, "", "")?;
    if copied != want {
        return Err(PolicyError::Format(format!(
            "checkpoint provides {copied} of {want} agent tensors"
        )));
    }
    Ok((agent, store))
}
