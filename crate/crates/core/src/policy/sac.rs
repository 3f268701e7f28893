use rand::Rng;

use super::net::{check_graph, Agent, LstmState, ObsRecord, PrevInfo};
use super::PolicyError;
use crate::nn::{soft_update, AdamW, Grads, Graph, ParamStore, Tensor};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacCfg {
    pub gamma: f32,
    pub tau: f32,
    pub lr: f32,
    pub alpha_lr: f32,
    pub weight_decay: f32,
    pub init_alpha: f32,
    /// Keep alpha at `init_alpha` instead of tuning it.
    pub fixed_alpha: bool,
    /// Target entropy is `scale * ln(n_nodes)`.
    pub target_entropy_scale: f32,
    /// Let the critic loss update the context encoder.
    pub finetune_encoder: bool,
}

impl Default for SacCfg {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            lr: 1e-5,
            alpha_lr: 1e-5,
            weight_decay: 0.0,
            init_alpha: 0.2,
            fixed_alpha: false,
            target_entropy_scale: 0.4,
            finetune_encoder: true,
        }
    }
}

impl SacCfg {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let mut bad = Vec::new();
        if !(0.0..=1.0).contains(&self.gamma) {
            bad.push("gamma");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            bad.push("tau");
        }
        if !(self.lr >= 0.0) {
            bad.push("lr");
        }
        if !(self.alpha_lr >= 0.0) {
            bad.push("alpha_lr");
        }
        if !(self.init_alpha > 0.0) {
            bad.push("init_alpha");
        }
        if !(self.weight_decay >= 0.0) {
            bad.push("weight_decay");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(PolicyError::Config(format!("out of range: {}", bad.join(", "))))
        }
    }
}

/// One decision with the recurrent context it was taken in.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: ObsRecord,
    pub state: LstmState,
    pub prev: PrevInfo,
    pub action: usize,
    pub reward: f32,
    pub next_obs: ObsRecord,
    pub next_state: LstmState,
    pub next_prev: PrevInfo,
    pub done: bool,
}

/// Fixed-capacity FIFO of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Adds a transition, evicting the oldest when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// `batch` transitions drawn uniformly with replacement.
    pub fn sample<'a>(&'a self, batch: usize, rng: &mut SimRng) -> Vec<&'a Transition> {
        (0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Argmax,
}

/// Draws from `probs` or takes its first maximum.
pub fn select_action(probs: &[f32], mode: ActionMode, rng: &mut SimRng) -> usize {
    assert!(!probs.is_empty(), "empty action distribution");
    match mode {
        ActionMode::Argmax => {
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            best
        }
        ActionMode::Sample => {
            let total: f64 = probs.iter().map(|p| *p as f64).sum();
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut last = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > 0.0 {
                    last = i;
                    acc += *p as f64;
                    if u < acc {
                        return i;
                    }
                }
            }
            last
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SacLosses {
    pub critic: f64,
    pub actor: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    /// Mean policy entropy on the batch states.
    pub entropy: f64,
    pub q_mean: f64,
}

/// Bootstrapped targets `y = r + gamma (1 - done) V(s')` with
/// `V(s') = sum_a pi(a|s') (min Q'(s', a) - alpha log pi(a|s'))`.
pub fn critic_targets(
    agent: &Agent,
    store: &ParamStore,
    batch: &[&Transition],
    gamma: f32,
    alpha: f32,
) -> Result<Vec<f64>, PolicyError> {
    let mut ys = Vec::with_capacity(batch.len());
    for t in batch {
        if t.done || gamma == 0.0 {
            ys.push(t.reward as f64);
            continue;
        }
        let mut g = Graph::new(store);
        let zc = agent.encode(&mut g, &t.next_obs.context_map())?;
        let x = agent.inputs(&mut g, &t.next_obs, &t.next_state, &t.next_prev)?;
        let a = agent.run_trunk(&mut g, &agent.actor, zc, &x);
        let logits = agent.actor.logits(&mut g, &a);
        let lp = g.log_softmax(logits);
        let o1 = agent.run_trunk(&mut g, &agent.q1_targ, zc, &x);
        let v1 = agent.q1_targ.q_values(&mut g, &o1);
        let o2 = agent.run_trunk(&mut g, &agent.q2_targ, zc, &x);
        let v2 = agent.q2_targ.q_values(&mut g, &o2);
        check_graph(&g)?;
        let (lp, v1, v2) = (g.value(lp).data(), g.value(v1).data(), g.value(v2).data());
        let mut v = 0.0f64;
        for i in 0..lp.len() {
            let logp = lp[i] as f64;
            let q = (v1[i] as f64).min(v2[i] as f64);
            v += logp.exp() * (q - alpha as f64 * logp);
        }
        ys.push(t.reward as f64 + gamma as f64 * v);
    }
    Ok(ys)
}

/// One discrete SAC update: twin-critic regression (which also trains the
/// encoder when enabled), the actor's soft policy improvement against the
/// detached min-Q, the temperature step and the soft target update.
pub fn sac_update(
    agent: &Agent,
    store: &mut ParamStore,
    opt: &mut AdamW,
    alpha_opt: &mut AdamW,
    batch: &[&Transition],
    cfg: &SacCfg,
) -> Result<SacLosses, PolicyError> {
    if batch.is_empty() {
        return Err(PolicyError::Argument("empty batch".into()));
    }
    for t in batch {
        if t.action >= t.obs.n_nodes() {
            return Err(PolicyError::Argument(format!(
                "action {} out of range for {} nodes",
                t.action,
                t.obs.n_nodes()
            )));
        }
    }
    let alpha = agent.alpha(store);
    let ys = critic_targets(agent, store, batch, cfg.gamma, alpha)?;
    let inv_b = 1.0 / batch.len() as f32;
    let mut grads = Grads::new(store);
    let mut out = SacLosses {
        alpha: alpha as f64,
        ..Default::default()
    };
    let mut entropy_gap = 0.0f64;
    for (t, y) in batch.iter().zip(&ys) {
        // critics
        let (zc_value, qmin) = {
            let mut g = Graph::new(store);
            let zc = agent.encode(&mut g, &t.obs.context_map())?;
            let zc = if cfg.finetune_encoder { zc } else { g.detach(zc) };
            let x = agent.inputs(&mut g, &t.obs, &t.state, &t.prev)?;
            let o1 = agent.run_trunk(&mut g, &agent.q1, zc, &x);
            let v1 = agent.q1.q_values(&mut g, &o1);
            let o2 = agent.run_trunk(&mut g, &agent.q2, zc, &x);
            let v2 = agent.q2.q_values(&mut g, &o2);
            let mut loss = None;
            for v in [v1, v2] {
                let qa = g.pick(v, t.action);
                let d = g.add_const(qa, -(*y as f32));
                let sq = g.square(d);
                loss = Some(match loss {
                    None => sq,
                    Some(l) => g.add(l, sq),
                });
            }
            let loss = loss.expect("two critics");
            g.backward_scaled(loss, inv_b, &mut grads)?;
            out.critic += g.scalar(loss) / batch.len() as f64;
            out.q_mean += (g.value(v1).data()[t.action] as f64) / batch.len() as f64;
            let qmin: Vec<f32> = g
                .value(v1)
                .data()
                .iter()
                .zip(g.value(v2).data())
                .map(|(a, b)| a.min(*b))
                .collect();
            (g.value(zc).clone(), qmin)
        };
        // actor on the detached encoding
        {
            let mut g = Graph::new(store);
            let zc = g.input(zc_value);
            let x = agent.inputs(&mut g, &t.obs, &t.state, &t.prev)?;
            let o = agent.run_trunk(&mut g, &agent.actor, zc, &x);
            let logits = agent.actor.logits(&mut g, &o);
            let p = g.softmax(logits);
            let lp = g.log_softmax(logits);
            let n = qmin.len();
            let q = g.input(Tensor::from_vec(&[1, n], qmin)?);
            let plp = g.mul(p, lp);
            let ent_term = g.scale(plp, alpha);
            let pq = g.mul(p, q);
            let neg_pq = g.scale(pq, -1.0);
            let per = g.add(ent_term, neg_pq);
            let loss = g.sum(per);
            g.backward_scaled(loss, inv_b, &mut grads)?;
            out.actor += g.scalar(loss) / batch.len() as f64;
            let h: f64 = -g
                .value(plp)
                .data()
                .iter()
                .map(|v| *v as f64)
                .sum::<f64>();
            out.entropy += h / batch.len() as f64;
            let target = cfg.target_entropy_scale as f64 * (n as f64).ln();
            entropy_gap += (h - target) / batch.len() as f64;
        }
    }
    opt.step_with_lr(store, &grads, cfg.lr)?;
    // J(alpha) = log_alpha * (H - target), so dJ/dlog_alpha = H - target
    out.alpha_loss = (alpha as f64).ln() * entropy_gap;
    if !cfg.fixed_alpha {
        let mut ag = Grads::new(store);
        ag.set(agent.log_alpha, Tensor::full(&[1], entropy_gap as f32));
        alpha_opt.step_with_lr(store, &ag, cfg.alpha_lr)?;
    }
    soft_update(store, &agent.target_pairs(store), cfg.tau)?;
    Ok(out)
}
