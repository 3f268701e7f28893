use rand::Rng;

use super::{PolicyCfg, PolicyError};
use crate::encoder::{tokenize, ContextEncoder, EncoderCfg};
use crate::gridmap::ContextMap;
use crate::maskgen::MaskSpec;
use crate::navenv::{Observation, NODE_FEATURES};
use crate::nn::{
    Graph, Linear, LstmCell, MultiHeadAttention, ParamId, ParamStore, Tensor,
    TransformerLayer, Var,
};

pub const ACTOR_PREFIX: &str = "actor.";
pub const Q1_PREFIX: &str = "q1.";
pub const Q2_PREFIX: &str = "q2.";
pub const Q1_TARGET_PREFIX: &str = "q1_targ.";
pub const Q2_TARGET_PREFIX: &str = "q2_targ.";
pub const LOG_ALPHA: &str = "sac.log_alpha";

/// Recurrent state carried across decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f32>,
    pub c: Vec<f32>,
}

impl LstmState {
    pub fn zeros(dim: usize) -> Self {
        Self {
            h: vec![0.0; dim],
            c: vec![0.0; dim],
        }
    }
}

/// What the recurrent summary sees of the previous decision.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrevInfo {
    pub features: [f32; NODE_FEATURES],
    pub reward: f32,
}

/// An observation reduced to what the networks consume. The context is kept as
/// byte codes (value x 2).
#[derive(Debug, Clone, PartialEq)]
pub struct ObsRecord {
    pub ctx_h: usize,
    pub ctx_w: usize,
    pub context: Vec<u8>,
    /// Row-major `[n, NODE_FEATURES]`.
    pub nodes: Vec<f32>,
}

impl ObsRecord {
    pub fn from_observation(obs: &Observation) -> Self {
        Self {
            ctx_h: obs.context.height(),
            ctx_w: obs.context.width(),
            context: obs.context.to_codes(),
            nodes: obs.graph.feature_matrix(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len() / NODE_FEATURES
    }

    pub fn context_map(&self) -> ContextMap {
        ContextMap::from_codes(self.ctx_h, self.ctx_w, &self.context).expect("codes written by to_codes")
    }

    pub fn node_features(&self, i: usize) -> [f32; NODE_FEATURES] {
        let mut f = [0.0; NODE_FEATURES];
        f.copy_from_slice(&self.nodes[i * NODE_FEATURES..(i + 1) * NODE_FEATURES]);
        f
    }

    pub fn node_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.n_nodes(), NODE_FEATURES], self.nodes.clone()).expect("feature rows")
    }
}

/// Graph handles produced by one trunk pass.
#[derive(Debug, Clone, Copy)]
pub struct TrunkOut {
    /// Node embeddings after self-attention, `[n, d']`.
    pub zn: Var,
    /// Query after both cross-attention stages, `[1, d']`.
    pub query: Var,
    pub h: Var,
    pub c: Var,
}

/// Node self-attention, recurrent summary and two-stage cross-attention shared by
/// the actor and the critics. Critics add a per-node value head.
#[derive(Debug, Clone)]
pub struct Trunk {
    pub prefix: String,
    pub d_model: usize,
    pub ctx_proj: Linear,
    pub node_embed: Linear,
    pub node_layers: Vec<TransformerLayer>,
    pub lstm_in: Linear,
    pub lstm: LstmCell,
    pub h_proj: Option<Linear>,
    pub cross_ctx: MultiHeadAttention,
    pub cross_node: MultiHeadAttention,
    pub head: Option<Linear>,
}

impl Trunk {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_enc: usize,
        cfg: &PolicyCfg,
        critic: bool,
        rng: &mut R,
    ) -> Result<Self, PolicyError> {
        let d = cfg.d_model;
        let name = |s: &str| format!("{prefix}{s}");
        Ok(Self {
            prefix: prefix.to_string(),
            d_model: d,
            ctx_proj: Linear::init(store, &name("ctx_proj"), d_enc, d, true, rng)?,
            node_embed: Linear::init(store, &name("node_embed"), NODE_FEATURES, d, true, rng)?,
            node_layers: (0..cfg.layers)
                .map(|i| TransformerLayer::init(store, &name(&format!("node{i}")), d, cfg.heads, rng))
                .collect::<Result<Vec<_>, _>>()?,
            lstm_in: Linear::init(store, &name("lstm_in"), 2 * d + 1, cfg.lstm_dim, true, rng)?,
            lstm: LstmCell::init(store, &name("lstm"), cfg.lstm_dim, cfg.lstm_dim, rng)?,
            h_proj: if cfg.lstm_dim != d {
                Some(Linear::init(store, &name("h_proj"), cfg.lstm_dim, d, true, rng)?)
            } else {
                None
            },
            cross_ctx: MultiHeadAttention::init(store, &name("cross_ctx"), d, cfg.heads, rng)?,
            cross_node: MultiHeadAttention::init(store, &name("cross_node"), d, cfg.heads, rng)?,
            head: if critic {
                Some(Linear::init(store, &name("head"), 2 * d, 1, true, rng)?)
            } else {
                None
            },
        })
    }

    /// `zc: [N, d_enc]`, `nodes: [n, F]`, `prev: [1, F + 1]` (features then reward),
    /// `h, c: [1, lstm_dim]`.
    pub fn forward(&self, g: &mut Graph, zc: Var, nodes: Var, prev: Var, h: Var, c: Var) -> TrunkOut {
        let zc = self.ctx_proj.forward(g, zc);
        let mut zn = self.node_embed.forward(g, nodes);
        for layer in &self.node_layers {
            zn = layer.forward(g, zn);
        }
        let pooled = g.mean_rows(zn);
        let prev_feat = g.slice_cols(prev, 0, NODE_FEATURES);
        let prev_r = g.slice_cols(prev, NODE_FEATURES, 1);
        let prev_e = self.node_embed.forward(g, prev_feat);
        let x = g.concat_cols(&[pooled, prev_e, prev_r]);
        let x = self.lstm_in.forward(g, x);
        let (h2, c2) = self.lstm.forward(g, x, h, c);
        let q = match &self.h_proj {
            Some(p) => p.forward(g, h2),
            None => h2,
        };
        let a = self.cross_ctx.forward(g, q, zc);
        let h1 = g.add(a, q);
        let b = self.cross_node.forward(g, h1, zn);
        let query = g.add(b, h1);
        TrunkOut {
            zn,
            query,
            h: h2,
            c: c2,
        }
    }

    /// Pointer logits `query . zn_i / sqrt(d')` as `[1, n]`.
    pub fn logits(&self, g: &mut Graph, out: &TrunkOut) -> Var {
        let s = g.matmul_t(out.query, false, out.zn, true);
        g.scale(s, 1.0 / (self.d_model as f32).sqrt())
    }

    /// Per-node values `Linear([query * zn_i, zn_i])` as `[n, 1]`.
    pub fn q_values(&self, g: &mut Graph, out: &TrunkOut) -> Var {
        let head = self.head.as_ref().expect("critic trunk");
        let inter = g.mul_row(out.zn, out.query);
        let x = g.concat_cols(&[inter, out.zn]);
        head.forward(g, x)
    }

    pub fn param_ids(&self, store: &ParamStore) -> Vec<ParamId> {
        store.ids_with_prefix(&self.prefix)
    }
}

/// Encoder, actor, twin critics, their targets and the entropy temperature.
#[derive(Debug, Clone)]
pub struct Agent {
    pub enc_cfg: EncoderCfg,
    pub cfg: PolicyCfg,
    pub encoder: ContextEncoder,
    pub actor: Trunk,
    pub q1: Trunk,
    pub q2: Trunk,
    pub q1_targ: Trunk,
    pub q2_targ: Trunk,
    pub log_alpha: ParamId,
}

/// Per-sample inputs placed on a graph.
#[derive(Debug, Clone, Copy)]
pub struct Inputs {
    pub nodes: Var,
    pub prev: Var,
    pub h: Var,
    pub c: Var,
}

impl Agent {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        enc_cfg: EncoderCfg,
        cfg: PolicyCfg,
        init_alpha: f32,
        rng: &mut R,
    ) -> Result<Self, PolicyError> {
        cfg.validate()?;
        if !(init_alpha > 0.0) {
            return Err(PolicyError::Config("initial alpha must be positive".into()));
        }
        let encoder = ContextEncoder::init(store, enc_cfg, rng)?;
        let d_enc = enc_cfg.d;
        let actor = Trunk::init(store, ACTOR_PREFIX, d_enc, &cfg, false, rng)?;
        let q1 = Trunk::init(store, Q1_PREFIX, d_enc, &cfg, true, rng)?;
        let q2 = Trunk::init(store, Q2_PREFIX, d_enc, &cfg, true, rng)?;
        let q1_targ = Trunk::init(store, Q1_TARGET_PREFIX, d_enc, &cfg, true, rng)?;
        let q2_targ = Trunk::init(store, Q2_TARGET_PREFIX, d_enc, &cfg, true, rng)?;
        let log_alpha = store.insert(LOG_ALPHA, Tensor::full(&[1], init_alpha.ln()))?;
        let agent = Self {
            enc_cfg,
            cfg,
            encoder,
            actor,
            q1,
            q2,
            q1_targ,
            q2_targ,
            log_alpha,
        };
        crate::nn::soft_update(store, &agent.target_pairs(store), 1.0)?;
        Ok(agent)
    }

    /// `(target, online)` parameter pairs of both critics.
    pub fn target_pairs(&self, store: &ParamStore) -> Vec<(ParamId, ParamId)> {
        let mut pairs = Vec::new();
        for (targ, online) in [(Q1_TARGET_PREFIX, Q1_PREFIX), (Q2_TARGET_PREFIX, Q2_PREFIX)] {
            for id in store.ids_with_prefix(targ) {
                let rest = &store.name(id)[targ.len()..];
                let o = store.id(&format!("{online}{rest}")).expect("target mirrors online");
                pairs.push((id, o));
            }
        }
        pairs
    }

    pub fn alpha(&self, store: &ParamStore) -> f32 {
        store.get(self.log_alpha).item().exp()
    }

    /// Encoder output `[N, d]` for a context.
    pub fn encode(&self, g: &mut Graph, context: &ContextMap) -> Result<Var, PolicyError> {
        let tokens = tokenize(context, self.enc_cfg.patch)?;
        let t = g.input(tokens);
        Ok(self.encoder.encode(g, t, &MaskSpec::none(self.enc_cfg.grid()))?.z)
    }

    pub fn inputs(
        &self,
        g: &mut Graph,
        obs: &ObsRecord,
        state: &LstmState,
        prev: &PrevInfo,
    ) -> Result<Inputs, PolicyError> {
        if obs.n_nodes() == 0 {
            return Err(PolicyError::Argument("observation has no candidate node".into()));
        }
        let dim = self.cfg.lstm_dim;
        if state.h.len() != dim || state.c.len() != dim {
            return Err(PolicyError::Argument(format!("lstm state must have width {dim}")));
        }
        let mut p = prev.features.to_vec();
        p.push(prev.reward);
        Ok(Inputs {
            nodes: g.input(obs.node_tensor()),
            prev: g.input(Tensor::from_vec(&[1, NODE_FEATURES + 1], p)?),
            h: g.input(Tensor::from_vec(&[1, dim], state.h.clone())?),
            c: g.input(Tensor::from_vec(&[1, dim], state.c.clone())?),
        })
    }

    pub fn run_trunk(&self, g: &mut Graph, trunk: &Trunk, zc: Var, x: &Inputs) -> TrunkOut {
        trunk.forward(g, zc, x.nodes, x.prev, x.h, x.c)
    }

    /// Action distribution over the observation's nodes and the next recurrent state.
    pub fn act(
        &self,
        store: &ParamStore,
        obs: &ObsRecord,
        state: &LstmState,
        prev: &PrevInfo,
    ) -> Result<(Vec<f32>, LstmState), PolicyError> {
        let mut g = Graph::new(store);
        let zc = self.encode(&mut g, &obs.context_map())?;
        let x = self.inputs(&mut g, obs, state, prev)?;
        let out = self.run_trunk(&mut g, &self.actor, zc, &x);
        let logits = self.actor.logits(&mut g, &out);
        let p = g.softmax(logits);
        check_graph(&g)?;
        let next = LstmState {
            h: g.value(out.h).data().to_vec(),
            c: g.value(out.c).data().to_vec(),
        };
        Ok((g.value(p).data().to_vec(), next))
    }

    /// Both online critics' per-node values.
    pub fn q_values(
        &self,
        store: &ParamStore,
        obs: &ObsRecord,
        state: &LstmState,
        prev: &PrevInfo,
    ) -> Result<(Vec<f32>, Vec<f32>), PolicyError> {
        let mut g = Graph::new(store);
        let zc = self.encode(&mut g, &obs.context_map())?;
        let x = self.inputs(&mut g, obs, state, prev)?;
        let o1 = self.run_trunk(&mut g, &self.q1, zc, &x);
        let v1 = self.q1.q_values(&mut g, &o1);
        let o2 = self.run_trunk(&mut g, &self.q2, zc, &x);
        let v2 = self.q2.q_values(&mut g, &o2);
        check_graph(&g)?;
        Ok((g.value(v1).data().to_vec(), g.value(v2).data().to_vec()))
    }
}

pub(crate) fn check_graph(g: &Graph) -> Result<(), PolicyError> {
    match g.fault() {
        Some(op) => Err(PolicyError::Numeric(format!("non-finite value produced by {op}"))),
        None => Ok(()),
    }
}
