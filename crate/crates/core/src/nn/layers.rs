//! Parameterized layers. Each layer owns only [`ParamId`]s; values live in the
//! [`ParamStore`] and forward passes are recorded on a [`Graph`].

use rand::Rng;

use super::{Graph, NnError, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Xavier-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
        let w = store.insert(
            format!("{name}.w"),
            Tensor::uniform(&[fan_in, fan_out], bound, rng),
        )?;
        let b = if bias {
            Some(store.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]))?)
        } else {
            None
        };
        Ok(Self {
            w,
            b,
            fan_in,
            fan_out,
        })
    }

    pub fn bind(store: &ParamStore, name: &str) -> Result<Self, NnError> {
        let w = lookup(store, &format!("{name}.w"))?;
        let b = store.id(&format!("{name}.b"));
        let shape = store.get(w).shape();
        Ok(Self {
            w,
            b,
            fan_in: shape[0],
            fan_out: shape[1],
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

pub(crate) fn lookup(store: &ParamStore, name: &str) -> Result<ParamId, NnError> {
    store
        .id(name)
        .ok_or_else(|| NnError::MissingParam(name.to_string()))
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, name: &str, width: usize) -> Result<Self, NnError> {
        Ok(Self {
            gamma: store.insert(format!("{name}.gamma"), Tensor::full(&[width], 1.0))?,
            beta: store.insert(format!("{name}.beta"), Tensor::zeros(&[width]))?,
        })
    }

    pub fn bind(store: &ParamStore, name: &str) -> Result<Self, NnError> {
        Ok(Self {
            gamma: lookup(store, &format!("{name}.gamma"))?,
            beta: lookup(store, &format!("{name}.beta"))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Multi-head attention with per-head projections packed column-wise into
/// `[d, d]` matrices, followed by the output projection.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub width: usize,
}

impl MultiHeadAttention {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if heads == 0 || width % heads != 0 {
            return Err(NnError::Shape(format!(
                "width {width} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::init(store, &format!("{name}.q"), width, width, true, rng)?,
            k: Linear::init(store, &format!("{name}.k"), width, width, true, rng)?,
            v: Linear::init(store, &format!("{name}.v"), width, width, true, rng)?,
            o: Linear::init(store, &format!("{name}.o"), width, width, true, rng)?,
            heads,
            width,
        })
    }

    /// Queries from `q_src`, keys and values from `kv_src`. Returns the output and the
    /// attention node (for probability inspection).
    pub fn forward_with_probs(&self, g: &mut Graph, q_src: Var, kv_src: Var) -> (Var, Var) {
        let q = self.q.forward(g, q_src);
        let k = self.k.forward(g, kv_src);
        let v = self.v.forward(g, kv_src);
        let att = g.attention(q, k, v, self.heads);
        (self.o.forward(g, att), att)
    }

    pub fn forward(&self, g: &mut Graph, q_src: Var, kv_src: Var) -> Var {
        self.forward_with_probs(g, q_src, kv_src).0
    }
}

/// Post-norm transformer block: `z' = LN(x + MHSA(x))`, `out = LN(z' + FFN(z'))`,
/// FFN = Linear(d, 4d) -> GELU -> Linear(4d, d).
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

impl TransformerLayer {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Ok(Self {
            attn: MultiHeadAttention::init(store, &format!("{name}.attn"), width, heads, rng)?,
            ln1: LayerNorm::init(store, &format!("{name}.ln1"), width)?,
            ff1: Linear::init(store, &format!("{name}.ff1"), width, 4 * width, true, rng)?,
            ff2: Linear::init(store, &format!("{name}.ff2"), 4 * width, width, true, rng)?,
            ln2: LayerNorm::init(store, &format!("{name}.ln2"), width)?,
        })
    }

    /// Returns `(output, attention node)`.
    pub fn forward_with_probs(&self, g: &mut Graph, x: Var) -> (Var, Var) {
        let (a, probs) = self.attn.forward_with_probs(g, x, x);
        let r1 = g.add(x, a);
        let z = self.ln1.forward(g, r1);
        let h = self.ff1.forward(g, z);
        let h = g.gelu(h);
        let f = self.ff2.forward(g, h);
        let r2 = g.add(z, f);
        (self.ln2.forward(g, r2), probs)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        self.forward_with_probs(g, x).0
    }
}

/// Standard LSTM cell, gate order `[input, forget, candidate, output]`.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub wx: Linear,
    pub wh: Linear,
    pub hidden: usize,
}

impl LstmCell {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Ok(Self {
            wx: Linear::init(store, &format!("{name}.wx"), input, 4 * hidden, true, rng)?,
            wh: Linear::init(store, &format!("{name}.wh"), hidden, 4 * hidden, false, rng)?,
            hidden,
        })
    }

    /// `x: [1, input]`, `h, c: [1, hidden]` -> `(h', c')`.
    pub fn forward(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> (Var, Var) {
        let n = self.hidden;
        let gx = self.wx.forward(g, x);
        let gh = self.wh.forward(g, h);
        let gates = g.add(gx, gh);
        let i = g.slice_cols(gates, 0, n);
        let f = g.slice_cols(gates, n, n);
        let cand = g.slice_cols(gates, 2 * n, n);
        let o = g.slice_cols(gates, 3 * n, n);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let fc = g.mul(f, c);
        let ic = g.mul(i, cand);
        let c2 = g.add(fc, ic);
        let tc = g.tanh(c2);
        let h2 = g.mul(o, tc);
        (h2, c2)
    }
}

fn check_width(t: &Tensor, width: usize, what: &str) -> Result<(), NnError> {
    if t.shape().len() != 2 || t.cols() != width {
        return Err(NnError::Shape(format!(
            "{what} must be [n, {width}], got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Self-attention over the rows of `x`.
pub fn mhsa(store: &ParamStore, layer: &MultiHeadAttention, x: &Tensor) -> Result<Tensor, NnError> {
    check_width(x, layer.width, "mhsa input")?;
    let mut g = Graph::new(store);
    let xv = g.input(x.clone());
    let out = layer.forward(&mut g, xv, xv);
    Ok(g.value(out).clone())
}

/// Cross-attention: queries from `q`, keys/values from `kv`.
pub fn mhca(
    store: &ParamStore,
    layer: &MultiHeadAttention,
    q: &Tensor,
    kv: &Tensor,
) -> Result<Tensor, NnError> {
    check_width(q, layer.width, "mhca query")?;
    check_width(kv, layer.width, "mhca key/value")?;
    let mut g = Graph::new(store);
    let qv = g.input(q.clone());
    let kvv = g.input(kv.clone());
    let out = layer.forward(&mut g, qv, kvv);
    Ok(g.value(out).clone())
}

pub fn transformer_layer(
    store: &ParamStore,
    layer: &TransformerLayer,
    x: &Tensor,
) -> Result<Tensor, NnError> {
    check_width(x, layer.attn.width, "transformer input")?;
    let mut g = Graph::new(store);
    let xv = g.input(x.clone());
    let out = layer.forward(&mut g, xv);
    Ok(g.value(out).clone())
}

pub fn lstm_step(
    store: &ParamStore,
    cell: &LstmCell,
    x: &Tensor,
    h: &Tensor,
    c: &Tensor,
) -> Result<(Tensor, Tensor), NnError> {
    if x.len() != cell.wx.fan_in || h.len() != cell.hidden || c.len() != cell.hidden {
        return Err(NnError::Shape(format!(
            "lstm expects x[{}], h[{}], c[{}]; got {}, {}, {}",
            cell.wx.fan_in,
            cell.hidden,
            cell.hidden,
            x.len(),
            h.len(),
            c.len()
        )));
    }
    let mut g = Graph::new(store);
    let xv = g.input(x.clone().reshape(&[1, x.len()])?);
    let hv = g.input(h.clone().reshape(&[1, h.len()])?);
    let cv = g.input(c.clone().reshape(&[1, c.len()])?);
    let (h2, c2) = cell.forward(&mut g, xv, hv, cv);
    Ok((g.value(h2).clone(), g.value(c2).clone()))
}
