use rand::Rng;

use super::{tokenize, EncoderCfg, EncoderError};
use crate::gridmap::ContextMap;
use crate::maskgen::{MaskSpec, TaskKind};
use crate::nn::{Graph, Linear, ParamId, ParamStore, Tensor, TransformerLayer, Var};

pub const ENCODER_PREFIX: &str = "enc.";
pub const DECODER_PREFIX: &str = "dec.";

/// Patch transformer `f_theta`: linear patch projection, learned positional
/// embeddings, post-norm transformer layers, and the SPM / FOV / MAE mask tokens.
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    pub cfg: EncoderCfg,
    pub proj: Linear,
    pub pos: ParamId,
    pub mask_spm: ParamId,
    pub mask_fov: ParamId,
    /// Stands in for masked patches when MAE outputs are re-assembled for decoding.
    pub mask_mae: ParamId,
    pub layers: Vec<TransformerLayer>,
}

/// Encoder output for one map.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[positions.len(), d]`.
    pub z: Var,
    /// Original patch index of each output row.
    pub positions: Vec<usize>,
    /// Attention node of each layer.
    pub attention: Vec<Var>,
}

impl ContextEncoder {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: EncoderCfg,
        rng: &mut R,
    ) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let p = ENCODER_PREFIX;
        let (n, d) = (cfg.n_patches(), cfg.d);
        let proj = Linear::init(store, &format!("{p}proj"), cfg.patch_len(), d, true, rng)?;
        let pos = store.insert(format!("{p}pos"), Tensor::randn(&[n, d], 0.02, rng))?;
        let mask_spm = store.insert(format!("{p}mask_spm"), Tensor::randn(&[1, d], 0.02, rng))?;
        let mask_fov = store.insert(format!("{p}mask_fov"), Tensor::randn(&[1, d], 0.02, rng))?;
        let mask_mae = store.insert(format!("{p}mask_mae"), Tensor::randn(&[1, d], 0.02, rng))?;
        let layers = (0..cfg.layers)
            .map(|i| TransformerLayer::init(store, &format!("{p}layer{i}"), d, cfg.heads, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            cfg,
            proj,
            pos,
            mask_spm,
            mask_fov,
            mask_mae,
            layers,
        })
    }

    pub fn mask_token(&self, task: TaskKind) -> ParamId {
        match task {
            TaskKind::Spm => self.mask_spm,
            TaskKind::Fov => self.mask_fov,
            TaskKind::Mae => self.mask_mae,
        }
    }

    /// Encodes one map's tokens `[N, P^2]` under `mask`. SPM / FOV positions in the
    /// masked set are replaced by the task's mask token after projection; FOV keeps
    /// only core and ring; MAE keeps only the visible patches. Positional
    /// embeddings follow the original patch index.
    pub fn encode(&self, g: &mut Graph, tokens: Var, mask: &MaskSpec) -> Result<Encoded, EncoderError> {
        let n = self.cfg.n_patches();
        let shape = g.value(tokens).shape().to_vec();
        if shape != [n, self.cfg.patch_len()] {
            return Err(EncoderError::Argument(format!(
                "tokens {shape:?}, expected [{n}, {}]",
                self.cfg.patch_len()
            )));
        }
        mask.validate(n)?;
        let positions = mask.encoder_positions();
        if positions.is_empty() {
            return Err(EncoderError::Argument("mask leaves no patch for the encoder".into()));
        }
        let all = positions.len() == n;
        let x = if all { tokens } else { g.select_rows(tokens, &positions) };
        let mut x = self.proj.forward(g, x);
        if let Some(task @ (TaskKind::Spm | TaskKind::Fov)) = mask.task {
            if !mask.masked.is_empty() {
                let src: Vec<Option<usize>> = positions
                    .iter()
                    .enumerate()
                    .map(|(k, p)| (!mask.is_masked(*p)).then_some(k))
                    .collect();
                let tok = g.param(self.mask_token(task));
                x = g.interleave(x, Some(tok), &src);
            }
        }
        let pos = g.param(self.pos);
        let pos = if all { pos } else { g.select_rows(pos, &positions) };
        let mut z = g.add(x, pos);
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, att) = layer.forward_with_probs(g, z);
            z = out;
            attention.push(att);
        }
        Ok(Encoded {
            z,
            positions,
            attention,
        })
    }

    /// Unmasked forward pass on a context map, returning `[N, d]`.
    pub fn embed(&self, store: &ParamStore, map: &ContextMap) -> Result<Tensor, EncoderError> {
        let tokens = tokenize(map, self.cfg.patch)?;
        let mut g = Graph::new(store);
        let t = g.input(tokens);
        let e = self.encode(&mut g, t, &MaskSpec::none(self.cfg.grid()))?;
        Ok(g.value(e.z).clone())
    }
}

/// Shared reconstruction decoder: input projection to the decoder width,
/// positional embeddings, post-norm layers, and a linear head to `P^2` values.
#[derive(Debug, Clone)]
pub struct ReconDecoder {
    pub input: Linear,
    pub pos: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub head: Linear,
}

impl ReconDecoder {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &EncoderCfg,
        rng: &mut R,
    ) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let p = DECODER_PREFIX;
        let dd = cfg.dec_dim;
        let input = Linear::init(store, &format!("{p}in"), cfg.d, dd, true, rng)?;
        let pos = store.insert(format!("{p}pos"), Tensor::randn(&[cfg.n_patches(), dd], 0.02, rng))?;
        let layers = (0..cfg.dec_layers)
            .map(|i| TransformerLayer::init(store, &format!("{p}layer{i}"), dd, cfg.dec_heads, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let head = Linear::init(store, &format!("{p}head"), dd, cfg.patch_len(), true, rng)?;
        Ok(Self {
            input,
            pos,
            layers,
            head,
        })
    }
}

/// Encoder plus decoder, the unit trained by self-supervised pretraining.
#[derive(Debug, Clone)]
pub struct SslModel {
    pub encoder: ContextEncoder,
    pub decoder: ReconDecoder,
}

/// Per-patch attention received, on the patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, scaled so the maximum is 1.
    pub values: Vec<f32>,
    /// Largest deviation of a probability row sum from 1.
    pub max_row_sum_err: f32,
}

impl SslModel {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: EncoderCfg,
        rng: &mut R,
    ) -> Result<Self, EncoderError> {
        let encoder = ContextEncoder::init(store, cfg, rng)?;
        let decoder = ReconDecoder::init(store, &cfg, rng)?;
        Ok(Self { encoder, decoder })
    }

    pub fn cfg(&self) -> &EncoderCfg {
        &self.encoder.cfg
    }

    /// Reconstruction `[N, P^2]` from an encoding. MAE outputs are interleaved with
    /// the MAE mask token at their original indices to form the full sequence.
    /// Patches never fed to the encoder (outside the FOV ring) come out as zeros.
    pub fn decode(&self, g: &mut Graph, enc: &Encoded, mask: &MaskSpec) -> Result<Var, EncoderError> {
        let n = self.cfg().n_patches();
        let width = g.value(enc.z).cols();
        if width != self.cfg().d || g.value(enc.z).rows() != enc.positions.len() {
            return Err(EncoderError::Argument("encoding does not match decoder".into()));
        }
        let (seq, positions): (Var, Vec<usize>) = if mask.task == Some(TaskKind::Mae) {
            let mut src = vec![None; n];
            for (k, &p) in enc.positions.iter().enumerate() {
                src[p] = Some(k);
            }
            let tok = g.param(self.encoder.mask_mae);
            (g.interleave(enc.z, Some(tok), &src), (0..n).collect())
        } else {
            (enc.z, enc.positions.clone())
        };
        let mut h = self.decoder.input.forward(g, seq);
        let pos = g.param(self.decoder.pos);
        let pos = if positions.len() == n { pos } else { g.select_rows(pos, &positions) };
        h = g.add(h, pos);
        for layer in &self.decoder.layers {
            h = layer.forward(g, h);
        }
        let out = self.decoder.head.forward(g, h);
        if positions.len() == n {
            return Ok(out);
        }
        let mut src = vec![None; n];
        for (k, &p) in positions.iter().enumerate() {
            src[p] = Some(k);
        }
        Ok(g.interleave(out, None, &src))
    }

    /// Per-element MSE over the masked patches of one map.
    pub fn ssl_loss(
        &self,
        g: &mut Graph,
        recon: Var,
        target: &Tensor,
        mask: &MaskSpec,
    ) -> Result<Var, EncoderError> {
        if mask.masked.is_empty() {
            return Err(EncoderError::Argument("loss needs at least one masked patch".into()));
        }
        if g.value(recon).shape() != target.shape() {
            return Err(EncoderError::Argument(format!(
                "recon {:?} vs target {:?}",
                g.value(recon).shape(),
                target.shape()
            )));
        }
        Ok(g.masked_mse(recon, target, &mask.masked))
    }

    /// Encode, decode and score one map: returns `(recon, loss)`.
    pub fn forward(
        &self,
        g: &mut Graph,
        tokens: &Tensor,
        mask: &MaskSpec,
    ) -> Result<(Var, Var), EncoderError> {
        let t = g.input(tokens.clone());
        let enc = self.encoder.encode(g, t, mask)?;
        let recon = self.decode(g, &enc, mask)?;
        let loss = self.ssl_loss(g, recon, tokens, mask)?;
        Ok((recon, loss))
    }

    /// Mean attention each patch receives at `layer` / `head` for an unmasked map.
    pub fn export_attention(
        &self,
        store: &ParamStore,
        map: &ContextMap,
        layer: usize,
        head: usize,
    ) -> Result<AttentionMap, EncoderError> {
        let cfg = self.cfg();
        if layer >= cfg.layers || head >= cfg.heads {
            return Err(EncoderError::Argument(format!(
                "layer {layer} / head {head} out of range ({} layers, {} heads)",
                cfg.layers, cfg.heads
            )));
        }
        let tokens = tokenize(map, cfg.patch)?;
        let mut g = Graph::new(store);
        let t = g.input(tokens);
        let enc = self.encoder.encode(&mut g, t, &MaskSpec::none(cfg.grid()))?;
        let (probs, heads, nq, nk) = g
            .attention_probs(enc.attention[layer])
            .expect("encoder layers record attention");
        debug_assert_eq!(heads, cfg.heads);
        let block = &probs[head * nq * nk..(head + 1) * nq * nk];
        let mut received = vec![0.0f64; nk];
        let mut max_err = 0.0f32;
        for row in block.chunks(nk) {
            let s: f64 = row.iter().map(|v| *v as f64).sum();
            max_err = max_err.max((s - 1.0).abs() as f32);
            for (acc, v) in received.iter_mut().zip(row) {
                *acc += *v as f64;
            }
        }
        let max = received.iter().copied().fold(0.0f64, f64::max);
        let values = received
            .iter()
            .map(|v| if max > 0.0 { (*v / max) as f32 } else { 0.0 })
            .collect();
        let (rows, cols) = cfg.grid();
        Ok(AttentionMap {
            rows,
            cols,
            values,
            max_row_sum_err: max_err,
        })
    }
}

impl AttentionMap {
    pub fn to_gray(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}
