//! Patch tokenization, the transformer context encoder, the lightweight
//! reconstruction decoder, the masked-reconstruction losses, pretraining and
//! attention export.

mod model;
mod train;

pub use model::{
    AttentionMap, ContextEncoder, Encoded, ReconDecoder, SslModel, ENCODER_PREFIX,
    DECODER_PREFIX,
};
pub(crate) use train::encoder_cfg_tensor;
pub use train::{
    encoder_cfg_from_store, load_ssl_checkpoint, pretrain_step, PretrainCfg, PretrainLog,
    Pretrainer, StepMetrics,
};

use crate::gridmap::ContextMap;
use crate::maskgen::MaskError;
use crate::nn::{NnError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Architecture of the context encoder and its reconstruction decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderCfg {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub patch: usize,
    pub map_h: usize,
    pub map_w: usize,
    pub dec_dim: usize,
    pub dec_layers: usize,
    pub dec_heads: usize,
}

impl Default for EncoderCfg {
    /// Desk-scale configuration.
    fn default() -> Self {
        Self {
            d: 128,
            layers: 4,
            heads: 4,
            patch: 8,
            map_h: 128,
            map_w: 128,
            dec_dim: 256,
            dec_layers: 2,
            dec_heads: 4,
        }
    }
}

impl EncoderCfg {
    /// The full-size model: d = 512, 6 layers, 4 heads, 8x8 patches.
    pub fn paper() -> Self {
        Self {
            d: 512,
            layers: 6,
            ..Self::default()
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.map_h / self.patch, self.map_w / self.patch)
    }

    pub fn n_patches(&self) -> usize {
        (self.map_h / self.patch) * (self.map_w / self.patch)
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::Argument(m));
        if self.patch == 0 || self.map_h % self.patch != 0 || self.map_w % self.patch != 0 {
            return bad(format!(
                "context {}x{} not divisible by patch {}",
                self.map_h, self.map_w, self.patch
            ));
        }
        if self.map_h == 0 || self.map_w == 0 {
            return bad("empty context".into());
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("d {} not divisible by {} heads", self.d, self.heads));
        }
        if self.dec_heads == 0 || self.dec_dim % self.dec_heads != 0 {
            return bad(format!(
                "decoder dim {} not divisible by {} heads",
                self.dec_dim, self.dec_heads
            ));
        }
        if self.layers == 0 {
            return bad("encoder needs at least one layer".into());
        }
        Ok(())
    }
}

/// Splits a context map into row-major `P x P` patches: `[N, P^2]`, each row the
/// row-major flattening of its block.
pub fn tokenize(map: &ContextMap, patch: usize) -> Result<Tensor, EncoderError> {
    let (h, w) = (map.height(), map.width());
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(EncoderError::Argument(format!(
            "context {h}x{w} not divisible by patch {patch}"
        )));
    }
    let (gr, gc) = (h / patch, w / patch);
    let mut data = Vec::with_capacity(h * w);
    for pr in 0..gr {
        for pc in 0..gc {
            for r in 0..patch {
                let row = pr * patch + r;
                let start = row * w + pc * patch;
                data.extend_from_slice(&map.data()[start..start + patch]);
            }
        }
    }
    Ok(Tensor::from_vec(&[gr * gc, patch * patch], data)?)
}

/// Inverse of [`tokenize`].
pub fn detokenize(tokens: &Tensor, h: usize, w: usize, patch: usize) -> Result<ContextMap, EncoderError> {
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(EncoderError::Argument(format!(
            "context {h}x{w} not divisible by patch {patch}"
        )));
    }
    let (gr, gc) = (h / patch, w / patch);
    if tokens.shape() != [gr * gc, patch * patch] {
        return Err(EncoderError::Argument(format!(
            "tokens {:?} do not tile a {h}x{w} map",
            tokens.shape()
        )));
    }
    let mut data = vec![0.0; h * w];
    for p in 0..gr * gc {
        let (pr, pc) = (p / gc, p % gc);
        for r in 0..patch {
            let dst = (pr * patch + r) * w + pc * patch;
            data[dst..dst + patch].copy_from_slice(&tokens.row(p)[r * patch..(r + 1) * patch]);
        }
    }
    ContextMap::from_vec(h, w, data).map_err(|e| EncoderError::Argument(e.to_string()))
}

/// Tokens of a batch of context maps: `[B, N, P^2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub tokens: Tensor,
}

impl PatchBatch {
    pub fn from_maps(maps: &[&ContextMap], patch: usize) -> Result<Self, EncoderError> {
        let rows = maps
            .iter()
            .map(|m| tokenize(m, patch))
            .collect::<Result<Vec<_>, _>>()?;
        let (n, p2) = rows
            .first()
            .map(|t| (t.rows(), t.cols()))
            .ok_or_else(|| EncoderError::Argument("empty batch".into()))?;
        if rows.iter().any(|t| t.rows() != n) {
            return Err(EncoderError::Argument("batch maps differ in size".into()));
        }
        let data: Vec<f32> = rows.into_iter().flat_map(Tensor::into_data).collect();
        Ok(Self {
            tokens: Tensor::from_vec(&[maps.len(), n, p2], data)?,
        })
    }

    pub fn batch(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn n(&self) -> usize {
        self.tokens.shape()[1]
    }

    /// Tokens of item `b` as `[N, P^2]`.
    pub fn item(&self, b: usize) -> Tensor {
        let (n, p2) = (self.tokens.shape()[1], self.tokens.shape()[2]);
        let start = b * n * p2;
        Tensor::from_vec(&[n, p2], self.tokens.data()[start..start + n * p2].to_vec())
            .expect("slice of a well-formed batch")
    }
}
