//! Minimal differentiable numeric core: dense `f32` tensors, a tape-based reverse
//! pass over the layer set the models need, AdamW, and the checkpoint format.

mod checkpoint;
mod gemm;
mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{load_store, read_checkpoint, save_store, write_checkpoint, MAGIC, VERSION};
pub use gradcheck::{grad_check, rel_err, GradCheckReport, REL_ERR_FLOOR};
pub use graph::{Graph, Var};
pub use layers::{
    lstm_step, mhca, mhsa, transformer_layer, LayerNorm, Linear, LstmCell, MultiHeadAttention,
    TransformerLayer,
};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Grads, ParamId, ParamStore};
pub use tensor::Tensor;


#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Elementwise `target <- tau * online + (1 - tau) * target` for each id pair.
pub fn soft_update(
    store: &mut ParamStore,
    pairs: &[(ParamId, ParamId)],
    tau: f32,
) -> Result<(), NnError> {
    for &(target, online) in pairs {
        if store.get(target).shape() != store.get(online).shape() {
            return Err(NnError::Shape(format!(
                "soft update {} <- {}: shape mismatch",
                store.name(target),
                store.name(online)
            )));
        }
        let src = store.get(online).data().to_vec();
        for (t, o) in store.get_mut(target).data_mut().iter_mut().zip(src) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }
    Ok(())
}
