//! The waypoint-selection actor and twin critics, discrete SAC with replay and
//! target networks, and the RL training loop.
//!
//! Every network sees the context encoding of the local map and the candidate
//! node features. Node count varies per decision, so each sample is evaluated
//! on its own graph instead of being padded to a fixed size.

mod net;
mod sac;
mod toy;
mod train;

pub use net::{
    Agent, Inputs, LstmState, ObsRecord, PrevInfo, Trunk, TrunkOut, ACTOR_PREFIX, LOG_ALPHA,
    Q1_PREFIX, Q1_TARGET_PREFIX, Q2_PREFIX, Q2_TARGET_PREFIX,
};
pub use sac::{
    critic_targets, sac_update, select_action, ActionMode, ReplayBuffer, SacCfg, SacLosses,
    Transition,
};
pub use toy::{run_toy, ToyMdp, ToyReport, ToyRunCfg};
pub use train::{
    load_agent, load_pretrained_encoder, EpisodeStat, RlCfg, RlLog, RlTrainer, StepReport,
};

use crate::encoder::EncoderError;
use crate::navenv::NavError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("environment: {0}")]
    Env(String),
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Size of the actor and critic trunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyCfg {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub lstm_dim: usize,
}

impl Default for PolicyCfg {
    fn default() -> Self {
        Self {
            d_model: 128,
            layers: 6,
            heads: 8,
            lstm_dim: 128,
        }
    }
}

impl PolicyCfg {
    /// A smaller trunk that trains in reasonable time on one core.
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            layers: 2,
            heads: 4,
            lstm_dim: 64,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.d_model == 0 || self.lstm_dim == 0 {
            return Err(PolicyError::Config("d_model and lstm_dim must be positive".into()));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(PolicyError::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}
