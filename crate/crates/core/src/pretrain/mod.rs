//! Contrastive pretraining with a momentum encoder and per-level memory
//! queues.

pub mod encoder;
mod loss;
mod queue;
mod train;
mod views;

pub use encoder::{ContrastiveNet, Encoder, Mlp, NetSpec, LEVELS};
pub use loss::{
    detco_loss, detco_loss_graph, info_nce, info_nce_graph, momentum_update, DetcoLoss, LevelEmbeddings,
    LevelTerms, LossWeights, QueueVars,
};
pub use queue::{KeyQueue, QueuePair};
pub use train::{format_log, pretrain, PretrainConfig, PretrainOutcome, Pretrainer, StepRecord};
pub use views::{make_views, tile, ViewConfig, ViewSet};

use crate::ndgrad::checkpoint::CheckpointError;
use crate::ndgrad::GradError;
use crate::phantom::PhantomError;

#[derive(Debug, thiserror::Error)]
pub enum PretrainError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid pretraining config: {0}")]
    Config(String),
    #[error("key of dimension {got}, queue holds {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("key norm {0} is not 1")]
    NotUnit(f64),
    #[error("no images to pretrain on")]
    EmptyDataset,
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
}
