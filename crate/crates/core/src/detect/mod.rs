//! Two-stage anchor detector: proposal network over encoder features, a
//! second-stage classifier with box refinement, and their losses.

pub mod anchors;
pub mod boxes;
pub mod config;
pub mod losses;
pub mod model;
pub mod nms;
pub mod train;

pub use anchors::{generate_anchors, match_anchors, Anchor, AnchorLabel, LabelKind};
pub use boxes::{eiou_loss, eiou_terms, iou, iou_loss, BBox, BoxError, EiouTerms};
pub use config::{DetectConfig, RegressionLoss};
pub use losses::{fastrcnn_loss, rpn_cls_loss, rpn_loss, smooth_l1_loss, total_loss};
pub use model::{Detector, EncoderInit, StepLoss};
pub use nms::{nms, nms_indices, Detection};
pub use train::{finetune, finetune_steps, format_log, BoxDetector, FinetuneOutcome, FinetuneRecord, OracleDetector};

use crate::ndgrad::checkpoint::CheckpointError;
use crate::ndgrad::GradError;

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error(transparent)]
    Box(#[from] BoxError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("config: {0}")]
    Config(String),
    #[error("no labeled training images")]
    EmptyLabelSet,
}
