//! Detection scoring: greedy matching of detections to ground truth, count
//! based precision, recall, accuracy and F1, and box overlays.

mod matching;
mod metrics;
mod render;

pub use matching::{match_detections, MatchResult, MatchedPair};
pub use metrics::{compute_metrics, evaluate, format_report, EvalConfig, EvalOutcome, ImageResult, MetricsReport};
pub use render::{pixel_span, render_boxes, DET_INTENSITY, GT_INTENSITY};

use crate::detect::DetectError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("metrics undefined: no true positives, false positives or false negatives")]
    UndefinedMetrics,
    #[error("empty evaluation set")]
    EmptyEvalSet,
    #[error("box {0} lies outside the {1}x{2} image")]
    OutOfBounds(String, usize, usize),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Detect(#[from] DetectError),
}
