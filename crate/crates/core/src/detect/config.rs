use serde::{Deserialize, Serialize};

use crate::detect::DetectError;

/// Box regression loss used inside both detector stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionLoss {
    /// Smooth-l1 on center/size offsets relative to the reference box.
    SmoothL1,
    /// `1 - iou` on decoded corner boxes.
    Iou,
    /// EIoU on decoded corner boxes.
    Eiou,
}

impl std::fmt::Display for RegressionLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegressionLoss::SmoothL1 => "smooth_l1",
            RegressionLoss::Iou => "iou",
            RegressionLoss::Eiou => "eiou",
        })
    }
}

/// Fine-tuning and inference settings of the two-stage detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub lambda_rpn: f64,
    pub lambda_fastrcnn: f64,
    pub regression_loss: RegressionLoss,
    /// Anchors at or above this IoU with a ground truth are positive.
    pub pos_iou: f64,
    /// Anchors at or below this IoU with every ground truth are negative.
    pub neg_iou: f64,
    /// Suppression IoU of the final non-maximum suppression.
    pub nms_iou: f64,
    /// Minimum score of an emitted detection.
    pub score_threshold: f64,
    /// Anchor side lengths in pixels, `sqrt(w * h)`.
    pub anchor_scales: Vec<f64>,
    /// Anchor aspect ratios written as `"w:h"`.
    pub anchor_ratios: Vec<String>,
    /// Encoder stage (1-based) whose feature map carries the anchors.
    pub rpn_level: usize,
    /// Width of the proposal head's 3x3 convolution.
    pub rpn_hidden: usize,
    /// Anchors sampled per image for the proposal loss.
    pub rpn_batch: usize,
    pub rpn_pos_fraction: f64,
    /// Highest-scoring anchors kept before proposal suppression.
    pub pre_nms_top: usize,
    pub proposal_nms_iou: f64,
    /// Proposals passed to the second stage.
    pub post_nms_top: usize,
    /// Proposals sampled per image for the second-stage loss.
    pub roi_batch: usize,
    pub roi_pos_fraction: f64,
    /// Proposals at or above this IoU with a ground truth are foreground.
    pub roi_fg_iou: f64,
    /// Hidden width of the second-stage head.
    pub roi_hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            lambda_rpn: 1.0,
            lambda_fastrcnn: 1.0,
            regression_loss: RegressionLoss::Eiou,
            pos_iou: 0.7,
            neg_iou: 0.3,
            nms_iou: 0.5,
            score_threshold: 0.5,
            anchor_scales: vec![24.0, 36.0, 48.0],
            anchor_ratios: vec!["1:4".into(), "1:6".into(), "1:8".into()],
            rpn_level: 2,
            rpn_hidden: 16,
            rpn_batch: 64,
            rpn_pos_fraction: 0.5,
            pre_nms_top: 100,
            proposal_nms_iou: 0.5,
            post_nms_top: 20,
            roi_batch: 32,
            roi_pos_fraction: 0.5,
            roi_fg_iou: 0.5,
            roi_hidden: 64,
            epochs: 30,
            lr: 0.015,
            seed: 0,
        }
    }
}

/// Parses `"w:h"` into `w / h`.
pub fn parse_ratio(s: &str) -> Result<f64, DetectError> {
    let bad = || DetectError::Config(format!("aspect ratio {s:?} is not of the form w:h"));
    let (w, h) = s.split_once(':').ok_or_else(bad)?;
    let w: f64 = w.trim().parse().map_err(|_| bad())?;
    let h: f64 = h.trim().parse().map_err(|_| bad())?;
    if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
        return Err(bad());
    }
    Ok(w / h)
}

impl DetectConfig {
    pub fn ratios(&self) -> Result<Vec<f64>, DetectError> {
        self.anchor_ratios.iter().map(|s| parse_ratio(s)).collect()
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_scales.len() * self.anchor_ratios.len()
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        let err = |m: String| Err(DetectError::Config(m));
        if !(0.0 < self.neg_iou && self.neg_iou <= self.pos_iou && self.pos_iou < 1.0) {
            return err(format!(
                "need 0 < neg_iou <= pos_iou < 1, got {} and {}",
                self.neg_iou, self.pos_iou
            ));
        }
        if self.lambda_rpn < 0.0 || self.lambda_fastrcnn < 0.0 {
            return err("loss weights must be non-negative".into());
        }
        for (name, v) in [
            ("nms_iou", self.nms_iou),
            ("score_threshold", self.score_threshold),
            ("proposal_nms_iou", self.proposal_nms_iou),
            ("roi_fg_iou", self.roi_fg_iou),
            ("rpn_pos_fraction", self.rpn_pos_fraction),
            ("roi_pos_fraction", self.roi_pos_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.anchor_scales.is_empty() || self.anchor_scales.iter().any(|&s| !(s > 0.0)) {
            return err("anchor_scales must be non-empty and positive".into());
        }
        if self.anchor_ratios.is_empty() {
            return err("anchor_ratios must be non-empty".into());
        }
        self.ratios()?;
        if !(1..=4).contains(&self.rpn_level) {
            return err(format!("rpn_level {} outside 1..=4", self.rpn_level));
        }
        if self.rpn_batch == 0 || self.roi_batch == 0 || self.rpn_hidden == 0 || self.roi_hidden == 0 || self.pre_nms_top == 0 || self.post_nms_top == 0 {
            return err("batch and proposal counts must be positive".into());
        }
        if !(self.lr >= 0.0) {
            return err(format!("lr {} must be non-negative", self.lr));
        }
        Ok(())
    }
}
