use serde::{Deserialize, Serialize};

use crate::detect::{BoxDetector, Detection};
use crate::eval::matching::{match_detections, MatchResult};
use crate::eval::EvalError;
use crate::phantom::LabeledImage;

/// Fractions in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
}

/// Precision `tp/(tp+fp)`, recall `tp/(tp+fn)`, accuracy `tp/(tp+fp+fn)` and
/// their harmonic-mean F1.
///
/// A ratio with a zero denominator is 0; F1 is 0 when precision and recall
/// are both 0.
pub fn compute_metrics(tp: usize, fp: usize, fn_: usize) -> Result<MetricsReport, EvalError> {
    if tp + fp + fn_ == 0 {
        return Err(EvalError::UndefinedMetrics);
    }
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(MetricsReport { precision, recall, accuracy: ratio(tp, tp + fp + fn_), f1 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Minimum IoU for a detection to count as a true positive.
    pub iou_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(EvalError::Config(format!("iou_threshold {} outside (0, 1]", self.iou_threshold)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageResult {
    pub id: String,
    pub detections: Vec<Detection<f64>>,
    pub matches: MatchResult<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub totals: MatchResult<f64>,
    pub metrics: MetricsReport,
    pub images: Vec<ImageResult>,
}

/// Runs `detector` on every image, matches against its boxes and reports the
/// metrics of the summed counts.
pub fn evaluate(
    detector: &(impl BoxDetector + ?Sized),
    eval_set: &[LabeledImage],
    cfg: &EvalConfig,
) -> Result<EvalOutcome, EvalError> {
    cfg.validate()?;
    if eval_set.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    let mut totals = MatchResult::default();
    let mut images = Vec::with_capacity(eval_set.len());
    for l in eval_set {
        let detections = detector.detect(&l.image, &l.source_id)?;
        let matches = match_detections(&detections, &l.boxes, cfg.iou_threshold);
        totals.add_counts(&matches);
        images.push(ImageResult { id: l.source_id.clone(), detections, matches });
    }
    let metrics = compute_metrics(totals.tp, totals.fp, totals.fn_)?;
    Ok(EvalOutcome { totals, metrics, images })
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// `key: value` lines: the totals, the four metrics as percentages with two
/// decimals, then one `image` line per image.
pub fn format_report(outcome: &EvalOutcome, header: &[String]) -> String {
    let mut s = String::new();
    for h in header {
        s.push_str(&format!("# {h}\n"));
    }
    let (t, m) = (&outcome.totals, &outcome.metrics);
    s.push_str(&format!("images: {}\n", outcome.images.len()));
    s.push_str(&format!("tp: {}\nfp: {}\nfn: {}\n", t.tp, t.fp, t.fn_));
    s.push_str(&format!("precision: {}\n", pct(m.precision)));
    s.push_str(&format!("recall: {}\n", pct(m.recall)));
    s.push_str(&format!("accuracy: {}\n", pct(m.accuracy)));
    s.push_str(&format!("f1: {}\n", pct(m.f1)));
    for r in &outcome.images {
        s.push_str(&format!("image: {} tp={} fp={} fn={}\n", r.id, r.matches.tp, r.matches.fp, r.matches.fn_));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_counts_undefined() {
        assert!(matches!(compute_metrics(0, 0, 0), Err(EvalError::UndefinedMetrics)));
    }

    #[test]
    fn all_wrong_is_zero() {
        let m = compute_metrics(0, 2, 3).unwrap();
        assert_eq!((m.precision, m.recall, m.accuracy, m.f1), (0.0, 0.0, 0.0, 0.0));
        let m = compute_metrics(0, 0, 3).unwrap();
        assert_eq!(m.precision, 0.0);
    }

    #[test]
    fn report_lines() {
        let outcome = EvalOutcome {
            totals: MatchResult { tp: 32, fp: 3, fn_: 3, pairs: vec![] },
            metrics: compute_metrics(32, 3, 3).unwrap(),
            images: vec![],
        };
        let r = format_report(&outcome, &["config abc".into()]);
        assert!(r.starts_with("# config abc\n"));
        assert!(r.contains("precision: 91.43\n"));
        assert!(r.contains("accuracy: 84.21\n"));
    }
}
