use serde::{Deserialize, Serialize};

use crate::detect::boxes::{iou, BBox};
use crate::scalar::Scalar;

/// A scored box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection<T> {
    pub bbox: BBox<T>,
    /// Probability of being a B-line.
    pub score: T,
}

/// Indices kept by greedy non-maximum suppression, highest score first.
///
/// Detections scoring below `score_threshold` are dropped first. A candidate
/// is suppressed when its IoU with any kept box is at least `nms_iou`. Equal
/// scores are visited in index order.
pub fn nms_indices<T: Scalar>(dets: &[Detection<T>], nms_iou: T, score_threshold: T) -> Vec<usize> {
    let mut order: Vec<usize> =
        (0..dets.len()).filter(|&i| dets[i].score >= score_threshold).collect();
    order.sort_by(|&a, &b| {
        dets[b].score.partial_cmp(&dets[a].score).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| iou(&dets[k].bbox, &dets[i].bbox) < nms_iou) {
            keep.push(i);
        }
    }
    keep
}

pub fn nms<T: Scalar>(dets: &[Detection<T>], nms_iou: T, score_threshold: T) -> Vec<Detection<T>> {
    nms_indices(dets, nms_iou, score_threshold).into_iter().map(|i| dets[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(x1: f64, x2: f64, score: f64) -> Detection<f64> {
        Detection { bbox: BBox::new(x1, 0.0, x2, 10.0).unwrap(), score }
    }

    #[test]
    fn single_detection_survives() {
        let dets = [d(0.0, 5.0, 0.9)];
        assert_eq!(nms(&dets, 0.5, 0.5), dets.to_vec());
    }

    #[test]
    fn duplicate_keeps_higher_score() {
        let dets = [d(0.0, 5.0, 0.8), d(0.0, 5.0, 0.9)];
        assert_eq!(nms(&dets, 0.5, 0.5), vec![dets[1]]);
    }

    #[test]
    fn below_threshold_dropped() {
        let dets = [d(0.0, 5.0, 0.49), d(20.0, 25.0, 0.5)];
        assert_eq!(nms_indices(&dets, 0.5, 0.5), vec![1]);
    }

    #[test]
    fn equal_scores_prefer_lower_index() {
        let dets = [d(0.0, 5.0, 0.7), d(1.0, 5.0, 0.7)];
        assert_eq!(nms_indices(&dets, 0.5, 0.0), vec![0]);
    }

    #[test]
    fn disjoint_boxes_all_kept() {
        let dets = [d(0.0, 5.0, 0.6), d(10.0, 15.0, 0.9), d(20.0, 25.0, 0.7)];
        assert_eq!(nms_indices(&dets, 0.5, 0.5), vec![1, 2, 0]);
    }
}
