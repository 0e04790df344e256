use crate::detect::{iou, BBox, Detection};
use crate::scalar::Scalar;

/// A detection paired with the ground truth it was counted against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchedPair<T> {
    pub det: usize,
    pub gt: usize,
    pub iou: T,
}

/// Counts of one image or of a whole set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult<T> {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub pairs: Vec<MatchedPair<T>>,
}

impl<T: Clone> MatchResult<T> {
    /// Adds the counts of `other`; pairs are not merged.
    pub fn add_counts(&mut self, other: &MatchResult<T>) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Greedy matching in descending score order.
///
/// Each detection takes the unmatched ground truth of highest IoU if that IoU
/// is at least `iou_threshold`. Equal scores are visited in index order and
/// equal IoUs go to the lower ground-truth index.
pub fn match_detections<T: Scalar>(dets: &[Detection<T>], gts: &[BBox<T>], iou_threshold: T) -> MatchResult<T> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b].score.partial_cmp(&dets[a].score).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut taken = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for d in order {
        let mut best: Option<(usize, T)> = None;
        for (j, gt) in gts.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let v = iou(&dets[d].bbox, gt);
            if v >= iou_threshold && best.map_or(true, |(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, v)) = best {
            taken[j] = true;
            pairs.push(MatchedPair { det: d, gt: j, iou: v });
        }
    }
    let tp = pairs.len();
    MatchResult { tp, fp: dets.len() - tp, fn_: gts.len() - tp, pairs }
}
