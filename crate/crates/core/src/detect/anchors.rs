use crate::detect::boxes::{iou, BBox};
use crate::detect::DetectError;
use crate::scalar::Scalar;

/// Preset candidate box tied to a feature-grid cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor<T> {
    pub bbox: BBox<T>,
    pub grid_cell: (usize, usize),
    pub scale_index: usize,
    pub ratio_index: usize,
}

/// Tiles `scales x ratios` anchors over every cell of a `rows x cols` grid
/// laid over a `width x height` image.
///
/// Anchor `(s, r)` has width `s * sqrt(r)` and height `s / sqrt(r)` before
/// clipping, centered on its cell. Order is row, column, scale, ratio.
pub fn generate_anchors<T: Scalar>(
    grid: (usize, usize),
    image: (usize, usize),
    scales: &[T],
    ratios: &[T],
) -> Result<Vec<Anchor<T>>, DetectError> {
    let (rows, cols) = grid;
    let (width, height) = image;
    if rows == 0 || cols == 0 || width == 0 || height == 0 {
        return Err(DetectError::Geometry(format!("degenerate grid {rows}x{cols} over {width}x{height}")));
    }
    if scales.is_empty() || ratios.is_empty() {
        return Err(DetectError::Geometry("no anchor scales or ratios".into()));
    }
    if scales.iter().chain(ratios).any(|&v| !(v > T::zero())) {
        return Err(DetectError::Geometry("anchor scales and ratios must be positive".into()));
    }
    let (w, h) = (T::from_usize_lossy(width), T::from_usize_lossy(height));
    let (cw, ch) = (w / T::from_usize_lossy(cols), h / T::from_usize_lossy(rows));
    let half = T::lit(0.5);
    let mut out = Vec::with_capacity(rows * cols * scales.len() * ratios.len());
    for r in 0..rows {
        let cy = (T::from_usize_lossy(r) + half) * ch;
        for c in 0..cols {
            let cx = (T::from_usize_lossy(c) + half) * cw;
            for (si, &s) in scales.iter().enumerate() {
                for (ri, &ratio) in ratios.iter().enumerate() {
                    let root = ratio.sqrt();
                    let bbox = BBox::from_center(cx, cy, s * root, s / root).clip(w, h);
                    out.push(Anchor { bbox, grid_cell: (r, c), scale_index: si, ratio_index: ri });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Positive,
    Negative,
    Ignore,
}

/// Training label of one anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnchorLabel {
    pub kind: LabelKind,
    pub matched_gt: Option<usize>,
}

impl AnchorLabel {
    pub const NEGATIVE: Self = Self { kind: LabelKind::Negative, matched_gt: None };
    pub const IGNORE: Self = Self { kind: LabelKind::Ignore, matched_gt: None };

    pub fn positive(gt: usize) -> Self {
        Self { kind: LabelKind::Positive, matched_gt: Some(gt) }
    }

    pub fn is_positive(&self) -> bool {
        self.kind == LabelKind::Positive
    }
}

/// Labels anchors against ground truth.
///
/// Positive when IoU with some ground truth is at least `pos_iou`, negative
/// when the best IoU is at most `neg_iou`, ignored in between. In addition,
/// each ground truth claims its best anchor (lowest index on ties, skipping
/// anchors already claimed this way by an earlier ground truth) as positive,
/// provided their IoU is non-zero.
pub fn match_anchors<T: Scalar>(
    anchors: &[BBox<T>],
    gts: &[BBox<T>],
    pos_iou: T,
    neg_iou: T,
) -> Vec<AnchorLabel> {
    let mut labels = Vec::with_capacity(anchors.len());
    let mut best_for_gt: Vec<Vec<(usize, T)>> = vec![Vec::new(); gts.len()];
    for a in anchors.iter() {
        let mut best: Option<(usize, T)> = None;
        for (j, g) in gts.iter().enumerate() {
            let v = iou(a, g);
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        labels.push(match best {
            Some((j, v)) if v >= pos_iou => AnchorLabel::positive(j),
            Some((_, v)) if v > neg_iou => AnchorLabel::IGNORE,
            _ => AnchorLabel::NEGATIVE,
        });
    }
    for (j, g) in gts.iter().enumerate() {
        for (i, a) in anchors.iter().enumerate() {
            let v = iou(a, g);
            if v > T::zero() {
                best_for_gt[j].push((i, v));
            }
        }
    }
    let mut claimed = vec![false; anchors.len()];
    for (j, cands) in best_for_gt.iter().enumerate() {
        let mut best: Option<(usize, T)> = None;
        for &(i, v) in cands {
            if !claimed[i] && best.map_or(true, |(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        if let Some((i, _)) = best {
            claimed[i] = true;
            labels[i] = AnchorLabel::positive(j);
        }
    }
    labels
}
