//! Detector losses, in plain scalar form and as graph builders for training.

use crate::detect::anchors::AnchorLabel;
use crate::detect::boxes::{eiou_loss, iou_loss, BBox};
use crate::detect::config::RegressionLoss;
use crate::detect::DetectError;
use crate::ndgrad::{GradError, Graph, Var};
use crate::scalar::Scalar;

/// Probabilities are clamped to `[P_EPS, 1 - P_EPS]` before taking logs.
pub const P_EPS: f64 = 1e-7;

/// Largest log-scale step when decoding widths and heights, `ln(1000 / 16)`.
pub const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356;

/// Center/size offsets of `b` relative to `reference`:
/// `((cx - rx) / rw, (cy - ry) / rh, ln(w / rw), ln(h / rh))`.
pub fn encode<T: Scalar>(b: &BBox<T>, reference: &BBox<T>) -> [T; 4] {
    let (cx, cy) = b.center();
    let (rx, ry) = reference.center();
    let (rw, rh) = (reference.width(), reference.height());
    [(cx - rx) / rw, (cy - ry) / rh, (b.width() / rw).ln(), (b.height() / rh).ln()]
}

/// Inverse of [`encode`], with the size steps clamped to [`MAX_LOG_SCALE`].
pub fn decode<T: Scalar>(d: [T; 4], reference: &BBox<T>) -> BBox<T> {
    let (rx, ry) = reference.center();
    let (rw, rh) = (reference.width(), reference.height());
    let cap = T::lit(MAX_LOG_SCALE);
    BBox::from_center(rx + d[0] * rw, ry + d[1] * rh, rw * d[2].min(cap).exp(), rh * d[3].min(cap).exp())
}

/// Sum over coordinates of `0.5x^2` (`|x| < 1`) or `|x| - 0.5`, `x = pred - target`.
pub fn smooth_l1_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<T, DetectError> {
    if pred.len() != target.len() {
        return Err(DetectError::Shape(format!(
            "smooth_l1: {} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred.iter().zip(target).map(|(&p, &t)| crate::ndgrad::smooth_l1(p - t)).sum())
}

/// Binary cross-entropy of a probability against a 0/1 label.
pub fn rpn_cls_loss<T: Scalar>(p: T, positive: bool) -> T {
    let eps = T::lit(P_EPS);
    let p = p.max(eps).min(T::one() - eps);
    if positive {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

/// Configured box regression loss of `pred` against `gt`. `reference` is the
/// anchor or proposal the prediction was decoded from; only smooth-l1 uses it.
pub fn regression_loss<T: Scalar>(
    kind: RegressionLoss,
    reference: &BBox<T>,
    pred: &BBox<T>,
    gt: &BBox<T>,
) -> Result<T, DetectError> {
    Ok(match kind {
        RegressionLoss::SmoothL1 => {
            reference.validate()?;
            pred.validate()?;
            gt.validate()?;
            smooth_l1_loss(&encode(pred, reference), &encode(gt, reference))?
        }
        RegressionLoss::Iou => iou_loss(pred, gt)?,
        RegressionLoss::Eiou => eiou_loss(pred, gt)?,
    })
}

/// The two parts of the proposal-stage loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RpnLoss<T> {
    /// Mean cross-entropy over positive and negative anchors.
    pub cls: T,
    /// Mean regression loss over positive anchors; zero without positives.
    pub reg: T,
}

impl<T: Scalar> RpnLoss<T> {
    pub fn total(&self) -> T {
        self.cls + self.reg
    }
}

/// Proposal-stage loss over labeled anchors. `scores[i]` is the predicted
/// probability of anchor `i`, `boxes[i]` its decoded box.
pub fn rpn_loss<T: Scalar>(
    anchors: &[BBox<T>],
    labels: &[AnchorLabel],
    scores: &[T],
    boxes: &[BBox<T>],
    gts: &[BBox<T>],
    kind: RegressionLoss,
) -> Result<RpnLoss<T>, DetectError> {
    let n = anchors.len();
    if labels.len() != n || scores.len() != n || boxes.len() != n {
        return Err(DetectError::Shape("rpn_loss inputs differ in length".into()));
    }
    let mut cls = T::zero();
    let mut n_cls = 0usize;
    let mut reg = T::zero();
    let mut n_reg = 0usize;
    for i in 0..n {
        match labels[i].kind {
            crate::detect::anchors::LabelKind::Ignore => continue,
            crate::detect::anchors::LabelKind::Negative => {
                cls += rpn_cls_loss(scores[i], false);
                n_cls += 1;
            }
            crate::detect::anchors::LabelKind::Positive => {
                cls += rpn_cls_loss(scores[i], true);
                n_cls += 1;
                let j = labels[i].matched_gt.expect("positive labels carry a match");
                let gt = gts.get(j).ok_or_else(|| DetectError::Shape(format!("no ground truth {j}")))?;
                reg += regression_loss(kind, &anchors[i], &boxes[i], gt)?;
                n_reg += 1;
            }
        }
    }
    let mean = |s: T, k: usize| if k == 0 { T::zero() } else { s / T::from_usize_lossy(k) };
    Ok(RpnLoss { cls: mean(cls, n_cls), reg: mean(reg, n_reg) })
}

/// A second-stage prediction matched to ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Matched<T> {
    pub proposal: BBox<T>,
    pub pred: BBox<T>,
    pub gt: BBox<T>,
}

/// Second-stage loss of one proposal: `-ln p` plus the regression loss when
/// matched to a ground truth, `-ln(1 - p)` for background.
pub fn fastrcnn_loss<T: Scalar>(
    p: T,
    matched: Option<&Matched<T>>,
    kind: RegressionLoss,
) -> Result<T, DetectError> {
    match matched {
        Some(m) => Ok(rpn_cls_loss(p, true) + regression_loss(kind, &m.proposal, &m.pred, &m.gt)?),
        None => Ok(rpn_cls_loss(p, false)),
    }
}

/// `lambda_rpn * l_rpn + lambda_fastrcnn * l_fastrcnn`.
pub fn total_loss<T: Scalar>(
    l_rpn: T,
    l_fastrcnn: T,
    lambda_rpn: T,
    lambda_fastrcnn: T,
) -> Result<T, DetectError> {
    if lambda_rpn < T::zero() || lambda_fastrcnn < T::zero() {
        return Err(DetectError::Config("loss weights must be non-negative".into()));
    }
    Ok(lambda_rpn * l_rpn + lambda_fastrcnn * l_fastrcnn)
}

/// Corner coordinates of `n` boxes as four `[n]` graph vectors.
#[derive(Clone, Copy, Debug)]
pub struct BoxVars {
    pub x1: Var,
    pub y1: Var,
    pub x2: Var,
    pub y2: Var,
}

fn column<T: Scalar>(g: &mut Graph<T>, boxes: &[BBox<T>], f: impl Fn(&BBox<T>) -> T) -> Result<Var, GradError> {
    g.constant(vec![boxes.len()], boxes.iter().map(f).collect())
}

impl BoxVars {
    pub fn constant<T: Scalar>(g: &mut Graph<T>, boxes: &[BBox<T>]) -> Result<Self, GradError> {
        Ok(Self {
            x1: column(g, boxes, |b| b.x1)?,
            y1: column(g, boxes, |b| b.y1)?,
            x2: column(g, boxes, |b| b.x2)?,
            y2: column(g, boxes, |b| b.y2)?,
        })
    }

    /// Splits a `[4n]` vector laid out box by box as `x1, y1, x2, y2`.
    pub fn from_interleaved<T: Scalar>(g: &mut Graph<T>, v: Var) -> Result<Self, GradError> {
        let n = g.value(v).len() / 4;
        let pick = |k: usize| (0..n).map(|i| 4 * i + k).collect::<Vec<_>>();
        Ok(Self {
            x1: g.gather(v, pick(0))?,
            y1: g.gather(v, pick(1))?,
            x2: g.gather(v, pick(2))?,
            y2: g.gather(v, pick(3))?,
        })
    }

    pub fn to_boxes<T: Scalar>(&self, g: &Graph<T>) -> Vec<BBox<T>> {
        let (a, b, c, d) = (g.value(self.x1), g.value(self.y1), g.value(self.x2), g.value(self.y2));
        (0..a.len()).map(|i| BBox::raw(a[i], b[i], c[i], d[i])).collect()
    }
}

/// Decodes `[n]` offset vectors against fixed reference boxes.
pub fn decode_graph<T: Scalar>(
    g: &mut Graph<T>,
    deltas: [Var; 4],
    refs: &[BBox<T>],
) -> Result<BoxVars, GradError> {
    let n = refs.len();
    let half = T::lit(0.5);
    let rx = column(g, refs, |b| b.center().0)?;
    let ry = column(g, refs, |b| b.center().1)?;
    let rw = column(g, refs, |b| b.width())?;
    let rh = column(g, refs, |b| b.height())?;
    let cap = g.constant(vec![n], vec![T::lit(MAX_LOG_SCALE); n])?;
    let sx = g.mul(deltas[0], rw)?;
    let cx = g.add(sx, rx)?;
    let sy = g.mul(deltas[1], rh)?;
    let cy = g.add(sy, ry)?;
    let dw = g.min(deltas[2], cap)?;
    let ew = g.exp(dw)?;
    let w = g.mul(ew, rw)?;
    let dh = g.min(deltas[3], cap)?;
    let eh = g.exp(dh)?;
    let h = g.mul(eh, rh)?;
    let hw = g.scale(w, half)?;
    let hh = g.scale(h, half)?;
    Ok(BoxVars { x1: g.sub(cx, hw)?, y1: g.sub(cy, hh)?, x2: g.add(cx, hw)?, y2: g.add(cy, hh)? })
}

struct Overlap {
    inter: Var,
    union: Var,
}

fn overlap<T: Scalar>(g: &mut Graph<T>, p: &BoxVars, t: &BoxVars) -> Result<Overlap, GradError> {
    let ix2 = g.min(p.x2, t.x2)?;
    let ix1 = g.max(p.x1, t.x1)?;
    let iw = g.sub(ix2, ix1)?;
    let iw = g.relu(iw)?;
    let iy2 = g.min(p.y2, t.y2)?;
    let iy1 = g.max(p.y1, t.y1)?;
    let ih = g.sub(iy2, iy1)?;
    let ih = g.relu(ih)?;
    let inter = g.mul(iw, ih)?;
    let pw = g.sub(p.x2, p.x1)?;
    let ph = g.sub(p.y2, p.y1)?;
    let pa = g.mul(pw, ph)?;
    let tw = g.sub(t.x2, t.x1)?;
    let th = g.sub(t.y2, t.y1)?;
    let ta = g.mul(tw, th)?;
    let sum = g.add(pa, ta)?;
    let union = g.sub(sum, inter)?;
    Ok(Overlap { inter, union })
}

/// Per-box `1 - iou`, shape `[n]`.
pub fn iou_loss_graph<T: Scalar>(g: &mut Graph<T>, pred: &BoxVars, gt: &BoxVars) -> Result<Var, GradError> {
    let o = overlap(g, pred, gt)?;
    let ratio = g.div(o.inter, o.union)?;
    let neg = g.neg(ratio)?;
    g.shift(neg, T::one())
}

/// Per-box EIoU loss, shape `[n]`.
pub fn eiou_graph<T: Scalar>(g: &mut Graph<T>, pred: &BoxVars, gt: &BoxVars) -> Result<Var, GradError> {
    let l_iou = iou_loss_graph(g, pred, gt)?;
    let ex2 = g.max(pred.x2, gt.x2)?;
    let ex1 = g.min(pred.x1, gt.x1)?;
    let wc = g.sub(ex2, ex1)?;
    let ey2 = g.max(pred.y2, gt.y2)?;
    let ey1 = g.min(pred.y1, gt.y1)?;
    let hc = g.sub(ey2, ey1)?;
    let wc2 = g.square(wc)?;
    let hc2 = g.square(hc)?;
    let diag = g.add(wc2, hc2)?;

    // twice the center offsets
    let psx = g.add(pred.x1, pred.x2)?;
    let gsx = g.add(gt.x1, gt.x2)?;
    let dx = g.sub(psx, gsx)?;
    let psy = g.add(pred.y1, pred.y2)?;
    let gsy = g.add(gt.y1, gt.y2)?;
    let dy = g.sub(psy, gsy)?;
    let dx2 = g.square(dx)?;
    let dy2 = g.square(dy)?;
    let dist = g.add(dx2, dy2)?;
    let dist = g.scale(dist, T::lit(0.25))?;
    let center = g.div(dist, diag)?;

    let pw = g.sub(pred.x2, pred.x1)?;
    let gw = g.sub(gt.x2, gt.x1)?;
    let dw = g.sub(pw, gw)?;
    let dw2 = g.square(dw)?;
    let width = g.div(dw2, wc2)?;
    let ph = g.sub(pred.y2, pred.y1)?;
    let gh = g.sub(gt.y2, gt.y1)?;
    let dh = g.sub(ph, gh)?;
    let dh2 = g.square(dh)?;
    let height = g.div(dh2, hc2)?;

    let a = g.add(l_iou, center)?;
    let b = g.add(width, height)?;
    g.add(a, b)
}

/// Per-box smooth-l1 summed over the four offsets of `pred` against
/// `targets` (offsets of the ground truth), shape `[n]`.
pub fn smooth_l1_graph<T: Scalar>(
    g: &mut Graph<T>,
    pred: [Var; 4],
    targets: &[[T; 4]],
) -> Result<Var, GradError> {
    let n = targets.len();
    let mut total: Option<Var> = None;
    for (k, &p) in pred.iter().enumerate() {
        let t = g.constant(vec![n], targets.iter().map(|t| t[k]).collect())?;
        let d = g.sub(p, t)?;
        let s = g.smooth_l1(d)?;
        total = Some(match total {
            Some(acc) => g.add(acc, s)?,
            None => s,
        });
    }
    Ok(total.expect("four coordinates"))
}

/// Per-box regression loss of offsets `deltas` predicted against `refs`,
/// towards `gts`, shape `[n]`.
pub fn regression_graph<T: Scalar>(
    g: &mut Graph<T>,
    kind: RegressionLoss,
    deltas: [Var; 4],
    refs: &[BBox<T>],
    gts: &[BBox<T>],
) -> Result<Var, GradError> {
    match kind {
        RegressionLoss::SmoothL1 => {
            let targets: Vec<[T; 4]> = gts.iter().zip(refs).map(|(gt, r)| encode(gt, r)).collect();
            smooth_l1_graph(g, deltas, &targets)
        }
        RegressionLoss::Iou | RegressionLoss::Eiou => {
            let pred = decode_graph(g, deltas, refs)?;
            let gt = BoxVars::constant(g, gts)?;
            if kind == RegressionLoss::Iou {
                iou_loss_graph(g, &pred, &gt)
            } else {
                eiou_graph(g, &pred, &gt)
            }
        }
    }
}

/// Elementwise clamped cross-entropy of probabilities against 0/1 targets.
pub fn bce_prob_graph<T: Scalar>(g: &mut Graph<T>, p: Var, targets: &[T]) -> Result<Var, GradError> {
    let n = targets.len();
    let eps = T::lit(P_EPS);
    let lo = g.constant(vec![n], vec![eps; n])?;
    let hi = g.constant(vec![n], vec![T::one() - eps; n])?;
    let p = g.max(p, lo)?;
    let p = g.min(p, hi)?;
    let t = g.constant(vec![n], targets.to_vec())?;
    let one_minus_t = g.constant(vec![n], targets.iter().map(|&t| T::one() - t).collect())?;
    let lp = g.log(p)?;
    let q = g.neg(p)?;
    let q = g.shift(q, T::one())?;
    let lq = g.log(q)?;
    let a = g.mul(t, lp)?;
    let b = g.mul(one_minus_t, lq)?;
    let s = g.add(a, b)?;
    g.neg(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndgrad::Tensor;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox<f64> {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(smooth_l1_loss(&[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(smooth_l1_loss(&[0.5], &[0.0]).unwrap(), 0.125);
        assert_eq!(smooth_l1_loss(&[2.0], &[0.0]).unwrap(), 1.5);
        assert!(smooth_l1_loss(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn cls_loss_examples() {
        assert!(rpn_cls_loss(1.0 - 1e-7, true) < 2e-7);
        assert!((rpn_cls_loss(0.5f64, true) - 2f64.ln()).abs() < 1e-15);
        assert!((rpn_cls_loss(0.5f64, false) - 2f64.ln()).abs() < 1e-15);
        // clamping keeps the loss finite
        assert!(rpn_cls_loss(0.0f64, true).is_finite());
    }

    #[test]
    fn total_loss_weighting() {
        assert_eq!(total_loss(0.0, 0.0, 1.0, 1.0).unwrap(), 0.0);
        assert!((total_loss(0.3f64, 0.5, 1.0, 1.0).unwrap() - 0.8).abs() < 1e-15);
        assert!((total_loss(0.3f64, 0.9, 2.0, 0.0).unwrap() - 0.6).abs() < 1e-15);
        assert!(total_loss(0.3, 0.5, -1.0, 1.0).is_err());
    }

    #[test]
    fn coder_round_trip() {
        let r = b(10.0, 20.0, 16.0, 110.0);
        let x = b(11.5, 22.0, 15.0, 118.0);
        let back = decode(encode(&x, &r), &r);
        for (a, c) in back.corners().iter().zip(x.corners()) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn fastrcnn_examples() {
        let gt = b(0.0, 0.0, 4.0, 40.0);
        let m = Matched { proposal: gt, pred: gt, gt };
        assert!(fastrcnn_loss(1.0 - 1e-7, Some(&m), RegressionLoss::Eiou).unwrap() < 2e-7);
        let l = fastrcnn_loss(0.5f64, Some(&m), RegressionLoss::Eiou).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let l = fastrcnn_loss(0.5f64, None, RegressionLoss::Eiou).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rpn_perfect_prediction_is_zero_and_no_positive_means_no_regression() {
        let gt = [b(0.0, 0.0, 4.0, 40.0)];
        let anchors = [gt[0], b(50.0, 0.0, 54.0, 40.0)];
        let labels = [AnchorLabel::positive(0), AnchorLabel::NEGATIVE];
        let l = rpn_loss(&anchors, &labels, &[1.0, 0.0], &anchors, &gt, RegressionLoss::Eiou).unwrap();
        assert!(l.total() < 1e-6);
        let labels = [AnchorLabel::NEGATIVE, AnchorLabel::NEGATIVE];
        let l = rpn_loss(&anchors, &labels, &[0.3, 0.2], &anchors, &gt, RegressionLoss::Iou).unwrap();
        assert_eq!(l.reg, 0.0);
        assert!(l.cls > 0.0);
    }

    #[test]
    fn graph_losses_agree_with_scalar_forms() {
        let refs = [b(2.0, 10.0, 12.0, 90.0), b(30.0, 5.0, 36.0, 60.0)];
        let gts = [b(4.0, 20.0, 9.0, 118.0), b(31.0, 20.0, 35.0, 118.0)];
        let deltas = [[0.1, -0.05, -0.3, 0.2], [0.0, 0.4, 0.1, 0.5]];
        for kind in [RegressionLoss::SmoothL1, RegressionLoss::Iou, RegressionLoss::Eiou] {
            let mut g = Graph::new();
            let cols: Vec<Var> = (0..4)
                .map(|k| g.param(&Tensor::vector(deltas.iter().map(|d| d[k]).collect()).unwrap()))
                .collect();
            let v = regression_graph(&mut g, kind, [cols[0], cols[1], cols[2], cols[3]], &refs, &gts)
                .unwrap();
            for i in 0..2 {
                let pred = decode(deltas[i], &refs[i]);
                let expect = regression_loss(kind, &refs[i], &pred, &gts[i]).unwrap();
                assert!((g.value(v)[i] - expect).abs() < 1e-12, "{kind}: {} vs {expect}", g.value(v)[i]);
            }
        }
    }

    #[test]
    fn bce_graph_matches_scalar() {
        let mut g = Graph::new();
        let p = g.param(&Tensor::vector(vec![0.2, 0.9, 0.5]).unwrap());
        let l = bce_prob_graph(&mut g, p, &[1.0, 0.0, 1.0]).unwrap();
        for (i, (&pv, t)) in [0.2f64, 0.9, 0.5].iter().zip([true, false, true]).enumerate() {
            assert!((g.value(l)[i] - rpn_cls_loss(pv, t)).abs() < 1e-15);
        }
    }
}
