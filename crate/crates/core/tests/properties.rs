use proptest::prelude::*;

use lusb_core::detect::{eiou_loss, iou, match_anchors, nms, BBox, Detection};
use lusb_core::eval::{compute_metrics, match_detections};
use lusb_core::ndgrad::{Graph, ParamStore, Tensor};
use lusb_core::pretrain::{info_nce, momentum_update, KeyQueue};

fn bbox() -> impl Strategy<Value = BBox<f64>> {
    (-50.0..50.0f64, -50.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

/// Boxes on a coarse integer lattice, so that exact duplicates and exact
/// IoU ties occur often.
fn lattice_box() -> impl Strategy<Value = BBox<f64>> {
    (0..6i32, 0..6i32, 1..4i32, 1..4i32)
        .prop_map(|(x, y, w, h)| BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap())
}

fn detections(max: usize) -> impl Strategy<Value = Vec<Detection<f64>>> {
    prop::collection::vec((lattice_box(), 0..5u8), 0..max)
        .prop_map(|v| v.into_iter().map(|(bbox, s)| Detection { bbox, score: 0.2 * s as f64 + 0.1 }).collect())
}

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, dim)
        .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        .prop_map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (ab, ba) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou(&a, &a), 1.0);
        if a != b {
            prop_assert!(ab < 1.0);
        }
    }

    #[test]
    fn eiou_dominates_iou_loss(a in bbox(), b in bbox()) {
        let l = eiou_loss(&a, &b).unwrap();
        prop_assert!(l >= 1.0 - iou(&a, &b));
        prop_assert_eq!(eiou_loss(&a, &a).unwrap(), 0.0);
        if a != b {
            prop_assert!(l > 0.0);
        }
    }

    #[test]
    fn eiou_is_translation_and_scale_invariant(
        a in bbox(), b in bbox(),
        dx in -100.0..100.0f64, dy in -100.0..100.0f64,
        px in -20.0..20.0f64, py in -20.0..20.0f64, s in 0.1..10.0f64,
    ) {
        let l = eiou_loss(&a, &b).unwrap();
        let t = eiou_loss(&a.translate(dx, dy), &b.translate(dx, dy)).unwrap();
        let sc = eiou_loss(&a.scale_about(px, py, s), &b.scale_about(px, py, s)).unwrap();
        prop_assert!((t - l).abs() <= 1e-10, "{} vs {}", t, l);
        prop_assert!((sc - l).abs() <= 1e-10, "{} vs {}", sc, l);
    }

    #[test]
    fn nms_keeps_a_separated_subset(dets in detections(20), t in 0.1..0.9f64, thr in 0.0..0.8f64) {
        let kept = nms(&dets, t, thr);
        for d in &kept {
            prop_assert!(dets.contains(d));
            prop_assert!(d.score >= thr);
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(iou(&a.bbox, &b.bbox) < t);
                prop_assert!(a.score >= b.score);
            }
        }
        // suppression is idempotent
        prop_assert_eq!(nms(&kept, t, thr), kept);
    }

    #[test]
    fn matching_counts_are_consistent(dets in detections(12), gts in prop::collection::vec(lattice_box(), 0..8)) {
        let m = match_detections(&dets, &gts, 0.5);
        prop_assert_eq!(m.tp + m.fn_, gts.len());
        prop_assert_eq!(m.tp + m.fp, dets.len());
        prop_assert_eq!(m.tp, m.pairs.len());
        let mut d_used = vec![false; dets.len()];
        let mut g_used = vec![false; gts.len()];
        for p in &m.pairs {
            prop_assert!(!d_used[p.det] && !g_used[p.gt]);
            d_used[p.det] = true;
            g_used[p.gt] = true;
            prop_assert!(p.iou >= 0.5);
        }
    }

    #[test]
    fn exact_threshold_counts_duplicates(gts in prop::collection::vec(lattice_box(), 0..6), extra in detections(6)) {
        // every gt duplicated exactly once, plus shifted noise boxes
        let mut dets: Vec<Detection<f64>> = gts.iter().map(|&bbox| Detection { bbox, score: 0.9 }).collect();
        dets.extend(extra.iter().map(|d| Detection { bbox: d.bbox.translate(0.25, 0.0), score: d.score }));
        let m = match_detections(&dets, &gts, 1.0);
        prop_assert_eq!(m.tp, gts.len());
    }

    #[test]
    fn metrics_are_scale_free(tp in 0usize..200, fp in 0usize..200, fn_ in 0usize..200, k in 1usize..50) {
        prop_assume!(tp + fp > 0 && tp + fn_ > 0);
        let a = compute_metrics(tp, fp, fn_).unwrap();
        let b = compute_metrics(k * tp, k * fp, k * fn_).unwrap();
        for (x, y) in [(a.precision, b.precision), (a.recall, b.recall), (a.accuracy, b.accuracy), (a.f1, b.f1)] {
            prop_assert!((x - y).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&x));
        }
        if a.precision + a.recall > 0.0 {
            let f1 = 2.0 * a.precision * a.recall / (a.precision + a.recall);
            prop_assert!((a.f1 - f1).abs() <= 1e-12);
        }
    }

    #[test]
    fn queue_keeps_the_newest_unit_keys(
        cap in 1usize..40,
        batches in prop::collection::vec(prop::collection::vec(unit_vec(4), 0..6), 0..30),
    ) {
        let mut q = KeyQueue::new(cap, 4);
        let mut pushed: Vec<Vec<f64>> = Vec::new();
        for batch in &batches {
            q.enqueue(batch).unwrap();
            pushed.extend(batch.iter().cloned());
            let expect = &pushed[pushed.len().saturating_sub(cap)..];
            prop_assert_eq!(q.len(), expect.len());
            prop_assert!(q.len() <= cap);
            for (k, e) in q.iter().zip(expect) {
                prop_assert_eq!(k, e.as_slice());
                let n: f64 = k.iter().map(|x| x * x).sum();
                prop_assert!((n - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn info_nce_decreases_with_positive_similarity(
        negs in prop::collection::vec(unit_vec(3), 1..6),
        a in -1.0..1.0f64, b in -1.0..1.0f64, tau in 0.05..1.0f64,
    ) {
        prop_assume!((a - b).abs() > 1e-6);
        let q = [1.0, 0.0, 0.0];
        let pos = |c: f64| [c, (1.0 - c * c).sqrt(), 0.0];
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let negs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let l_lo = info_nce(&q, &pos(lo), negs.iter().copied(), tau).unwrap();
        let l_hi = info_nce(&q, &pos(hi), negs.iter().copied(), tau).unwrap();
        prop_assert!(l_hi < l_lo);
    }

    #[test]
    fn momentum_update_is_a_convex_step(k0 in -5.0..5.0f64, q in -5.0..5.0f64, m in 0.0..=1.0f64) {
        let mut key = ParamStore::new();
        key.push("w", Tensor::vector(vec![k0]).unwrap());
        let mut query = ParamStore::new();
        query.push("w", Tensor::vector(vec![q]).unwrap());
        momentum_update(&query, &mut key, m).unwrap();
        let k = key.tensor(0).values()[0];
        prop_assert!((k - (m * k0 + (1.0 - m) * q)).abs() <= 1e-12);
        prop_assert!(k >= k0.min(q) - 1e-12 && k <= k0.max(q) + 1e-12);
    }

    #[test]
    fn every_reachable_gt_gets_a_positive_anchor(
        anchors in prop::collection::vec(lattice_box(), 1..30),
        gts in prop::collection::vec(lattice_box(), 0..5),
    ) {
        let labels = match_anchors(&anchors, &gts, 0.7, 0.3);
        prop_assert_eq!(labels.len(), anchors.len());
        // earlier ground truths claim at most one anchor each, so a gt that
        // overlaps at least as many anchors as there are gts keeps one
        for (j, g) in gts.iter().enumerate() {
            let reachable = anchors.iter().filter(|a| iou(a, g) > 0.0).count();
            if reachable >= gts.len() {
                prop_assert!(labels.iter().any(|l| l.is_positive() && l.matched_gt == Some(j)));
            }
        }
        for l in &labels {
            prop_assert_eq!(l.is_positive(), l.matched_gt.is_some());
        }
    }

    #[test]
    fn forward_is_bit_reproducible(x in prop::collection::vec(-3.0..3.0f64, 12)) {
        let run = || {
            let mut g = Graph::new();
            let v = g.input(&Tensor::new(vec![3, 4], x.clone()).unwrap());
            let r = g.relu(v).unwrap();
            let s = g.square(r).unwrap();
            let t = g.sum(s).unwrap();
            g.scalar(t).unwrap()
        };
        prop_assert_eq!(run().to_bits(), run().to_bits());
    }
}
