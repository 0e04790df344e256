//! Finite-difference certification of every differentiable loss in the
//! crate at random smooth points.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::detect::losses::{bce_prob_graph, eiou_graph, smooth_l1_graph, BoxVars};
use crate::detect::BBox;
use crate::ndgrad::gradcheck::{check_point, FdReport, PointCheck, KINK_RADIUS, STEP};
use crate::ndgrad::{GradError, Graph, ParamStore, Tensor, Var};
use crate::phantom::Image;
use crate::pretrain::{
    detco_loss_graph, info_nce_graph, tile, ContrastiveNet, LevelEmbeddings, LossWeights, NetSpec, QueuePair, QueueVars,
};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

/// Draws before a loss gives up on reaching its point quota.
const MAX_ATTEMPTS_FACTOR: usize = 20;

fn unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn certify(
    name: &str,
    points: usize,
    rng: &mut ChaCha8Rng,
    mut point: impl FnMut(&mut ChaCha8Rng) -> Result<PointCheck, GradError>,
) -> Result<FdReport, GradError> {
    let mut report = FdReport::new(name);
    let mut attempts = 0;
    while report.points < points && attempts < points * MAX_ATTEMPTS_FACTOR {
        attempts += 1;
        report.record(&point(rng)?);
    }
    Ok(report)
}

fn smooth_l1(points: usize, rng: &mut ChaCha8Rng) -> Result<FdReport, GradError> {
    certify("smooth_l1_loss", points, rng, |rng| {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let t: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let build = move |g: &mut Graph<f64>, v: Var| {
            let parts: Vec<Var> = (0..4).map(|k| g.gather(v, vec![k])).collect::<Result<_, _>>()?;
            let l = smooth_l1_graph(g, [parts[0], parts[1], parts[2], parts[3]], &[t])?;
            g.sum(l)
        };
        check_point(&build, &[4], &x, None, STEP, Some(KINK_RADIUS))
    })
}

fn rpn_cls(points: usize, rng: &mut ChaCha8Rng) -> Result<FdReport, GradError> {
    certify("rpn_cls_loss", points, rng, |rng| {
        let n = 8;
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.02..0.98)).collect();
        let t: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let build = move |g: &mut Graph<f64>, v: Var| {
            let l = bce_prob_graph(g, v, &t)?;
            g.mean(l)
        };
        check_point(&build, &[n], &p, None, STEP, Some(KINK_RADIUS))
    })
}

fn rpn_cls_logits(points: usize, rng: &mut ChaCha8Rng) -> Result<FdReport, GradError> {
    certify("rpn_cls_loss (logits)", points, rng, |rng| {
        let n = 8;
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let build = move |g: &mut Graph<f64>, v: Var| {
            let l = g.bce_with_logits(v, t.clone())?;
            g.mean(l)
        };
        check_point(&build, &[n], &z, None, STEP, Some(KINK_RADIUS))
    })
}

fn info_nce(points: usize, rng: &mut ChaCha8Rng) -> Result<FdReport, GradError> {
    certify("info_nce", points, rng, |rng| {
        let (d, k) = (8, 16);
        let q: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let pos = unit(rng, d);
        let queue: Vec<f64> = (0..k).flat_map(|_| unit(rng, d)).collect();
        let build = move |g: &mut Graph<f64>, v: Var| {
            let qn = g.l2_normalize(v, 1e-12)?;
            let kp = g.constant(vec![d], pos.clone())?;
            let negs = g.constant(vec![k, d], queue.clone())?;
            info_nce_graph(g, qn, kp, Some(negs), 0.2)
        };
        check_point(&build, &[d], &q, None, STEP, Some(KINK_RADIUS))
    })
}

fn overlapping_pair(rng: &mut impl Rng) -> (BBox<f64>, BBox<f64>) {
    loop {
        let b = |rng: &mut dyn rand::RngCore| {
            let (x, y) = (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0));
            BBox::new(x, y, x + rng.gen_range(0.5..8.0), y + rng.gen_range(0.5..8.0)).expect("positive extent")
        };
        let (p, g) = (b(rng), b(rng));
        if p.intersection_area(&g) > 0.0 {
            return (p, g);
        }
    }
}

fn eiou(points: usize, rng: &mut ChaCha8Rng) -> Result<FdReport, GradError> {
    certify("eiou_loss", points, rng, |rng| {
        let (pred, gt) = overlapping_pair(rng);
        let build = move |g: &mut Graph<f64>, v: Var| {
            let p = BoxVars::from_interleaved(g, v)?;
            let t = BoxVars::constant(g, &[gt])?;
            let l = eiou_graph(g, &p, &t)?;
            g.sum(l)
        };
        check_point(&build, &[4], &pred.corners(), None, STEP, Some(KINK_RADIUS))
    })
}

/// Coordinates probed per detco point.
const DETCO_COORDS: usize = 4;

fn detco_point(rng: &mut ChaCha8Rng) -> Result<PointCheck, GradError> {
    let spec = NetSpec { channels: [2, 3, 3, 4], hidden: 5, embed_dim: 4, patches: 4 };
    let (vw, vh, grid) = (16, 12, 2);
    let weights = LossWeights { tau: 0.2, level_weights: vec![0.1, 0.4, 0.7, 1.0] };
    let mut store = ParamStore::new();
    let net = ContrastiveNet::init(&mut store, &spec, rng);
    // zero biases make dead heads emit the zero vector, where normalization
    // is singular
    for i in 0..store.len() {
        if store.tensor(i).rank() == 1 {
            let name = store.name(i).to_string();
            for v in store.get_mut(&name).expect("own tensor").values_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }
    let image = |rng: &mut ChaCha8Rng| {
        Image::new(vw, vh, (0..vw * vh).map(|_| rng.gen_range(0.0..1.0)).collect()).expect("valid size")
    };
    let (vq, vk) = (image(rng), image(rng));
    let (pq, pk) = (tile(&vq, grid).expect("tileable"), tile(&vk, grid).expect("tileable"));
    let mut queues = QueuePair::new(4, 6, spec.embed_dim);
    for level in 0..4 {
        let g: Vec<Vec<f64>> = (0..3).map(|_| unit(rng, spec.embed_dim)).collect();
        let l: Vec<Vec<f64>> = (0..3).map(|_| unit(rng, spec.embed_dim)).collect();
        queues.global[level].enqueue(&g).expect("unit keys");
        queues.local[level].enqueue(&l).expect("unit keys");
    }
    let to_tensor = |im: &Image<f64>| Tensor::new(vec![1, im.height(), im.width()], im.data().to_vec()).expect("image");
    // keys from the same network, detached
    let keys = {
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let x = g.input(&to_tensor(&vk));
        let global = net.encode_multilevel(&mut g, &p, x)?;
        let xs: Vec<Var> = pk.iter().map(|im| g.input(&to_tensor(im))).collect();
        let local = net.encode_patches(&mut g, &p, &xs)?;
        let vals = |vs: &[Var]| vs.iter().map(|&v| g.value(v).to_vec()).collect::<Vec<_>>();
        LevelEmbeddings { global: vals(&global), local: vals(&local) }
    };
    let slot = rng.gen_range(0..store.len());
    let shape = store.tensor(slot).shape().to_vec();
    let x0 = store.tensor(slot).values().to_vec();
    let mut coords: Vec<usize> = (0..x0.len()).collect();
    coords.shuffle(rng);
    coords.truncate(DETCO_COORDS);
    let build = |g: &mut Graph<f64>, v: Var| {
        let mut p = store.bind_frozen(g);
        p.replace(slot, v);
        let x = g.input(&to_tensor(&vq));
        let global = net.encode_multilevel(g, &p, x)?;
        let xs: Vec<Var> = pq.iter().map(|im| g.input(&to_tensor(im))).collect();
        let local = net.encode_patches(g, &p, &xs)?;
        let consts = |g: &mut Graph<f64>, vs: &[Vec<f64>]| -> Result<Vec<Var>, GradError> {
            vs.iter().map(|k| g.constant(vec![k.len()], k.clone())).collect()
        };
        let k = LevelEmbeddings { global: consts(g, &keys.global)?, local: consts(g, &keys.local)? };
        let qv = QueueVars::new(g, &queues)?;
        detco_loss_graph(g, &LevelEmbeddings { global, local }, &k, &qv, &weights)
    };
    check_point(&build, &shape, &x0, Some(&coords), STEP, Some(KINK_RADIUS))
}

fn detco(points: usize, rng: &mut ChaCha8Rng) -> Result<FdReport, GradError> {
    certify("detco_loss", points, rng, detco_point)
}

/// Certifies every loss at `points` random smooth points each.
pub fn gradient_suite(points: usize, seed: u64) -> Result<Vec<FdReport>, GradError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        smooth_l1(points, &mut rng)?,
        rpn_cls(points, &mut rng)?,
        rpn_cls_logits(points, &mut rng)?,
        info_nce(points, &mut rng)?,
        detco(points, &mut rng)?,
        eiou(points, &mut rng)?,
    ])
}
