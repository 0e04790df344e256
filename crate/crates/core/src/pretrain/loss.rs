use crate::ndgrad::{GradError, Graph, ParamStore, Var};
use crate::pretrain::queue::QueuePair;
use crate::pretrain::PretrainError;
use crate::scalar::Scalar;

/// Per-level embeddings of one image: `global[i]` from the whole view,
/// `local[i]` from its patches.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelEmbeddings<E> {
    pub global: Vec<E>,
    pub local: Vec<E>,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// InfoNCE: `-log(exp(q.k+/tau) / (exp(q.k+/tau) + sum_i exp(q.k_i/tau)))`
/// over the negatives `k_i`. Zero when there are no negatives.
pub fn info_nce<'a, T: Scalar>(
    q: &[T],
    k_pos: &[T],
    negatives: impl IntoIterator<Item = &'a [T]>,
    tau: T,
) -> Result<T, PretrainError> {
    if !(tau > T::zero()) {
        return Err(PretrainError::Config(format!("tau {tau} must be positive")));
    }
    if q.len() != k_pos.len() {
        return Err(PretrainError::Dimension { expected: q.len(), got: k_pos.len() });
    }
    let pos = dot(q, k_pos) / tau;
    let mut logits = vec![pos];
    for k in negatives {
        if k.len() != q.len() {
            return Err(PretrainError::Dimension { expected: q.len(), got: k.len() });
        }
        logits.push(dot(q, k) / tau);
    }
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
    Ok(lse - pos)
}

/// Graph form of [`info_nce`]; `negatives` is a constant `[K, D]` matrix.
pub fn info_nce_graph<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k_pos: Var,
    negatives: Option<Var>,
    tau: T,
) -> Result<Var, GradError> {
    let pos = g.dot(q, k_pos)?;
    let logits = match negatives {
        Some(n) => {
            let d = g.value(q).len();
            let col = g.reshape(q, vec![d, 1])?;
            let neg = g.matmul(n, col)?;
            g.concat(&[pos, neg])?
        }
        None => pos,
    };
    let logits = g.scale(logits, T::one() / tau)?;
    g.cross_entropy(logits, 0)
}

/// Temperature and per-level weights of the multistage loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights<T> {
    pub tau: T,
    pub level_weights: Vec<T>,
}

/// The three sub-losses of one level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelTerms<T> {
    pub global: T,
    pub local: T,
    pub cross: T,
}

/// Multistage contrastive loss and its twelve parts.
#[derive(Clone, Debug, PartialEq)]
pub struct DetcoLoss<T> {
    pub total: T,
    pub levels: Vec<LevelTerms<T>>,
}

fn check_levels<E, T>(q: &LevelEmbeddings<E>, k: &LevelEmbeddings<E>, queues: &QueuePair<T>, w: &[T]) -> Result<usize, PretrainError> {
    let n = w.len();
    for (what, got) in [
        ("query global", q.global.len()),
        ("query local", q.local.len()),
        ("key global", k.global.len()),
        ("key local", k.local.len()),
        ("global queues", queues.global.len()),
        ("local queues", queues.local.len()),
    ] {
        if got != n {
            return Err(PretrainError::Config(format!("{what}: {got} levels, weights have {n}")));
        }
    }
    Ok(n)
}

/// `sum_i w_i (L_gg + L_ll + L_cross)` where the global loss contrasts
/// `q.global[i]` with `k.global[i]` against the global queue, the local loss
/// `q.local[i]` with `k.local[i]` against the local queue, and the cross loss
/// `q.local[i]` with `k.global[i]` against the global queue.
pub fn detco_loss<T: Scalar>(
    q: &LevelEmbeddings<Vec<T>>,
    k: &LevelEmbeddings<Vec<T>>,
    queues: &QueuePair<T>,
    w: &LossWeights<T>,
) -> Result<DetcoLoss<T>, PretrainError> {
    let n = check_levels(q, k, queues, &w.level_weights)?;
    let mut total = T::zero();
    let mut levels = Vec::with_capacity(n);
    for i in 0..n {
        let t = LevelTerms {
            global: info_nce(&q.global[i], &k.global[i], queues.global[i].iter(), w.tau)?,
            local: info_nce(&q.local[i], &k.local[i], queues.local[i].iter(), w.tau)?,
            cross: info_nce(&q.local[i], &k.global[i], queues.global[i].iter(), w.tau)?,
        };
        total += w.level_weights[i] * (t.global + t.local + t.cross);
        levels.push(t);
    }
    Ok(DetcoLoss { total, levels })
}

/// Queue contents of every level as graph constants.
pub struct QueueVars {
    pub global: Vec<Option<Var>>,
    pub local: Vec<Option<Var>>,
}

impl QueueVars {
    pub fn new<T: Scalar>(g: &mut Graph<T>, queues: &QueuePair<T>) -> Result<Self, GradError> {
        Ok(Self {
            global: queues.global.iter().map(|q| q.as_constant(g)).collect::<Result<_, _>>()?,
            local: queues.local.iter().map(|q| q.as_constant(g)).collect::<Result<_, _>>()?,
        })
    }
}

/// Graph form of [`detco_loss`]. Keys should be constants.
pub fn detco_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    q: &LevelEmbeddings<Var>,
    k: &LevelEmbeddings<Var>,
    queues: &QueueVars,
    w: &LossWeights<T>,
) -> Result<Var, GradError> {
    let mut total: Option<Var> = None;
    for (i, &wi) in w.level_weights.iter().enumerate() {
        let a = info_nce_graph(g, q.global[i], k.global[i], queues.global[i], w.tau)?;
        let b = info_nce_graph(g, q.local[i], k.local[i], queues.local[i], w.tau)?;
        let c = info_nce_graph(g, q.local[i], k.global[i], queues.global[i], w.tau)?;
        let s = g.add(a, b)?;
        let s = g.add(s, c)?;
        let s = g.scale(s, wi)?;
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    total.ok_or_else(|| GradError::Shape("no loss levels".into()))
}

/// `theta_k <- m * theta_k + (1 - m) * theta_q`, elementwise.
pub fn momentum_update<T: Scalar>(
    theta_q: &ParamStore<T>,
    theta_k: &mut ParamStore<T>,
    m: T,
) -> Result<(), PretrainError> {
    if !(m >= T::zero() && m <= T::one()) {
        return Err(PretrainError::Config(format!("momentum {m} outside [0, 1]")));
    }
    theta_k.check_aligned(theta_q)?;
    let one_minus = T::one() - m;
    for i in 0..theta_q.len() {
        let src = theta_q.tensor(i).values();
        for (k, &q) in theta_k.values_mut(i).iter_mut().zip(src) {
            *k = m * *k + one_minus * q;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndgrad::Tensor;

    #[test]
    fn empty_queue_gives_zero() {
        let q = [0.6, 0.8];
        assert_eq!(info_nce(&q, &q, std::iter::empty(), 0.2).unwrap(), 0.0);
    }

    #[test]
    fn uniform_two_way_is_ln2() {
        let (q, k, n) = ([1.0f64, 0.0], [0.0, 1.0], [0.0, -1.0]);
        let l = info_nce(&q, &k, [&n[..]], 1.0).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bad_tau_rejected() {
        assert!(info_nce(&[1.0], &[1.0], std::iter::empty(), 0.0).is_err());
    }

    #[test]
    fn graph_matches_scalar() {
        let q = [0.6f64, 0.8];
        let k = [0.8, 0.6];
        let negs = [[1.0, 0.0], [0.0, 1.0], [-0.6, 0.8]];
        let want = info_nce(&q, &k, negs.iter().map(|n| &n[..]), 0.2).unwrap();
        let mut g = Graph::new();
        let qv = g.param(&Tensor::vector(q.to_vec()).unwrap());
        let kv = g.constant(vec![2], k.to_vec()).unwrap();
        let nv = g.constant(vec![3, 2], negs.concat()).unwrap();
        let l = info_nce_graph(&mut g, qv, kv, Some(nv), 0.2).unwrap();
        assert!((g.scalar(l).unwrap() - want).abs() < 1e-12);
        let e = info_nce_graph(&mut g, qv, kv, None, 0.2).unwrap();
        assert_eq!(g.scalar(e).unwrap(), 0.0);
    }

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.push("w", Tensor::vector(vec![v, 2.0 * v]).unwrap());
        s
    }

    #[test]
    fn momentum_fixed_point_copy_and_step() {
        let q = store(1.0);
        let mut k = store(0.0);
        momentum_update(&q, &mut k, 1.0).unwrap();
        assert_eq!(k.tensor(0).values(), &[0.0, 0.0]);
        momentum_update(&q, &mut k, 0.999).unwrap();
        assert!((k.tensor(0).values()[0] - 0.001).abs() < 1e-15);
        momentum_update(&q, &mut k, 0.0).unwrap();
        assert_eq!(k.tensor(0).values(), q.tensor(0).values());
    }

    #[test]
    fn momentum_rejects_mismatch() {
        let q = store(1.0);
        let mut k = ParamStore::new();
        k.push("v", Tensor::vector(vec![0.0, 0.0]).unwrap());
        assert!(momentum_update(&q, &mut k, 0.5).is_err());
    }
}
