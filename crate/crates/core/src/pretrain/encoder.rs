use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ndgrad::{Bound, GradError, Graph, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

/// Number of encoder stages, and so of contrastive loss levels.
pub const LEVELS: usize = 4;

pub const DEFAULT_CHANNELS: [usize; LEVELS] = [8, 16, 32, 64];

/// Output extent of one stride-2, pad-1, 3x3 stage.
pub fn stage_extent(n: usize) -> usize {
    (n + 2 - 3) / 2 + 1
}

/// Feature-map `(height, width)` after each stage for an `h x w` input.
pub fn stage_shapes(h: usize, w: usize) -> [(usize, usize); LEVELS] {
    let mut out = [(0, 0); LEVELS];
    let (mut h, mut w) = (h, w);
    for s in &mut out {
        h = stage_extent(h);
        w = stage_extent(w);
        *s = (h, w);
    }
    out
}

fn gaussian<T: Scalar>(shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(z * std)
    })
    .expect("gaussian init is finite")
}

fn index_of<T: Scalar>(store: &ParamStore<T>, name: &str, shape: &[usize]) -> Result<usize, GradError> {
    let i = (0..store.len())
        .find(|&i| store.name(i) == name)
        .ok_or_else(|| GradError::Mismatch(format!("parameter {name} missing")))?;
    if store.tensor(i).shape() != shape {
        return Err(GradError::Mismatch(format!(
            "{name} has shape {:?}, expected {shape:?}",
            store.tensor(i).shape()
        )));
    }
    Ok(i)
}

/// Stack of 3x3 stride-2 convolutions with bias and relu over a
/// single-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    channels: Vec<usize>,
    weights: Vec<usize>,
    biases: Vec<usize>,
}

impl Encoder {
    /// Adds He-initialized `enc.convN.{w,b}` tensors for the given stage
    /// widths to `store`.
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, channels: &[usize], rng: &mut impl Rng) -> Self {
        let mut enc = Self { channels: channels.to_vec(), weights: Vec::new(), biases: Vec::new() };
        let mut c_in = 1;
        for (i, &c) in channels.iter().enumerate() {
            let std = (2.0 / (9 * c_in) as f64).sqrt();
            enc.weights.push(store.push(format!("enc.conv{}.w", i + 1), gaussian(vec![c, c_in, 3, 3], std, rng)));
            enc.biases.push(store.push(format!("enc.conv{}.b", i + 1), Tensor::zeros(vec![c])));
            c_in = c;
        }
        enc
    }

    /// Locates existing encoder tensors in `store`.
    pub fn attach<T: Scalar>(store: &ParamStore<T>, channels: &[usize]) -> Result<Self, GradError> {
        let mut enc = Self { channels: channels.to_vec(), weights: Vec::new(), biases: Vec::new() };
        let mut c_in = 1;
        for (i, &c) in channels.iter().enumerate() {
            enc.weights.push(index_of(store, &format!("enc.conv{}.w", i + 1), &[c, c_in, 3, 3])?);
            enc.biases.push(index_of(store, &format!("enc.conv{}.b", i + 1), &[c])?);
            c_in = c;
        }
        Ok(enc)
    }

    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    /// Feature maps after each stage for a `[1,H,W]` input.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Vec<Var>, GradError> {
        let mut out = Vec::with_capacity(self.depth());
        let mut h = x;
        for (&w, &b) in self.weights.iter().zip(&self.biases) {
            let c = g.conv2d(h, p.get(w), 2, 1)?;
            let c = g.add_channel_bias(c, p.get(b))?;
            h = g.relu(c)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// Two-layer perceptron `W2 relu(W1 x + b1) + b2` on a vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    out: usize,
}

impl Mlp {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: (usize, usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let (i, h, o) = dims;
        Self {
            w1: store.push(format!("{name}.w1"), gaussian(vec![i, h], (2.0 / i as f64).sqrt(), rng)),
            b1: store.push(format!("{name}.b1"), Tensor::zeros(vec![h])),
            w2: store.push(format!("{name}.w2"), gaussian(vec![h, o], (1.0 / h as f64).sqrt(), rng)),
            b2: store.push(format!("{name}.b2"), Tensor::zeros(vec![o])),
            out: o,
        }
    }

    pub fn attach<T: Scalar>(store: &ParamStore<T>, name: &str, dims: (usize, usize, usize)) -> Result<Self, GradError> {
        let (i, h, o) = dims;
        Ok(Self {
            w1: index_of(store, &format!("{name}.w1"), &[i, h])?,
            b1: index_of(store, &format!("{name}.b1"), &[h])?,
            w2: index_of(store, &format!("{name}.w2"), &[h, o])?,
            b2: index_of(store, &format!("{name}.b2"), &[o])?,
            out: o,
        })
    }

    /// Applies the perceptron to every row of a `[n, in]` matrix.
    pub fn forward_rows<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var, GradError> {
        let a = g.matmul(x, p.get(self.w1))?;
        let a = g.add_row_bias(a, p.get(self.b1))?;
        let a = g.relu(a)?;
        let o = g.matmul(a, p.get(self.w2))?;
        g.add_row_bias(o, p.get(self.b2))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var, GradError> {
        let n = g.value(x).len();
        let row = g.reshape(x, vec![1, n])?;
        let o = self.forward_rows(g, p, row)?;
        g.reshape(o, vec![self.out])
    }
}

/// Normalization guard for embeddings.
pub const NORM_EPS: f64 = 1e-12;

/// Encoder with one global and one local projection head per stage.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveNet {
    pub encoder: Encoder,
    global_heads: Vec<Mlp>,
    local_heads: Vec<Mlp>,
    patches: usize,
    embed_dim: usize,
}

/// Shape of a [`ContrastiveNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetSpec {
    pub channels: [usize; LEVELS],
    pub hidden: usize,
    pub embed_dim: usize,
    /// Local patches per view, `grid * grid`.
    pub patches: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self { channels: DEFAULT_CHANNELS, hidden: 64, embed_dim: 32, patches: 9 }
    }
}

impl ContrastiveNet {
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, spec: &NetSpec, rng: &mut impl Rng) -> Self {
        let encoder = Encoder::init(store, &spec.channels, rng);
        let global_heads = (0..LEVELS)
            .map(|i| Mlp::init(store, &format!("head.g{}", i + 1), (spec.channels[i], spec.hidden, spec.embed_dim), rng))
            .collect();
        let local_heads = (0..LEVELS)
            .map(|i| {
                let dims = (spec.patches * spec.channels[i], spec.hidden, spec.embed_dim);
                Mlp::init(store, &format!("head.l{}", i + 1), dims, rng)
            })
            .collect();
        Self { encoder, global_heads, local_heads, patches: spec.patches, embed_dim: spec.embed_dim }
    }

    pub fn attach<T: Scalar>(store: &ParamStore<T>, spec: &NetSpec) -> Result<Self, GradError> {
        let encoder = Encoder::attach(store, &spec.channels)?;
        let mut global_heads = Vec::new();
        let mut local_heads = Vec::new();
        for i in 0..LEVELS {
            let c = spec.channels[i];
            global_heads.push(Mlp::attach(store, &format!("head.g{}", i + 1), (c, spec.hidden, spec.embed_dim))?);
            local_heads.push(Mlp::attach(store, &format!("head.l{}", i + 1), (spec.patches * c, spec.hidden, spec.embed_dim))?);
        }
        Ok(Self { encoder, global_heads, local_heads, patches: spec.patches, embed_dim: spec.embed_dim })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// One unit-norm embedding per level for a `[1,H,W]` view.
    pub fn encode_multilevel<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, view: Var) -> Result<Vec<Var>, GradError> {
        let feats = self.encoder.forward(g, p, view)?;
        let mut out = Vec::with_capacity(LEVELS);
        for (f, head) in feats.into_iter().zip(&self.global_heads) {
            let pooled = g.mean_pool(f)?;
            let e = head.forward(g, p, pooled)?;
            out.push(g.l2_normalize(e, T::lit(NORM_EPS))?);
        }
        Ok(out)
    }

    /// One unit-norm local embedding per level: pooled patch features are
    /// concatenated in patch order and passed through the local head.
    pub fn encode_patches<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, patches: &[Var]) -> Result<Vec<Var>, GradError> {
        if patches.len() != self.patches {
            return Err(GradError::Shape(format!("{} patches, expected {}", patches.len(), self.patches)));
        }
        let mut pooled: Vec<Vec<Var>> = vec![Vec::with_capacity(patches.len()); LEVELS];
        for &patch in patches {
            for (level, f) in self.encoder.forward(g, p, patch)?.into_iter().enumerate() {
                pooled[level].push(g.mean_pool(f)?);
            }
        }
        let mut out = Vec::with_capacity(LEVELS);
        for (parts, head) in pooled.iter().zip(&self.local_heads) {
            let joined = g.concat(parts)?;
            let e = head.forward(g, p, joined)?;
            out.push(g.l2_normalize(e, T::lit(NORM_EPS))?);
        }
        Ok(out)
    }
}
