use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::ndgrad::tensor::numel;
use crate::ndgrad::{GradError, Tensor};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self, GradError> {
        let (&[c_in, h, w], &[c_out, kc, kh, kw]) = (input, kernel) else {
            return Err(GradError::Shape(format!(
                "conv2d expects [C,H,W] input and [O,C,kH,kW] kernel, got {input:?} and {kernel:?}"
            )));
        };
        if kc != c_in {
            return Err(GradError::Shape(format!(
                "conv2d input has {c_in} channels but kernel expects {kc}"
            )));
        }
        if stride == 0 {
            return Err(GradError::Shape("conv2d stride must be positive".into()));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(GradError::Shape(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds the padded input into an `[oH*oW, C*kH*kW]` matrix, one row per
    /// output pixel.
    fn im2col<T: Scalar>(&self, input: &[T]) -> Vec<T> {
        let patch = self.patch_len();
        let mut col = vec![T::zero(); patch * self.out_plane()];
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let dst = &mut col[(oy * self.ow + ox) * patch..][..patch];
                for ci in 0..self.c_in {
                    for ky in 0..self.kh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &input[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for kx in 0..self.kw {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[(ci * self.kh + ky) * self.kw + kx] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im<T: Scalar>(&self, col: &[T], input_grad: &mut [T]) {
        let patch = self.patch_len();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let src = &col[(oy * self.ow + ox) * patch..][..patch];
                for ci in 0..self.c_in {
                    for ky in 0..self.kh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut input_grad[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for kx in 0..self.kw {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[(ci * self.kh + ky) * self.kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Sparse linear read-out: `out[j] = sum_t w_t * x[idx_t]` over the taps of row `j`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Taps<T> {
    offsets: Vec<usize>,
    index: Vec<usize>,
    weight: Vec<T>,
}

impl<T: Scalar> Taps<T> {
    pub fn new() -> Self {
        Self { offsets: vec![0], index: Vec::new(), weight: Vec::new() }
    }

    /// Appends one output row built from `(source index, weight)` pairs.
    pub fn push_row(&mut self, taps: impl IntoIterator<Item = (usize, T)>) {
        for (i, w) in taps {
            self.index.push(i);
            self.weight.push(w);
        }
        self.offsets.push(self.index.len());
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    fn row(&self, j: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (a, b) = (self.offsets[j], self.offsets[j + 1]);
        self.index[a..b].iter().copied().zip(self.weight[a..b].iter().copied())
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    Max(Var, Var),
    Scale(Var, T),
    Shift(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Relu(Var),
    Sigmoid(Var),
    SmoothL1(Var),
    BceWithLogits { logits: Var, targets: Vec<T> },
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Matmul { a: Var, b: Var, m: usize, k: usize, n: usize },
    AddRowBias { x: Var, bias: Var, cols: usize },
    AddChannelBias { x: Var, bias: Var, plane: usize },
    Conv2d { input: Var, kernel: Var, geom: ConvGeom, col: Option<Vec<T>> },
    MeanPool { x: Var, plane: usize },
    L2Normalize { x: Var, eps: T, norm: T },
    Concat(Vec<Var>),
    Reshape(Var),
    Gather { x: Var, index: Vec<usize> },
    WeightedGather { x: Var, taps: Taps<T> },
    CrossEntropy { logits: Var, target: usize, probs: Vec<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Min(..) => "min",
            Op::Max(..) => "max",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::SmoothL1(..) => "smooth_l1",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Dot(..) => "dot",
            Op::Matmul { .. } => "matmul",
            Op::AddRowBias { .. } => "add_row_bias",
            Op::AddChannelBias { .. } => "add_channel_bias",
            Op::Conv2d { .. } => "conv2d",
            Op::MeanPool { .. } => "mean_pool",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::Concat(..) => "concat",
            Op::Reshape(..) => "reshape",
            Op::Gather { .. } => "gather",
            Op::WeightedGather { .. } => "weighted_gather",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Min(a, b)
            | Op::Max(a, b)
            | Op::Dot(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Shift(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::SmoothL1(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a) => vec![*a],
            Op::BceWithLogits { logits, .. } | Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Matmul { a, b, .. } => vec![*a, *b],
            Op::AddRowBias { x, bias, .. } | Op::AddChannelBias { x, bias, .. } => vec![*x, *bias],
            Op::Conv2d { input, kernel, .. } => vec![*input, *kernel],
            Op::MeanPool { x, .. }
            | Op::L2Normalize { x, .. }
            | Op::Gather { x, .. }
            | Op::WeightedGather { x, .. } => vec![*x],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    shape: Vec<usize>,
    value: Vec<T>,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every trainable leaf of a graph.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    leaves: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a trainable leaf; zeros when the leaf does not reach the loss.
    /// `None` for nodes that are not trainable leaves.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.leaves.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Tape of primitive operations recorded in evaluation order.
///
/// Node inputs always precede the node, so the tape is a topological order and
/// reverse traversal visits each node once.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn scalar(&self, v: Var) -> Result<T, GradError> {
        match self.nodes[v.0].value.as_slice() {
            [x] => Ok(*x),
            _ => Err(GradError::NotScalar(self.nodes[v.0].shape.clone())),
        }
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("graph values are validated")
    }

    fn push(&mut self, op: Op<T>, shape: Vec<usize>, value: Vec<T>) -> Result<Var, GradError> {
        debug_assert_eq!(numel(&shape), value.len());
        if value.iter().any(|x| !x.is_finite()) {
            return Err(GradError::NonFinite(op.name().into()));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { op, shape, value, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf. Trainable iff `tensor.requires_grad()`.
    pub fn input(&mut self, tensor: &Tensor<T>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            shape: tensor.shape().to_vec(),
            value: tensor.values().to_vec(),
            requires_grad: tensor.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf regardless of the tensor's flag.
    pub fn param(&mut self, tensor: &Tensor<T>) -> Var {
        let v = self.input(tensor);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Records a non-trainable leaf.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<T>) -> Result<Var, GradError> {
        let t = Tensor::new(shape, values)?;
        let v = self.input(&t);
        self.nodes[v.0].requires_grad = false;
        Ok(v)
    }

    pub fn constant_scalar(&mut self, value: T) -> Result<Var, GradError> {
        self.constant(vec![1], vec![value])
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(), GradError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(GradError::Shape(format!(
                "{op}: operand shapes {:?} and {:?} differ",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var, GradError> {
        self.same_shape(a, b, op.name())?;
        let value =
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
        let shape = self.nodes[a.0].shape.clone();
        self.push(op, shape, value)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var, GradError> {
        let value = self.value(a).iter().map(|&x| f(x)).collect::<Vec<_>>();
        let shape = self.nodes[a.0].shape.clone();
        self.push(op, shape, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.binary(a, b, Op::Min(a, b), |x, y| if y < x { y } else { x })
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.binary(a, b, Op::Max(a, b), |x, y| if y > x { y } else { x })
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, GradError> {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn shift(&mut self, a: Var, c: T) -> Result<Var, GradError> {
        self.unary(a, Op::Shift(a), |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, GradError> {
        self.scale(a, -T::one())
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, GradError> {
        self.unary(a, Op::Exp(a), T::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, GradError> {
        self.unary(a, Op::Log(a), T::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, GradError> {
        self.unary(a, Op::Sqrt(a), T::sqrt)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, GradError> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// `max(x, 0)` with derivative 0 at 0.
    pub fn relu(&mut self, a: Var) -> Result<Var, GradError> {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, GradError> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// Elementwise `0.5x^2` for `|x| < 1`, else `|x| - 0.5`.
    pub fn smooth_l1(&mut self, a: Var) -> Result<Var, GradError> {
        self.unary(a, Op::SmoothL1(a), smooth_l1)
    }

    /// Elementwise binary cross-entropy of `sigmoid(logits)` against fixed targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<T>) -> Result<Var, GradError> {
        if targets.len() != self.value(logits).len() {
            return Err(GradError::Shape(format!(
                "bce_with_logits: {} targets for {} logits",
                targets.len(),
                self.value(logits).len()
            )));
        }
        let value = self
            .value(logits)
            .iter()
            .zip(&targets)
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p())
            .collect::<Vec<_>>();
        let shape = self.nodes[logits.0].shape.clone();
        self.push(Op::BceWithLogits { logits, targets }, shape, value)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, GradError> {
        let s = self.value(a).iter().copied().sum();
        self.push(Op::Sum(a), vec![1], vec![s])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, GradError> {
        let n = T::from_usize_lossy(self.value(a).len());
        let s: T = self.value(a).iter().copied().sum();
        self.push(Op::Mean(a), vec![1], vec![s / n])
    }

    /// Inner product of two equal-length tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        if self.value(a).len() != self.value(b).len() {
            return Err(GradError::Shape(format!(
                "dot: lengths {} and {} differ",
                self.value(a).len(),
                self.value(b).len()
            )));
        }
        let s = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).sum();
        self.push(Op::Dot(a, b), vec![1], vec![s])
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (&[m, k], &[k2, n]) = (self.shape(a), self.shape(b)) else {
            return Err(GradError::Shape(format!(
                "matmul expects rank-2 operands, got {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        };
        if k != k2 {
            return Err(GradError::Shape(format!("matmul inner extents {k} and {k2} differ")));
        }
        let mut out = vec![T::zero(); m * n];
        let (av, bv) = (self.value(a), self.value(b));
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                axpy(av[i * k + p], &bv[p * n..(p + 1) * n], row);
            }
        }
        self.push(Op::Matmul { a, b, m, k, n }, vec![m, n], out)
    }

    /// `[r,c] + [c]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var, GradError> {
        let &[_, cols] = self.shape(x) else {
            return Err(GradError::Shape(format!("add_row_bias expects rank 2, got {:?}", self.shape(x))));
        };
        if self.value(bias).len() != cols {
            return Err(GradError::Shape(format!(
                "add_row_bias: {} biases for {cols} columns",
                self.value(bias).len()
            )));
        }
        let b = self.value(bias);
        let value = self.value(x).iter().enumerate().map(|(i, &v)| v + b[i % cols]).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::AddRowBias { x, bias, cols }, shape, value)
    }

    /// `[C,H,W] + [C]` broadcast over each channel plane.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var, GradError> {
        let &[c, h, w] = self.shape(x) else {
            return Err(GradError::Shape(format!(
                "add_channel_bias expects [C,H,W], got {:?}",
                self.shape(x)
            )));
        };
        if self.value(bias).len() != c {
            return Err(GradError::Shape(format!(
                "add_channel_bias: {} biases for {c} channels",
                self.value(bias).len()
            )));
        }
        let plane = h * w;
        let b = self.value(bias);
        let value = self.value(x).iter().enumerate().map(|(i, &v)| v + b[i / plane]).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::AddChannelBias { x, bias, plane }, shape, value)
    }

    /// Cross-correlation of a `[C,H,W]` input with a `[O,C,kH,kW]` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, GradError> {
        let geom = ConvGeom::new(self.shape(input), self.shape(kernel), stride, pad)?;
        let col = geom.im2col(self.value(input));
        let plane = geom.out_plane();
        let patch = geom.patch_len();
        let kv = self.value(kernel);
        let mut out = vec![T::zero(); geom.c_out * plane];
        for o in 0..geom.c_out {
            let k = &kv[o * patch..(o + 1) * patch];
            for n in 0..plane {
                out[o * plane + n] = dot(k, &col[n * patch..(n + 1) * patch]);
            }
        }
        let col = self.nodes[kernel.0].requires_grad.then_some(col);
        self.push(
            Op::Conv2d { input, kernel, geom, col },
            vec![geom.c_out, geom.oh, geom.ow],
            out,
        )
    }

    /// Per-channel spatial mean, `[C,H,W] -> [C]`.
    pub fn mean_pool(&mut self, x: Var) -> Result<Var, GradError> {
        let &[c, h, w] = self.shape(x) else {
            return Err(GradError::Shape(format!("mean_pool expects [C,H,W], got {:?}", self.shape(x))));
        };
        let plane = h * w;
        let n = T::from_usize_lossy(plane);
        let value = self.value(x).chunks(plane).map(|p| p.iter().copied().sum::<T>() / n).collect();
        self.push(Op::MeanPool { x, plane }, vec![c], value)
    }

    /// `v / max(|v|, eps)` for a rank-1 tensor.
    pub fn l2_normalize(&mut self, x: Var, eps: T) -> Result<Var, GradError> {
        if self.shape(x).len() != 1 {
            return Err(GradError::Shape(format!(
                "l2_normalize expects a vector, got {:?}",
                self.shape(x)
            )));
        }
        let norm = self.value(x).iter().map(|&v| v * v).sum::<T>().sqrt();
        let d = norm.max(eps);
        let value = self.value(x).iter().map(|&v| v / d).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::L2Normalize { x, eps, norm }, shape, value)
    }

    /// Flattened concatenation into a vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, GradError> {
        if parts.is_empty() {
            return Err(GradError::Shape("concat of nothing".into()));
        }
        let value: Vec<T> = parts.iter().flat_map(|p| self.value(*p).iter().copied()).collect();
        let n = value.len();
        self.push(Op::Concat(parts.to_vec()), vec![n], value)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, GradError> {
        if numel(&shape) != self.value(x).len() || shape.iter().any(|&d| d == 0) {
            return Err(GradError::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let value = self.value(x).to_vec();
        self.push(Op::Reshape(x), shape, value)
    }

    /// Vector of `x[index[i]]`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>) -> Result<Var, GradError> {
        let src = self.value(x);
        if index.is_empty() {
            return Err(GradError::Shape("gather of no indices".into()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(GradError::Shape(format!("gather index {bad} out of {}", src.len())));
        }
        let value = index.iter().map(|&i| src[i]).collect();
        let n = index.len();
        self.push(Op::Gather { x, index }, vec![n], value)
    }

    /// Sparse linear read-out of `x`, shaped as `shape`.
    pub fn weighted_gather(
        &mut self,
        x: Var,
        taps: Taps<T>,
        shape: Vec<usize>,
    ) -> Result<Var, GradError> {
        if numel(&shape) != taps.rows() || taps.rows() == 0 {
            return Err(GradError::Shape(format!(
                "weighted_gather: {} rows for shape {shape:?}",
                taps.rows()
            )));
        }
        let src = self.value(x);
        if let Some(&bad) = taps.index.iter().find(|&&i| i >= src.len()) {
            return Err(GradError::Shape(format!("tap index {bad} out of {}", src.len())));
        }
        let value = (0..taps.rows()).map(|j| taps.row(j).map(|(i, w)| w * src[i]).sum()).collect();
        self.push(Op::WeightedGather { x, taps }, shape, value)
    }

    /// Softmax cross-entropy of a logit vector against class `target`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, GradError> {
        let z = self.value(logits);
        if target >= z.len() {
            return Err(GradError::Shape(format!("target {target} out of {} classes", z.len())));
        }
        let zmax = z.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = z.iter().map(|&v| (v - zmax).exp()).collect();
        let total: T = exps.iter().copied().sum();
        let loss = total.ln() + zmax - z[target];
        let probs = exps.into_iter().map(|e| e / total).collect();
        self.push(Op::CrossEntropy { logits, target, probs }, vec![1], vec![loss])
    }

    /// Smallest distance of any recorded branch input to its kink: relu
    /// pre-activations, min/max operand gaps and the norms fed to
    /// `l2_normalize`, which is singular at zero. Infinite when there are
    /// none.
    pub fn kink_margin(&self) -> T {
        let mut margin = T::infinity();
        for node in &self.nodes {
            match node.op {
                Op::Relu(a) => {
                    for &x in self.value(a) {
                        margin = margin.min(x.abs());
                    }
                }
                Op::Min(a, b) | Op::Max(a, b) => {
                    for (&x, &y) in self.value(a).iter().zip(self.value(b)) {
                        margin = margin.min((x - y).abs());
                    }
                }
                Op::L2Normalize { norm, .. } => margin = margin.min(norm),
                _ => {}
            }
        }
        margin
    }

    /// Hash of every branch decision (relu sign, min/max side). Two evaluations
    /// with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(a) => self.value(a).iter().for_each(|&x| (x > T::zero()).hash(&mut h)),
                Op::Min(a, b) => self
                    .value(a)
                    .iter()
                    .zip(self.value(b))
                    .for_each(|(&x, &y)| (y < x).hash(&mut h)),
                Op::Max(a, b) => self
                    .value(a)
                    .iter()
                    .zip(self.value(b))
                    .for_each(|(&x, &y)| (y > x).hash(&mut h)),
                Op::L2Normalize { eps, norm, .. } => (norm > eps).hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse-mode sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, GradError> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(GradError::Shape(format!("unknown node {}", loss.0)));
        };
        if node.value.len() != 1 {
            return Err(GradError::NotScalar(node.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if node.op.inputs().iter().any(|v| v.0 >= i) {
                return Err(GradError::Cycle(i));
            }
            self.propagate(i, &g, &mut grads);
        }
        let mut leaves = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads.get_mut(i).and_then(Option::take);
                let g = g.unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(GradError::NonFinite("gradient".into()));
                }
                leaves[i] = Some(g);
            }
        }
        Ok(Gradients { leaves })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            f(slot);
        };
        let zero = T::zero();
        let one = T::one();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * bv[k];
                    }
                });
                acc(*b, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * av[k];
                    }
                });
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] / bv[k];
                    }
                });
                acc(*b, &mut |d| {
                    for k in 0..d.len() {
                        d[k] -= g[k] * out[k] / bv[k];
                    }
                });
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let is_min = matches!(node.op, Op::Min(..));
                let (av, bv) = (self.value(*a), self.value(*b));
                let pick_b =
                    |k: usize| if is_min { bv[k] < av[k] } else { bv[k] > av[k] };
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        if !pick_b(k) {
                            d[k] += g[k];
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for k in 0..d.len() {
                        if pick_b(k) {
                            d[k] += g[k];
                        }
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| axpy(*c, g, d)),
            Op::Shift(a) | Op::Reshape(a) => acc(*a, &mut |d| add_into(d, g)),
            Op::Exp(a) => acc(*a, &mut |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * out[k];
                }
            }),
            Op::Log(a) => {
                let av = self.value(*a);
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] / av[k];
                    }
                })
            }
            Op::Sqrt(a) => acc(*a, &mut |d| {
                let half = T::lit(0.5);
                for k in 0..d.len() {
                    d[k] += g[k] * half / out[k];
                }
            }),
            Op::Square(a) => {
                let av = self.value(*a);
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * (av[k] + av[k]);
                    }
                })
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        if av[k] > zero {
                            d[k] += g[k];
                        }
                    }
                })
            }
            Op::Sigmoid(a) => acc(*a, &mut |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * out[k] * (one - out[k]);
                }
            }),
            Op::SmoothL1(a) => {
                let av = self.value(*a);
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        let x = av[k];
                        d[k] += g[k] * if x.abs() < one { x } else { x.signum() };
                    }
                })
            }
            Op::BceWithLogits { logits, targets } => {
                let zv = self.value(*logits);
                acc(*logits, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * (sigmoid(zv[k]) - targets[k]);
                    }
                })
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = T::from_usize_lossy(self.value(*a).len());
                acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |d| axpy(g[0], bv, d));
                acc(*b, &mut |d| axpy(g[0], av, d));
            }
            Op::Matmul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |d| {
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            d[i * k + p] += dot(gr, &bv[p * n..(p + 1) * n]);
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            axpy(av[i * k + p], gr, &mut d[p * n..(p + 1) * n]);
                        }
                    }
                });
            }
            Op::AddRowBias { x, bias, cols } => {
                acc(*x, &mut |d| add_into(d, g));
                acc(*bias, &mut |d| {
                    for row in g.chunks(*cols) {
                        add_into(d, row);
                    }
                });
            }
            Op::AddChannelBias { x, bias, plane } => {
                acc(*x, &mut |d| add_into(d, g));
                acc(*bias, &mut |d| {
                    for (c, p) in g.chunks(*plane).enumerate() {
                        d[c] += p.iter().copied().sum::<T>();
                    }
                });
            }
            Op::Conv2d { input, kernel, geom, col } => {
                let plane = geom.out_plane();
                let patch = geom.patch_len();
                if let Some(col) = col {
                    acc(*kernel, &mut |d| {
                        for o in 0..geom.c_out {
                            let dk = &mut d[o * patch..(o + 1) * patch];
                            for n in 0..plane {
                                axpy(g[o * plane + n], &col[n * patch..(n + 1) * patch], dk);
                            }
                        }
                    });
                }
                let kv = self.value(*kernel);
                acc(*input, &mut |d| {
                    let mut dcol = vec![zero; patch * plane];
                    for n in 0..plane {
                        let dst = &mut dcol[n * patch..(n + 1) * patch];
                        for o in 0..geom.c_out {
                            axpy(g[o * plane + n], &kv[o * patch..(o + 1) * patch], dst);
                        }
                    }
                    geom.col2im(&dcol, d);
                });
            }
            Op::MeanPool { x, plane } => {
                let n = T::from_usize_lossy(*plane);
                acc(*x, &mut |d| {
                    for (c, p) in d.chunks_mut(*plane).enumerate() {
                        let v = g[c] / n;
                        p.iter_mut().for_each(|d| *d += v);
                    }
                })
            }
            Op::L2Normalize { x, eps, norm } => {
                if *norm >= *eps {
                    let proj = dot(out, g);
                    acc(*x, &mut |d| {
                        for k in 0..d.len() {
                            d[k] += (g[k] - out[k] * proj) / *norm;
                        }
                    });
                } else {
                    acc(*x, &mut |d| axpy(one / *eps, g, d));
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    acc(*p, &mut |d| add_into(d, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::Gather { x, index } => acc(*x, &mut |d| {
                for (k, &i) in index.iter().enumerate() {
                    d[i] += g[k];
                }
            }),
            Op::WeightedGather { x, taps } => acc(*x, &mut |d| {
                for (j, &gj) in g.iter().enumerate() {
                    for (i, w) in taps.row(j) {
                        d[i] += w * gj;
                    }
                }
            }),
            Op::CrossEntropy { logits, target, probs } => acc(*logits, &mut |d| {
                for k in 0..d.len() {
                    let y = if k == *target { one } else { zero };
                    d[k] += g[0] * (probs[k] - y);
                }
            }),
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn smooth_l1<T: Scalar>(x: T) -> T {
    let a = x.abs();
    if a < T::one() {
        T::lit(0.5) * x * x
    } else {
        a - T::lit(0.5)
    }
}

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &y[..n]);
    let mut lanes = [T::zero(); 4];
    let mut xc = x.chunks_exact(4);
    let mut yc = y.chunks_exact(4);
    for (a, b) in (&mut xc).zip(&mut yc) {
        for k in 0..4 {
            lanes[k] += a[k] * b[k];
        }
    }
    let mut s = (lanes[0] + lanes[2]) + (lanes[1] + lanes[3]);
    for (&a, &b) in xc.remainder().iter().zip(yc.remainder()) {
        s += a * b;
    }
    s
}

#[inline]
fn add_into<T: Scalar>(d: &mut [T], g: &[T]) {
    for (d, &g) in d.iter_mut().zip(g) {
        *d += g;
    }
}
