use crate::ndgrad::{GradError, Gradients, Graph, Tensor, Var};
use crate::scalar::Scalar;

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<(String, Tensor<T>)>,
}

/// Graph handles of a [`ParamStore`] bound into one graph, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, i: usize) -> Var {
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Points slot `i` at another variable, e.g. a probe leaf in a gradient
    /// check.
    pub fn replace(&mut self, i: usize, v: Var) {
        self.vars[i] = v;
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    /// Adds a tensor and returns its position.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        self.entries.push((name.into(), tensor.with_grad()));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].1
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every tensor as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound { vars: self.entries.iter().map(|(_, t)| g.param(t)).collect() }
    }

    /// Records every tensor as a constant leaf: no gradient flows into them.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(_, t)| {
                    g.constant(t.shape().to_vec(), t.values().to_vec())
                        .expect("stored tensors are valid")
                })
                .collect(),
        }
    }

    /// Writes `grads` into each tensor's gradient slot.
    pub fn assign_grads(&mut self, bound: &Bound, grads: &Gradients<T>) -> Result<(), GradError> {
        for ((name, t), &v) in self.entries.iter_mut().zip(&bound.vars) {
            let g = grads
                .wrt(v)
                .ok_or_else(|| GradError::MissingGradient(name.clone()))?;
            t.set_grad(g.to_vec())?;
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.clear_grad());
    }

    /// Checks that `other` holds the same names and shapes in the same order.
    pub fn check_aligned(&self, other: &Self) -> Result<(), GradError> {
        if self.entries.len() != other.entries.len() {
            return Err(GradError::Mismatch(format!(
                "{} parameters vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(&other.entries) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(GradError::Mismatch(format!(
                    "{na}{:?} vs {nb}{:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn values_mut(&mut self, i: usize) -> &mut [T] {
        self.entries[i].1.values_mut()
    }
}

/// Plain gradient descent, `theta <- theta - lr * grad`.
pub fn sgd_step<T: Scalar>(params: &mut ParamStore<T>, lr: T) -> Result<(), GradError> {
    if !(lr >= T::zero()) {
        return Err(GradError::Mismatch(format!("learning rate {lr} must be non-negative")));
    }
    for (name, t) in params.entries.iter() {
        if t.grad().is_none() {
            return Err(GradError::MissingGradient(name.clone()));
        }
    }
    for (name, t) in params.entries.iter_mut() {
        let g = t.grad().map(<[T]>::to_vec).expect("checked above");
        for (v, g) in t.values_mut().iter_mut().zip(g) {
            *v -= lr * g;
        }
        if t.values().iter().any(|v| !v.is_finite()) {
            return Err(GradError::NonFinite(format!("parameter {name} after update")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vals: &[f64]) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.push("w", Tensor::vector(vals.to_vec()).unwrap());
        p
    }

    #[test]
    fn one_step_arithmetic() {
        let mut p = store(&[1.0]);
        p.get_mut("w").unwrap().set_grad(vec![0.5]).unwrap();
        sgd_step(&mut p, 0.1).unwrap();
        assert!((p.tensor(0).values()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_rate_is_identity() {
        let mut p = store(&[1.0, -2.0]);
        p.get_mut("w").unwrap().set_grad(vec![3.0, 4.0]).unwrap();
        let before = p.tensor(0).values().to_vec();
        sgd_step(&mut p, 0.0).unwrap();
        assert_eq!(p.tensor(0).values(), &before[..]);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = store(&[1.0]);
        assert!(matches!(sgd_step(&mut p, 0.1), Err(GradError::MissingGradient(n)) if n == "w"));
    }

    #[test]
    fn assign_from_graph() {
        let mut p = store(&[2.0, 3.0]);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let s = g.dot(b.get(0), b.get(0)).unwrap();
        let grads = g.backward(s).unwrap();
        p.assign_grads(&b, &grads).unwrap();
        assert_eq!(p.tensor(0).grad().unwrap(), &[4.0, 6.0]);
    }

    #[test]
    fn frozen_binding_receives_no_gradient() {
        let p = store(&[2.0]);
        let mut g = Graph::new();
        let b = p.bind_frozen(&mut g);
        let x = g.param(&Tensor::scalar(1.0));
        let y = g.mul(b.get(0), x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.wrt(b.get(0)).is_none());
    }
}
