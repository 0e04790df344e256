use crate::ndgrad::GradError;
use crate::scalar::Scalar;

/// Dense row-major tensor with an optional gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self, GradError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(GradError::Shape(format!("zero extent in shape {shape:?}")));
        }
        if numel(&shape) != values.len() {
            return Err(GradError::Shape(format!(
                "shape {shape:?} holds {} values, got {}",
                numel(&shape),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GradError::NonFinite("tensor construction".into()));
        }
        Ok(Self { shape, values, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self { shape, values: vec![T::zero(); n], requires_grad: false, grad: None }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![1], values: vec![v], requires_grad: false, grad: None }
    }

    pub fn vector(values: Vec<T>) -> Result<Self, GradError> {
        let n = values.len();
        Self::new(vec![n], values)
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Result<Self, GradError> {
        let values = (0..numel(&shape)).map(&mut f).collect();
        Self::new(shape, values)
    }

    /// Marks the tensor as a trainable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Mutable view of the values. Callers must keep them finite.
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<(), GradError> {
        if grad.len() != self.values.len() {
            return Err(GradError::Shape(format!(
                "gradient of length {} for tensor of length {}",
                grad.len(),
                self.values.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T, GradError> {
        match self.values.as_slice() {
            [v] => Ok(*v),
            _ => Err(GradError::NotScalar(self.shape.clone())),
        }
    }

    /// Same values in another numeric type; the gradient slot is dropped.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_values() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]), Err(GradError::Shape(_))));
        assert!(matches!(Tensor::<f64>::new(vec![0], vec![]), Err(GradError::Shape(_))));
    }

    #[test]
    fn non_finite_rejected() {
        let err = Tensor::<f64>::vector(vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, GradError::NonFinite(_)));
        assert!(Tensor::<f32>::vector(vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn grad_slot_length_checked() {
        let mut t = Tensor::<f64>::zeros(vec![3]).with_grad();
        assert!(t.set_grad(vec![0.0; 2]).is_err());
        t.set_grad(vec![1.0; 3]).unwrap();
        assert_eq!(t.grad(), Some(&[1.0, 1.0, 1.0][..]));
        t.clear_grad();
        assert!(t.grad().is_none());
    }
}
