//! Dense f64 tensors and the named parameter list of a regressor.

use crate::{Error, Result};

/// A contiguous f64 array with a shape and an optional gradient buffer of
/// identical shape.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

/// Equality covers shape and values only: the gradient buffer is scratch
/// state, so a freshly loaded tensor equals the one that was saved.
impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel], grad: None }
    }

    pub fn from_data(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::InvalidInput(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data, grad: None })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Zeroes the gradient buffer, allocating it on first use.
    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.fill(0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }

    /// Drops the gradient buffer entirely (for value-only copies).
    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Splits the tensor into its value slice and gradient slice, so a
    /// backward pass can read weights while accumulating their gradient.
    /// The gradient buffer must have been initialized via [`zero_grad`].
    ///
    /// [`zero_grad`]: Tensor::zero_grad
    pub fn data_and_grad_mut(&mut self) -> (&[f64], &mut [f64]) {
        let grad = self
            .grad
            .as_mut()
            .expect("gradient buffer must be initialized before backward");
        (&self.data, grad)
    }

    /// The mirror split: mutable values alongside the read-only gradient,
    /// as an optimizer update needs. The gradient buffer must have been
    /// initialized via [`zero_grad`].
    ///
    /// [`zero_grad`]: Tensor::zero_grad
    pub fn data_mut_and_grad(&mut self) -> (&mut [f64], &[f64]) {
        let grad = self
            .grad
            .as_deref()
            .expect("gradient buffer must be populated before an optimizer step");
        (&mut self.data, grad)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Ordered, named parameter tensors of one regressor. Order is significant:
/// initialization draws, optimizer state, and checkpoints all walk the
/// parameters in this order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegressorParams {
    entries: Vec<(String, Tensor)>,
}

impl RegressorParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::InvalidInput(format!("duplicate parameter name {name}")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.entries[idx].1
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].1
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].0
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in &mut self.entries {
            t.zero_grad();
        }
    }

    /// Mutable access to two distinct tensors at once, as a backward pass
    /// needs when it accumulates a layer's kernel and bias gradients.
    pub fn pair_mut(&mut self, i: usize, j: usize) -> (&mut Tensor, &mut Tensor) {
        assert_ne!(i, j, "pair_mut needs two distinct indices");
        if i < j {
            let (lo, hi) = self.entries.split_at_mut(j);
            (&mut lo[i].1, &mut hi[0].1)
        } else {
            let (lo, hi) = self.entries.split_at_mut(i);
            (&mut hi[0].1, &mut lo[j].1)
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// True when both parameter lists agree in names, order, and shapes.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((an, at), (bn, bt))| an == bn && at.shape() == bt.shape())
    }
}
