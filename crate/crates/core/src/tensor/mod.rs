//! Dense row-major f64 tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tensor`] is a cheap handle (`Arc`) around immutable data plus a
//! gradient slot. Operations never mutate tensor data; the optimizer replaces
//! parameter tensors wholesale. Differentiable operations record an adjoint
//! closure on a thread-local [`tape`]; [`tape::backward`] replays the tape in
//! reverse and accumulates gradients into every `requires_grad` tensor that
//! participated in the computation.

mod fft;
mod linalg;
mod ops;
pub mod tape;

pub use fft::rfft_amplitude;
pub use ops::{concat, topk};

use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

struct Inner {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
}

/// Dense n-dimensional f64 array in row-major order.
///
/// Cloning copies the handle, not the data; tensors are value-semantic
/// because the data behind a handle is never mutated.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl Tensor {
    /// Internal constructor; trusts that `shape` and `data` agree.
    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Inner {
            shape,
            data: Arc::new(data),
            requires_grad,
            grad: Mutex::new(None),
        }))
    }

    /// Build a tensor from externally supplied values, validating shape
    /// agreement and finiteness.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "from_vec",
                shape: shape.to_vec(),
                reason: format!("shape implies {numel} elements, got {}", data.len()),
            });
        }
        if shape.contains(&0) {
            return Err(Error::InvalidShape {
                op: "from_vec",
                shape: shape.to_vec(),
                reason: "zero extent".into(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("from_vec"));
        }
        Ok(Tensor::raw(shape.to_vec(), data, false))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::raw(shape.to_vec(), vec![0.0; numel], false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::raw(shape.to_vec(), vec![value; numel], false)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::raw(vec![1], vec![value], false)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::raw(shape.to_vec(), (0..numel).map(&mut f).collect(), false)
    }

    /// Mark this tensor as a trainable leaf. Consumes and returns the handle
    /// so initialization reads as a builder chain.
    pub fn requires_grad(self) -> Tensor {
        if self.0.requires_grad {
            return self;
        }
        Tensor(Arc::new(Inner {
            shape: self.0.shape.clone(),
            data: Arc::clone(&self.0.data),
            requires_grad: true,
            grad: Mutex::new(None),
        }))
    }

    /// Same data, no gradient tracking.
    pub fn detach(&self) -> Tensor {
        Tensor(Arc::new(Inner {
            shape: self.0.shape.clone(),
            data: Arc::clone(&self.0.data),
            requires_grad: false,
            grad: Mutex::new(None),
        }))
    }

    /// Replacement for a parameter after an optimizer step: new data, same
    /// shape, still a trainable leaf, gradient cleared.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Tensor> {
        if data.len() != self.len() {
            return Err(Error::InvalidShape {
                op: "with_data",
                shape: self.shape().to_vec(),
                reason: format!("expected {} values, got {}", self.len(), data.len()),
            });
        }
        Ok(Tensor(Arc::new(Inner {
            shape: self.0.shape.clone(),
            data: Arc::new(data),
            requires_grad: self.0.requires_grad,
            grad: Mutex::new(None),
        })))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(Error::Contract(format!(
                "item() requires a scalar tensor, shape is {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    pub fn is_requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Current accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().unwrap().clone()
    }

    /// Remove and return the accumulated gradient.
    pub fn take_grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().unwrap().take()
    }

    pub fn clear_grad(&self) {
        *self.0.grad.lock().unwrap() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.len());
        let mut slot = self.0.grad.lock().unwrap();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    pub(crate) fn seed_grad_ones(&self) {
        *self.0.grad.lock().unwrap() = Some(vec![1.0; self.len()]);
    }

    /// True when two handles point at the same allocation.
    pub fn same_tensor(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<f64> = self.0.data.iter().take(8).copied().collect();
        let ellipsis = if self.len() > 8 { ", ..." } else { "" };
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={}, data={:?}{})",
            self.0.shape, self.0.requires_grad, preview, ellipsis
        )
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}
