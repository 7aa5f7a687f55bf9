//! Thread-local computation tape for reverse-mode differentiation.
//!
//! Every differentiable primitive that sees a `requires_grad` input pushes an
//! entry holding its output handle and an adjoint closure. [`backward`] seeds
//! the loss gradient, walks the entries in reverse, and hands each closure the
//! output gradient so it can accumulate into its inputs. The tape is drained
//! by the walk: one forward pass, one backward pass, nothing leaks into the
//! next step.

use std::cell::{Cell, RefCell};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adjoint closure: receives the output gradient, accumulates into inputs.
pub(crate) type Adjoint = Box<dyn FnOnce(&[f64])>;

pub(crate) struct TapeEntry {
    pub output: Tensor,
    pub adjoint: Adjoint,
}

thread_local! {
    static TAPE: RefCell<Vec<TapeEntry>> = const { RefCell::new(Vec::new()) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// True when recording is active on this thread.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Run `f` with gradient recording disabled (evaluation passes, finite
/// differences, metrics).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let previous = GRAD_ENABLED.with(|g| g.replace(false));
    let result = f();
    GRAD_ENABLED.with(|g| g.set(previous));
    result
}

pub(crate) fn record(output: Tensor, adjoint: Adjoint) {
    TAPE.with(|t| t.borrow_mut().push(TapeEntry { output, adjoint }));
}

/// Number of recorded entries on this thread's tape.
pub fn tape_len() -> usize {
    TAPE.with(|t| t.borrow().len())
}

/// Drop all recorded entries without running adjoints.
pub fn clear() {
    TAPE.with(|t| t.borrow_mut().clear());
}

/// Reverse-replay the tape from a scalar loss, accumulating gradients into
/// every `requires_grad` tensor that participated. The tape is consumed.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.len() != 1 {
        clear();
        return Err(Error::Contract(format!(
            "backward requires a scalar loss, shape is {:?}",
            loss.shape()
        )));
    }
    let entries: Vec<TapeEntry> = TAPE.with(|t| t.borrow_mut().drain(..).collect());
    loss.seed_grad_ones();
    for entry in entries.into_iter().rev() {
        // Outputs with no gradient have no path to the loss; skip them.
        if let Some(dout) = entry.output.grad() {
            (entry.adjoint)(&dout);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let t = Tensor::zeros(&[2]).requires_grad();
        let doubled = t.scale(2.0);
        let err = backward(&doubled).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert_eq!(tape_len(), 0, "tape must be cleared even on error");
    }

    #[test]
    fn tape_is_drained_by_backward() {
        let x = Tensor::from_vec(&[1], vec![3.0]).unwrap().requires_grad();
        let y = x.mul(&x).unwrap();
        assert!(tape_len() > 0);
        backward(&y).unwrap();
        assert_eq!(tape_len(), 0);
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn no_grad_suppresses_recording() {
        let x = Tensor::from_vec(&[1], vec![3.0]).unwrap().requires_grad();
        no_grad(|| {
            let y = x.mul(&x).unwrap();
            assert!(!y.is_requires_grad());
        });
        assert_eq!(tape_len(), 0);
    }
}
