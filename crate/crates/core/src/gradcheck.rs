//! Finite-difference verification of analytic gradients.
//!
//! Central differences with step 1e-5 against the tape's adjoints. The
//! forward function is evaluated under [`tape::no_grad`] for the perturbed
//! points, so the oracle never touches the adjoint code it is checking.

use crate::error::Result;
use crate::tensor::{tape, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Worst observed relative error for one parameter tensor.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error with an absolute floor so near-zero pairs compare sanely.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Check d(loss)/d(params) by central differences.
///
/// `loss_fn` must be a pure function of the given parameter tensors (plus
/// whatever constants it captures). `samples_per_tensor` bounds how many
/// elements of each tensor are probed (deterministically spread); pass
/// `usize::MAX` to probe all of them.
pub fn check_gradients(
    params: &[(&str, &Tensor)],
    loss_fn: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    step: f64,
    samples_per_tensor: usize,
) -> Result<Vec<GradReport>> {
    let originals: Vec<Tensor> = params.iter().map(|(_, t)| (*t).clone()).collect();
    for t in &originals {
        t.clear_grad();
    }

    // Analytic pass.
    let loss = loss_fn(&originals)?;
    tape::backward(&loss)?;
    let grads: Vec<Vec<f64>> = originals
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    for t in &originals {
        t.clear_grad();
    }

    let mut reports = Vec::with_capacity(params.len());
    for (pi, (name, tensor)) in params.iter().enumerate() {
        let n = tensor.len();
        let probes: Vec<usize> = if n <= samples_per_tensor {
            (0..n).collect()
        } else if samples_per_tensor == 1 {
            vec![0]
        } else {
            // Deterministic spread covering both ends of the buffer.
            (0..samples_per_tensor)
                .map(|i| i * (n - 1) / (samples_per_tensor - 1))
                .collect()
        };
        let mut max_rel = 0.0f64;
        for &e in &probes {
            let numeric = tape::no_grad(|| -> Result<f64> {
                let mut plus = tensor.data().to_vec();
                plus[e] += step;
                let mut minus = tensor.data().to_vec();
                minus[e] -= step;
                let eval = |data: Vec<f64>| -> Result<f64> {
                    let mut probe_params = originals.clone();
                    probe_params[pi] = tensor.with_data(data)?.detach();
                    loss_fn(&probe_params)?.item()
                };
                Ok((eval(plus)? - eval(minus)?) / (2.0 * step))
            })?;
            max_rel = max_rel.max(rel_err(grads[pi][e], numeric));
        }
        reports.push(GradReport {
            name: (*name).to_string(),
            max_rel_err: max_rel,
            checked: probes.len(),
        });
    }
    Ok(reports)
}

/// Convenience assertion wrapper for tests.
pub fn assert_gradients_close(
    params: &[(&str, &Tensor)],
    loss_fn: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    tolerance: f64,
    samples_per_tensor: usize,
) {
    let reports = check_gradients(params, loss_fn, DEFAULT_STEP, samples_per_tensor)
        .expect("gradient check failed to run");
    for r in &reports {
        assert!(
            r.max_rel_err < tolerance,
            "gradient mismatch on {}: rel err {:.3e} over {} probes",
            r.name,
            r.max_rel_err,
            r.checked
        );
    }
}
