//! Spectral kernel: amplitude of the real-input discrete Fourier transform.

use rustfft::{num_complex::Complex, FftPlanner};

use super::Tensor;
use crate::error::{Error, Result};

/// Magnitude of the DFT of each length-`L` row, unnormalized, keeping the
/// `L/2 + 1` non-redundant bins of a real input.
///
/// Forward-only by design: scale detection is data-dependent structure, not a
/// trained quantity, so no gradient flows through this op.
pub fn rfft_amplitude(x: &Tensor) -> Result<Tensor> {
    let shape = x.shape();
    let len = *shape.last().ok_or_else(|| {
        Error::InvalidArgument("rfft_amplitude requires at least one axis".into())
    })?;
    if len < 2 {
        return Err(Error::InvalidArgument(format!(
            "rfft_amplitude requires window length >= 2, got {len}"
        )));
    }
    let bins = len / 2 + 1;
    let rows = x.len() / len;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(len);
    let mut out = vec![0.0; rows * bins];
    let mut buffer = vec![Complex::new(0.0, 0.0); len];
    for r in 0..rows {
        for (slot, &v) in buffer.iter_mut().zip(&x.data()[r * len..(r + 1) * len]) {
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buffer);
        for (b, slot) in out[r * bins..(r + 1) * bins].iter_mut().enumerate() {
            *slot = buffer[b].norm();
        }
    }
    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().unwrap() = bins;
    Ok(Tensor::raw(out_shape, out, false))
}
