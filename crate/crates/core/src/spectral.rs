//! Dominant-scale detection and the flat-to-scale tensor layout.
//!
//! A window's amplitude spectrum (averaged over batch and channel axes, DC
//! excluded) picks the k strongest frequency bins; each bin f yields a period
//! s = ceil(L / f) and the window is refolded into a `[B, d, s, c]` plane
//! whose rows index phase within one period and whose columns are contiguous
//! segments.

use crate::error::{Error, Result};
use crate::tensor::{rfft_amplitude, topk, Tensor};

/// One detected scale: frequency bin, period in steps, mean spectral
/// amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleEntry {
    pub frequency: usize,
    pub period: usize,
    pub amplitude: f64,
}

/// The k dominant (frequency, period, amplitude) triples of one forward pass,
/// sorted by descending amplitude.
#[derive(Debug, Clone)]
pub struct ScaleSet {
    entries: Vec<ScaleEntry>,
    window_len: usize,
}

impl ScaleSet {
    /// Validates: distinct frequencies in `1..=L/2`, descending amplitudes,
    /// periods equal to `ceil(L / f)`.
    pub fn new(entries: Vec<ScaleEntry>, window_len: usize) -> Result<ScaleSet> {
        let max_bin = window_len / 2;
        let mut seen = std::collections::HashSet::new();
        let mut previous = f64::INFINITY;
        for e in &entries {
            if e.frequency < 1 || e.frequency > max_bin {
                return Err(Error::InvalidArgument(format!(
                    "scale frequency {} outside 1..={max_bin}",
                    e.frequency
                )));
            }
            if !seen.insert(e.frequency) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate scale frequency {}",
                    e.frequency
                )));
            }
            if e.period != window_len.div_ceil(e.frequency) {
                return Err(Error::InvalidArgument(format!(
                    "period {} does not match ceil({window_len}/{})",
                    e.period, e.frequency
                )));
            }
            if e.amplitude < 0.0 || e.amplitude > previous {
                return Err(Error::InvalidArgument(
                    "scale amplitudes must be nonnegative and descending".into(),
                ));
            }
            previous = e.amplitude;
        }
        Ok(ScaleSet { entries, window_len })
    }

    pub fn entries(&self) -> &[ScaleEntry] {
        &self.entries
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.amplitude).collect()
    }

    pub fn periods(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.period).collect()
    }
}

/// Detect the `k` dominant scales of an embedded window `[B, d_model, L]`.
///
/// The amplitude spectrum is averaged over the batch and channel axes so one
/// scale set drives the whole step. Bin 0 carries mean level, not
/// periodicity, and is excluded. Ties break toward the lower frequency.
pub fn identify_scales(x: &Tensor, k: usize) -> Result<ScaleSet> {
    if x.ndim() != 3 {
        return Err(Error::InvalidShape {
            op: "identify_scales",
            shape: x.shape().to_vec(),
            reason: "expected [batch, channels, len]".into(),
        });
    }
    let len = x.shape()[2];
    if k < 1 {
        return Err(Error::InvalidArgument("identify_scales requires k >= 1".into()));
    }
    if len < 4 {
        return Err(Error::InvalidArgument(format!(
            "identify_scales requires window length >= 4, got {len}"
        )));
    }
    let available = len / 2;
    if k > available {
        return Err(Error::TooManyScales {
            requested: k,
            available,
            window_len: len,
        });
    }
    let spectrum = mean_amplitude_spectrum(x)?;
    // Skip the DC bin; topk indices are then offset by one.
    let picked = topk(&spectrum[1..=available], k);
    let entries: Vec<ScaleEntry> = picked
        .into_iter()
        .map(|(i, amplitude)| {
            let frequency = i + 1;
            ScaleEntry {
                frequency,
                period: len.div_ceil(frequency),
                amplitude,
            }
        })
        .collect();
    ScaleSet::new(entries, len)
}

/// Amplitude spectrum of `[B, C, L]` averaged over the batch and channel
/// axes; length `L/2 + 1`.
pub fn mean_amplitude_spectrum(x: &Tensor) -> Result<Vec<f64>> {
    let len = x.shape()[x.ndim() - 1];
    let amp = rfft_amplitude(x)?;
    let bins = len / 2 + 1;
    let rows = amp.len() / bins;
    let mut mean = vec![0.0; bins];
    for r in 0..rows {
        for (m, &a) in mean.iter_mut().zip(&amp.data()[r * bins..(r + 1) * bins]) {
            *m += a;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    Ok(mean)
}

/// Refold `[B, d, L]` into the scale plane `[B, d, s, c]` with
/// `c = ceil(L / s)`, zero-padding the tail. Element `(r, j)` of the plane is
/// `x[j*s + r]`: rows are phase within a period, columns are consecutive
/// segments. Differentiable (built from pad/reshape/permute).
pub fn to_scale_tensor(x: &Tensor, period: usize) -> Result<Tensor> {
    if x.ndim() != 3 {
        return Err(Error::InvalidShape {
            op: "to_scale_tensor",
            shape: x.shape().to_vec(),
            reason: "expected [batch, channels, len]".into(),
        });
    }
    let (b, d, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if period < 1 || period > len {
        return Err(Error::InvalidArgument(format!(
            "period {period} outside valid range 1..={len}"
        )));
    }
    let cols = len.div_ceil(period);
    let padded = x.pad_last(cols * period - len);
    padded
        .reshape(&[b, d, cols, period])?
        .permute(&[0, 1, 3, 2])
}

/// Inverse of [`to_scale_tensor`]: unfold `[B, d, s, c]` back to `[B, d, L]`,
/// truncating the zero padding.
pub fn from_scale_tensor(x: &Tensor, len: usize) -> Result<Tensor> {
    if x.ndim() != 4 {
        return Err(Error::InvalidShape {
            op: "from_scale_tensor",
            shape: x.shape().to_vec(),
            reason: "expected [batch, channels, period, cols]".into(),
        });
    }
    let (b, d, period, cols) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if period * cols < len {
        return Err(Error::InvalidArgument(format!(
            "scale plane {period}x{cols} holds fewer than {len} steps"
        )));
    }
    x.permute(&[0, 1, 3, 2])?
        .reshape(&[b, d, period * cols])?
        .slice_last(len)
}
