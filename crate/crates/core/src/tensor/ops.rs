//! Elementwise, shape, reduction, and lookup primitives with their adjoints.

use super::{strides_of, tape, Tensor};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// broadcasting machinery
// ---------------------------------------------------------------------------

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shapes(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::shape(op, a, b));
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Strides into `shape` when broadcast up to `out_shape` (0 on expanded axes).
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let natural = strides_of(shape);
    let mut strides = vec![0usize; rank];
    for i in 0..shape.len() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { natural[i] };
    }
    strides
}

/// Apply `f(out_idx, a_idx, b_idx)` over every element of the broadcast
/// result. The odometer walk keeps this allocation-free per element.
fn for_each_broadcast(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let numel: usize = out_shape.iter().product();
    if a_shape == b_shape {
        for i in 0..numel {
            f(i, i, i);
        }
        return;
    }
    let a_strides = broadcast_strides(a_shape, out_shape);
    let b_strides = broadcast_strides(b_shape, out_shape);
    let rank = out_shape.len();
    let mut coords = vec![0usize; rank];
    let mut ai = 0usize;
    let mut bi = 0usize;
    for oi in 0..numel {
        f(oi, ai, bi);
        for axis in (0..rank).rev() {
            coords[axis] += 1;
            ai += a_strides[axis];
            bi += b_strides[axis];
            if coords[axis] < out_shape[axis] {
                break;
            }
            coords[axis] = 0;
            ai -= a_strides[axis] * out_shape[axis];
            bi -= b_strides[axis] * out_shape[axis];
        }
    }
}

/// Sum `dout` (shaped `out_shape`) down to `in_shape`, undoing broadcast.
fn reduce_to_shape(dout: &[f64], out_shape: &[usize], in_shape: &[usize]) -> Vec<f64> {
    if out_shape == in_shape {
        return dout.to_vec();
    }
    let numel_in: usize = in_shape.iter().product();
    let mut grad = vec![0.0; numel_in];
    let in_strides = broadcast_strides(in_shape, out_shape);
    let rank = out_shape.len();
    let mut coords = vec![0usize; rank];
    let mut ii = 0usize;
    for (oi, d) in dout.iter().enumerate() {
        let _ = oi;
        grad[ii] += d;
        for axis in (0..rank).rev() {
            coords[axis] += 1;
            ii += in_strides[axis];
            if coords[axis] < out_shape[axis] {
                break;
            }
            coords[axis] = 0;
            ii -= in_strides[axis] * out_shape[axis];
        }
    }
    grad
}

fn should_record(inputs: &[&Tensor]) -> bool {
    tape::grad_enabled() && inputs.iter().any(|t| t.is_requires_grad())
}

// ---------------------------------------------------------------------------
// binary elementwise
// ---------------------------------------------------------------------------

enum BinaryKind {
    Add,
    Sub,
    Mul,
}

impl Tensor {
    fn binary(&self, other: &Tensor, kind: BinaryKind, op: &'static str) -> Result<Tensor> {
        let out_shape = broadcast_shapes(op, self.shape(), other.shape())?;
        let numel: usize = out_shape.iter().product();
        let mut data = vec![0.0; numel];
        {
            let a = self.data();
            let b = other.data();
            match kind {
                BinaryKind::Add => {
                    for_each_broadcast(&out_shape, self.shape(), other.shape(), |o, i, j| {
                        data[o] = a[i] + b[j];
                    })
                }
                BinaryKind::Sub => {
                    for_each_broadcast(&out_shape, self.shape(), other.shape(), |o, i, j| {
                        data[o] = a[i] - b[j];
                    })
                }
                BinaryKind::Mul => {
                    for_each_broadcast(&out_shape, self.shape(), other.shape(), |o, i, j| {
                        data[o] = a[i] * b[j];
                    })
                }
            }
        }
        let recording = should_record(&[self, other]);
        let out = Tensor::raw(out_shape.clone(), data, recording);
        if recording {
            let lhs = self.clone();
            let rhs = other.clone();
            tape::record(
                out.clone(),
                Box::new(move |dout| {
                    match kind {
                        BinaryKind::Add => {
                            if lhs.is_requires_grad() {
                                lhs.accumulate_grad(&reduce_to_shape(dout, &out_shape, lhs.shape()));
                            }
                            if rhs.is_requires_grad() {
                                rhs.accumulate_grad(&reduce_to_shape(dout, &out_shape, rhs.shape()));
                            }
                        }
                        BinaryKind::Sub => {
                            if lhs.is_requires_grad() {
                                lhs.accumulate_grad(&reduce_to_shape(dout, &out_shape, lhs.shape()));
                            }
                            if rhs.is_requires_grad() {
                                let neg: Vec<f64> = dout.iter().map(|d| -d).collect();
                                rhs.accumulate_grad(&reduce_to_shape(&neg, &out_shape, rhs.shape()));
                            }
                        }
                        BinaryKind::Mul => {
                            if lhs.is_requires_grad() {
                                let mut da = vec![0.0; dout.len()];
                                let b = rhs.data();
                                for_each_broadcast(&out_shape, lhs.shape(), rhs.shape(), |o, _, j| {
                                    da[o] = dout[o] * b[j];
                                });
                                lhs.accumulate_grad(&reduce_to_shape(&da, &out_shape, lhs.shape()));
                            }
                            if rhs.is_requires_grad() {
                                let mut db = vec![0.0; dout.len()];
                                let a = lhs.data();
                                for_each_broadcast(&out_shape, lhs.shape(), rhs.shape(), |o, i, _| {
                                    db[o] = dout[o] * a[i];
                                });
                                rhs.accumulate_grad(&reduce_to_shape(&db, &out_shape, rhs.shape()));
                            }
                        }
                    }
                }),
            );
        }
        Ok(out)
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Add, "add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Sub, "sub")
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Mul, "mul")
    }

    /// Multiply by a scalar constant.
    pub fn scale(&self, factor: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|v| v * factor).collect();
        let recording = should_record(&[self]);
        let out = Tensor::raw(self.shape().to_vec(), data, recording);
        if recording {
            let input = self.clone();
            tape::record(
                out.clone(),
                Box::new(move |dout| {
                    let grad: Vec<f64> = dout.iter().map(|d| d * factor).collect();
                    input.accumulate_grad(&grad);
                }),
            );
        }
        out
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }
}

// ---------------------------------------------------------------------------
// unary activations
// ---------------------------------------------------------------------------

const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_COEFF: f64 = 0.044715;

fn gelu_value(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x);
    let t = u.tanh();
    let du = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Tensor {
    fn unary(
        &self,
        forward: impl Fn(f64) -> f64,
        derivative: impl Fn(f64) -> f64 + 'static,
    ) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&v| forward(v)).collect();
        let recording = should_record(&[self]);
        let out = Tensor::raw(self.shape().to_vec(), data, recording);
        if recording {
            let input = self.clone();
            tape::record(
                out.clone(),
                Box::new(move |dout| {
                    let x = input.data();
                    let grad: Vec<f64> =
                        dout.iter().zip(x).map(|(d, &v)| d * derivative(v)).collect();
                    input.accumulate_grad(&grad);
                }),
            );
        }
        out
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// GELU in its tanh form; the derivative differentiates the same form, so
    /// gradient checks see a consistent function.
    pub fn gelu(&self) -> Tensor {
        self.unary(gelu_value, gelu_derivative)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(|x| x.tanh(), |x| {
            let t = x.tanh();
            1.0 - t * t
        })
    }

    /// Absolute value; subgradient 0 at the origin.
    pub fn abs(&self) -> Tensor {
        self.unary(f64::abs, |x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

impl Tensor {
    /// Numerically stable softmax along `axis` (max subtraction before exp).
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.ndim() {
            return Err(Error::InvalidShape {
                op: "softmax",
                shape: self.shape().to_vec(),
                reason: format!("axis {axis} out of range"),
            });
        }
        let shape = self.shape().to_vec();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let x = self.data();
        let mut data = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for a in 0..axis_len {
                    max = max.max(x[base + a * inner]);
                }
                let mut sum = 0.0;
                for a in 0..axis_len {
                    let e = (x[base + a * inner] - max).exp();
                    data[base + a * inner] = e;
                    sum += e;
                }
                for a in 0..axis_len {
                    data[base + a * inner] /= sum;
                }
            }
        }
        let recording = should_record(&[self]);
        let out = Tensor::raw(shape, data, recording);
        if recording {
            let input = self.clone();
            let output = out.clone();
            tape::record(
                out.clone(),
                Box::new(move |dout| {
                    // dx = y * (dout - sum(dout * y along axis))
                    let y = output.data();
                    let mut grad = vec![0.0; dout.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * axis_len * inner + i;
                            let mut dot = 0.0;
                            for a in 0..axis_len {
                                let idx = base + a * inner;
                                dot += dout[idx] * y[idx];
                            }
                            for a in 0..axis_len {
                                let idx = base + a * inner;
                                grad[idx] = y[idx] * (dout[idx] - dot);
                            }
                        }
                    }
                    input.accumulate_grad(&grad);
                }),
            );
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// shape operations
// ---------------------------------------------------------------------------

impl Tensor {
    /// Same data, new shape. Round-trips are bit-exact.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.len() {
            return Err(Error::InvalidShape {
                op: "reshape",
                shape: shape.to_vec(),
                reason: format!("cannot reshape {:?} ({} elements)", self.shape(), self.len()),
            });
        }
        let recording = should_record(&[self]);
        let out = Tensor::raw(shape.to_vec(), self.data().to_vec(), recording);
        if recording {
            let input = self.clone();
            tape::record(
                out.clone(),
                Box::new(move |dout| input.accumulate_grad(dout)),
            );
        }
        Ok(out)
    }

    /// Reorder axes by `axes` (a permutation of 0..ndim).
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.ndim();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::InvalidShape {
                op: "permute",
                shape: self.shape().to_vec(),
                reason: format!("{axes:?} is not a permutation of axes"),
            });
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let data = permute_data(self.data(), self.shape(), axes);
        let recording = should_record(&[self]);
        let out = Tensor::raw(out_shape.clone(), data, recording);
        if recording {
            let input = self.clone();
            let mut inverse = vec![0usize; rank];
            for (i, &a) in axes.iter().enumerate() {
                inverse[a] = i;
            }
            tape::record(
                out.clone(),
                Box::new(move |dout| {
                    input.accumulate_grad(&permute_data(dout, &out_shape, &inverse));
                }),
            );
        }
        Ok(out)
    }

    /// Zero padding appended along the last axis.
    pub fn pad_last(&self, count: usize) -> Tensor {
        let shape = self.shape();
        let last = shape[shape.len() - 1];
        let rows = self.len() / last;
        let new_last = last + count;
        let mut data = vec![0.0; rows * new_last];
        for r in 0..rows {
            data[r * new_last..r * new_last + last]
                .copy_from_slice(&self.data()[r * last..(r + 1) * last]);
        }
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = new_last;
        let recording = should_record(&[self]);
        let out = Tensor::raw(out_shape, data, recording);
        if recording {
            let input = self.clone();
            tape::record(
                out.clone(),
                Box::new(move |dout| {
                    let mut grad = vec![0.0; rows * last];
                    for r in 0..rows {
                        grad[r * last..(r + 1) * last]
                            .copy_from_slice(&dout[r * new_last..r * new_last + last]);
                    }
                    input.accumulate_grad(&grad);
                }),
            );
        }
        out
    }

    /// Keep the first `len` entries along the last axis.
    pub fn slice_last(&self, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        let last = shape[shape.len() - 1];
        if len > last {
            return Err(Error::InvalidShape {
                op: "slice_last",
                shape: shape.to_vec(),
                reason: format!("cannot keep {len} of {last} entries"),
            });
        }
        let rows = self.len() / last;
        let mut data = vec![0.0; rows * len];
        for r in 0..rows {
            data[r * len..(r + 1) * len].copy_from_slice(&self.data()[r * last..r * last + len]);
        }
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = len;
        let recording = should_record(&[self]);
        let out = Tensor::raw(out_shape, data, recording);
        if recording {
            let input = self.clone();
            tape::record(
                out.clone(),
                Box::new(move |dout| {
                    let mut grad = vec![0.0; rows * last];
                    for r in 0..rows {
                        grad[r * last..r * last + len]
                            .copy_from_slice(&dout[r * len..(r + 1) * len]);
                    }
                    input.accumulate_grad(&grad);
                }),
            );
        }
        Ok(out)
    }

    /// Mean over all elements, as a scalar tensor.
    pub fn mean_all(&self) -> Tensor {
        let n = self.len() as f64;
        let mean = self.data().iter().sum::<f64>() / n;
        let recording = should_record(&[self]);
        let out = Tensor::raw(vec![1], vec![mean], recording);
        if recording {
            let input = self.clone();
            tape::record(
                out.clone(),
                Box::new(move |dout| {
                    let g = dout[0] / n;
                    input.accumulate_grad(&vec![g; input.len()]);
                }),
            );
        }
        out
    }
}

fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides_of(shape);
    let numel = data.len();
    let mut out = vec![0.0; numel];
    // out coords advance as an odometer; the source offset follows along
    // using the permuted input strides.
    let permuted_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut coords = vec![0usize; rank];
    let mut src = 0usize;
    for slot in out.iter_mut() {
        *slot = data[src];
        for axis in (0..rank).rev() {
            coords[axis] += 1;
            src += permuted_strides[axis];
            if coords[axis] < out_shape[axis] {
                break;
            }
            coords[axis] = 0;
            src -= permuted_strides[axis] * out_shape[axis];
        }
    }
    out
}

/// Concatenate along `axis`; all other extents must agree.
pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
    if tensors.is_empty() {
        return Err(Error::Contract("concat of zero tensors".into()));
    }
    let first = tensors[0].shape().to_vec();
    if axis >= first.len() {
        return Err(Error::InvalidShape {
            op: "concat",
            shape: first,
            reason: format!("axis {axis} out of range"),
        });
    }
    let mut axis_total = 0usize;
    for t in tensors {
        if t.ndim() != first.len()
            || t.shape()
                .iter()
                .enumerate()
                .any(|(i, &e)| i != axis && e != first[i])
        {
            return Err(Error::shape("concat", &first, t.shape()));
        }
        axis_total += t.shape()[axis];
    }
    let mut out_shape = first.clone();
    out_shape[axis] = axis_total;
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let numel: usize = out_shape.iter().product();
    let mut data = vec![0.0; numel];
    let mut offset = 0usize;
    let mut spans = Vec::with_capacity(tensors.len());
    for t in tensors {
        let span = t.shape()[axis];
        for o in 0..outer {
            let src = &t.data()[o * span * inner..(o + 1) * span * inner];
            let dst_base = o * axis_total * inner + offset * inner;
            data[dst_base..dst_base + span * inner].copy_from_slice(src);
        }
        spans.push((offset, span));
        offset += span;
    }
    let refs: Vec<&Tensor> = tensors.to_vec();
    let recording = should_record(&refs);
    let out = Tensor::raw(out_shape, data, recording);
    if recording {
        let inputs: Vec<Tensor> = tensors.iter().map(|t| (*t).clone()).collect();
        tape::record(
            out.clone(),
            Box::new(move |dout| {
                for (input, &(start, span)) in inputs.iter().zip(&spans) {
                    if !input.is_requires_grad() {
                        continue;
                    }
                    let mut grad = vec![0.0; input.len()];
                    for o in 0..outer {
                        let src_base = o * axis_total * inner + start * inner;
                        grad[o * span * inner..(o + 1) * span * inner]
                            .copy_from_slice(&dout[src_base..src_base + span * inner]);
                    }
                    input.accumulate_grad(&grad);
                }
            }),
        );
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// embedding lookup
// ---------------------------------------------------------------------------

impl Tensor {
    /// Table lookup: `self` is `[vocab, width]`, `indices` has `rows * cols`
    /// entries, output is `[rows, width, cols]`. Gradient scatter-adds into
    /// the table.
    pub fn embedding(&self, indices: &[usize], rows: usize, cols: usize) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(Error::InvalidShape {
                op: "embedding",
                shape: self.shape().to_vec(),
                reason: "table must be 2-D".into(),
            });
        }
        if indices.len() != rows * cols {
            return Err(Error::Contract(format!(
                "embedding expects {} indices, got {}",
                rows * cols,
                indices.len()
            )));
        }
        let vocab = self.shape()[0];
        let width = self.shape()[1];
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::InvalidArgument(format!(
                "embedding index {bad} out of vocabulary {vocab}"
            )));
        }
        let table = self.data();
        let mut data = vec![0.0; rows * width * cols];
        for r in 0..rows {
            for c in 0..cols {
                let row = indices[r * cols + c];
                for w in 0..width {
                    data[r * width * cols + w * cols + c] = table[row * width + w];
                }
            }
        }
        let recording = should_record(&[self]);
        let out = Tensor::raw(vec![rows, width, cols], data, recording);
        if recording {
            let input = self.clone();
            let idx = indices.to_vec();
            tape::record(
                out.clone(),
                Box::new(move |dout| {
                    let mut grad = vec![0.0; vocab * width];
                    for r in 0..rows {
                        for c in 0..cols {
                            let row = idx[r * cols + c];
                            for w in 0..width {
                                grad[row * width + w] += dout[r * width * cols + w * cols + c];
                            }
                        }
                    }
                    input.accumulate_grad(&grad);
                }),
            );
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// top-k (forward only)
// ---------------------------------------------------------------------------

/// Indices and values of the `k` largest entries, descending; ties broken by
/// lower index. No gradient is defined through the selection.
pub fn topk(values: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut order: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
    order.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    order.truncate(k);
    order
}
