//! Batched matrix multiplication and temporal convolution.

use super::{strides_of, tape, Tensor};
use crate::error::{Error, Result};
use crate::tensor::ops::broadcast_shapes;

/// C[m,n] += A[m,p] * B[p,n] over contiguous row-major blocks, with optional
/// logical transposes. The `ikj` loop order keeps the inner loop over
/// contiguous memory.
#[allow(clippy::too_many_arguments)]
fn mm_accumulate(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    m: usize,
    p: usize,
    n: usize,
    transpose_a: bool,
    transpose_b: bool,
) {
    match (transpose_a, transpose_b) {
        (false, false) => {
            for i in 0..m {
                let a_row = &a[i * p..(i + 1) * p];
                let out_row = &mut out[i * n..(i + 1) * n];
                for (k, &av) in a_row.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    let b_row = &b[k * n..(k + 1) * n];
                    for (o, &bv) in out_row.iter_mut().zip(b_row) {
                        *o += av * bv;
                    }
                }
            }
        }
        (false, true) => {
            // B stored as [n, p]; out[i, j] += dot(a_row_i, b_row_j)
            for i in 0..m {
                let a_row = &a[i * p..(i + 1) * p];
                let out_row = &mut out[i * n..(i + 1) * n];
                for (j, o) in out_row.iter_mut().enumerate() {
                    let b_row = &b[j * p..(j + 1) * p];
                    let mut acc = 0.0;
                    for (av, bv) in a_row.iter().zip(b_row) {
                        acc += av * bv;
                    }
                    *o += acc;
                }
            }
        }
        (true, false) => {
            // A stored as [p, m]; out[i, j] += sum_k A[k, i] * B[k, j]
            for k in 0..p {
                let a_row = &a[k * m..(k + 1) * m];
                let b_row = &b[k * n..(k + 1) * n];
                for (i, &av) in a_row.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    let out_row = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in out_row.iter_mut().zip(b_row) {
                        *o += av * bv;
                    }
                }
            }
        }
        (true, true) => {
            // out[i, j] += sum_k A[k, i] * B[j, k]
            for i in 0..m {
                for j in 0..n {
                    let b_row = &b[j * p..(j + 1) * p];
                    let mut acc = 0.0;
                    for (k, &bv) in b_row.iter().enumerate() {
                        acc += a[k * m + i] * bv;
                    }
                    out[i * n + j] += acc;
                }
            }
        }
    }
}

/// Split a shape into (batch dims, final two extents).
fn split_matrix_shape(op: &'static str, shape: &[usize]) -> Result<(Vec<usize>, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "matmul operands need at least 2 dimensions".into(),
        });
    }
    let (batch, tail) = shape.split_at(shape.len() - 2);
    Ok((batch.to_vec(), tail[0], tail[1]))
}

/// Batched matmul over raw buffers with numpy-style batch broadcasting and
/// optional logical transposes of the trailing matrix dims. Returns the
/// output shape and data.
fn batched_mm(
    op: &'static str,
    a_shape: &[usize],
    a: &[f64],
    b_shape: &[usize],
    b: &[f64],
    transpose_a: bool,
    transpose_b: bool,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let (a_batch, mut am, mut ap) = split_matrix_shape(op, a_shape)?;
    let (b_batch, mut bp, mut bn) = split_matrix_shape(op, b_shape)?;
    if transpose_a {
        std::mem::swap(&mut am, &mut ap);
    }
    if transpose_b {
        std::mem::swap(&mut bp, &mut bn);
    }
    if ap != bp {
        return Err(Error::shape(op, a_shape, b_shape));
    }
    let batch_shape = broadcast_shapes(op, &a_batch, &b_batch)?;
    let batch_count: usize = batch_shape.iter().product();
    let a_block = am * ap;
    let b_block = bp * bn;
    let out_block = am * bn;
    let mut out = vec![0.0; batch_count * out_block];

    let a_batch_strides = batch_broadcast_strides(&a_batch, &batch_shape);
    let b_batch_strides = batch_broadcast_strides(&b_batch, &batch_shape);
    let mut coords = vec![0usize; batch_shape.len()];
    for batch in 0..batch_count {
        let mut a_idx = 0usize;
        let mut b_idx = 0usize;
        for (axis, &c) in coords.iter().enumerate() {
            a_idx += a_batch_strides[axis] * c;
            b_idx += b_batch_strides[axis] * c;
        }
        mm_accumulate(
            &a[a_idx * a_block..(a_idx + 1) * a_block],
            &b[b_idx * b_block..(b_idx + 1) * b_block],
            &mut out[batch * out_block..(batch + 1) * out_block],
            am,
            ap,
            bn,
            transpose_a,
            transpose_b,
        );
        for axis in (0..batch_shape.len()).rev() {
            coords[axis] += 1;
            if coords[axis] < batch_shape[axis] {
                break;
            }
            coords[axis] = 0;
        }
    }
    let mut out_shape = batch_shape;
    out_shape.push(am);
    out_shape.push(bn);
    Ok((out_shape, out))
}

/// Per-axis multiplier converting broadcast batch coordinates into a flat
/// batch index of the original (unbroadcast) operand.
fn batch_broadcast_strides(batch: &[usize], out_batch: &[usize]) -> Vec<usize> {
    let rank = out_batch.len();
    let offset = rank - batch.len();
    let natural = strides_of(batch);
    let mut strides = vec![0usize; rank];
    for i in 0..batch.len() {
        strides[offset + i] = if batch[i] == 1 { 0 } else { natural[i] };
    }
    strides
}

/// Sum gradient batches down to the operand's own batch shape.
fn reduce_batches(
    grad: &[f64],
    out_batch: &[usize],
    target_batch: &[usize],
    block: usize,
) -> Vec<f64> {
    let target_count: usize = target_batch.iter().product();
    let out_count: usize = out_batch.iter().product();
    if out_count == target_count && out_batch.ends_with(target_batch) {
        return grad.to_vec();
    }
    let mut reduced = vec![0.0; target_count * block];
    let strides = batch_broadcast_strides(target_batch, out_batch);
    let mut coords = vec![0usize; out_batch.len()];
    for b in 0..out_count {
        let mut t_idx = 0usize;
        for (axis, &c) in coords.iter().enumerate() {
            t_idx += strides[axis] * c;
        }
        let src = &grad[b * block..(b + 1) * block];
        let dst = &mut reduced[t_idx * block..(t_idx + 1) * block];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
        for axis in (0..out_batch.len()).rev() {
            coords[axis] += 1;
            if coords[axis] < out_batch[axis] {
                break;
            }
            coords[axis] = 0;
        }
    }
    reduced
}

impl Tensor {
    /// Contracted product of the trailing matrix dimensions with batch
    /// broadcasting: `[.., m, p] x [.., p, n] -> [.., m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (out_shape, data) = batched_mm(
            "matmul",
            self.shape(),
            self.data(),
            other.shape(),
            other.data(),
            false,
            false,
        )?;
        let recording = tape::grad_enabled() && (self.is_requires_grad() || other.is_requires_grad());
        let out = Tensor::raw(out_shape.clone(), data, recording);
        if recording {
            let lhs = self.clone();
            let rhs = other.clone();
            tape::record(
                out.clone(),
                Box::new(move |dout| {
                    let out_batch = &out_shape[..out_shape.len() - 2];
                    if lhs.is_requires_grad() {
                        // dA = dC . B^T
                        let (da_shape, da) = batched_mm(
                            "matmul-grad",
                            &out_shape,
                            dout,
                            rhs.shape(),
                            rhs.data(),
                            false,
                            true,
                        )
                        .expect("backward shapes mirror forward shapes");
                        let block = da_shape[da_shape.len() - 2] * da_shape[da_shape.len() - 1];
                        let target_batch = &lhs.shape()[..lhs.ndim() - 2];
                        lhs.accumulate_grad(&reduce_batches(&da, out_batch, target_batch, block));
                    }
                    if rhs.is_requires_grad() {
                        // dB = A^T . dC
                        let (db_shape, db) = batched_mm(
                            "matmul-grad",
                            lhs.shape(),
                            lhs.data(),
                            &out_shape,
                            dout,
                            true,
                            false,
                        )
                        .expect("backward shapes mirror forward shapes");
                        let block = db_shape[db_shape.len() - 2] * db_shape[db_shape.len() - 1];
                        let target_batch = &rhs.shape()[..rhs.ndim() - 2];
                        rhs.accumulate_grad(&reduce_batches(&db, out_batch, target_batch, block));
                    }
                }),
            );
        }
        Ok(out)
    }

    /// Temporal cross-correlation with kernel width 3, stride 1, zero padding
    /// of 1 on each end, so the output keeps the input length:
    /// `[B, C_in, L] x [C_out, C_in, 3] -> [B, C_out, L]`.
    pub fn conv1d(&self, kernels: &Tensor) -> Result<Tensor> {
        if self.ndim() != 3 || kernels.ndim() != 3 {
            return Err(Error::shape("conv1d", self.shape(), kernels.shape()));
        }
        let (batch, c_in, len) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (c_out, k_in, width) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
        if k_in != c_in || width != 3 {
            return Err(Error::shape("conv1d", self.shape(), kernels.shape()));
        }
        let x = self.data();
        let k = kernels.data();
        let mut data = vec![0.0; batch * c_out * len];
        for b in 0..batch {
            for o in 0..c_out {
                let out_base = (b * c_out + o) * len;
                for i in 0..c_in {
                    let x_base = (b * c_in + i) * len;
                    let k_base = (o * c_in + i) * 3;
                    let (k0, k1, k2) = (k[k_base], k[k_base + 1], k[k_base + 2]);
                    for t in 0..len {
                        let left = if t > 0 { x[x_base + t - 1] } else { 0.0 };
                        let mid = x[x_base + t];
                        let right = if t + 1 < len { x[x_base + t + 1] } else { 0.0 };
                        data[out_base + t] += k0 * left + k1 * mid + k2 * right;
                    }
                }
            }
        }
        let recording =
            tape::grad_enabled() && (self.is_requires_grad() || kernels.is_requires_grad());
        let out = Tensor::raw(vec![batch, c_out, len], data, recording);
        if recording {
            let input = self.clone();
            let kern = kernels.clone();
            tape::record(
                out.clone(),
                Box::new(move |dout| {
                    let x = input.data();
                    let k = kern.data();
                    if kern.is_requires_grad() {
                        let mut dk = vec![0.0; c_out * c_in * 3];
                        for b in 0..batch {
                            for o in 0..c_out {
                                let out_base = (b * c_out + o) * len;
                                for i in 0..c_in {
                                    let x_base = (b * c_in + i) * len;
                                    let k_base = (o * c_in + i) * 3;
                                    for t in 0..len {
                                        let g = dout[out_base + t];
                                        if t > 0 {
                                            dk[k_base] += g * x[x_base + t - 1];
                                        }
                                        dk[k_base + 1] += g * x[x_base + t];
                                        if t + 1 < len {
                                            dk[k_base + 2] += g * x[x_base + t + 1];
                                        }
                                    }
                                }
                            }
                        }
                        kern.accumulate_grad(&dk);
                    }
                    if input.is_requires_grad() {
                        let mut dx = vec![0.0; batch * c_in * len];
                        for b in 0..batch {
                            for o in 0..c_out {
                                let out_base = (b * c_out + o) * len;
                                for i in 0..c_in {
                                    let x_base = (b * c_in + i) * len;
                                    let k_base = (o * c_in + i) * 3;
                                    let (k0, k1, k2) = (k[k_base], k[k_base + 1], k[k_base + 2]);
                                    for t in 0..len {
                                        let g = dout[out_base + t];
                                        if t > 0 {
                                            dx[x_base + t - 1] += g * k0;
                                        }
                                        dx[x_base + t] += g * k1;
                                        if t + 1 < len {
                                            dx[x_base + t + 1] += g * k2;
                                        }
                                    }
                                }
                            }
                        }
                        input.accumulate_grad(&dx);
                    }
                }),
            );
        }
        Ok(out)
    }
}
