//! Multi-head self-attention over the within-period axis of a scale tensor.
//!
//! The column axis of `[B, d, s, c]` is folded into the batch, so attention
//! runs over B*c independent sequences of length s. Position within a period
//! is already phase-aligned by the scale reshape, so no positional encoding
//! is added here and no causal mask is applied.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Query/key/value/output projections for one attention stage.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub wq: Tensor, // [d, d]
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub bq: Tensor, // [d]
    pub bk: Tensor,
    pub bv: Tensor,
    pub bo: Tensor,
    pub n_heads: usize,
    /// Attention-probability dropout applied only while gradients are being
    /// recorded; 0 keeps the forward pass fully deterministic for gradient
    /// checks. Masks are derived from the probability data itself, so a
    /// fixed seed still gives a bit-identical run.
    pub dropout: f64,
}

impl AttentionParams {
    pub fn init(d_model: usize, n_heads: usize, rng: &mut SplitMix64) -> Result<AttentionParams> {
        check_heads(d_model, n_heads)?;
        let w = |rng: &mut SplitMix64| crate::graph::uniform_init(&[d_model, d_model], rng);
        Ok(AttentionParams {
            wq: w(rng),
            wk: w(rng),
            wv: w(rng),
            wo: w(rng),
            bq: Tensor::zeros(&[d_model]).requires_grad(),
            bk: Tensor::zeros(&[d_model]).requires_grad(),
            bv: Tensor::zeros(&[d_model]).requires_grad(),
            bo: Tensor::zeros(&[d_model]).requires_grad(),
            n_heads,
            dropout: 0.0,
        })
    }

    pub fn zeros(d_model: usize, n_heads: usize) -> Result<AttentionParams> {
        check_heads(d_model, n_heads)?;
        Ok(AttentionParams {
            wq: Tensor::zeros(&[d_model, d_model]).requires_grad(),
            wk: Tensor::zeros(&[d_model, d_model]).requires_grad(),
            wv: Tensor::zeros(&[d_model, d_model]).requires_grad(),
            wo: Tensor::zeros(&[d_model, d_model]).requires_grad(),
            bq: Tensor::zeros(&[d_model]).requires_grad(),
            bk: Tensor::zeros(&[d_model]).requires_grad(),
            bv: Tensor::zeros(&[d_model]).requires_grad(),
            bo: Tensor::zeros(&[d_model]).requires_grad(),
            n_heads,
            dropout: 0.0,
        })
    }

    pub fn d_model(&self) -> usize {
        self.wq.shape()[0]
    }
}

fn check_heads(d_model: usize, n_heads: usize) -> Result<()> {
    if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
        return Err(Error::Config(format!(
            "d_model {d_model} must be divisible by n_heads {n_heads}"
        )));
    }
    Ok(())
}

/// Scaled-dot-product self-attention over the period axis:
/// `[B, d, s, c] -> [B, d, s, c]` with columns folded into the batch.
pub fn scale_attention(x: &Tensor, params: &AttentionParams) -> Result<Tensor> {
    let (folded, b, s, c) = fold_columns(x, params)?;
    let (out, _) = attention_core(&folded, params)?;
    unfold_columns(&out, b, s, c)
}

/// Attention probabilities `[B*c, heads, s, s]` for inspection; forward only.
pub fn attention_probs(x: &Tensor, params: &AttentionParams) -> Result<Tensor> {
    let (folded, ..) = fold_columns(x, params)?;
    let (_, probs) = crate::tensor::tape::no_grad(|| attention_core(&folded, params))?;
    Ok(probs)
}

/// `[B, d, s, c] -> [B*c, s, d]`.
fn fold_columns(x: &Tensor, params: &AttentionParams) -> Result<(Tensor, usize, usize, usize)> {
    if x.ndim() != 4 {
        return Err(Error::InvalidShape {
            op: "scale_attention",
            shape: x.shape().to_vec(),
            reason: "expected [batch, channels, period, cols]".into(),
        });
    }
    let (b, d, s, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if d != params.d_model() {
        return Err(Error::shape("scale_attention", x.shape(), params.wq.shape()));
    }
    check_heads(d, params.n_heads)?;
    let folded = x.permute(&[0, 3, 2, 1])?.reshape(&[b * c, s, d])?;
    Ok((folded, b, s, c))
}

fn unfold_columns(y: &Tensor, b: usize, s: usize, c: usize) -> Result<Tensor> {
    let d = y.shape()[2];
    y.reshape(&[b, c, s, d])?.permute(&[0, 3, 2, 1])
}

/// Standard multi-head attention over `[R, s, d]` sequences. Returns the
/// output and the attention probabilities `[R, heads, s, s]`.
fn attention_core(x: &Tensor, params: &AttentionParams) -> Result<(Tensor, Tensor)> {
    let (rows, s, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let heads = params.n_heads;
    let head_dim = d / heads;

    let project = |w: &Tensor, bias: &Tensor| -> Result<Tensor> {
        // [R,s,d] @ [d,d] + [d] -> [R,heads,s,head_dim]
        x.matmul(&w.permute(&[1, 0])?)?
            .add(bias)?
            .reshape(&[rows, s, heads, head_dim])?
            .permute(&[0, 2, 1, 3])
    };
    let q = project(&params.wq, &params.bq)?;
    let k = project(&params.wk, &params.bk)?;
    let v = project(&params.wv, &params.bv)?;

    let scores = q
        .matmul(&k.permute(&[0, 1, 3, 2])?)?
        .scale(1.0 / (head_dim as f64).sqrt());
    let probs = scores.softmax(3)?;
    let dropped = if params.dropout > 0.0 && crate::tensor::tape::grad_enabled() {
        let mask = dropout_mask(&probs, params.dropout);
        probs.mul(&mask)?
    } else {
        probs.clone()
    };
    let context = dropped
        .matmul(&v)?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[rows, s, d])?;
    let out = context.matmul(&params.wo.permute(&[1, 0])?)?.add(&params.bo)?;
    Ok((out, probs))
}

/// Inverted-dropout mask keyed off the probability data, so identical runs
/// draw identical masks without any mutable state in the forward pass.
fn dropout_mask(probs: &Tensor, rate: f64) -> Tensor {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for v in probs.data() {
        h = (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = SplitMix64::new(h);
    let keep = 1.0 - rate;
    Tensor::from_fn(probs.shape(), |_| {
        if rng.next_f64() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)] // index-heavy oracle loops read clearer this way
mod tests {
    use super::*;
    use crate::gradcheck::assert_gradients_close;

    fn random_tensor(shape: &[usize], rng: &mut SplitMix64) -> Tensor {
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn head_mismatch_is_a_config_error() {
        assert!(matches!(AttentionParams::init(6, 4, &mut SplitMix64::new(1)), Err(Error::Config(_))));
    }

    #[test]
    fn singleton_sequence_reduces_to_projections() {
        let mut rng = SplitMix64::new(2);
        let d = 4;
        let mut params = AttentionParams::init(d, 2, &mut rng).unwrap();
        params.bq = Tensor::zeros(&[d]);
        params.bk = Tensor::zeros(&[d]);
        params.bv = Tensor::zeros(&[d]);
        params.bo = Tensor::zeros(&[d]);
        let x = random_tensor(&[2, d, 1, 3], &mut rng);
        let got = scale_attention(&x, &params).unwrap();
        // s = 1: softmax over one key is 1, so out = Wo (Wv x) sitewise
        for b in 0..2 {
            for col in 0..3 {
                let site: Vec<f64> = (0..d).map(|di| x.data()[(b * d + di) * 3 + col]).collect();
                let mut vproj = vec![0.0; d];
                for o in 0..d {
                    for (i, &sv) in site.iter().enumerate() {
                        vproj[o] += params.wv.data()[o * d + i] * sv;
                    }
                }
                let mut out = vec![0.0; d];
                for o in 0..d {
                    for (i, &vv) in vproj.iter().enumerate() {
                        out[o] += params.wo.data()[o * d + i] * vv;
                    }
                }
                for (di, &expected) in out.iter().enumerate() {
                    let idx = (b * d + di) * 3 + col;
                    assert!((got.data()[idx] - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identical_tokens_give_uniform_attention() {
        let mut rng = SplitMix64::new(3);
        let d = 4;
        let s = 5;
        let params = AttentionParams::init(d, 2, &mut rng).unwrap();
        // one token repeated across the sequence axis
        let token: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x = Tensor::from_fn(&[1, d, s, 1], |i| token[i / s]);
        let probs = attention_probs(&x, &params).unwrap();
        for &p in probs.data() {
            assert!((p - 1.0 / s as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = SplitMix64::new(4);
        let params = AttentionParams::init(8, 4, &mut rng).unwrap();
        let x = random_tensor(&[2, 8, 6, 3], &mut rng);
        let probs = attention_probs(&x, &params).unwrap();
        let s = 6;
        for row in probs.data().chunks(s) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_head_matches_explicit_loop_oracle() {
        let mut rng = SplitMix64::new(5);
        let d = 3;
        let s = 4;
        let params = AttentionParams::init(d, 1, &mut rng).unwrap();
        let x = random_tensor(&[1, d, s, 2], &mut rng);
        let got = scale_attention(&x, &params).unwrap();

        // explicit softmax(QK^T/sqrt(d)) V per folded column
        for col in 0..2 {
            let seq: Vec<Vec<f64>> = (0..s)
                .map(|si| (0..d).map(|di| x.data()[(di * s + si) * 2 + col]).collect())
                .collect();
            let proj = |w: &Tensor, token: &[f64]| -> Vec<f64> {
                (0..d)
                    .map(|o| (0..d).map(|i| w.data()[o * d + i] * token[i]).sum())
                    .collect()
            };
            let qs: Vec<Vec<f64>> = seq.iter().map(|t| proj(&params.wq, t)).collect();
            let ks: Vec<Vec<f64>> = seq.iter().map(|t| proj(&params.wk, t)).collect();
            let vs: Vec<Vec<f64>> = seq.iter().map(|t| proj(&params.wv, t)).collect();
            for si in 0..s {
                let logits: Vec<f64> = (0..s)
                    .map(|sj| {
                        qs[si]
                            .iter()
                            .zip(&ks[sj])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / (d as f64).sqrt()
                    })
                    .collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                let mut ctx = vec![0.0; d];
                for (sj, e) in exps.iter().enumerate() {
                    for (di, c) in ctx.iter_mut().enumerate() {
                        *c += e / z * vs[sj][di];
                    }
                }
                let out = proj(&params.wo, &ctx);
                for (di, &expected) in out.iter().enumerate() {
                    let idx = (di * s + si) * 2 + col;
                    assert!((got.data()[idx] - expected).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn columns_do_not_interact() {
        // permute the folded batch (columns) -> output permutes the same way
        let mut rng = SplitMix64::new(6);
        let d = 4;
        let s = 3;
        let params = AttentionParams::init(d, 2, &mut rng).unwrap();
        let x = random_tensor(&[1, d, s, 2], &mut rng);
        // swap the two columns
        let swapped = Tensor::from_fn(&[1, d, s, 2], |i| {
            let col = i % 2;
            x.data()[i - col + (1 - col)]
        });
        let base = scale_attention(&x, &params).unwrap();
        let perm = scale_attention(&swapped, &params).unwrap();
        for i in 0..base.len() {
            let col = i % 2;
            assert!((perm.data()[i] - base.data()[i - col + (1 - col)]).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_is_deterministic_and_off_during_eval() {
        let mut rng = SplitMix64::new(8);
        let mut params = AttentionParams::init(4, 2, &mut rng).unwrap();
        let x = random_tensor(&[1, 4, 5, 2], &mut rng);
        let clean = crate::tensor::tape::no_grad(|| scale_attention(&x, &params)).unwrap();
        params.dropout = 0.5;
        // eval mode (no recording): dropout must not fire
        let eval_out = crate::tensor::tape::no_grad(|| scale_attention(&x, &params)).unwrap();
        assert_eq!(eval_out.data(), clean.data());
        // recording mode: dropout fires, but identically across calls
        let tracked = x.clone().requires_grad();
        let a = scale_attention(&tracked, &params).unwrap();
        let b = scale_attention(&tracked, &params).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), clean.data());
        crate::tensor::tape::clear();
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(7);
        let d = 4;
        let params = AttentionParams::init(d, 2, &mut rng).unwrap();
        let x = random_tensor(&[1, d, 3, 2], &mut rng);
        let target = random_tensor(&[1, d, 3, 2], &mut rng);
        let loss_fn = move |p: &[Tensor]| -> crate::error::Result<Tensor> {
            let rebuilt = AttentionParams {
                wq: p[0].clone(),
                wk: p[1].clone(),
                wv: p[2].clone(),
                wo: p[3].clone(),
                bq: p[4].clone(),
                bk: p[5].clone(),
                bv: p[6].clone(),
                bo: p[7].clone(),
                n_heads: 2,
                dropout: 0.0,
            };
            let out = scale_attention(&x, &rebuilt)?;
            let diff = out.sub(&target)?;
            Ok(diff.mul(&diff)?.mean_all())
        };
        assert_gradients_close(
            &[
                ("wq", &params.wq),
                ("wk", &params.wk),
                ("wv", &params.wv),
                ("wo", &params.wo),
                ("bq", &params.bq),
                ("bk", &params.bk),
                ("bv", &params.bv),
                ("bo", &params.bo),
            ],
            &loss_fn,
            1e-4,
            6,
        );
    }
}
