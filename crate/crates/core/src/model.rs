//! The forecaster: instance normalization, embedding, stacked residual
//! scale-graph blocks, amplitude-gated aggregation, and the direct
//! multi-horizon output head.

use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{scale_attention, AttentionParams};
use crate::error::{Error, Result};
use crate::graph::{scale_graph_convolution, AdaptiveGraphParams};
use crate::rng::SplitMix64;
use crate::spectral::{from_scale_tensor, identify_scales, to_scale_tensor, ScaleSet};
use crate::tensor::Tensor;

pub const CHECKPOINT_SCHEMA: &str = "msgnet.checkpoint.v1";
pub const STD_FLOOR: f64 = 1e-5;

/// Calendar granularities embedded by the timestamp tables, in order.
pub const TIME_FEATURE_NAMES: [&str; 5] = ["month", "day", "weekday", "hour", "minute"];
/// Vocabulary sizes matching [`TIME_FEATURE_NAMES`]; month and day index from
/// 1, so their tables carry one unused slot.
pub const TIME_FEATURE_VOCAB: [usize; 5] = [13, 32, 7, 24, 60];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Number of series (N).
    pub n_vars: usize,
    /// Lookback window length (L).
    pub lookback: usize,
    /// Forecast horizon (T).
    pub horizon: usize,
    pub d_model: usize,
    /// Number of detected scales per block (k).
    pub num_scales: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    /// Maximum adjacency power; the block uses powers 0..=order.
    pub mixhop_order: usize,
    /// Width of the adjacency node embeddings (h).
    pub node_embed_dim: usize,
    /// Balance factor on the convolutional term of the embedding.
    pub alpha: f64,
    /// Attention dropout; defaults to 0 so forwards stay deterministic.
    #[serde(default)]
    pub dropout: f64,
    /// Vocabulary size per timestamp granularity.
    pub ts_vocab: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_vars: 7,
            lookback: 96,
            horizon: 96,
            d_model: 16,
            num_scales: 3,
            n_blocks: 1,
            n_heads: 8,
            mixhop_order: 2,
            node_embed_dim: 10,
            alpha: 1.0,
            dropout: 0.0,
            ts_vocab: TIME_FEATURE_VOCAB.to_vec(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_vars == 0 {
            return Err(Error::Config("n_vars must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.n_blocks == 0 {
            return Err(Error::Config("n_blocks must be positive".into()));
        }
        if self.lookback < 4 || self.lookback < 2 * self.num_scales {
            return Err(Error::Config(format!(
                "lookback {} too short for {} scales (need >= max(4, 2k))",
                self.lookback, self.num_scales
            )));
        }
        if self.num_scales == 0 {
            return Err(Error::Config("num_scales must be positive".into()));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.node_embed_dim == 0 {
            return Err(Error::Config("node_embed_dim must be positive".into()));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Config("alpha must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        if self.ts_vocab.contains(&0) {
            return Err(Error::Config("timestamp vocabularies must be positive".into()));
        }
        Ok(())
    }

    pub fn powers(&self) -> Vec<usize> {
        (0..=self.mixhop_order).collect()
    }
}

/// Per-window, per-variable mean and floored standard deviation of the
/// lookback, used to normalize the input and restore the forecast.
#[derive(Debug, Clone)]
pub struct NormalizationStats {
    pub mean: Vec<f64>, // [B * N]
    pub std: Vec<f64>,  // [B * N], >= STD_FLOOR
    pub batch: usize,
    pub n_vars: usize,
}

/// Timestamp feature indices for one batch: one index stream per calendar
/// granularity, each holding `batch * len` entries row-major.
#[derive(Debug, Clone)]
pub struct TimeFeatures {
    pub granularities: Vec<Vec<usize>>,
    pub batch: usize,
    pub len: usize,
}

impl TimeFeatures {
    /// All-zero features, for synthetic inputs that carry no calendar.
    pub fn zeros(n_granularities: usize, batch: usize, len: usize) -> TimeFeatures {
        TimeFeatures {
            granularities: vec![vec![0; batch * len]; n_granularities],
            batch,
            len,
        }
    }
}

/// One scale branch: the graph stage plus within-period attention. Branches
/// bind to scale rank (1..k), not period value, so the parameter count stays
/// static while detected periods vary per forward pass.
#[derive(Debug, Clone)]
pub struct ScaleBranch {
    pub graph: AdaptiveGraphParams,
    pub attn: AttentionParams,
}

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub branches: Vec<ScaleBranch>,
}

#[derive(Debug, Clone)]
pub struct MsgNet {
    cfg: ModelConfig,
    conv_kernels: Tensor,   // [d_model, N, 3]
    se_tables: Vec<Tensor>, // per granularity [vocab, d_model]
    pe: Tensor,             // [d_model, L] fixed sinusoidal, not trained
    blocks: Vec<BlockParams>,
    w_s: Tensor,   // [N, d_model]
    w_t: Tensor,   // [L, T]
    b_out: Tensor, // [T]
}

/// Forecast plus the per-block scale sets that produced it.
#[derive(Debug, Clone)]
pub struct ForwardDetail {
    pub forecast: Tensor,
    pub scales: Vec<ScaleSet>,
    pub stats: NormalizationStats,
}

impl MsgNet {
    pub fn init(cfg: ModelConfig) -> Result<MsgNet> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(cfg.seed);
        let powers = cfg.powers();
        let conv_kernels = crate::graph::uniform_init(&[cfg.d_model, cfg.n_vars, 3], &mut rng);
        let se_tables = cfg
            .ts_vocab
            .iter()
            .map(|&v| crate::graph::uniform_init(&[v, cfg.d_model], &mut rng))
            .collect();
        let blocks = (0..cfg.n_blocks)
            .map(|_| -> Result<BlockParams> {
                let branches = (0..cfg.num_scales)
                    .map(|_| -> Result<ScaleBranch> {
                        Ok(ScaleBranch {
                            graph: AdaptiveGraphParams::init(
                                cfg.n_vars,
                                cfg.d_model,
                                cfg.node_embed_dim,
                                powers.len(),
                                &mut rng,
                            ),
                            attn: {
                                let mut attn =
                                    AttentionParams::init(cfg.d_model, cfg.n_heads, &mut rng)?;
                                attn.dropout = cfg.dropout;
                                attn
                            },
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok(BlockParams { branches })
            })
            .collect::<Result<_>>()?;
        let w_s = crate::graph::uniform_init(&[cfg.n_vars, cfg.d_model], &mut rng);
        let w_t = crate::graph::uniform_init(&[cfg.lookback, cfg.horizon], &mut rng);
        let b_out = Tensor::zeros(&[cfg.horizon]).requires_grad();
        let pe = sinusoidal_encoding(cfg.d_model, cfg.lookback);
        Ok(MsgNet {
            cfg,
            conv_kernels,
            se_tables,
            pe,
            blocks,
            w_s,
            w_t,
            b_out,
        })
    }

    /// Every parameter zero; useful as a known-inert baseline.
    pub fn zeros(cfg: ModelConfig) -> Result<MsgNet> {
        let mut model = MsgNet::init(cfg)?;
        model.visit_params_mut(&mut |_, t| {
            *t = t.with_data(vec![0.0; t.len()])?;
            Ok(())
        })?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> &[BlockParams] {
        &self.blocks
    }

    /// Per-window, per-variable z-scoring of the lookback.
    pub fn instance_normalize(&self, x: &Tensor) -> Result<(Tensor, NormalizationStats)> {
        let (batch, n, len) = expect_3d("instance_normalize", x, self.cfg.n_vars)?;
        let mut mean = vec![0.0; batch * n];
        let mut std = vec![0.0; batch * n];
        let mut normalized = vec![0.0; x.len()];
        for row in 0..batch * n {
            let series = &x.data()[row * len..(row + 1) * len];
            let mu = series.iter().sum::<f64>() / len as f64;
            let var = series.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / len as f64;
            let sigma = var.sqrt().max(STD_FLOOR);
            mean[row] = mu;
            std[row] = sigma;
            for (slot, &v) in normalized[row * len..(row + 1) * len].iter_mut().zip(series) {
                *slot = (v - mu) / sigma;
            }
        }
        Ok((
            Tensor::from_vec(&[batch, n, len], normalized)?,
            NormalizationStats {
                mean,
                std,
                batch,
                n_vars: n,
            },
        ))
    }

    /// Embedding: alpha-scaled channel convolution + fixed positional
    /// encoding + learned timestamp tables. `[B, N, L] -> [B, d_model, L]`.
    pub fn embed(&self, x_hat: &Tensor, ts: &TimeFeatures) -> Result<Tensor> {
        let (batch, _, len) = expect_3d("embed", x_hat, self.cfg.n_vars)?;
        if ts.granularities.len() != self.se_tables.len() {
            return Err(Error::Schema(format!(
                "embed expects {} timestamp features, got {}",
                self.se_tables.len(),
                ts.granularities.len()
            )));
        }
        let mut out = x_hat.conv1d(&self.conv_kernels)?.scale(self.cfg.alpha);
        out = out.add(&self.pe.slice_last(len)?)?;
        for (table, indices) in self.se_tables.iter().zip(&ts.granularities) {
            if indices.len() != batch * len {
                return Err(Error::Schema(format!(
                    "timestamp feature stream has {} entries, expected {}",
                    indices.len(),
                    batch * len
                )));
            }
            out = out.add(&table.embedding(indices, batch, len)?)?;
        }
        Ok(out)
    }

    /// One residual block: detect scales, run every branch, gate by
    /// amplitude, add the input back.
    pub fn scale_graph_block(
        &self,
        block: &BlockParams,
        x: &Tensor,
        pinned: Option<&ScaleSet>,
    ) -> Result<(Tensor, ScaleSet)> {
        let len = x.shape()[2];
        let scales = match pinned {
            Some(s) => s.clone(),
            None => identify_scales(&x.detach(), self.cfg.num_scales)?,
        };
        if scales.len() != block.branches.len() {
            return Err(Error::Contract(format!(
                "block has {} branches but {} scales detected",
                block.branches.len(),
                scales.len()
            )));
        }
        let powers = self.cfg.powers();
        let mut outputs = Vec::with_capacity(scales.len());
        for (entry, branch) in scales.entries().iter().zip(&block.branches) {
            let plane = to_scale_tensor(x, entry.period)?;
            let mixed = scale_graph_convolution(&branch.graph, &plane, &powers)?;
            let attended = scale_attention(&mixed, &branch.attn)?;
            outputs.push(from_scale_tensor(&attended, len)?);
        }
        let gated = aggregate_scales(&outputs, &scales.amplitudes())?;
        Ok((gated.add(x)?, scales))
    }

    /// Output head: variable projection, time projection, bias, then
    /// de-normalization back to the input frame.
    pub fn forecast_head(&self, x_out: &Tensor, stats: &NormalizationStats) -> Result<Tensor> {
        let projected = self.w_s.matmul(x_out)?; // [B, N, L]
        let through_time = projected.matmul(&self.w_t)?; // [B, N, T]
        let biased = through_time.add(&self.b_out)?;
        let shape = [stats.batch, stats.n_vars, 1];
        let sigma = Tensor::from_vec(&shape, stats.std.clone())?;
        let mu = Tensor::from_vec(&shape, stats.mean.clone())?;
        biased.mul(&sigma)?.add(&mu)
    }

    pub fn forward(&self, x: &Tensor, ts: &TimeFeatures) -> Result<Tensor> {
        Ok(self.forward_detail(x, ts, None)?.forecast)
    }

    /// Forward pass exposing detected scales; `pinned` replays a previous
    /// pass's scale structure (finite-difference checks need the detached
    /// selection frozen across evaluations).
    pub fn forward_detail(
        &self,
        x: &Tensor,
        ts: &TimeFeatures,
        pinned: Option<&[ScaleSet]>,
    ) -> Result<ForwardDetail> {
        if let Some(p) = pinned {
            if p.len() != self.blocks.len() {
                return Err(Error::Contract(format!(
                    "{} pinned scale sets for {} blocks",
                    p.len(),
                    self.blocks.len()
                )));
            }
        }
        let (x_hat, stats) = self.instance_normalize(x)?;
        let mut state = self.embed(&x_hat, ts)?;
        let mut scales = Vec::with_capacity(self.blocks.len());
        for (bi, block) in self.blocks.iter().enumerate() {
            let pin = pinned.map(|p| &p[bi]);
            let (next, used) = self.scale_graph_block(block, &state, pin)?;
            state = next;
            scales.push(used);
        }
        let forecast = self.forecast_head(&state, &stats)?;
        Ok(ForwardDetail {
            forecast,
            scales,
            stats,
        })
    }

    /// Adjacency matrix of every (block, scale rank) pair.
    pub fn adjacencies(&self) -> Result<Vec<(usize, usize, Tensor)>> {
        let mut out = Vec::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            for (rank, branch) in block.branches.iter().enumerate() {
                let adj = crate::graph::build_adjacency(&branch.graph.e1, &branch.graph.e2)?;
                out.push((bi, rank, adj.matrix().detach()));
            }
        }
        Ok(out)
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("embed.conv", &self.conv_kernels);
        for (g, table) in self.se_tables.iter().enumerate() {
            f(&format!("embed.se.{g}"), table);
        }
        for (bi, block) in self.blocks.iter().enumerate() {
            for (rank, branch) in block.branches.iter().enumerate() {
                let p = format!("block{bi}.scale{rank}");
                f(&format!("{p}.e1"), &branch.graph.e1);
                f(&format!("{p}.e2"), &branch.graph.e2);
                f(&format!("{p}.w_proj"), &branch.graph.w_proj);
                for (j, map) in branch.graph.hop_maps.iter().enumerate() {
                    f(&format!("{p}.hop{j}"), map);
                }
                f(&format!("{p}.back.w1"), &branch.graph.back.w1);
                f(&format!("{p}.back.b1"), &branch.graph.back.b1);
                f(&format!("{p}.back.w2"), &branch.graph.back.w2);
                f(&format!("{p}.back.b2"), &branch.graph.back.b2);
                f(&format!("{p}.attn.wq"), &branch.attn.wq);
                f(&format!("{p}.attn.wk"), &branch.attn.wk);
                f(&format!("{p}.attn.wv"), &branch.attn.wv);
                f(&format!("{p}.attn.wo"), &branch.attn.wo);
                f(&format!("{p}.attn.bq"), &branch.attn.bq);
                f(&format!("{p}.attn.bk"), &branch.attn.bk);
                f(&format!("{p}.attn.bv"), &branch.attn.bv);
                f(&format!("{p}.attn.bo"), &branch.attn.bo);
            }
        }
        f("head.w_s", &self.w_s);
        f("head.w_t", &self.w_t);
        f("head.b", &self.b_out);
    }

    pub fn visit_params_mut(
        &mut self,
        f: &mut dyn FnMut(&str, &mut Tensor) -> Result<()>,
    ) -> Result<()> {
        f("embed.conv", &mut self.conv_kernels)?;
        for (g, table) in self.se_tables.iter_mut().enumerate() {
            f(&format!("embed.se.{g}"), table)?;
        }
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            for (rank, branch) in block.branches.iter_mut().enumerate() {
                let p = format!("block{bi}.scale{rank}");
                f(&format!("{p}.e1"), &mut branch.graph.e1)?;
                f(&format!("{p}.e2"), &mut branch.graph.e2)?;
                f(&format!("{p}.w_proj"), &mut branch.graph.w_proj)?;
                for (j, map) in branch.graph.hop_maps.iter_mut().enumerate() {
                    f(&format!("{p}.hop{j}"), map)?;
                }
                f(&format!("{p}.back.w1"), &mut branch.graph.back.w1)?;
                f(&format!("{p}.back.b1"), &mut branch.graph.back.b1)?;
                f(&format!("{p}.back.w2"), &mut branch.graph.back.w2)?;
                f(&format!("{p}.back.b2"), &mut branch.graph.back.b2)?;
                f(&format!("{p}.attn.wq"), &mut branch.attn.wq)?;
                f(&format!("{p}.attn.wk"), &mut branch.attn.wk)?;
                f(&format!("{p}.attn.wv"), &mut branch.attn.wv)?;
                f(&format!("{p}.attn.wo"), &mut branch.attn.wo)?;
                f(&format!("{p}.attn.bq"), &mut branch.attn.bq)?;
                f(&format!("{p}.attn.bk"), &mut branch.attn.bk)?;
                f(&format!("{p}.attn.bv"), &mut branch.attn.bv)?;
                f(&format!("{p}.attn.bo"), &mut branch.attn.bo)?;
            }
        }
        f("head.w_s", &mut self.w_s)?;
        f("head.w_t", &mut self.w_t)?;
        f("head.b", &mut self.b_out)?;
        Ok(())
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    /// Deep copy of all parameter data (for best-epoch snapshots).
    pub fn snapshot(&self) -> Vec<(String, Vec<f64>)> {
        self.named_parameters()
            .into_iter()
            .map(|(name, t)| (name, t.data().to_vec()))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[(String, Vec<f64>)]) -> Result<()> {
        let by_name: std::collections::HashMap<&str, &Vec<f64>> = snapshot
            .iter()
            .map(|(n, d)| (n.as_str(), d))
            .collect();
        self.visit_params_mut(&mut |name, t| {
            let data = by_name
                .get(name)
                .ok_or_else(|| Error::Schema(format!("snapshot missing parameter {name}")))?;
            *t = t.with_data((*data).clone())?;
            Ok(())
        })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let params: Vec<CheckpointParam> = self
            .named_parameters()
            .into_iter()
            .map(|(name, t)| CheckpointParam {
                name,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        let file = CheckpointFile {
            schema: CHECKPOINT_SCHEMA.to_string(),
            config: self.cfg.clone(),
            params,
        };
        let writer = BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<MsgNet> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let file: CheckpointFile = serde_json::from_reader(reader)?;
        if file.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Schema(format!(
                "checkpoint schema {:?} is not {CHECKPOINT_SCHEMA:?}",
                file.schema
            )));
        }
        let mut model = MsgNet::init(file.config.clone())?;
        let by_name: std::collections::HashMap<&str, &CheckpointParam> = file
            .params
            .iter()
            .map(|p| (p.name.as_str(), p))
            .collect();
        let mut expected = 0usize;
        model.visit_params_mut(&mut |name, t| {
            expected += 1;
            let p = by_name
                .get(name)
                .ok_or_else(|| Error::Schema(format!("checkpoint missing parameter {name}")))?;
            if p.shape != t.shape() {
                return Err(Error::Schema(format!(
                    "checkpoint parameter {name} has shape {:?}, config implies {:?}",
                    p.shape,
                    t.shape()
                )));
            }
            *t = t.with_data(p.data.clone())?;
            Ok(())
        })?;
        if expected != file.params.len() {
            return Err(Error::Schema(format!(
                "checkpoint carries {} parameters, config implies {expected}",
                file.params.len()
            )));
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    schema: String,
    config: ModelConfig,
    params: Vec<CheckpointParam>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Softmax weights over spectral amplitudes; the mixture-of-experts gate.
pub fn amplitude_weights(amplitudes: &[f64]) -> Vec<f64> {
    let max = amplitudes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = amplitudes.iter().map(|a| (a - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Weighted sum of per-scale outputs with the amplitude softmax as gate.
/// Amplitudes are detached data, so gradients flow only through the outputs.
pub fn aggregate_scales(outputs: &[Tensor], amplitudes: &[f64]) -> Result<Tensor> {
    if outputs.is_empty() || outputs.len() != amplitudes.len() {
        return Err(Error::Contract(format!(
            "aggregate_scales got {} outputs and {} amplitudes",
            outputs.len(),
            amplitudes.len()
        )));
    }
    if amplitudes.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::Contract("amplitudes must be finite and nonnegative".into()));
    }
    for o in outputs[1..].iter() {
        if o.shape() != outputs[0].shape() {
            return Err(Error::shape("aggregate_scales", outputs[0].shape(), o.shape()));
        }
    }
    let weights = amplitude_weights(amplitudes);
    let mut acc = outputs[0].scale(weights[0]);
    for (o, &w) in outputs[1..].iter().zip(&weights[1..]) {
        acc = acc.add(&o.scale(w))?;
    }
    Ok(acc)
}

/// Fixed sinusoidal positional encoding `[d_model, len]`.
fn sinusoidal_encoding(d_model: usize, len: usize) -> Tensor {
    Tensor::from_fn(&[d_model, len], |i| {
        let channel = i / len;
        let t = (i % len) as f64;
        let pair = (channel / 2) as f64;
        let rate = (10_000f64).powf(2.0 * pair / d_model as f64);
        if channel.is_multiple_of(2) {
            (t / rate).sin()
        } else {
            (t / rate).cos()
        }
    })
}

fn expect_3d(op: &'static str, x: &Tensor, n_vars: usize) -> Result<(usize, usize, usize)> {
    if x.ndim() != 3 || x.shape()[1] != n_vars {
        return Err(Error::InvalidShape {
            op,
            shape: x.shape().to_vec(),
            reason: format!("expected [batch, {n_vars}, len]"),
        });
    }
    Ok((x.shape()[0], x.shape()[1], x.shape()[2]))
}
