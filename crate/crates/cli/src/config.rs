//! Run configuration: flat key=value file, command-line overrides, defaults.
//!
//! Precedence: CLI flag > config file > default. Unknown file keys are
//! rejected by name.
//!
//! Recognized keys (all optional):
//!   data            path to the input CSV
//!   out             output directory
//!   seed            u64 PRNG seed (env MSGNET_SEED is the fallback)
//!   horizons        comma list of forecast horizons, e.g. 96,192,336,720
//!   lookback        window length fed to the model
//!   k               number of detected scales per block
//!   d_model         model width
//!   blocks          number of residual scale-graph blocks
//!   mixhop_order    maximum adjacency power (powers 0..=order)
//!   heads           attention heads
//!   node_embed_dim  adjacency node-embedding width
//!   alpha           embedding balance factor
//!   ratios          train,val,test fractions, e.g. 0.7,0.1,0.2
//!   lr              learning rate
//!   batch           minibatch size
//!   epochs          maximum training epochs
//!   patience        early-stopping patience

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use msgnet_core::data::SplitRatios;
use msgnet_core::model::{ModelConfig, TIME_FEATURE_VOCAB};
use msgnet_core::train::TrainConfig;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub horizons: Vec<usize>,
    pub lookback: usize,
    pub k: usize,
    pub d_model: usize,
    pub blocks: usize,
    pub mixhop_order: usize,
    pub heads: usize,
    pub node_embed_dim: usize,
    pub alpha: f64,
    pub ratios: SplitRatios,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            out: PathBuf::from("out"),
            seed: 0,
            horizons: vec![96],
            lookback: 96,
            k: 3,
            d_model: 16,
            blocks: 1,
            mixhop_order: 2,
            heads: 8,
            node_embed_dim: 10,
            alpha: 1.0,
            ratios: SplitRatios(0.7, 0.1, 0.2),
            lr: 1e-4,
            batch: 32,
            epochs: 10,
            patience: 3,
        }
    }
}

/// CLI-side overrides; every field optional.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Input CSV (first column `date`, one variable per remaining column)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for artifacts
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// PRNG seed (falls back to env MSGNET_SEED, then 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Forecast horizons, comma separated
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    /// Lookback window length
    #[arg(long)]
    pub lookback: Option<usize>,
    /// Number of detected scales per block
    #[arg(long)]
    pub k: Option<usize>,
    /// Model width
    #[arg(long = "d-model")]
    pub d_model: Option<usize>,
    /// Residual block count
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Maximum mixhop adjacency power
    #[arg(long = "mixhop-order")]
    pub mixhop_order: Option<usize>,
    /// Attention heads
    #[arg(long)]
    pub heads: Option<usize>,
    /// Adjacency node-embedding width
    #[arg(long = "node-embed-dim")]
    pub node_embed_dim: Option<usize>,
    /// Embedding balance factor
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Split ratios: train,val,test
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    /// Learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Minibatch size
    #[arg(long)]
    pub batch: Option<usize>,
    /// Maximum epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Early-stopping patience
    #[arg(long)]
    pub patience: Option<usize>,
}

impl RunConfig {
    /// Defaults, then the optional config file, then CLI flags, then the
    /// MSGNET_SEED fallback.
    pub fn resolve(config_path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seed_was_set = false;
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            cfg.apply_file(&text, &mut seed_was_set)?;
        }
        cfg.apply_overrides(overrides, &mut seed_was_set)?;
        if !seed_was_set {
            if let Ok(env_seed) = std::env::var("MSGNET_SEED") {
                cfg.seed = env_seed
                    .parse()
                    .map_err(|_| anyhow!("MSGNET_SEED {env_seed:?} is not a u64"))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, text: &str, seed_was_set: &mut bool) -> Result<()> {
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                anyhow!("config line {} is not `key = value`: {raw:?}", line_no + 1)
            })?;
            let key = key.trim();
            let value = value.trim();
            let parse_err =
                |what: &str| anyhow!("config key {key}: cannot parse {value:?} as {what}");
            match key {
                "data" => self.data = Some(PathBuf::from(value)),
                "out" => self.out = PathBuf::from(value),
                "seed" => {
                    self.seed = value.parse().map_err(|_| parse_err("u64"))?;
                    *seed_was_set = true;
                }
                "horizons" => self.horizons = parse_list(value).map_err(|_| parse_err("usize list"))?,
                "lookback" => self.lookback = value.parse().map_err(|_| parse_err("usize"))?,
                "k" => self.k = value.parse().map_err(|_| parse_err("usize"))?,
                "d_model" => self.d_model = value.parse().map_err(|_| parse_err("usize"))?,
                "blocks" => self.blocks = value.parse().map_err(|_| parse_err("usize"))?,
                "mixhop_order" => {
                    self.mixhop_order = value.parse().map_err(|_| parse_err("usize"))?
                }
                "heads" => self.heads = value.parse().map_err(|_| parse_err("usize"))?,
                "node_embed_dim" => {
                    self.node_embed_dim = value.parse().map_err(|_| parse_err("usize"))?
                }
                "alpha" => self.alpha = value.parse().map_err(|_| parse_err("f64"))?,
                "ratios" => self.ratios = parse_ratios(value)?,
                "lr" => self.lr = value.parse().map_err(|_| parse_err("f64"))?,
                "batch" => self.batch = value.parse().map_err(|_| parse_err("usize"))?,
                "epochs" => self.epochs = value.parse().map_err(|_| parse_err("usize"))?,
                "patience" => self.patience = value.parse().map_err(|_| parse_err("usize"))?,
                other => bail!("unknown config key '{other}' (line {})", line_no + 1),
            }
        }
        Ok(())
    }

    fn apply_overrides(&mut self, o: &Overrides, seed_was_set: &mut bool) -> Result<()> {
        if let Some(v) = &o.data {
            self.data = Some(v.clone());
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
            *seed_was_set = true;
        }
        if let Some(v) = &o.horizons {
            self.horizons = v.clone();
        }
        if let Some(v) = o.lookback {
            self.lookback = v;
        }
        if let Some(v) = o.k {
            self.k = v;
        }
        if let Some(v) = o.d_model {
            self.d_model = v;
        }
        if let Some(v) = o.blocks {
            self.blocks = v;
        }
        if let Some(v) = o.mixhop_order {
            self.mixhop_order = v;
        }
        if let Some(v) = o.heads {
            self.heads = v;
        }
        if let Some(v) = o.node_embed_dim {
            self.node_embed_dim = v;
        }
        if let Some(v) = o.alpha {
            self.alpha = v;
        }
        if let Some(v) = &o.ratios {
            if v.len() != 3 {
                bail!("--ratios needs exactly three values, got {}", v.len());
            }
            self.ratios = SplitRatios(v[0], v[1], v[2]);
        }
        if let Some(v) = o.lr {
            self.lr = v;
        }
        if let Some(v) = o.batch {
            self.batch = v;
        }
        if let Some(v) = o.epochs {
            self.epochs = v;
        }
        if let Some(v) = o.patience {
            self.patience = v;
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() {
            bail!("at least one horizon is required");
        }
        if self.horizons.contains(&0) {
            bail!("horizons must be positive");
        }
        self.ratios.validate()?;
        Ok(())
    }

    pub fn model_config(&self, n_vars: usize, horizon: usize) -> ModelConfig {
        ModelConfig {
            n_vars,
            lookback: self.lookback,
            horizon,
            d_model: self.d_model,
            num_scales: self.k,
            n_blocks: self.blocks,
            n_heads: self.heads,
            mixhop_order: self.mixhop_order,
            node_embed_dim: self.node_embed_dim,
            alpha: self.alpha,
            dropout: 0.0,
            ts_vocab: TIME_FEATURE_VOCAB.to_vec(),
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch,
            max_epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
        }
    }
}

fn parse_list(value: &str) -> std::result::Result<Vec<usize>, std::num::ParseIntError> {
    value.split(',').map(|p| p.trim().parse()).collect()
}

fn parse_ratios(value: &str) -> Result<SplitRatios> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| anyhow!("ratios {value:?} must be three floats"))?;
    if parts.len() != 3 {
        bail!("ratios need exactly three values, got {}", parts.len());
    }
    Ok(SplitRatios(parts[0], parts[1], parts[2]))
}
