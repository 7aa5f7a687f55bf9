//! Command implementations. Every command writes schema-tagged artifacts,
//! re-validates them after writing, and never mutates its inputs.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};

use msgnet_core::data::{time_features, SeriesDataset};
use msgnet_core::graph::delta_operator_experiment;
use msgnet_core::model::{MsgNet, TimeFeatures};
use msgnet_core::spectral::identify_scales;
use msgnet_core::tensor::{tape, Tensor};
use msgnet_core::train::train;

use crate::config::RunConfig;

pub const METRICS_SCHEMA: &str = "msgnet.metrics.v1";
pub const SCALES_SCHEMA: &str = "msgnet.scales.v1";
pub const GRAPH_SCHEMA: &str = "msgnet.graph.v1";
pub const DELTA_SCHEMA: &str = "msgnet.delta.v1";

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text.as_bytes())
        .with_context(|| format!("cannot write {}", path.display()))?;
    // validation pass: the artifact must re-parse and carry its schema tag
    let reread: Value = serde_json::from_str(
        &std::fs::read_to_string(path).with_context(|| format!("reread {}", path.display()))?,
    )?;
    if reread.get("schema").and_then(Value::as_str).is_none() {
        bail!("artifact {} lost its schema tag", path.display());
    }
    Ok(())
}

fn load_dataset(path: &Path) -> Result<SeriesDataset> {
    SeriesDataset::load_csv(path)
        .with_context(|| format!("loading dataset {}", path.display()))
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data_path = cfg
        .data
        .as_ref()
        .ok_or_else(|| anyhow!("train needs --data (or `data=` in the config file)"))?;
    let dataset = load_dataset(data_path)?;
    let split = dataset.split_and_standardize(cfg.ratios)?;
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("cannot create {}", cfg.out.display()))?;

    let mut horizon_reports = Vec::new();
    for &horizon in &cfg.horizons {
        let model_cfg = cfg.model_config(dataset.n_vars(), horizon);
        let mut model = MsgNet::init(model_cfg).map_err(|e| anyhow!(e))?;
        let outcome = train(&mut model, &split, &cfg.train_config())?;

        let checkpoint_path = cfg.out.join(format!("checkpoint_T{horizon}.json"));
        model.save_checkpoint(&checkpoint_path)?;
        MsgNet::load_checkpoint(&checkpoint_path)
            .with_context(|| "checkpoint failed its reload validation")?;

        let log_path = cfg.out.join(format!("train_log_T{horizon}.jsonl"));
        let mut log_text = String::new();
        for line in &outcome.log {
            log_text.push_str(&serde_json::to_string(line)?);
            log_text.push('\n');
        }
        std::fs::write(&log_path, log_text)?;

        eprintln!(
            "horizon {horizon}: test mse {:.6}, test mae {:.6} (best epoch {})",
            outcome.eval.test_mse, outcome.eval.test_mae, outcome.best_epoch
        );
        horizon_reports.push(json!({
            "horizon": horizon,
            "test_mse": outcome.eval.test_mse,
            "test_mae": outcome.eval.test_mae,
            "best_epoch": outcome.best_epoch,
            "best_val_mse": outcome.best_val_mse,
            "train_curve": outcome.eval.train_curve,
            "val_curve": outcome.eval.val_curve,
            "checkpoint": checkpoint_path.file_name().unwrap().to_str(),
            "train_log": log_path.file_name().unwrap().to_str(),
        }));
    }

    let metrics = json!({
        "schema": METRICS_SCHEMA,
        "seed": cfg.seed,
        "lookback": cfg.lookback,
        "ratios": [cfg.ratios.0, cfg.ratios.1, cfg.ratios.2],
        "horizons": horizon_reports,
    });
    write_json(&cfg.out.join("metrics.json"), &metrics)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// forecast
// ---------------------------------------------------------------------------

pub fn cmd_forecast(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    horizon: Option<usize>,
) -> Result<()> {
    let model = MsgNet::load_checkpoint(checkpoint)?;
    let cfg = model.config().clone();
    if let Some(h) = horizon {
        if h != cfg.horizon {
            bail!(
                "requested horizon {h} but checkpoint was trained for {}",
                cfg.horizon
            );
        }
    }
    let dataset = load_dataset(data)?;
    if dataset.n_vars() != cfg.n_vars {
        bail!(
            "schema mismatch: checkpoint expects {} variables, dataset has {}",
            cfg.n_vars,
            dataset.n_vars()
        );
    }
    if dataset.rows() < cfg.lookback {
        bail!(
            "dataset has {} rows; lookback {} needed",
            dataset.rows(),
            cfg.lookback
        );
    }

    // last L rows, transposed to [1, N, L]
    let start = dataset.rows() - cfg.lookback;
    let n = cfg.n_vars;
    let mut x = vec![0.0; n * cfg.lookback];
    for i in 0..cfg.lookback {
        for v in 0..n {
            x[v * cfg.lookback + i] = dataset.values()[(start + i) * n + v];
        }
    }
    let granularities: Vec<Vec<usize>> = (0..5)
        .map(|g| {
            (0..cfg.lookback)
                .map(|i| time_features(&dataset.timestamps()[start + i])[g])
                .collect()
        })
        .collect();
    let ts = TimeFeatures {
        granularities,
        batch: 1,
        len: cfg.lookback,
    };
    let x = Tensor::from_vec(&[1, n, cfg.lookback], x)?;
    let forecast = tape::no_grad(|| model.forward(&x, &ts))?;

    let future = dataset.extend_timestamps(cfg.horizon);
    let mut csv = String::from("date");
    for name in dataset.names() {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for (t, stamp) in future.iter().enumerate() {
        csv.push_str(&stamp.format("%Y-%m-%d %H:%M:%S").to_string());
        for v in 0..n {
            csv.push(',');
            csv.push_str(&format!("{}", forecast.data()[v * cfg.horizon + t]));
        }
        csv.push('\n');
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out, csv)?;

    // structural validation: header + exactly T data rows
    let lines = std::fs::read_to_string(out)?;
    let count = lines.lines().count();
    if count != cfg.horizon + 1 {
        bail!("forecast CSV has {count} lines, expected {}", cfg.horizon + 1);
    }
    eprintln!(
        "wrote {} ({} rows x {} variables)",
        out.display(),
        cfg.horizon,
        n
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// scales
// ---------------------------------------------------------------------------

pub fn cmd_scales(
    data: &Path,
    lookback: usize,
    k: usize,
    stride: usize,
    out: &Path,
) -> Result<()> {
    let dataset = load_dataset(data)?;
    if dataset.rows() < lookback {
        bail!(
            "series length {} is shorter than the lookback {lookback}",
            dataset.rows()
        );
    }
    let n = dataset.n_vars();
    let mut windows = Vec::new();
    let mut period_counts: std::collections::BTreeMap<usize, usize> = Default::default();
    let mut w = 0usize;
    while w + lookback <= dataset.rows() {
        let mut x = vec![0.0; n * lookback];
        for i in 0..lookback {
            for v in 0..n {
                x[v * lookback + i] = dataset.values()[(w + i) * n + v];
            }
        }
        let tensor = Tensor::from_vec(&[1, n, lookback], x)?;
        let scales = identify_scales(&tensor, k)?;
        for e in scales.entries() {
            *period_counts.entry(e.period).or_insert(0) += 1;
        }
        windows.push(json!({
            "window": w,
            "start": dataset.timestamps()[w].format("%Y-%m-%d %H:%M:%S").to_string(),
            "scales": scales.entries().iter().map(|e| json!({
                "frequency": e.frequency,
                "period": e.period,
                "amplitude": e.amplitude,
            })).collect::<Vec<_>>(),
        }));
        w += stride;
    }
    let total: usize = period_counts.values().sum();
    let histogram: Vec<Value> = period_counts
        .iter()
        .map(|(period, count)| {
            json!({
                "period": period,
                "count": count,
                "share": *count as f64 / total as f64,
            })
        })
        .collect();
    let report = json!({
        "schema": SCALES_SCHEMA,
        "lookback": lookback,
        "k": k,
        "stride": stride,
        "window_count": windows.len(),
        "windows": windows,
        "histogram": histogram,
    });
    write_json(out, &report)?;
    eprintln!("wrote {} ({} windows)", out.display(), total / k.max(1));
    Ok(())
}

// ---------------------------------------------------------------------------
// graph export
// ---------------------------------------------------------------------------

pub fn cmd_graph_export(checkpoint: &Path, data: Option<&Path>, out: &Path) -> Result<()> {
    let model = MsgNet::load_checkpoint(checkpoint)?;
    let cfg = model.config().clone();

    // With a dataset we can attach representative periods per (block, rank)
    // by replaying one forward pass on the first full window.
    let periods: Option<Vec<Vec<usize>>> = match data {
        Some(path) => {
            let dataset = load_dataset(path)?;
            if dataset.rows() < cfg.lookback || dataset.n_vars() != cfg.n_vars {
                bail!(
                    "dataset {} is incompatible with the checkpoint ({} vars, {} rows)",
                    path.display(),
                    dataset.n_vars(),
                    dataset.rows()
                );
            }
            let n = cfg.n_vars;
            let mut x = vec![0.0; n * cfg.lookback];
            for i in 0..cfg.lookback {
                for v in 0..n {
                    x[v * cfg.lookback + i] = dataset.values()[i * n + v];
                }
            }
            let granularities: Vec<Vec<usize>> = (0..5)
                .map(|g| {
                    (0..cfg.lookback)
                        .map(|i| time_features(&dataset.timestamps()[i])[g])
                        .collect()
                })
                .collect();
            let ts = TimeFeatures {
                granularities,
                batch: 1,
                len: cfg.lookback,
            };
            let detail = tape::no_grad(|| {
                model.forward_detail(&Tensor::from_vec(&[1, n, cfg.lookback], x)?, &ts, None)
            })?;
            Some(detail.scales.iter().map(|s| s.periods()).collect())
        }
        None => None,
    };

    let mut matrices = Vec::new();
    for (block, rank, matrix) in model.adjacencies()? {
        let n = cfg.n_vars;
        for row in matrix.data().chunks(n) {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&v| v < 0.0) {
                bail!("adjacency for block {block} scale {rank} is not row-stochastic");
            }
        }
        let scale_period = periods
            .as_ref()
            .map(|p| json!(p[block][rank]))
            .unwrap_or(Value::Null);
        matrices.push(json!({
            "block": block,
            "scale_rank": rank,
            "scale_period": scale_period,
            "matrix": matrix.data(),
        }));
    }
    let expected = cfg.n_blocks * cfg.num_scales;
    if matrices.len() != expected {
        bail!("exported {} matrices, expected {expected}", matrices.len());
    }
    let report = json!({
        "schema": GRAPH_SCHEMA,
        "n_vars": cfg.n_vars,
        "blocks": cfg.n_blocks,
        "scales_per_block": cfg.num_scales,
        "matrices": matrices,
    });
    write_json(out, &report)?;
    eprintln!("wrote {} ({} matrices)", out.display(), expected);
    Ok(())
}

// ---------------------------------------------------------------------------
// delta experiment
// ---------------------------------------------------------------------------

pub fn cmd_delta_experiment(seed_count: usize, out: &Path) -> Result<()> {
    if seed_count == 0 {
        bail!("need at least one seed");
    }
    let mut results = Vec::with_capacity(seed_count);
    let mut wins = 0usize;
    let mut mixhop_losses = Vec::with_capacity(seed_count);
    println!("{:>6}  {:>12}  {:>12}", "seed", "mixhop mse", "mlp mse");
    for seed in 0..seed_count as u64 {
        let outcome = delta_operator_experiment(seed)?;
        if outcome.mixhop_loss < outcome.mlp_loss {
            wins += 1;
        }
        mixhop_losses.push(outcome.mixhop_loss);
        println!(
            "{seed:>6}  {:>12.4e}  {:>12.4e}",
            outcome.mixhop_loss, outcome.mlp_loss
        );
        results.push(json!({
            "seed": seed,
            "mixhop_mse": outcome.mixhop_loss,
            "mlp_mse": outcome.mlp_loss,
        }));
    }
    mixhop_losses.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = mixhop_losses[mixhop_losses.len() / 2];
    println!(
        "mixhop wins {wins}/{seed_count} ({:.1}%), mixhop median mse {median:.4e}",
        100.0 * wins as f64 / seed_count as f64
    );
    let report = json!({
        "schema": DELTA_SCHEMA,
        "seeds": seed_count,
        "wins": wins,
        "win_rate": wins as f64 / seed_count as f64,
        "mixhop_median_mse": median,
        "results": results,
    });
    write_json(out, &report)?;
    Ok(())
}
