//! Score a checkpoint on one split of a dataset, optionally fanning the
//! independent forecast instances out over worker threads.

use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use fredformer::checkpoint;
use fredformer::data::{load_csv, WindowedDataset};
use fredformer::model::{forward, FredformerConfig, ModelError, ModelParams};
use fredformer::train::{evaluate, metrics_from_pairs, HorizonMetrics, Metrics};

use crate::cmd::{check_channels, out_dir_of, standardized_splits, windowed};
use crate::error::CliError;
use crate::manifest::{write_text, RunManifest};
use crate::spec::{parse_split_scheme, parse_split_tag, required, RunSpec};

#[derive(Debug, Serialize)]
struct MetricsOut {
    mse: f64,
    mae: f64,
    horizon: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_horizon: Option<Vec<HorizonMetrics>>,
}

pub fn run(spec: RunSpec) -> Result<(), CliError> {
    let data = required(&spec.data, "--data")?;
    let ck = required(&spec.checkpoint, "--checkpoint")?;
    let out_dir = out_dir_of(&spec);
    let split_text = spec.split.clone().unwrap_or_else(|| "test".into());
    let tag = parse_split_tag(&split_text)?;
    let scheme_text = spec.split_scheme.clone().unwrap_or_else(|| "0.7,0.1,0.2".into());
    let scheme = parse_split_scheme(&scheme_text)?;
    let stride = spec.stride.unwrap_or(1);
    let jobs = spec.jobs.unwrap_or(1);
    let per_horizon = spec.per_horizon.unwrap_or(false);
    if stride == 0 {
        return Err(CliError::Usage("--stride must be at least 1".into()));
    }
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }

    let (cfg, params) = checkpoint::load(&ck)?;
    let series = load_csv(&data)?;
    check_channels(&series, &cfg)?;

    let resolved = RunSpec {
        data: Some(data.clone()),
        checkpoint: Some(ck.clone()),
        out_dir: Some(out_dir.display().to_string()),
        split: Some(split_text.clone()),
        split_scheme: Some(scheme_text),
        stride: Some(stride),
        jobs: Some(jobs),
        per_horizon: Some(per_horizon),
        ..Default::default()
    };
    let mut manifest = RunManifest::new("evaluate", cfg.seed, &out_dir, resolved);
    manifest.record_input(Path::new(&data))?;
    manifest.record_input(Path::new(&ck))?;
    manifest.write(&out_dir)?;

    let (splits, _scaler) = standardized_splits(&series, scheme, cfg.lookback, cfg.horizon)?;
    let ds = windowed(&splits, tag, &cfg, stride)?;
    let metrics = if jobs > 1 {
        parallel_evaluate(&params, &cfg, &ds, jobs, per_horizon)?
    } else {
        evaluate(&params, &cfg, &ds, per_horizon)?
    };
    let out = MetricsOut {
        mse: metrics.mse,
        mae: metrics.mae,
        horizon: cfg.horizon,
        per_horizon: metrics.per_horizon,
    };
    let json = serde_json::to_string_pretty(&out)?;
    write_text(&out_dir.join("metrics.json"), &json)?;
    println!("{json}");
    Ok(())
}

/// Forecast instances are independent, so they split into contiguous
/// ranges per worker; the pairs are then reassembled in instance order,
/// making the reduction identical for every job count.
fn parallel_evaluate(
    params: &ModelParams,
    cfg: &FredformerConfig,
    ds: &WindowedDataset,
    jobs: usize,
    per_horizon: bool,
) -> Result<Metrics, CliError> {
    let n = ds.len();
    if n == 0 {
        return Err(CliError::Runtime("the chosen split holds no complete window".into()));
    }
    let jobs = jobs.min(n);
    let chunk = n.div_ceil(jobs);
    type Pairs = Result<Vec<(Array2<f64>, Array2<f64>)>, ModelError>;
    let results: Vec<Pairs> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let lo = j * chunk;
                let hi = ((j + 1) * chunk).min(n);
                scope.spawn(move || {
                    (lo..hi)
                        .map(|i| {
                            let (x, y) = ds.instance(i);
                            forward(&x, params, cfg).map(|pred| (pred, y.to_owned()))
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut pairs = Vec::with_capacity(n);
    for r in results {
        pairs.extend(r?);
    }
    Ok(metrics_from_pairs(&pairs, per_horizon))
}
