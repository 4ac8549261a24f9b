//! Fit a model on one dataset and leave behind everything needed to judge
//! and reuse it: checkpoint, loss history, bias trace, and test metrics.

use std::path::PathBuf;

use serde::Serialize;

use fredformer::checkpoint;
use fredformer::data::{load_csv, SplitTag};
use fredformer::model::{FredformerConfig, ModelParams};
use fredformer::train::{
    evaluate, fit, write_loss_history, BiasTrace, BiasTraceSpec, TrainConfig,
};

use crate::cmd::{out_dir_of, standardized_splits, windowed};
use crate::error::CliError;
use crate::manifest::{write_text, RunManifest};
use crate::plot;
use crate::spec::{parse_ablation, parse_split_scheme, required, RunSpec};

/// Headline test-split quality plus the validation numbers that picked
/// the checkpointed epoch.
#[derive(Debug, Serialize)]
struct TrainMetricsOut {
    mse: f64,
    mae: f64,
    horizon: usize,
    val_mse: f64,
    val_mae: f64,
    best_epoch: usize,
}

fn positive(name: &str, v: usize) -> Result<usize, CliError> {
    if v == 0 {
        return Err(CliError::Usage(format!("{name} must be at least 1")));
    }
    Ok(v)
}

pub fn run(spec: RunSpec) -> Result<(), CliError> {
    let data = required(&spec.data, "--data")?;
    let out_dir = out_dir_of(&spec);

    let lookback = spec.lookback.unwrap_or(96);
    let horizon = spec.horizon.unwrap_or(96);
    let patch_len = spec.patch_len.unwrap_or(8);
    let embed_dim = positive("--embed-dim", spec.embed_dim.unwrap_or(32))?;
    let heads = positive("--heads", spec.heads.unwrap_or(4))?;
    let head_dim = positive("--head-dim", spec.head_dim.unwrap_or(8))?;
    let depth = positive("--depth", spec.depth.unwrap_or(2))?;
    let mlp_dim = positive("--mlp-dim", spec.mlp_dim.unwrap_or(64))?;
    let nystrom = spec.nystrom.unwrap_or(false);
    let share_band_weights = spec.share_band_weights.unwrap_or(false);
    let instance_norm = spec.instance_norm.unwrap_or(true);
    let ablation_text = spec.ablation.clone().unwrap_or_else(|| "full".into());
    let ablation = parse_ablation(&ablation_text)?;
    let seed = spec.seed.unwrap_or(0);

    let epochs = positive("--epochs", spec.epochs.unwrap_or(50))?;
    let batch_size = positive("--batch-size", spec.batch_size.unwrap_or(32))?;
    let learning_rate = spec.learning_rate.unwrap_or(1e-4);
    let patience = positive("--patience", spec.patience.unwrap_or(3))?;
    let stride = positive("--stride", spec.stride.unwrap_or(1))?;
    let scheme_text = spec.split_scheme.clone().unwrap_or_else(|| "0.7,0.1,0.2".into());
    let scheme = parse_split_scheme(&scheme_text)?;
    let band_size = positive("--band-size", spec.band_size.unwrap_or(patch_len.max(1)))?;
    let probe_channel = spec.channel.unwrap_or(0);
    let probe_windows = positive("--probe-windows", spec.probe_windows.unwrap_or(32))?;
    let plot_flag = spec.plot.unwrap_or(false);

    if lookback < 2 || horizon < 2 {
        return Err(CliError::Usage(format!(
            "--lookback {lookback} and --horizon {horizon} must both be at least 2"
        )));
    }
    if patch_len < 1 || patch_len > lookback / 2 {
        return Err(CliError::Usage(format!(
            "--patch-len must be between 1 and {} (half the look-back), got {patch_len}",
            lookback / 2
        )));
    }
    if !learning_rate.is_finite() || learning_rate < 0.0 {
        return Err(CliError::Usage(format!(
            "--learning-rate must be a non-negative number, got {learning_rate}"
        )));
    }
    if nystrom && spec.landmarks == Some(0) {
        return Err(CliError::Usage("--landmarks must be at least 1".into()));
    }

    let data_path = PathBuf::from(&data);
    let series = load_csv(&data_path)?;
    let channels = series.channels();
    let landmarks = spec.landmarks.unwrap_or(channels);
    if probe_channel >= channels {
        return Err(CliError::Usage(format!(
            "--channel {probe_channel} is out of range: the dataset has {channels} channels"
        )));
    }

    let mut cfg = FredformerConfig::new(channels, lookback, horizon, patch_len);
    cfg.embed_dim = embed_dim;
    cfg.heads = heads;
    cfg.head_dim = head_dim;
    cfg.depth = depth;
    cfg.mlp_dim = mlp_dim;
    cfg.use_nystrom = nystrom;
    cfg.landmarks = landmarks;
    cfg.share_band_weights = share_band_weights;
    cfg.instance_norm = instance_norm;
    cfg.ablation = ablation;
    cfg.seed = seed;
    cfg.validate()?;

    // The trace compares forecast and truth spectra bin by bin, which is
    // only meaningful when both windows have the same bins.
    let traceable = lookback == horizon;
    let tcfg = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        patience,
        seed,
        bias_trace: traceable.then(|| BiasTraceSpec {
            band_size,
            channel: probe_channel,
            probe_windows,
        }),
    };

    let resolved = RunSpec {
        data: Some(data.clone()),
        out_dir: Some(out_dir.display().to_string()),
        lookback: Some(lookback),
        horizon: Some(horizon),
        patch_len: Some(patch_len),
        embed_dim: Some(embed_dim),
        heads: Some(heads),
        head_dim: Some(head_dim),
        depth: Some(depth),
        mlp_dim: Some(mlp_dim),
        nystrom: Some(nystrom),
        landmarks: Some(landmarks),
        share_band_weights: Some(share_band_weights),
        instance_norm: Some(instance_norm),
        ablation: Some(ablation_text),
        seed: Some(seed),
        epochs: Some(epochs),
        batch_size: Some(batch_size),
        learning_rate: Some(learning_rate),
        patience: Some(patience),
        stride: Some(stride),
        split_scheme: Some(scheme_text),
        channels: Some(channels),
        band_size: Some(band_size),
        channel: Some(probe_channel),
        probe_windows: Some(probe_windows),
        plot: Some(plot_flag),
        ..Default::default()
    };
    let mut manifest = RunManifest::new("train", seed, &out_dir, resolved);
    manifest.record_input(&data_path)?;
    manifest.write(&out_dir)?;

    let (splits, _scaler) = standardized_splits(&series, scheme, lookback, horizon)?;
    let train_ds = windowed(&splits, SplitTag::Train, &cfg, stride)?;
    let val_ds = windowed(&splits, SplitTag::Val, &cfg, stride)?;
    let test_ds = windowed(&splits, SplitTag::Test, &cfg, 1)?;

    let init = ModelParams::init(&cfg)?;
    let result = fit(&cfg, init, &train_ds, &val_ds, &tcfg)?;

    checkpoint::save(out_dir.join("checkpoint.json"), &cfg, &result.params)?;
    write_loss_history(out_dir.join("loss_history.csv"), &result.history)?;
    // Always leave a trace file; without equal windows it has no tracked
    // columns, which downstream reporting treats as "nothing to show".
    let trace = result.bias_trace.unwrap_or_else(|| BiasTrace {
        component_bins: Vec::new(),
        values: result.history.iter().map(|_| Vec::new()).collect(),
    });
    trace.write_csv(out_dir.join("bias_trace.csv"))?;

    let val_metrics = evaluate(&result.params, &cfg, &val_ds, false)?;
    let test_metrics = evaluate(&result.params, &cfg, &test_ds, false)?;
    let metrics = TrainMetricsOut {
        mse: test_metrics.mse,
        mae: test_metrics.mae,
        horizon,
        val_mse: val_metrics.mse,
        val_mae: val_metrics.mae,
        best_epoch: result.best_epoch,
    };
    write_text(&out_dir.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;

    if plot_flag {
        let train_curve: Vec<f64> = result.history.iter().map(|e| e.train_loss).collect();
        let val_curve: Vec<f64> = result.history.iter().map(|e| e.val_loss).collect();
        plot::line_plot(
            &[(&train_curve, plot::BLUE), (&val_curve, plot::ORANGE)],
            &out_dir.join("loss_history.png"),
        )?;
    }

    println!(
        "trained {} epochs (best {}), val mse {:.6}, test mse {:.6} mae {:.6}",
        result.history.len(),
        result.best_epoch,
        val_metrics.mse,
        test_metrics.mse,
        test_metrics.mae
    );
    println!("artifacts in {}", out_dir.display());
    Ok(())
}
