//! Forecast one window of a split and write the prediction at the data's
//! original scale, with a small quality report against the true horizon.

use std::path::Path;

use serde::Serialize;

use fredformer::checkpoint;
use fredformer::data::{load_csv, save_csv};
use fredformer::model::forward;
use fredformer::spectral::MultivariateSeries;
use fredformer::train::metrics_from_pairs;

use crate::cmd::{check_channels, out_dir_of, standardized_splits, windowed};
use crate::error::CliError;
use crate::manifest::{write_text, RunManifest};
use crate::spec::{parse_split_scheme, parse_split_tag, required, RunSpec};

/// Which window was forecast and how it scored on the standardized scale.
#[derive(Debug, Serialize)]
struct ForecastReport {
    split: String,
    index: usize,
    horizon: usize,
    mse: f64,
    mae: f64,
}

pub fn run(spec: RunSpec) -> Result<(), CliError> {
    let data = required(&spec.data, "--data")?;
    let ck = required(&spec.checkpoint, "--checkpoint")?;
    let out_dir = out_dir_of(&spec);
    let split_text = spec.split.clone().unwrap_or_else(|| "test".into());
    let tag = parse_split_tag(&split_text)?;
    let scheme_text = spec.split_scheme.clone().unwrap_or_else(|| "0.7,0.1,0.2".into());
    let scheme = parse_split_scheme(&scheme_text)?;

    let (cfg, params) = checkpoint::load(&ck)?;
    let series = load_csv(&data)?;
    check_channels(&series, &cfg)?;

    let (splits, scaler) = standardized_splits(&series, scheme, cfg.lookback, cfg.horizon)?;
    let ds = windowed(&splits, tag, &cfg, 1)?;
    let index = spec.index.unwrap_or(ds.len().saturating_sub(1));
    if index >= ds.len() {
        return Err(CliError::Runtime(format!(
            "window index {index} is out of range: the {split_text} split has {} windows",
            ds.len()
        )));
    }

    let resolved = RunSpec {
        data: Some(data.clone()),
        checkpoint: Some(ck.clone()),
        out_dir: Some(out_dir.display().to_string()),
        split: Some(split_text.clone()),
        split_scheme: Some(scheme_text),
        index: Some(index),
        ..Default::default()
    };
    let mut manifest = RunManifest::new("forecast", cfg.seed, &out_dir, resolved);
    manifest.record_input(Path::new(&data))?;
    manifest.record_input(Path::new(&ck))?;
    manifest.write(&out_dir)?;

    let (x, y) = ds.instance(index);
    let pred_std = forward(&x, &params, &cfg)?;
    let quality = metrics_from_pairs(&[(pred_std.clone(), y.to_owned())], false);
    let pred = scaler.inverse(&pred_std.view());

    let out_series = MultivariateSeries::new(pred, series.channel_names.clone());
    save_csv(out_dir.join("forecast.csv"), &out_series)?;
    let report = ForecastReport {
        split: split_text,
        index,
        horizon: cfg.horizon,
        mse: quality.mse,
        mae: quality.mae,
    };
    write_text(&out_dir.join("forecast_report.json"), &serde_json::to_string_pretty(&report)?)?;
    println!(
        "forecast window {index} of {}: {} steps, mse {:.6} mae {:.6} (standardized)",
        report.split, cfg.horizon, quality.mse, quality.mae
    );
    Ok(())
}
