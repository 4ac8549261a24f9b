//! Frequency-bias reporting: either render an existing per-epoch trace as
//! an epoch-by-component matrix, or probe a checkpoint against fresh data
//! for a single-row report plus an amplitude-spectrum overlay.

use std::path::Path;

use ndarray::ArrayView2;

use fredformer::checkpoint;
use fredformer::data::{load_csv, WindowedDataset};
use fredformer::model::{forward, FredformerConfig, ModelParams};
use fredformer::spectral::dft;
use fredformer::train::{bias_report, BiasTrace};

use crate::cmd::{check_channels, out_dir_of, standardized_splits, windowed};
use crate::error::CliError;
use crate::manifest::{write_text, RunManifest};
use crate::plot;
use crate::spec::{parse_split_scheme, parse_split_tag, required, RunSpec};

pub fn run(spec: RunSpec) -> Result<(), CliError> {
    match (&spec.trace, &spec.checkpoint) {
        (Some(_), Some(_)) => Err(CliError::Usage(
            "pass either --trace, or --checkpoint with --data, not both".into(),
        )),
        (None, None) => Err(CliError::Usage(
            "pass --trace <csv>, or --checkpoint <json> with --data <csv>".into(),
        )),
        (Some(trace), None) => from_trace(&spec, &trace.clone()),
        (None, Some(ck)) => from_checkpoint(&spec, &ck.clone()),
    }
}

/// Re-emit a recorded trace as the heatmap matrix (and image).
fn from_trace(spec: &RunSpec, trace_path: &str) -> Result<(), CliError> {
    let out_dir = out_dir_of(spec);
    let plot_flag = spec.plot.unwrap_or(false);
    let resolved = RunSpec {
        trace: Some(trace_path.to_string()),
        out_dir: Some(out_dir.display().to_string()),
        plot: Some(plot_flag),
        ..Default::default()
    };
    let mut manifest = RunManifest::new("bias-report", 0, &out_dir, resolved);
    manifest.record_input(Path::new(trace_path))?;
    manifest.write(&out_dir)?;

    let trace = BiasTrace::read_csv(trace_path)?;
    emit(&trace, &out_dir, plot_flag, trace_path)
}

/// Detect key components in a probe and score the checkpointed model on
/// them once, alongside input/forecast/truth amplitude spectra.
fn from_checkpoint(spec: &RunSpec, ck: &str) -> Result<(), CliError> {
    let data = required(&spec.data, "--data (with --checkpoint)")?;
    let out_dir = out_dir_of(spec);
    let plot_flag = spec.plot.unwrap_or(false);
    let split_text = spec.split.clone().unwrap_or_else(|| "val".into());
    let tag = parse_split_tag(&split_text)?;
    let scheme_text = spec.split_scheme.clone().unwrap_or_else(|| "0.7,0.1,0.2".into());
    let scheme = parse_split_scheme(&scheme_text)?;

    let (cfg, params) = checkpoint::load(ck)?;
    if cfg.lookback != cfg.horizon {
        return Err(CliError::Runtime(format!(
            "the spectral report needs equal windows; the checkpoint has look-back {} and horizon {}",
            cfg.lookback, cfg.horizon
        )));
    }
    let series = load_csv(&data)?;
    check_channels(&series, &cfg)?;

    let band_size = spec.band_size.unwrap_or(cfg.patch_len);
    let channel = spec.channel.unwrap_or(0);
    let probe_windows = spec.probe_windows.unwrap_or(32);
    if band_size == 0 {
        return Err(CliError::Usage("--band-size must be at least 1".into()));
    }
    if probe_windows == 0 {
        return Err(CliError::Usage("--probe-windows must be at least 1".into()));
    }
    if channel >= cfg.channels {
        return Err(CliError::Usage(format!(
            "--channel {channel} is out of range: the model has {} channels",
            cfg.channels
        )));
    }

    let resolved = RunSpec {
        data: Some(data.clone()),
        checkpoint: Some(ck.to_string()),
        out_dir: Some(out_dir.display().to_string()),
        split: Some(split_text),
        split_scheme: Some(scheme_text),
        band_size: Some(band_size),
        channel: Some(channel),
        probe_windows: Some(probe_windows),
        plot: Some(plot_flag),
        ..Default::default()
    };
    let mut manifest = RunManifest::new("bias-report", cfg.seed, &out_dir, resolved);
    manifest.record_input(Path::new(&data))?;
    manifest.record_input(Path::new(ck))?;
    manifest.write(&out_dir)?;

    let (splits, _scaler) = standardized_splits(&series, scheme, cfg.lookback, cfg.horizon)?;
    let ds = windowed(&splits, tag, &cfg, 1)?;
    let probe = ds.take(probe_windows);
    let (row, components) =
        bias_report(|x| forward(x, &params, &cfg), &probe, band_size, channel)?;
    if components.is_empty() {
        return Err(CliError::Runtime(
            "no key components detected in the probe; nothing to report".into(),
        ));
    }
    let trace = BiasTrace { component_bins: components.bins_detected(), values: vec![row] };
    emit(&trace, &out_dir, plot_flag, ck)?;

    let overlay = spectrum_overlay(&params, &cfg, &probe, channel)?;
    let mut text = String::from("bin,input,forecast,truth\n");
    for (k, row) in overlay.iter().enumerate() {
        text.push_str(&format!("{k},{},{},{}\n", row[0], row[1], row[2]));
    }
    write_text(&out_dir.join("spectrum_overlay.csv"), &text)?;
    if plot_flag {
        let input: Vec<f64> = overlay.iter().map(|r| r[0]).collect();
        let forecast: Vec<f64> = overlay.iter().map(|r| r[1]).collect();
        let truth: Vec<f64> = overlay.iter().map(|r| r[2]).collect();
        plot::line_plot(
            &[(&input, plot::BLUE), (&forecast, plot::ORANGE), (&truth, plot::GREEN)],
            &out_dir.join("spectrum_overlay.png"),
        )?;
    }
    Ok(())
}

/// The epoch-by-component matrix itself: one column per tracked bin, one
/// row per epoch, values are relative spectral errors.
fn emit(trace: &BiasTrace, out_dir: &Path, plot_flag: bool, source: &str) -> Result<(), CliError> {
    if trace.component_bins.is_empty() || trace.epochs() == 0 {
        return Err(CliError::Runtime(format!(
            "{source} holds an empty trace: nothing to report"
        )));
    }
    let mut text = trace
        .component_bins
        .iter()
        .map(|b| format!("bin_{b}"))
        .collect::<Vec<_>>()
        .join(",");
    text.push('\n');
    for row in &trace.values {
        let line = row.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        text.push_str(&line);
        text.push('\n');
    }
    write_text(&out_dir.join("bias_heatmap.csv"), &text)?;
    if plot_flag {
        plot::heatmap(&trace.values, &out_dir.join("bias_heatmap.png"))?;
    }
    println!(
        "bias report over {} epochs x {} components (bins {:?}) in {}",
        trace.epochs(),
        trace.component_bins.len(),
        trace.component_bins,
        out_dir.display()
    );
    Ok(())
}

/// Probe-averaged amplitude per bin for the model input, its forecast,
/// and the true horizon, all on one channel.
fn spectrum_overlay(
    params: &ModelParams,
    cfg: &FredformerConfig,
    probe: &WindowedDataset,
    channel: usize,
) -> Result<Vec<[f64; 3]>, CliError> {
    let bins = cfg.lookback / 2;
    let mut sums = vec![[0.0f64; 3]; bins];
    for i in 0..probe.len() {
        let (x, y) = probe.instance(i);
        let pred = forward(&x, params, cfg)?;
        for (slot, values) in [(0, x), (1, pred.view()), (2, y)] {
            accumulate_amplitudes(&mut sums, slot, &values, channel)?;
        }
    }
    let inv = 1.0 / probe.len() as f64;
    for row in &mut sums {
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Ok(sums)
}

fn accumulate_amplitudes(
    sums: &mut [[f64; 3]],
    slot: usize,
    values: &ArrayView2<'_, f64>,
    channel: usize,
) -> Result<(), CliError> {
    let row = values.row(channel).to_vec();
    let coeffs = dft(&row)?;
    for (k, c) in coeffs.iter().enumerate().take(sums.len()) {
        sums[k][slot] += c.norm();
    }
    Ok(())
}
