//! Dataset generation: planted sinusoid sets and the mid-band spectrum
//! rearrangement of an existing series.

use std::path::Path;

use serde::Serialize;

use fredformer::data::{load_csv, save_csv};
use fredformer::synthgen::{gen_planted, rearrange_spectrum_mid, PlantReport, PlantedConfig};

use crate::cmd::out_dir_of;
use crate::error::CliError;
use crate::manifest::{write_text, RunManifest};
use crate::spec::{required, RunSpec};

/// Everything a planted dataset needs to be regenerated byte for byte.
#[derive(Debug, Serialize)]
struct PlantReportOut {
    mode: &'static str,
    length: usize,
    channels: usize,
    bins: Vec<usize>,
    amplitudes: Vec<f64>,
    noise_std: f64,
    gain_spread: f64,
    seed: u64,
    phases: Vec<f64>,
    /// Per-channel multiplier on each component's amplitude.
    gains: Vec<Vec<f64>>,
}

impl PlantReportOut {
    fn new(mode: &'static str, cfg: &PlantedConfig, report: &PlantReport) -> PlantReportOut {
        PlantReportOut {
            mode,
            length: cfg.length,
            channels: cfg.channels,
            bins: cfg.components.iter().map(|c| c.0).collect(),
            amplitudes: cfg.components.iter().map(|c| c.1).collect(),
            noise_std: report.noise_std,
            gain_spread: cfg.gain_spread,
            seed: cfg.seed,
            phases: report.phases.clone(),
            gains: report.gains.outer_iter().map(|row| row.to_vec()).collect(),
        }
    }
}

fn planted_run(
    mode: &'static str,
    spec: &RunSpec,
    default_bins: &[usize],
    default_amps: &[f64],
    want: usize,
) -> Result<(), CliError> {
    let out_dir = out_dir_of(spec);
    let length = spec.length.unwrap_or(10_000);
    let bins = spec.bins.clone().unwrap_or_else(|| default_bins.to_vec());
    let amps = spec.amps.clone().unwrap_or_else(|| default_amps.to_vec());
    let channels = spec.channels.unwrap_or(1);
    let gain_spread = spec.gain_spread.unwrap_or(0.0);
    let seed = spec.seed.unwrap_or(0);
    if bins.len() != want || amps.len() != want {
        return Err(CliError::Usage(format!(
            "{mode} plants exactly {want} components; got {} bins and {} amplitudes",
            bins.len(),
            amps.len()
        )));
    }
    if channels == 0 {
        return Err(CliError::Usage("--channels must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&gain_spread) {
        return Err(CliError::Usage(format!(
            "--gain-spread must be in [0, 1), got {gain_spread}"
        )));
    }
    let min_amp = amps.iter().cloned().fold(f64::INFINITY, f64::min);
    let noise_std = spec.noise_std.unwrap_or(0.1 * min_amp);
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(CliError::Usage(format!("--noise-std must be non-negative, got {noise_std}")));
    }

    let resolved = RunSpec {
        out_dir: Some(out_dir.display().to_string()),
        length: Some(length),
        bins: Some(bins.clone()),
        amps: Some(amps.clone()),
        channels: Some(channels),
        gain_spread: Some(gain_spread),
        noise_std: Some(noise_std),
        seed: Some(seed),
        ..Default::default()
    };
    let manifest = RunManifest::new(&format!("generate {mode}"), seed, &out_dir, resolved);
    manifest.write(&out_dir)?;

    let cfg = PlantedConfig {
        length,
        channels,
        components: bins.into_iter().zip(amps).collect(),
        noise_std,
        seed,
        gain_spread,
    };
    let (series, report) = gen_planted(&cfg)?;
    save_csv(out_dir.join("dataset.csv"), &series)?;
    let out = PlantReportOut::new(mode, &cfg, &report);
    write_text(&out_dir.join("generate_report.json"), &serde_json::to_string_pretty(&out)?)?;
    println!(
        "wrote {} rows x {} channels with components at bins {:?} to {}",
        length,
        channels,
        out.bins,
        out_dir.join("dataset.csv").display()
    );
    Ok(())
}

/// Three planted sinusoids in a single channel.
pub fn case1(spec: RunSpec) -> Result<(), CliError> {
    planted_run("case1", &spec, &[30, 120, 400], &[1.0, 0.6, 0.3], 3)
}

/// Four planted sinusoids, optionally multi-channel with per-channel gains.
pub fn case2_plant(spec: RunSpec) -> Result<(), CliError> {
    planted_run("case2-plant", &spec, &[20, 120, 280, 430], &[1.0, 0.8, 0.6, 0.4], 4)
}

/// Move an existing dataset's dominant low-frequency bins into the mid
/// band and rotate the rest of the spectrum, writing the permuted series
/// and the report that inverts it.
pub fn case2_rearrange(spec: RunSpec) -> Result<(), CliError> {
    let data = required(&spec.data, "--data")?;
    let out_dir = out_dir_of(&spec);
    let resolved = RunSpec {
        data: Some(data.clone()),
        out_dir: Some(out_dir.display().to_string()),
        ..Default::default()
    };
    let mut manifest = RunManifest::new("generate case2-rearrange", 0, &out_dir, resolved);
    manifest.record_input(Path::new(&data))?;
    manifest.write(&out_dir)?;

    let series = load_csv(&data)?;
    let (rearranged, report) = rearrange_spectrum_mid(&series)?;
    save_csv(out_dir.join("rearranged.csv"), &rearranged)?;
    write_text(&out_dir.join("rearrange_report.json"), &serde_json::to_string_pretty(&report)?)?;
    println!(
        "moved bins {:?} to {:?}; wrote {}",
        report.selected_bins,
        report.destination_bins,
        out_dir.join("rearranged.csv").display()
    );
    Ok(())
}
