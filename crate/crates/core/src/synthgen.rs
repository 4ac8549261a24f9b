//! Seeded synthetic-series generators and the mid-band spectrum shuffle.
//!
//! Planted-sinusoid generators draw phases, per-channel gains and noise from
//! one ChaCha stream in a fixed order, so a seed pins the output bit for bit.
//! The rearrangement transform permutes half-spectrum coefficients of real
//! data to relocate dominant low-frequency content into the mid band.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{self, MultivariateSeries, SpectralError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("planted bins must be strictly increasing, got {bins:?}")]
    BinsNotIncreasing { bins: Vec<usize> },
    #[error("planted bin {bin} outside (0, {max}): DC cannot carry a sinusoid and the Nyquist half is dropped")]
    BinOutOfRange { bin: usize, max: usize },
    #[error("amplitudes must be strictly positive, got {amp}")]
    NonPositiveAmplitude { amp: f64 },
    #[error("noise_std must be nonnegative, got {got}")]
    NegativeNoise { got: f64 },
    #[error("series of length {len} too short: {need}")]
    TooShort { len: usize, need: String },
    #[error("need at least one channel and one component")]
    EmptyPlant,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Three-component plant matching the first case study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case1Config {
    pub length: usize,
    /// k1 < k2 < k3, all inside the stored half spectrum.
    pub bins: [usize; 3],
    pub amplitudes: [f64; 3],
    /// `None` picks 0.1 times the smallest amplitude.
    pub noise_std: Option<f64>,
    pub seed: u64,
}

impl Case1Config {
    pub fn new(bins: [usize; 3], amplitudes: [f64; 3], seed: u64) -> Self {
        Self { length: 10000, bins, amplitudes, noise_std: None, seed }
    }
}

/// Four-component plant for mid-band case studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case2Config {
    pub length: usize,
    pub bins: [usize; 4],
    pub amplitudes: [f64; 4],
    pub noise_std: Option<f64>,
    pub seed: u64,
}

impl Case2Config {
    pub fn new(bins: [usize; 4], amplitudes: [f64; 4], seed: u64) -> Self {
        Self { length: 10000, bins, amplitudes, noise_std: None, seed }
    }
}

/// General plant: any number of components over any number of channels.
///
/// Channels share component phases and differ by per-channel gains drawn
/// from `U[1 - gain_spread, 1 + gain_spread]`, which keeps them correlated
/// while leaving channel-specific structure to learn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub length: usize,
    pub channels: usize,
    /// `(bin, amplitude)` pairs, bins distinct and inside the half spectrum.
    pub components: Vec<(usize, f64)>,
    pub noise_std: f64,
    pub seed: u64,
    pub gain_spread: f64,
}

/// Everything random the generator drew, for reproducibility records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantReport {
    /// One phase per component, uniform on `[0, 2 pi)`.
    pub phases: Vec<f64>,
    /// Shape `(channels, components)`.
    pub gains: Array2<f64>,
    pub noise_std: f64,
}

fn validate_components(length: usize, components: &[(usize, f64)]) -> Result<(), SynthError> {
    if components.is_empty() {
        return Err(SynthError::EmptyPlant);
    }
    let max = length / 2;
    let mut prev: Option<usize> = None;
    for &(bin, amp) in components {
        if bin == 0 || bin >= max {
            return Err(SynthError::BinOutOfRange { bin, max });
        }
        if amp <= 0.0 {
            return Err(SynthError::NonPositiveAmplitude { amp });
        }
        if let Some(p) = prev {
            if bin <= p {
                return Err(SynthError::BinsNotIncreasing {
                    bins: components.iter().map(|c| c.0).collect(),
                });
            }
        }
        prev = Some(bin);
    }
    Ok(())
}

/// Sum of planted cosines plus Gaussian noise. Draw order is fixed: phases,
/// then gains channel-major, then noise channel-major.
pub fn gen_planted(cfg: &PlantedConfig) -> Result<(MultivariateSeries, PlantReport), SynthError> {
    if cfg.channels == 0 {
        return Err(SynthError::EmptyPlant);
    }
    if cfg.length < 4 {
        return Err(SynthError::TooShort {
            len: cfg.length,
            need: "at least 4 samples".into(),
        });
    }
    validate_components(cfg.length, &cfg.components)?;
    if cfg.noise_std < 0.0 {
        return Err(SynthError::NegativeNoise { got: cfg.noise_std });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tau = 2.0 * std::f64::consts::PI;
    let phases: Vec<f64> =
        (0..cfg.components.len()).map(|_| rng.gen_range(0.0..tau)).collect();
    let mut gains = Array2::ones((cfg.channels, cfg.components.len()));
    if cfg.gain_spread != 0.0 {
        for g in gains.iter_mut() {
            *g = rng.gen_range(1.0 - cfg.gain_spread..1.0 + cfg.gain_spread);
        }
    }
    let mut values = Array2::zeros((cfg.channels, cfg.length));
    for c in 0..cfg.channels {
        for (j, &(bin, amp)) in cfg.components.iter().enumerate() {
            let w = tau * bin as f64 / cfg.length as f64;
            let gain = gains[[c, j]] * amp;
            let phase = phases[j];
            for l in 0..cfg.length {
                values[[c, l]] += gain * (w * l as f64 + phase).cos();
            }
        }
    }
    if cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).expect("validated std");
        for c in 0..cfg.channels {
            for l in 0..cfg.length {
                values[[c, l]] += normal.sample(&mut rng);
            }
        }
    }
    let names = (0..cfg.channels).map(|i| format!("ch{i}")).collect();
    let report = PlantReport { phases, gains, noise_std: cfg.noise_std };
    Ok((MultivariateSeries::new(values, names), report))
}

fn default_noise(amplitudes: &[f64]) -> f64 {
    0.1 * amplitudes.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Single-channel three-sinusoid series.
pub fn gen_case1(config: &Case1Config) -> Result<MultivariateSeries, SynthError> {
    gen_case1_with_report(config).map(|(s, _)| s)
}

pub fn gen_case1_with_report(
    config: &Case1Config,
) -> Result<(MultivariateSeries, PlantReport), SynthError> {
    let cfg = PlantedConfig {
        length: config.length,
        channels: 1,
        components: config.bins.iter().cloned().zip(config.amplitudes.iter().cloned()).collect(),
        noise_std: config.noise_std.unwrap_or_else(|| default_noise(&config.amplitudes)),
        seed: config.seed,
        gain_spread: 0.0,
    };
    gen_planted(&cfg)
}

/// Single-channel four-sinusoid series.
pub fn gen_case2_like(config: &Case2Config) -> Result<MultivariateSeries, SynthError> {
    let cfg = PlantedConfig {
        length: config.length,
        channels: 1,
        components: config.bins.iter().cloned().zip(config.amplitudes.iter().cloned()).collect(),
        noise_std: config.noise_std.unwrap_or_else(|| default_noise(&config.amplitudes)),
        seed: config.seed,
        gain_spread: 0.0,
    };
    gen_planted(&cfg).map(|(s, _)| s)
}

/// How the rearrangement permuted the half spectrum.
///
/// `selected_bins[i]` swapped with `destination_bins[i]`; everything else
/// except DC and those eight positions was split into three runs that were
/// rotated into `part_order` (indices into the original run order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RearrangeReport {
    pub selected_bins: [usize; 4],
    pub destination_bins: [usize; 4],
    pub part_order: [usize; 3],
}

/// Bins eligible for rotation, ascending: everything but DC and the swap
/// positions. Both directions of the transform must agree on this list.
fn rotation_positions(bins: usize, report: &RearrangeReport) -> Vec<usize> {
    (1..bins)
        .filter(|b| {
            !report.selected_bins.contains(b) && !report.destination_bins.contains(b)
        })
        .collect()
}

/// Source index order after splitting `positions` into three floor-sized
/// parts (remainder on the last) and reordering parts by `part_order`.
fn rotated_sources(positions: &[usize], part_order: &[usize; 3]) -> Vec<usize> {
    let q = positions.len() / 3;
    let bounds = [(0, q), (q, 2 * q), (2 * q, positions.len())];
    let mut out = Vec::with_capacity(positions.len());
    for &p in part_order {
        let (lo, hi) = bounds[p];
        out.extend_from_slice(&positions[lo..hi]);
    }
    out
}

/// Relocate the four most prominent low-band bins into the mid band, then
/// rotate the untouched remainder of the spectrum one part forward.
///
/// Prominence is mean amplitude over channels; DC never moves, so the series
/// mean survives. The whole transform is a permutation of half-spectrum
/// coefficients: spectral energy is untouched and the report inverts it.
pub fn rearrange_spectrum_mid(
    data: &MultivariateSeries,
) -> Result<(MultivariateSeries, RearrangeReport), SynthError> {
    let len = data.len();
    if len < 12 {
        return Err(SynthError::TooShort { len, need: "three nonempty spectrum parts".into() });
    }
    let spec = spectral::spectrum_of(data)?;
    let bins = spec.bins();
    let low_end = bins / 3;
    let mid_end = 2 * bins / 3;
    if low_end < 5 || mid_end - low_end < 4 {
        return Err(SynthError::TooShort {
            len,
            need: "4 non-DC bins in the low third and 4 in the mid third".into(),
        });
    }

    let mean_amp: Vec<f64> = (0..bins)
        .map(|k| (0..spec.channels()).map(|c| spec.amplitude(c, k)).sum::<f64>())
        .collect();

    let mut low: Vec<usize> = (1..low_end).collect();
    low.sort_by(|&a, &b| {
        mean_amp[b].partial_cmp(&mean_amp[a]).unwrap().then(a.cmp(&b))
    });
    let mut selected: Vec<usize> = low[..4].to_vec();
    selected.sort_unstable();

    let mut mid: Vec<usize> = (low_end..mid_end).collect();
    mid.sort_by(|&a, &b| {
        mean_amp[a].partial_cmp(&mean_amp[b]).unwrap().then(a.cmp(&b))
    });
    let mut destinations: Vec<usize> = mid[..4].to_vec();
    destinations.sort_unstable();

    let report = RearrangeReport {
        selected_bins: selected.clone().try_into().expect("four bins"),
        destination_bins: destinations.clone().try_into().expect("four bins"),
        part_order: [1, 2, 0],
    };

    let channels = spec.channels();
    let mut coeffs: Vec<Vec<Complex64>> = (0..channels)
        .map(|c| (0..bins).map(|k| spec.at(c, k)).collect())
        .collect();
    for row in coeffs.iter_mut() {
        for i in 0..4 {
            row.swap(selected[i], destinations[i]);
        }
        let positions = rotation_positions(bins, &report);
        let sources = rotated_sources(&positions, &report.part_order);
        let snapshot = row.clone();
        for (&pos, &src) in positions.iter().zip(sources.iter()) {
            row[pos] = snapshot[src];
        }
    }

    let mut values = Array2::zeros((channels, len));
    for (c, row) in coeffs.iter().enumerate() {
        let series = spectral::idft(row, len)?;
        for (t, v) in series.into_iter().enumerate() {
            values[[c, t]] = v;
        }
    }
    let out = MultivariateSeries {
        values,
        channel_names: data.channel_names.clone(),
        timestamps: data.timestamps.clone(),
    };
    Ok((out, report))
}

/// Undo [`rearrange_spectrum_mid`] on its output, given the report.
///
/// Exact up to the Nyquist content the forward pass already dropped.
pub fn invert_rearrange(
    data: &MultivariateSeries,
    report: &RearrangeReport,
) -> Result<MultivariateSeries, SynthError> {
    let len = data.len();
    let spec = spectral::spectrum_of(data)?;
    let bins = spec.bins();
    let positions = rotation_positions(bins, report);
    let sources = rotated_sources(&positions, &report.part_order);
    let mut values = Array2::zeros((data.channels(), len));
    for c in 0..data.channels() {
        let mut row: Vec<Complex64> = (0..bins).map(|k| spec.at(c, k)).collect();
        let snapshot = row.clone();
        // Inverse scatter: the forward pass wrote snapshot[src] into pos.
        for (&pos, &src) in positions.iter().zip(sources.iter()) {
            row[src] = snapshot[pos];
        }
        for i in 0..4 {
            row.swap(report.selected_bins[i], report.destination_bins[i]);
        }
        let series = spectral::idft(&row, len)?;
        for (t, v) in series.into_iter().enumerate() {
            values[[c, t]] = v;
        }
    }
    Ok(MultivariateSeries {
        values,
        channel_names: data.channel_names.clone(),
        timestamps: data.timestamps.clone(),
    })
}
