//! Discrete Fourier transforms under one fixed convention, plus the spectrum
//! bookkeeping the rest of the pipeline relies on.
//!
//! Convention: for a real series of length `L` the stored half spectrum has
//! `F = L / 2` complex bins `a_0 .. a_{F-1}` with
//! `a_k = (1/L) * sum_l x_l * exp(-i 2 pi k l / L)`.
//! DC is kept, the Nyquist bin is dropped and treated as zero on inversion.
//! Inversion completes the spectrum by conjugate symmetry, so reconstruction
//! is exact for band-limited signals and loses only dropped-bin content
//! otherwise.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reference amplitudes below this are considered zero for relative error.
pub const ZERO_AMPLITUDE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("series too short for a spectrum: length {len}, need at least 2")]
    TooShort { len: usize },
    #[error("length mismatch: spectrum has {bins} bins, target length {len} needs {expected}")]
    LengthMismatch { bins: usize, len: usize, expected: usize },
    #[error("non-finite value in {place}")]
    NonFinite { place: &'static str },
    #[error("band size must be at least 1")]
    BandSizeZero,
    #[error("spectra disagree: {what}")]
    SpectrumMismatch { what: String },
    #[error("expected a single-channel spectrum, got {got} channels")]
    MultiChannel { got: usize },
    #[error("bin {bin} out of range for {bins} bins")]
    BinOutOfRange { bin: usize, bins: usize },
    #[error("channel {channel} out of range for {channels} channels")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("reference amplitude at channel {channel}, bin {bin} is below {ZERO_AMPLITUDE_EPS}")]
    ZeroReference { channel: usize, bin: usize },
    #[error("no key components to take proportions over")]
    EmptyComponentSet,
    #[error("component index {index} out of range for {len} components")]
    ComponentOutOfRange { index: usize, len: usize },
}

/// A channels-by-time block of real values with optional row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateSeries {
    /// Shape `(channels, time)`.
    pub values: Array2<f64>,
    /// One name per channel.
    pub channel_names: Vec<String>,
    /// Raw timestamp strings when the data came with them.
    pub timestamps: Option<Vec<String>>,
}

impl MultivariateSeries {
    pub fn new(values: Array2<f64>, channel_names: Vec<String>) -> Self {
        assert_eq!(values.nrows(), channel_names.len(), "one name per channel");
        Self { values, channel_names, timestamps: None }
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }
}

/// Half spectra for several channels, all from series of the same length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Shape `(channels, bins)`.
    pub real: Array2<f64>,
    /// Shape `(channels, bins)`.
    pub imag: Array2<f64>,
    /// Length of the originating series; bins = origin_length / 2.
    pub origin_length: usize,
}

impl Spectrum {
    pub fn zeros(channels: usize, origin_length: usize) -> Self {
        let bins = origin_length / 2;
        Self {
            real: Array2::zeros((channels, bins)),
            imag: Array2::zeros((channels, bins)),
            origin_length,
        }
    }

    pub fn channels(&self) -> usize {
        self.real.nrows()
    }

    pub fn bins(&self) -> usize {
        self.real.ncols()
    }

    pub fn at(&self, channel: usize, bin: usize) -> Complex64 {
        Complex64::new(self.real[[channel, bin]], self.imag[[channel, bin]])
    }

    pub fn amplitude(&self, channel: usize, bin: usize) -> f64 {
        self.at(channel, bin).norm()
    }

    /// Copy of one channel as a standalone single-channel spectrum.
    pub fn select_channel(&self, channel: usize) -> Result<Spectrum, SpectralError> {
        if channel >= self.channels() {
            return Err(SpectralError::ChannelOutOfRange {
                channel,
                channels: self.channels(),
            });
        }
        Ok(Spectrum {
            real: self.real.row(channel).insert_axis(ndarray::Axis(0)).to_owned(),
            imag: self.imag.row(channel).insert_axis(ndarray::Axis(0)).to_owned(),
            origin_length: self.origin_length,
        })
    }
}

/// `exp(-i 2 pi j / len)` for j in 0..len; index with `(k * l) % len`.
///
/// The integer modulus keeps angles exact, so long transforms do not
/// accumulate phase drift the way an incremental rotation would.
fn twiddle_table(len: usize) -> Vec<Complex64> {
    let step = -2.0 * std::f64::consts::PI / len as f64;
    (0..len)
        .map(|j| {
            let (s, c) = (step * j as f64).sin_cos();
            Complex64::new(c, s)
        })
        .collect()
}

/// Forward transform of one real series to its half spectrum.
pub fn dft(x: &[f64]) -> Result<Vec<Complex64>, SpectralError> {
    let len = x.len();
    if len < 2 {
        return Err(SpectralError::TooShort { len });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::NonFinite { place: "dft input" });
    }
    let bins = len / 2;
    let tab = twiddle_table(len);
    let scale = 1.0 / len as f64;
    let mut out = Vec::with_capacity(bins);
    for k in 0..bins {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut idx = 0usize;
        for &v in x {
            acc += tab[idx] * v;
            idx += k;
            if idx >= len {
                idx -= len;
            }
        }
        out.push(acc * scale);
    }
    Ok(out)
}

/// Inverse transform of a half spectrum back to a real series of `len`.
///
/// Completes bins by conjugate symmetry; the Nyquist bin (even `len`) and any
/// imaginary DC content are treated as zero so the output is always real.
pub fn idft(spectrum: &[Complex64], len: usize) -> Result<Vec<f64>, SpectralError> {
    if len < 2 {
        return Err(SpectralError::TooShort { len });
    }
    let expected = len / 2;
    if spectrum.len() != expected {
        return Err(SpectralError::LengthMismatch { bins: spectrum.len(), len, expected });
    }
    if spectrum.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(SpectralError::NonFinite { place: "idft input" });
    }
    let tab = twiddle_table(len);
    let mut out = vec![spectrum[0].re; len];
    for (k, a) in spectrum.iter().enumerate().skip(1) {
        let mut idx = 0usize;
        for slot in out.iter_mut() {
            // a_k * e^{i th} + conj(a_k) * e^{-i th} = 2 (re cos th - im sin th);
            // tab holds e^{-i th}, hence the sign flip on its imaginary part.
            let w = tab[idx];
            *slot += 2.0 * (a.re * w.re + a.im * w.im);
            idx += k;
            if idx >= len {
                idx -= len;
            }
        }
    }
    Ok(out)
}

/// Half spectrum of every channel in a values block of shape `(C, T)`.
pub fn spectrum_of_values(values: &ArrayView2<f64>) -> Result<Spectrum, SpectralError> {
    let channels = values.nrows();
    let len = values.ncols();
    if len < 2 {
        return Err(SpectralError::TooShort { len });
    }
    let bins = len / 2;
    let mut real = Array2::zeros((channels, bins));
    let mut imag = Array2::zeros((channels, bins));
    for c in 0..channels {
        let row: Vec<f64> = values.row(c).to_vec();
        let spec = dft(&row)?;
        for (k, a) in spec.iter().enumerate() {
            real[[c, k]] = a.re;
            imag[[c, k]] = a.im;
        }
    }
    Ok(Spectrum { real, imag, origin_length: len })
}

/// Half spectrum of every channel of a series.
pub fn spectrum_of(series: &MultivariateSeries) -> Result<Spectrum, SpectralError> {
    spectrum_of_values(&series.values.view())
}

/// Inverse of [`spectrum_of_values`]: one real row per channel.
pub fn reconstruct(spectrum: &Spectrum) -> Result<Array2<f64>, SpectralError> {
    let channels = spectrum.channels();
    let len = spectrum.origin_length;
    let mut out = Array2::zeros((channels, len));
    for c in 0..channels {
        let bins: Vec<Complex64> = (0..spectrum.bins()).map(|k| spectrum.at(c, k)).collect();
        let row = idft(&bins, len)?;
        for (t, v) in row.into_iter().enumerate() {
            out[[c, t]] = v;
        }
    }
    Ok(out)
}

/// Sum of squares of a real series. By Parseval this equals
/// `L * (|a_0|^2 + 2 * sum_{k>=1} |a_k|^2)` for band-limited signals under
/// the 1/L forward scaling.
pub fn spectral_energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Energy of the stored half spectrum counted over the full symmetric
/// spectrum it stands for (DC once, every other bin twice), times `L`.
pub fn spectrum_energy(spectrum: &Spectrum, channel: usize) -> f64 {
    let mut acc = spectrum.amplitude(channel, 0).powi(2);
    for k in 1..spectrum.bins() {
        acc += 2.0 * spectrum.amplitude(channel, k).powi(2);
    }
    acc * spectrum.origin_length as f64
}

/// One frequency bin that dominates its band in both compared spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyComponent {
    /// Global bin index into the half spectrum.
    pub bin: usize,
    /// Index of the band the bin won.
    pub band: usize,
    /// Amplitude in the history spectrum.
    pub hist_amplitude: f64,
    /// Amplitude in the truth spectrum.
    pub truth_amplitude: f64,
}

/// Key components detected over one pair of spectra, in ascending bin order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyComponentSet {
    pub components: Vec<KeyComponent>,
    pub band_size: usize,
    pub bins: usize,
}

impl KeyComponentSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn bins_detected(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.bin).collect()
    }
}

/// Index of the strictly largest amplitude in `row[lo..hi)`; ties keep the
/// lowest bin. `None` when the whole band is at the zero floor.
fn band_argmax(spec: &Spectrum, channel: usize, lo: usize, hi: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for bin in lo..hi {
        let amp = spec.amplitude(channel, bin);
        match best {
            Some((_, b)) if amp <= b => {}
            _ => best = Some((bin, amp)),
        }
    }
    match best {
        Some((bin, amp)) if amp > ZERO_AMPLITUDE_EPS => Some(bin),
        _ => None,
    }
}

/// Split both spectra into bands of `band_size` bins and keep each band's
/// amplitude argmax when history and truth agree on it. At most one component
/// per band; all-zero bands never produce one.
pub fn detect_key_components(
    hist: &Spectrum,
    truth: &Spectrum,
    band_size: usize,
) -> Result<KeyComponentSet, SpectralError> {
    if band_size == 0 {
        return Err(SpectralError::BandSizeZero);
    }
    if hist.channels() != 1 {
        return Err(SpectralError::MultiChannel { got: hist.channels() });
    }
    if truth.channels() != 1 {
        return Err(SpectralError::MultiChannel { got: truth.channels() });
    }
    if hist.bins() != truth.bins() {
        return Err(SpectralError::SpectrumMismatch {
            what: format!("{} vs {} bins", hist.bins(), truth.bins()),
        });
    }
    let bins = hist.bins();
    let mut components = Vec::new();
    let mut band = 0usize;
    let mut lo = 0usize;
    while lo < bins {
        let hi = (lo + band_size).min(bins);
        if let (Some(h), Some(t)) = (band_argmax(hist, 0, lo, hi), band_argmax(truth, 0, lo, hi)) {
            if h == t {
                components.push(KeyComponent {
                    bin: h,
                    band,
                    hist_amplitude: hist.amplitude(0, h),
                    truth_amplitude: truth.amplitude(0, h),
                });
            }
        }
        band += 1;
        lo = hi;
    }
    Ok(KeyComponentSet { components, band_size, bins })
}

/// Share of one component's history amplitude in the set's total.
pub fn amplitude_proportion(set: &KeyComponentSet, index: usize) -> Result<f64, SpectralError> {
    if set.components.is_empty() {
        return Err(SpectralError::EmptyComponentSet);
    }
    if index >= set.components.len() {
        return Err(SpectralError::ComponentOutOfRange { index, len: set.components.len() });
    }
    let total: f64 = set.components.iter().map(|c| c.hist_amplitude).sum();
    Ok(set.components[index].hist_amplitude / total)
}

/// Relative deviation `|pred - truth| / |truth|` at one bin, complex modulus.
///
/// A near-zero reference is an error rather than a 0-or-infinity answer.
pub fn relative_error(
    pred: &Spectrum,
    truth: &Spectrum,
    channel: usize,
    bin: usize,
) -> Result<f64, SpectralError> {
    if pred.channels() != truth.channels() || pred.bins() != truth.bins() {
        return Err(SpectralError::SpectrumMismatch {
            what: format!(
                "pred {}x{} vs truth {}x{}",
                pred.channels(),
                pred.bins(),
                truth.channels(),
                truth.bins()
            ),
        });
    }
    if channel >= truth.channels() {
        return Err(SpectralError::ChannelOutOfRange { channel, channels: truth.channels() });
    }
    if bin >= truth.bins() {
        return Err(SpectralError::BinOutOfRange { bin, bins: truth.bins() });
    }
    let reference = truth.amplitude(channel, bin);
    if reference < ZERO_AMPLITUDE_EPS {
        return Err(SpectralError::ZeroReference { channel, bin });
    }
    Ok((pred.at(channel, bin) - truth.at(channel, bin)).norm() / reference)
}
