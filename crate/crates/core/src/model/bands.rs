//! Spectrum banding and the per-band min-max normalization that equalizes
//! band maxima before encoding.

use ndarray::{s, Array2};

use super::ModelError;
use crate::spectral::Spectrum;

/// A spectrum split into equal-width frequency bands.
///
/// Real and imaginary planes are kept apart so each can be scaled on its own.
/// The last band is zero-padded up to the band width; padded columns carry no
/// data and stay out of normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSet {
    /// Per band, shape `(C, S)`.
    pub real: Vec<Array2<f64>>,
    /// Per band, shape `(C, S)`.
    pub imag: Vec<Array2<f64>>,
    /// Trailing zero-padded columns in the final band.
    pub pad_bins: usize,
    /// Bins of the source spectrum (before padding).
    pub source_bins: usize,
}

impl BandSet {
    pub fn num_bands(&self) -> usize {
        self.real.len()
    }

    pub fn band_width(&self) -> usize {
        self.real[0].ncols()
    }

    pub fn channels(&self) -> usize {
        self.real[0].nrows()
    }

    /// Data columns of band `n`, excluding any padding.
    pub fn data_cols(&self, n: usize) -> usize {
        if n + 1 == self.num_bands() {
            self.band_width() - self.pad_bins
        } else {
            self.band_width()
        }
    }

    /// Undo the split: `(C, F)` real and imaginary planes.
    pub fn concatenate(&self) -> (Array2<f64>, Array2<f64>) {
        let c = self.channels();
        let s = self.band_width();
        let mut real = Array2::zeros((c, self.source_bins));
        let mut imag = Array2::zeros((c, self.source_bins));
        for n in 0..self.num_bands() {
            let cols = self.data_cols(n);
            real.slice_mut(s![.., n * s..n * s + cols])
                .assign(&self.real[n].slice(s![.., ..cols]));
            imag.slice_mut(s![.., n * s..n * s + cols])
                .assign(&self.imag[n].slice(s![.., ..cols]));
        }
        (real, imag)
    }
}

/// Min/max of one band's real and imaginary blocks, padding excluded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandNormStats {
    pub real_min: f64,
    pub real_max: f64,
    pub imag_min: f64,
    pub imag_max: f64,
}

/// Normalization record, one entry per band.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub bands: Vec<BandNormStats>,
}

/// Split a spectrum into `ceil(F / patch_len)` bands of `patch_len` bins.
pub fn patch_spectrum(spec: &Spectrum, patch_len: usize) -> Result<BandSet, ModelError> {
    let bins = spec.bins();
    if patch_len < 1 || patch_len > bins {
        return Err(ModelError::PatchLenOutOfRange { patch_len, bins });
    }
    let channels = spec.channels();
    let num_bands = bins.div_ceil(patch_len);
    let mut real = Vec::with_capacity(num_bands);
    let mut imag = Vec::with_capacity(num_bands);
    for n in 0..num_bands {
        let lo = n * patch_len;
        let hi = ((n + 1) * patch_len).min(bins);
        let mut r = Array2::zeros((channels, patch_len));
        let mut i = Array2::zeros((channels, patch_len));
        r.slice_mut(s![.., ..hi - lo]).assign(&spec.real.slice(s![.., lo..hi]));
        i.slice_mut(s![.., ..hi - lo]).assign(&spec.imag.slice(s![.., lo..hi]));
        real.push(r);
        imag.push(i);
    }
    Ok(BandSet { real, imag, pad_bins: num_bands * patch_len - bins, source_bins: bins })
}

/// Min-max over the non-padded part of one block; the whole block mapped to
/// zeros when it is constant.
fn scale_block(block: &Array2<f64>, cols: usize) -> (Array2<f64>, f64, f64) {
    let data = block.slice(s![.., ..cols]);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in data.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let mut out = Array2::zeros(block.dim());
    if hi > lo {
        let span = hi - lo;
        for c in 0..block.nrows() {
            for j in 0..cols {
                out[[c, j]] = (block[[c, j]] - lo) / span;
            }
        }
    }
    (out, lo, hi)
}

/// Scale every band's real and imaginary blocks to `[0, 1]` independently.
///
/// After this every non-degenerate band has min 0 and max 1, so no band
/// dominates the encoder by raw amplitude alone.
pub fn normalize_bands(bands: &BandSet) -> (BandSet, NormStats) {
    let mut real = Vec::with_capacity(bands.num_bands());
    let mut imag = Vec::with_capacity(bands.num_bands());
    let mut stats = Vec::with_capacity(bands.num_bands());
    for n in 0..bands.num_bands() {
        let cols = bands.data_cols(n);
        let (r, rlo, rhi) = scale_block(&bands.real[n], cols);
        let (i, ilo, ihi) = scale_block(&bands.imag[n], cols);
        real.push(r);
        imag.push(i);
        stats.push(BandNormStats { real_min: rlo, real_max: rhi, imag_min: ilo, imag_max: ihi });
    }
    (
        BandSet { real, imag, pad_bins: bands.pad_bins, source_bins: bands.source_bins },
        NormStats { bands: stats },
    )
}
