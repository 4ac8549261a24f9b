//! The forecasting network.
//!
//! Per look-back window: half spectrum, non-overlapping frequency bands,
//! per-band min-max normalization, a channel-wise transformer encoder per
//! band (no cross-band mixing), and a linear head mapping all band features
//! to the forecast half spectrum, inverted back to the time domain.

mod attention;
mod bands;
mod encoder;
mod forward;
mod linalg;
mod params;

pub use attention::{exact_attention, nystrom_attention};
pub use bands::{normalize_bands, patch_spectrum, BandNormStats, BandSet, NormStats};
pub use encoder::{attention_maps, channel_attention, encode_bands};
pub use forward::{
    forward, forward_prepared, loss_and_gradients, mse_loss, prepare_input, summarize,
    PreparedInput,
};
pub use linalg::{pinv, pinv_vjp, svd};
pub use params::{BandParams, BlockParams, ModelParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::SpectralError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("patch length {patch_len} outside 1..={bins}")]
    PatchLenOutOfRange { patch_len: usize, bins: usize },
    #[error("landmarks {landmarks} outside 1..={tokens}")]
    LandmarksOutOfRange { landmarks: usize, tokens: usize },
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: String, got: String },
    #[error("non-finite values produced at stage `{stage}`")]
    NonFinite { stage: &'static str },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Which part of the architecture to disable, for component ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Everything on.
    #[default]
    Full,
    /// Attention sub-layer removed from every encoder block; the blocks
    /// reduce to their feed-forward path.
    NoChannelAttention,
    /// Band refinement removed: the whole spectrum is one band and is fed
    /// to the encoder raw, without min-max normalization.
    NoFrequencyRefinement,
}

/// Everything that fixes the architecture and its deterministic init.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FredformerConfig {
    /// Look-back window length L.
    pub lookback: usize,
    /// Forecast length H.
    pub horizon: usize,
    /// Input channels C.
    pub channels: usize,
    /// Frequency bins per band S.
    pub patch_len: usize,
    /// Token embedding width M.
    pub embed_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Encoder blocks per band.
    pub depth: usize,
    pub mlp_dim: usize,
    /// Approximate attention with landmark sampling.
    pub use_nystrom: bool,
    /// Landmark count m, only read when `use_nystrom`.
    pub landmarks: usize,
    /// One parameter set reused by every band instead of per-band copies.
    pub share_band_weights: bool,
    /// Per-window, per-channel standardization, inverted on the output.
    pub instance_norm: bool,
    pub ablation: Ablation,
    /// Parameter init seed.
    pub seed: u64,
}

impl FredformerConfig {
    /// Small sane baseline; override fields as needed.
    pub fn new(channels: usize, lookback: usize, horizon: usize, patch_len: usize) -> Self {
        Self {
            lookback,
            horizon,
            channels,
            patch_len,
            embed_dim: 32,
            heads: 4,
            head_dim: 8,
            depth: 2,
            mlp_dim: 64,
            use_nystrom: false,
            landmarks: channels,
            share_band_weights: false,
            instance_norm: true,
            ablation: Ablation::Full,
            seed: 0,
        }
    }

    /// Stored input bins F = floor(L / 2).
    pub fn input_bins(&self) -> usize {
        self.lookback / 2
    }

    /// Predicted output bins floor(H / 2); Nyquist is fixed at zero.
    pub fn output_bins(&self) -> usize {
        self.horizon / 2
    }

    /// Band width actually used: the full spectrum when refinement is off.
    pub fn effective_patch_len(&self) -> usize {
        match self.ablation {
            Ablation::NoFrequencyRefinement => self.input_bins(),
            _ => self.patch_len,
        }
    }

    /// N = ceil(F / S) under the effective band width.
    pub fn num_bands(&self) -> usize {
        let f = self.input_bins();
        let s = self.effective_patch_len();
        f.div_ceil(s)
    }

    /// Token width fed to the embedding: real and imaginary halves.
    pub fn token_width(&self) -> usize {
        2 * self.effective_patch_len()
    }

    /// Total attention width heads * head_dim.
    pub fn attn_width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.lookback < 2 || self.horizon < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "lookback {} and horizon {} must both be at least 2",
                self.lookback, self.horizon
            )));
        }
        if self.channels == 0 {
            return Err(ModelError::InvalidConfig("channels must be at least 1".into()));
        }
        let bins = self.input_bins();
        if self.patch_len < 1 || self.patch_len > bins {
            return Err(ModelError::PatchLenOutOfRange { patch_len: self.patch_len, bins });
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("depth", self.depth),
            ("mlp_dim", self.mlp_dim),
        ] {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.use_nystrom && (self.landmarks == 0 || self.landmarks > self.channels) {
            return Err(ModelError::LandmarksOutOfRange {
                landmarks: self.landmarks,
                tokens: self.channels,
            });
        }
        debug_assert!(self.num_bands() >= 1);
        Ok(())
    }
}
