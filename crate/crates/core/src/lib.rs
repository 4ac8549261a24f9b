//! Frequency-domain transformer forecasting.
//!
//! The pipeline turns each look-back window into a half spectrum, splits the
//! spectrum into fixed-width bands, min-max normalizes every band in place so
//! that low-amplitude bands are not drowned out by dominant ones, runs a
//! channel-wise transformer encoder per band, and maps the encoded features
//! back to a forecast spectrum that is inverted to the time domain.
//!
//! Modules:
//! - [`spectral`]: DFT/IDFT under a fixed half-spectrum convention, key-bin
//!   detection and per-bin relative error.
//! - [`synthgen`]: seeded sinusoid generators and the mid-band spectrum
//!   rearrangement transform.
//! - [`model`]: network parameters, forward pass and hand-rolled backward.
//! - [`data`]: CSV loading, chronological splits, windowing, standardization.
//! - [`train`]: gradient-descent fitting, evaluation and bias tracing.
//! - [`checkpoint`]: self-describing parameter archives.

pub mod checkpoint;
pub mod data;
pub mod model;
pub mod spectral;
pub mod synthgen;
pub mod train;
