//! One module per subcommand, plus the data-preparation steps they share.

pub mod bias;
pub mod evaluate;
pub mod forecast;
pub mod generate;
pub mod train;

use std::path::PathBuf;

use fredformer::data::{
    split, standardize, window, Scaler, SplitScheme, SplitSeries, SplitTag, WindowedDataset,
};
use fredformer::model::FredformerConfig;
use fredformer::spectral::MultivariateSeries;

use crate::error::CliError;
use crate::spec::RunSpec;

pub fn out_dir_of(spec: &RunSpec) -> PathBuf {
    PathBuf::from(spec.out_dir.clone().unwrap_or_else(|| "fredformer-out".into()))
}

/// Chronological split plus standardization fitted on the training rows.
pub fn standardized_splits(
    series: &MultivariateSeries,
    scheme: SplitScheme,
    lookback: usize,
    horizon: usize,
) -> Result<(SplitSeries, Scaler), CliError> {
    let parts = split(series, scheme, lookback, horizon)?;
    Ok(standardize(&parts))
}

pub fn split_part(splits: &SplitSeries, tag: SplitTag) -> &MultivariateSeries {
    match tag {
        SplitTag::Train => &splits.train,
        SplitTag::Val => &splits.val,
        SplitTag::Test => &splits.test,
    }
}

/// Windows of one standardized split under the model's geometry.
pub fn windowed(
    splits: &SplitSeries,
    tag: SplitTag,
    cfg: &FredformerConfig,
    stride: usize,
) -> Result<WindowedDataset, CliError> {
    Ok(window(split_part(splits, tag), tag, cfg.lookback, cfg.horizon, stride)?)
}

/// The dataset's channel count must match what the checkpoint was built
/// for; anything else would silently misalign every projection.
pub fn check_channels(series: &MultivariateSeries, cfg: &FredformerConfig) -> Result<(), CliError> {
    if series.channels() != cfg.channels {
        return Err(CliError::Runtime(format!(
            "dataset has {} channels, the checkpoint's model expects {}",
            series.channels(),
            cfg.channels
        )));
    }
    Ok(())
}
