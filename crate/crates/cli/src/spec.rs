//! Layered run configuration. Values resolve defaults -> TOML config file
//! -> command-line flags, last writer wins. Each command materializes the
//! fields it consumed back into a fully populated spec, which the manifest
//! records and `--config` can replay.

use std::path::Path;

use serde::{Deserialize, Serialize};

use fredformer::data::{SplitScheme, SplitTag};
use fredformer::model::Ablation;

use crate::error::CliError;

macro_rules! spec_fields {
    ($($name:ident : $ty:ty),* $(,)?) => {
        /// One optional slot per knob any command understands; `None` means
        /// "not set at this layer".
        #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields, default)]
        pub struct RunSpec {
            $(
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $name: Option<$ty>,
            )*
        }

        impl RunSpec {
            /// Field-wise overlay; `over` wins wherever it is set.
            pub fn merged(self, over: RunSpec) -> RunSpec {
                RunSpec { $($name: over.$name.or(self.$name)),* }
            }
        }
    };
}

spec_fields! {
    data: String,
    checkpoint: String,
    trace: String,
    out_dir: String,
    lookback: usize,
    horizon: usize,
    patch_len: usize,
    embed_dim: usize,
    heads: usize,
    head_dim: usize,
    depth: usize,
    mlp_dim: usize,
    nystrom: bool,
    landmarks: usize,
    share_band_weights: bool,
    instance_norm: bool,
    ablation: String,
    seed: u64,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    patience: usize,
    stride: usize,
    split: String,
    split_scheme: String,
    length: usize,
    bins: Vec<usize>,
    amps: Vec<f64>,
    noise_std: f64,
    channels: usize,
    gain_spread: f64,
    band_size: usize,
    channel: usize,
    probe_windows: usize,
    index: usize,
    per_horizon: bool,
    plot: bool,
    jobs: usize,
}

impl RunSpec {
    pub fn from_file(path: &Path) -> Result<RunSpec, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

pub fn required(field: &Option<String>, flag: &str) -> Result<String, CliError> {
    field
        .clone()
        .ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

/// `ett` or three comma-separated positive fractions like `0.7,0.1,0.2`.
pub fn parse_split_scheme(text: &str) -> Result<SplitScheme, CliError> {
    if text.eq_ignore_ascii_case("ett") {
        return Ok(SplitScheme::EttMonths);
    }
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad_scheme(text))?;
    match parts[..] {
        [train, val, test]
            if train > 0.0 && val > 0.0 && test > 0.0 && train + val + test <= 1.0 + 1e-9 =>
        {
            Ok(SplitScheme::Ratio { train, val, test })
        }
        _ => Err(bad_scheme(text)),
    }
}

fn bad_scheme(text: &str) -> CliError {
    CliError::Usage(format!(
        "--split-scheme must be `ett` or three positive fractions summing to at most 1, got `{text}`"
    ))
}

pub fn parse_split_tag(text: &str) -> Result<SplitTag, CliError> {
    match text {
        "train" => Ok(SplitTag::Train),
        "val" => Ok(SplitTag::Val),
        "test" => Ok(SplitTag::Test),
        other => Err(CliError::Usage(format!(
            "--split must be train, val, or test, got `{other}`"
        ))),
    }
}

pub fn parse_ablation(text: &str) -> Result<Ablation, CliError> {
    match text {
        "full" => Ok(Ablation::Full),
        "no-channel-attention" => Ok(Ablation::NoChannelAttention),
        "no-frequency-refinement" => Ok(Ablation::NoFrequencyRefinement),
        other => Err(CliError::Usage(format!(
            "--ablation must be full, no-channel-attention, or no-frequency-refinement, got `{other}`"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = RunSpec { lookback: Some(96), epochs: Some(50), ..Default::default() };
        let flags = RunSpec { epochs: Some(5), ..Default::default() };
        let merged = file.merged(flags);
        assert_eq!(merged.lookback, Some(96));
        assert_eq!(merged.epochs, Some(5));
    }

    #[test]
    fn toml_round_trip_keeps_set_fields_only() {
        let spec = RunSpec {
            data: Some("a.csv".into()),
            learning_rate: Some(1e-4),
            bins: Some(vec![30, 120, 400]),
            nystrom: Some(false),
            ..Default::default()
        };
        let text = toml::to_string_pretty(&spec).unwrap();
        assert!(!text.contains("horizon"), "{text}");
        let back: RunSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = toml::from_str::<RunSpec>("lookbck = 96\n").unwrap_err();
        assert!(err.to_string().contains("lookbck"));
    }

    #[test]
    fn split_scheme_strings_parse() {
        assert_eq!(parse_split_scheme("ett").unwrap(), SplitScheme::EttMonths);
        assert_eq!(
            parse_split_scheme("0.7,0.1,0.2").unwrap(),
            SplitScheme::Ratio { train: 0.7, val: 0.1, test: 0.2 }
        );
        assert!(parse_split_scheme("0.9,0.9,0.9").is_err());
        assert!(parse_split_scheme("monthly").is_err());
        assert!(parse_split_scheme("0.7,0.3").is_err());
    }
}
