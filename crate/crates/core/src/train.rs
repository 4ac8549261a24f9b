//! Training on time-domain mean squared error with adaptive-moment updates,
//! early stopping on validation loss, and a per-epoch relative-error trace
//! over the key frequency components of a fixed validation probe.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::WindowedDataset;
use crate::model::{
    forward_prepared, loss_and_gradients, prepare_input, FredformerConfig, ModelError,
    ModelParams, PreparedInput,
};
use crate::spectral::{
    detect_key_components, dft, relative_error, KeyComponentSet, SpectralError, Spectrum,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{split} split holds no complete window")]
    EmptyDataset { split: &'static str },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("dataset has {got} channels, the model expects {expected}")]
    ChannelMismatch { got: usize, expected: usize },
    #[error("dataset windows are {got_l}+{got_h}, the model expects {want_l}+{want_h}")]
    WindowMismatch { got_l: usize, got_h: usize, want_l: usize, want_h: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path} is not a bias trace: {detail}")]
    BadTrace { path: String, detail: String },
}

/// Optimization and tracing knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Consecutive non-improving validation epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub bias_trace: Option<BiasTraceSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-4,
            patience: 3,
            seed: 0,
            bias_trace: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(
                "learning_rate must be finite and nonnegative".into(),
            ));
        }
        if self.patience == 0 {
            return Err(TrainError::InvalidConfig("patience must be positive".into()));
        }
        if let Some(spec) = &self.bias_trace {
            if spec.band_size == 0 {
                return Err(TrainError::InvalidConfig("trace band_size must be positive".into()));
            }
            if spec.probe_windows == 0 {
                return Err(TrainError::InvalidConfig(
                    "trace probe_windows must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// What to trace: key components of this channel under this band size,
/// measured on the first `probe_windows` validation windows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasTraceSpec {
    pub band_size: usize,
    pub channel: usize,
    pub probe_windows: usize,
}

impl BiasTraceSpec {
    pub fn new(band_size: usize, channel: usize) -> Self {
        BiasTraceSpec { band_size, channel, probe_windows: 32 }
    }
}

/// Per-epoch relative error at each tracked key-component bin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasTrace {
    pub component_bins: Vec<usize>,
    /// Row per completed epoch, one column per tracked bin.
    pub values: Vec<Vec<f64>>,
}

impl BiasTrace {
    pub fn epochs(&self) -> usize {
        self.values.len()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let display = path.as_ref().display().to_string();
        let mut w = csv::Writer::from_path(path.as_ref())
            .map_err(|e| TrainError::Write { path: display.clone(), source: e })?;
        let mut header = vec!["epoch".to_string()];
        header.extend(self.component_bins.iter().map(|b| format!("bin_{b}")));
        w.write_record(&header)
            .map_err(|e| TrainError::Write { path: display.clone(), source: e })?;
        for (i, row) in self.values.iter().enumerate() {
            let mut record = vec![(i + 1).to_string()];
            record.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&record)
                .map_err(|e| TrainError::Write { path: display.clone(), source: e })?;
        }
        w.flush().map_err(|e| TrainError::Write {
            path: display,
            source: csv::Error::from(e),
        })?;
        Ok(())
    }

    /// Parse a trace back from its CSV form. Inverse of [`write_csv`]:
    /// header `epoch,bin_a,bin_b,...`, one row per epoch.
    ///
    /// [`write_csv`]: BiasTrace::write_csv
    pub fn read_csv(path: impl AsRef<Path>) -> Result<BiasTrace, TrainError> {
        let display = path.as_ref().display().to_string();
        let bad = |detail: String| TrainError::BadTrace { path: display.clone(), detail };
        let mut r = csv::Reader::from_path(path.as_ref())
            .map_err(|e| TrainError::Read { path: display.clone(), source: e })?;
        let headers = r
            .headers()
            .map_err(|e| TrainError::Read { path: display.clone(), source: e })?
            .clone();
        let mut fields = headers.iter();
        if fields.next() != Some("epoch") {
            return Err(bad("first column must be `epoch`".into()));
        }
        let component_bins: Vec<usize> = fields
            .map(|h| {
                h.strip_prefix("bin_")
                    .and_then(|rest| rest.parse().ok())
                    .ok_or_else(|| bad(format!("column `{h}` is not of the form bin_<k>")))
            })
            .collect::<Result<_, _>>()?;
        let mut values = Vec::new();
        for record in r.records() {
            let record =
                record.map_err(|e| TrainError::Read { path: display.clone(), source: e })?;
            if record.len() != component_bins.len() + 1 {
                return Err(bad(format!(
                    "row {} has {} fields, the header has {}",
                    values.len() + 1,
                    record.len(),
                    component_bins.len() + 1
                )));
            }
            let row: Vec<f64> = record
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse()
                        .map_err(|_| bad(format!("`{v}` is not a number")))
                })
                .collect::<Result<_, _>>()?;
            values.push(row);
        }
        Ok(BiasTrace { component_bins, values })
    }
}

/// Forecast quality on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_horizon: Option<Vec<HorizonMetrics>>,
}

/// Error at one forecast step, averaged over instances and channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub step: usize,
    pub mse: f64,
    pub mae: f64,
}

/// One epoch of the loss history.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub fn write_loss_history(
    path: impl AsRef<Path>,
    history: &[EpochStats],
) -> Result<(), TrainError> {
    let display = path.as_ref().display().to_string();
    let mut w = csv::Writer::from_path(path.as_ref())
        .map_err(|e| TrainError::Write { path: display.clone(), source: e })?;
    w.write_record(["epoch", "train_loss", "val_loss"])
        .map_err(|e| TrainError::Write { path: display.clone(), source: e })?;
    for row in history {
        w.write_record([
            row.epoch.to_string(),
            row.train_loss.to_string(),
            row.val_loss.to_string(),
        ])
        .map_err(|e| TrainError::Write { path: display.clone(), source: e })?;
    }
    w.flush()
        .map_err(|e| TrainError::Write { path: display, source: csv::Error::from(e) })?;
    Ok(())
}

/// Everything `fit` produces: best-validation parameters, the trace, and
/// the full loss history.
#[derive(Debug)]
pub struct FitResult {
    pub params: ModelParams,
    pub bias_trace: Option<BiasTrace>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Adaptive-moment gradient descent over the flattened parameter vector.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(len: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut off = 0;
        params.visit_mut(&mut |slice: &mut [f64]| {
            for (i, p) in slice.iter_mut().enumerate() {
                let g = grads[off + i];
                let m = &mut self.m[off + i];
                let v = &mut self.v[off + i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            off += slice.len();
        });
        debug_assert_eq!(off, grads.len());
    }
}

fn check_dataset(
    ds: &WindowedDataset,
    cfg: &FredformerConfig,
    split: &'static str,
) -> Result<(), TrainError> {
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset { split });
    }
    if ds.channels() != cfg.channels {
        return Err(TrainError::ChannelMismatch { got: ds.channels(), expected: cfg.channels });
    }
    if ds.lookback != cfg.lookback || ds.horizon != cfg.horizon {
        return Err(TrainError::WindowMismatch {
            got_l: ds.lookback,
            got_h: ds.horizon,
            want_l: cfg.lookback,
            want_h: cfg.horizon,
        });
    }
    Ok(())
}

fn prepare_all(
    ds: &WindowedDataset,
    cfg: &FredformerConfig,
) -> Result<Vec<PreparedInput>, TrainError> {
    (0..ds.len())
        .map(|i| {
            let (x, _) = ds.instance(i);
            prepare_input(&x, cfg).map_err(TrainError::from)
        })
        .collect()
}

fn mean_val_loss(
    prepared: &[PreparedInput],
    ds: &WindowedDataset,
    params: &ModelParams,
    cfg: &FredformerConfig,
) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    let mut count = 0.0;
    for (i, p) in prepared.iter().enumerate() {
        let (_, y) = ds.instance(i);
        let pred = forward_prepared(p, params, cfg)?;
        sum += crate::model::mse_loss(&pred.view(), &y);
        count += 1.0;
    }
    Ok(sum / count)
}

/// Train with gradient descent on time-domain MSE, returning the
/// best-validation parameters. A bias trace row is appended after each
/// epoch when tracing is configured; detection is fixed by the probe data
/// alone, so every row scores the same component set.
pub fn fit(
    cfg: &FredformerConfig,
    init: ModelParams,
    train_ds: &WindowedDataset,
    val_ds: &WindowedDataset,
    tcfg: &TrainConfig,
) -> Result<FitResult, TrainError> {
    cfg.validate()?;
    tcfg.validate()?;
    check_dataset(train_ds, cfg, "train")?;
    check_dataset(val_ds, cfg, "val")?;

    let train_prepared = prepare_all(train_ds, cfg)?;
    let val_prepared = prepare_all(val_ds, cfg)?;

    let probe = tcfg
        .bias_trace
        .as_ref()
        .map(|spec| -> Result<_, TrainError> {
            let probe_ds = val_ds.take(spec.probe_windows);
            let components = detect_probe_components(&probe_ds, spec.band_size, spec.channel)?;
            Ok((probe_ds, components))
        })
        .transpose()?;

    let mut params = init;
    let mut adam = Adam::new(params.param_count(), tcfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut history = Vec::new();
    let mut trace_rows: Vec<Vec<f64>> = Vec::new();
    let mut best: Option<(f64, ModelParams, usize)> = None;
    let mut stale = 0usize;

    let n = train_prepared.len();
    let mut order: Vec<usize> = (0..n).collect();

    let mut instance_loss = vec![0.0; n];
    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(tcfg.batch_size) {
            let mut grad_flat = vec![0.0; params.param_count()];
            let mut batch_loss = 0.0;
            for &i in batch {
                let (_, y) = train_ds.instance(i);
                let (loss, grads) =
                    loss_and_gradients(&params, cfg, &train_prepared[i], &y)?;
                batch_loss += loss;
                instance_loss[i] = loss;
                for (acc, g) in grad_flat.iter_mut().zip(grads.to_flat()) {
                    *acc += g;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            if !(batch_loss * inv).is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            for g in &mut grad_flat {
                *g *= inv;
            }
            adam.step(&mut params, &grad_flat);
        }
        // Summed in instance order so the history does not depend on the
        // shuffle; each entry is the loss seen when its batch was visited.
        let train_loss = instance_loss.iter().sum::<f64>() / n as f64;
        let val_loss = mean_val_loss(&val_prepared, val_ds, &params, cfg)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        history.push(EpochStats { epoch, train_loss, val_loss });

        if let Some((probe_ds, components)) = &probe {
            let spec = tcfg.bias_trace.as_ref().expect("probe implies spec");
            let row = bias_row(
                |x| forward_prepared(&prepare_input(x, cfg)?, &params, cfg),
                probe_ds,
                components,
                spec.channel,
            )?;
            trace_rows.push(row);
        }

        let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, params.clone(), epoch));
            stale = 0;
        } else {
            stale += 1;
            if stale >= tcfg.patience {
                break;
            }
        }
    }

    let (_, best_params, best_epoch) = best.expect("at least one epoch ran");
    let bias_trace = probe.map(|(_, components)| BiasTrace {
        component_bins: components.bins_detected(),
        values: trace_rows,
    });
    Ok(FitResult { params: best_params, bias_trace, history, best_epoch })
}

/// MSE/MAE over every instance, channel, and step of a split. Per-instance
/// partial sums are reduced in instance order, so the result does not
/// depend on how callers distribute instances over threads.
pub fn evaluate(
    params: &ModelParams,
    cfg: &FredformerConfig,
    ds: &WindowedDataset,
    per_horizon: bool,
) -> Result<Metrics, TrainError> {
    check_dataset(ds, cfg, "eval")?;
    let pairs: Result<Vec<_>, TrainError> = (0..ds.len())
        .map(|i| {
            let (x, y) = ds.instance(i);
            let pred = forward(params, cfg, &x)?;
            Ok((pred, y.to_owned()))
        })
        .collect();
    Ok(metrics_from_pairs(&pairs?, per_horizon))
}

fn forward(
    params: &ModelParams,
    cfg: &FredformerConfig,
    x: &ArrayView2<f64>,
) -> Result<Array2<f64>, TrainError> {
    Ok(crate::model::forward(x, params, cfg)?)
}

/// Metric arithmetic over (prediction, target) pairs; exposed for callers
/// that produce forecasts through other routes.
pub fn metrics_from_pairs(pairs: &[(Array2<f64>, Array2<f64>)], per_horizon: bool) -> Metrics {
    let mut se = 0.0f64;
    let mut ae = 0.0f64;
    let mut count = 0.0f64;
    let horizon = pairs.first().map_or(0, |(p, _)| p.ncols());
    let mut step_se = vec![0.0f64; horizon];
    let mut step_ae = vec![0.0f64; horizon];
    let mut step_count = vec![0.0f64; horizon];
    for (pred, target) in pairs {
        for ((pos, p), t) in pred.indexed_iter().zip(target.iter()) {
            let d = p - t;
            se += d * d;
            ae += d.abs();
            count += 1.0;
            let (_, step) = pos;
            step_se[step] += d * d;
            step_ae[step] += d.abs();
            step_count[step] += 1.0;
        }
    }
    let per_horizon = per_horizon.then(|| {
        (0..horizon)
            .map(|s| HorizonMetrics {
                step: s,
                mse: step_se[s] / step_count[s].max(1.0),
                mae: step_ae[s] / step_count[s].max(1.0),
            })
            .collect()
    });
    Metrics { mse: se / count.max(1.0), mae: ae / count.max(1.0), per_horizon }
}

/// Mean amplitude per bin over all instances of a probe split, packaged
/// as a single-channel spectrum so detection can run on it.
fn averaged_amplitude_spectrum(
    ds: &WindowedDataset,
    channel: usize,
    of_target: bool,
) -> Result<Spectrum, TrainError> {
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset { split: "probe" });
    }
    if channel >= ds.channels() {
        return Err(TrainError::ChannelMismatch { got: ds.channels(), expected: channel + 1 });
    }
    let len = if of_target { ds.horizon } else { ds.lookback };
    let bins = len / 2;
    let mut avg = vec![0.0; bins];
    for i in 0..ds.len() {
        let (x, y) = ds.instance(i);
        let row = if of_target { y.row(channel) } else { x.row(channel) };
        let coeffs = dft(&row.to_vec())?;
        for (k, c) in coeffs.iter().enumerate() {
            avg[k] += c.norm();
        }
    }
    let inv = 1.0 / ds.len() as f64;
    let mut spec = Spectrum::zeros(1, len);
    for k in 0..bins {
        spec.real[[0, k]] = avg[k] * inv;
    }
    Ok(spec)
}

/// Key components of the probe, from its averaged look-back and horizon
/// amplitude spectra. Independent of any model parameters.
pub fn detect_probe_components(
    probe: &WindowedDataset,
    band_size: usize,
    channel: usize,
) -> Result<KeyComponentSet, TrainError> {
    let hist = averaged_amplitude_spectrum(probe, channel, false)?;
    let truth = averaged_amplitude_spectrum(probe, channel, true)?;
    Ok(detect_key_components(&hist, &truth, band_size)?)
}

/// One trace row: per tracked bin, the relative spectral error of the
/// forecast against the true horizon, averaged over probe instances.
pub fn bias_row<F>(
    mut forecast: F,
    probe: &WindowedDataset,
    components: &KeyComponentSet,
    channel: usize,
) -> Result<Vec<f64>, TrainError>
where
    F: FnMut(&ArrayView2<f64>) -> Result<Array2<f64>, ModelError>,
{
    let mut sums = vec![0.0; components.len()];
    for i in 0..probe.len() {
        let (x, y) = probe.instance(i);
        let pred = forecast(&x)?;
        let pred_spec = spectrum_of_row(&pred.view(), channel)?;
        let truth_spec = spectrum_of_row(&y, channel)?;
        for (j, comp) in components.components.iter().enumerate() {
            sums[j] += relative_error(&pred_spec, &truth_spec, 0, comp.bin)?;
        }
    }
    let inv = 1.0 / probe.len() as f64;
    Ok(sums.into_iter().map(|s| s * inv).collect())
}

/// Detection plus one row in a single call: the standalone report entry
/// point. Returns an empty row alongside an empty component set when no
/// bin qualifies.
pub fn bias_report<F>(
    forecast: F,
    probe: &WindowedDataset,
    band_size: usize,
    channel: usize,
) -> Result<(Vec<f64>, KeyComponentSet), TrainError>
where
    F: FnMut(&ArrayView2<f64>) -> Result<Array2<f64>, ModelError>,
{
    let components = detect_probe_components(probe, band_size, channel)?;
    if components.is_empty() {
        return Ok((Vec::new(), components));
    }
    let row = bias_row(forecast, probe, &components, channel)?;
    Ok((row, components))
}

fn spectrum_of_row(values: &ArrayView2<f64>, channel: usize) -> Result<Spectrum, TrainError> {
    let row = values.row(channel).to_vec();
    let coeffs = dft(&row)?;
    let mut spec = Spectrum::zeros(1, row.len());
    for (k, c) in coeffs.iter().enumerate() {
        spec.real[[0, k]] = c.re;
        spec.imag[[0, k]] = c.im;
    }
    Ok(spec)
}
