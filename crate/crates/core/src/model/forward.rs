//! End-to-end model pipeline: instance normalization, frequency transform,
//! band patching and normalization, per-band encoding, linear summarization
//! back to a spectrum, and inverse transform to the forecast horizon.
//!
//! The input pipeline contains no learnable parameters, so it is computed
//! once per window (`prepare_input`) and reused across optimization steps.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};

use super::bands::{normalize_bands, patch_spectrum};
use super::encoder::{band_backward, band_forward, band_tokens, BandCache};
use super::params::ModelParams;
use super::{Ablation, FredformerConfig, ModelError};
use crate::spectral::{reconstruct, spectrum_of_values, Spectrum};

/// Variance floor for per-channel input standardization.
const INSTANCE_NORM_EPS: f64 = 1e-8;

/// A lookback window converted to per-band channel tokens, plus the
/// per-channel statistics needed to undo input standardization.
#[derive(Debug, Clone)]
pub struct PreparedInput {
    /// One `C x 2S` token matrix per band.
    pub tokens: Vec<Array2<f64>>,
    /// Per-channel (mean, std) of the raw window when standardization is on.
    pub inorm: Option<(Array1<f64>, Array1<f64>)>,
}

/// Convert a `C x L` window into model-ready band tokens.
pub fn prepare_input(
    window: &ArrayView2<f64>,
    cfg: &FredformerConfig,
) -> Result<PreparedInput, ModelError> {
    cfg.validate()?;
    let (c, l) = window.dim();
    if c != cfg.channels || l != cfg.lookback {
        return Err(ModelError::ShapeMismatch {
            what: "input window",
            expected: format!("{} x {}", cfg.channels, cfg.lookback),
            got: format!("{c} x {l}"),
        });
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { stage: "input window" });
    }

    let (values, inorm) = if cfg.instance_norm {
        let mut mean = Array1::zeros(c);
        let mut std = Array1::zeros(c);
        let mut normed = Array2::zeros((c, l));
        for ch in 0..c {
            let row = window.row(ch);
            let mu = row.sum() / l as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / l as f64;
            let sigma = (var + INSTANCE_NORM_EPS).sqrt();
            mean[ch] = mu;
            std[ch] = sigma;
            for t in 0..l {
                normed[[ch, t]] = (window[[ch, t]] - mu) / sigma;
            }
        }
        (normed, Some((mean, std)))
    } else {
        (window.to_owned(), None)
    };

    let spectrum = spectrum_of_values(&values.view())?;
    let bands = patch_spectrum(&spectrum, cfg.effective_patch_len())?;
    let bands = if cfg.ablation == Ablation::NoFrequencyRefinement {
        bands
    } else {
        normalize_bands(&bands).0
    };
    let tokens = (0..bands.num_bands()).map(|n| band_tokens(&bands, n)).collect();
    Ok(PreparedInput { tokens, inorm })
}

fn flatten_features(features: &Array3<f64>) -> Array2<f64> {
    let (n, c, m) = features.dim();
    let mut flat = Array2::zeros((c, n * m));
    for i in 0..n {
        flat.slice_mut(s![.., i * m..(i + 1) * m])
            .assign(&features.slice(s![i, .., ..]));
    }
    flat
}

fn spectrum_from_out_vec(out_vec: &Array2<f64>, horizon: usize) -> Spectrum {
    let c = out_vec.nrows();
    let f_out = out_vec.ncols() / 2;
    let mut spec = Spectrum::zeros(c, horizon);
    debug_assert_eq!(spec.bins(), f_out);
    for ch in 0..c {
        for k in 0..f_out {
            spec.real[[ch, k]] = out_vec[[ch, k]];
            spec.imag[[ch, k]] = out_vec[[ch, f_out + k]];
        }
    }
    spec
}

/// Map per-band features to a forecast spectrum through the linear head.
/// Feature layout is band-major: channel `c` contributes the concatenation
/// of its band features in band order.
pub fn summarize(
    features: &Array3<f64>,
    params: &ModelParams,
    cfg: &FredformerConfig,
) -> Result<Spectrum, ModelError> {
    let (n, c, m) = features.dim();
    if n != cfg.num_bands() || c != cfg.channels || m != cfg.embed_dim {
        return Err(ModelError::ShapeMismatch {
            what: "band features",
            expected: format!("{} x {} x {}", cfg.num_bands(), cfg.channels, cfg.embed_dim),
            got: format!("{n} x {c} x {m}"),
        });
    }
    let flat = flatten_features(features);
    let out_vec = flat.dot(&params.head_w) + &params.head_b;
    if out_vec.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { stage: "summarize" });
    }
    Ok(spectrum_from_out_vec(&out_vec, cfg.horizon))
}

struct Trace {
    band_caches: Vec<BandCache>,
    flat: Array2<f64>,
    pred: Array2<f64>,
}

fn run(
    prepared: &PreparedInput,
    params: &ModelParams,
    cfg: &FredformerConfig,
) -> Result<Trace, ModelError> {
    let n = cfg.num_bands();
    if prepared.tokens.len() != n {
        return Err(ModelError::ShapeMismatch {
            what: "prepared bands",
            expected: n.to_string(),
            got: prepared.tokens.len().to_string(),
        });
    }
    let mut features = Array3::zeros((n, cfg.channels, cfg.embed_dim));
    let mut band_caches = Vec::with_capacity(n);
    for i in 0..n {
        let (out, cache) = band_forward(params.band(i), &prepared.tokens[i], cfg)?;
        features.slice_mut(s![i, .., ..]).assign(&out);
        band_caches.push(cache);
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { stage: "encode" });
    }
    let flat = flatten_features(&features);
    let out_vec = flat.dot(&params.head_w) + &params.head_b;
    if out_vec.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { stage: "summarize" });
    }
    let spec = spectrum_from_out_vec(&out_vec, cfg.horizon);
    let recon = reconstruct(&spec)?;
    let pred = match &prepared.inorm {
        Some((mean, std)) => {
            let mut p = recon;
            for ch in 0..cfg.channels {
                for t in 0..cfg.horizon {
                    p[[ch, t]] = p[[ch, t]] * std[ch] + mean[ch];
                }
            }
            p
        }
        None => recon,
    };
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { stage: "forecast" });
    }
    Ok(Trace { band_caches, flat, pred })
}

/// Forecast from an already prepared window.
pub fn forward_prepared(
    prepared: &PreparedInput,
    params: &ModelParams,
    cfg: &FredformerConfig,
) -> Result<Array2<f64>, ModelError> {
    Ok(run(prepared, params, cfg)?.pred)
}

/// Forecast a `C x H` horizon from a `C x L` window.
pub fn forward(
    window: &ArrayView2<f64>,
    params: &ModelParams,
    cfg: &FredformerConfig,
) -> Result<Array2<f64>, ModelError> {
    let prepared = prepare_input(window, cfg)?;
    forward_prepared(&prepared, params, cfg)
}

/// Mean squared error over all channels and steps.
pub fn mse_loss(pred: &ArrayView2<f64>, target: &ArrayView2<f64>) -> f64 {
    debug_assert_eq!(pred.dim(), target.dim());
    let n = pred.len() as f64;
    pred.iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

/// Adjoint of the inverse frequency transform: maps a gradient on the time
/// series back to gradients on the real and imaginary bin coefficients.
fn inverse_transform_adjoint(d_recon: &Array2<f64>, f_out: usize, horizon: usize) -> Array2<f64> {
    let c = d_recon.nrows();
    let mut d_out_vec = Array2::zeros((c, 2 * f_out));
    let step = std::f64::consts::TAU / horizon as f64;
    for ch in 0..c {
        d_out_vec[[ch, 0]] = d_recon.row(ch).sum();
        // Gradient for the imaginary part of bin 0 is zero: it does not
        // enter the reconstruction.
        for k in 1..f_out {
            let mut sre = 0.0;
            let mut sim = 0.0;
            for t in 0..horizon {
                let ang = step * ((k * t) % horizon) as f64;
                sre += 2.0 * ang.cos() * d_recon[[ch, t]];
                sim -= 2.0 * ang.sin() * d_recon[[ch, t]];
            }
            d_out_vec[[ch, k]] = sre;
            d_out_vec[[ch, f_out + k]] = sim;
        }
    }
    d_out_vec
}

/// Loss and parameter gradients for one prepared window against a `C x H`
/// target. Gradients are returned in a zero-initialized parameter tree of
/// the same shape as `params`.
pub fn loss_and_gradients(
    params: &ModelParams,
    cfg: &FredformerConfig,
    prepared: &PreparedInput,
    target: &ArrayView2<f64>,
) -> Result<(f64, ModelParams), ModelError> {
    let (c, h) = target.dim();
    if c != cfg.channels || h != cfg.horizon {
        return Err(ModelError::ShapeMismatch {
            what: "target window",
            expected: format!("{} x {}", cfg.channels, cfg.horizon),
            got: format!("{c} x {h}"),
        });
    }
    let trace = run(prepared, params, cfg)?;
    let loss = mse_loss(&trace.pred.view(), target);

    let scale = 2.0 / (c * h) as f64;
    let mut d_pred = &trace.pred - target;
    d_pred.mapv_inplace(|v| v * scale);
    let d_recon = match &prepared.inorm {
        Some((_, std)) => {
            let mut d = d_pred;
            for ch in 0..c {
                for t in 0..h {
                    d[[ch, t]] *= std[ch];
                }
            }
            d
        }
        None => d_pred,
    };

    let f_out = cfg.output_bins();
    let d_out_vec = inverse_transform_adjoint(&d_recon, f_out, h);

    let mut grads = ModelParams::zeros(cfg)?;
    grads.head_b += &d_out_vec.sum_axis(Axis(0));
    grads.head_w += &trace.flat.t().dot(&d_out_vec);
    let d_flat = d_out_vec.dot(&params.head_w.t());

    let m = cfg.embed_dim;
    for i in 0..cfg.num_bands() {
        let d_feat = d_flat.slice(s![.., i * m..(i + 1) * m]).to_owned();
        band_backward(params.band(i), &trace.band_caches[i], &d_feat, cfg, grads.band_mut(i));
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_cfg() -> FredformerConfig {
        let mut cfg = FredformerConfig::new(3, 16, 8, 4);
        cfg.embed_dim = 8;
        cfg.heads = 2;
        cfg.head_dim = 4;
        cfg.depth = 1;
        cfg.mlp_dim = 12;
        cfg.seed = 11;
        cfg
    }

    fn random_window(c: usize, l: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((c, l), |_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn forward_shape_and_determinism() {
        let cfg = test_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let window = random_window(3, 16, 1);
        let a = forward(&window.view(), &params, &cfg).unwrap();
        let b = forward(&window.view(), &params, &cfg).unwrap();
        assert_eq!(a.dim(), (3, 8));
        assert_eq!(a, b);
    }

    #[test]
    fn prepared_input_matches_direct_forward() {
        let cfg = test_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let window = random_window(3, 16, 2);
        let direct = forward(&window.view(), &params, &cfg).unwrap();
        let prepared = prepare_input(&window.view(), &cfg).unwrap();
        let cached = forward_prepared(&prepared, &params, &cfg).unwrap();
        assert_eq!(direct, cached);
    }

    #[test]
    fn window_shape_is_validated() {
        let cfg = test_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let window = random_window(3, 20, 3);
        let err = forward(&window.view(), &params, &cfg).unwrap_err();
        assert!(matches!(err, ModelError::ShapeMismatch { .. }));
    }

    #[test]
    fn refinement_ablation_uses_a_single_band() {
        let mut cfg = test_cfg();
        cfg.ablation = Ablation::NoFrequencyRefinement;
        let window = random_window(3, 16, 4);
        let prepared = prepare_input(&window.view(), &cfg).unwrap();
        assert_eq!(prepared.tokens.len(), 1);
        assert_eq!(prepared.tokens[0].dim(), (3, 2 * cfg.input_bins()));
        let params = ModelParams::init(&cfg).unwrap();
        let out = forward_prepared(&prepared, &params, &cfg).unwrap();
        assert_eq!(out.dim(), (3, 8));
    }

    #[test]
    fn instance_norm_toggle_controls_stats() {
        let mut cfg = test_cfg();
        let window = random_window(3, 16, 5);
        let with = prepare_input(&window.view(), &cfg).unwrap();
        assert!(with.inorm.is_some());
        cfg.instance_norm = false;
        let without = prepare_input(&window.view(), &cfg).unwrap();
        assert!(without.inorm.is_none());
    }

    #[test]
    fn mse_of_offset_by_two_is_four() {
        let a = Array2::from_elem((2, 3), 1.0);
        let b = Array2::from_elem((2, 3), 3.0);
        assert!((mse_loss(&a.view(), &b.view()) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn full_landmark_nystrom_matches_exact_forward() {
        let cfg = test_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let window = random_window(3, 16, 6);
        let exact = forward(&window.view(), &params, &cfg).unwrap();
        let mut cfg_n = cfg.clone();
        cfg_n.use_nystrom = true;
        cfg_n.landmarks = cfg.channels;
        let approx = forward(&window.view(), &params, &cfg_n).unwrap();
        let num: f64 = (&approx - &exact).iter().map(|v| v * v).sum::<f64>().sqrt();
        let den: f64 = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den < 1e-4, "relative gap {}", num / den);
    }

    fn finite_difference_check(cfg: &FredformerConfig, seed: u64) {
        let params = ModelParams::init(cfg).unwrap();
        let window = random_window(cfg.channels, cfg.lookback, seed);
        let target = random_window(cfg.channels, cfg.horizon, seed + 100);
        let prepared = prepare_input(&window.view(), cfg).unwrap();
        let (_, grads) = loss_and_gradients(&params, cfg, &prepared, &target.view()).unwrap();
        let g_an = grads.to_flat();

        let base = params.to_flat();
        let mut probe = params.clone();
        let step = 1e-4;
        let mut g_fd = vec![0.0; base.len()];
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += step;
            probe.assign_from_flat(&plus);
            let (lp, _) = loss_and_gradients(&probe, cfg, &prepared, &target.view()).unwrap();
            let mut minus = base.clone();
            minus[i] -= step;
            probe.assign_from_flat(&minus);
            let (lm, _) = loss_and_gradients(&probe, cfg, &prepared, &target.view()).unwrap();
            g_fd[i] = (lp - lm) / (2.0 * step);
        }

        let diff: f64 = g_an
            .iter()
            .zip(&g_fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = g_fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 0.0, "finite-difference gradient vanished");
        assert!(diff / norm < 1e-3, "gradient mismatch: {} relative", diff / norm);
    }

    #[test]
    fn gradients_match_finite_differences_exact_attention() {
        finite_difference_check(&test_cfg(), 7);
    }

    #[test]
    fn gradients_match_finite_differences_nystrom() {
        let mut cfg = test_cfg();
        cfg.use_nystrom = true;
        cfg.landmarks = 2;
        finite_difference_check(&cfg, 8);
    }

    #[test]
    fn gradients_match_finite_differences_shared_weights() {
        let mut cfg = test_cfg();
        cfg.share_band_weights = true;
        finite_difference_check(&cfg, 9);
    }

    #[test]
    fn gradients_match_finite_differences_no_attention() {
        let mut cfg = test_cfg();
        cfg.ablation = Ablation::NoChannelAttention;
        finite_difference_check(&cfg, 10);
    }
}
