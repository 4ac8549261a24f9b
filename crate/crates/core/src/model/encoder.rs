//! Per-band channel-wise transformer encoder: pre-norm attention and
//! feed-forward sub-layers with residuals, applied band by band with no
//! cross-band connections. Hand-rolled backward passes throughout.

use ndarray::{s, Array1, Array2, Array3, Axis};

use super::attention::{
    exact_attention, exact_backward, nystrom_backward, nystrom_forward, AttnCache,
};
use super::bands::BandSet;
use super::params::{BandParams, BlockParams, ModelParams};
use super::{Ablation, FredformerConfig, ModelError};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) struct LnCache {
    /// Normalized rows before gain/shift.
    xhat: Array2<f64>,
    /// Reciprocal standard deviation per row.
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let (rows, cols) = x.dim();
    let mut xhat = Array2::zeros((rows, cols));
    let mut rstd = Array1::zeros(rows);
    let mut y = Array2::zeros((rows, cols));
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.sum() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..cols {
            let h = (x[[r, c]] - mean) * rs;
            xhat[[r, c]] = h;
            y[[r, c]] = h * gamma[c] + beta[c];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns `dx`, accumulating gain/shift gradients in place.
fn layer_norm_backward(
    cache: &LnCache,
    gamma: &Array1<f64>,
    dy: &Array2<f64>,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array2<f64> {
    let (rows, cols) = cache.xhat.dim();
    let mut dx = Array2::zeros((rows, cols));
    for r in 0..rows {
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for c in 0..cols {
            let d = dy[[r, c]] * gamma[c];
            sum_dxhat += d;
            sum_dxhat_xhat += d * cache.xhat[[r, c]];
            dgamma[c] += dy[[r, c]] * cache.xhat[[r, c]];
            dbeta[c] += dy[[r, c]];
        }
        let inv = 1.0 / cols as f64;
        for c in 0..cols {
            let d = dy[[r, c]] * gamma[c];
            dx[[r, c]] = cache.rstd[r]
                * (d - inv * sum_dxhat - cache.xhat[[r, c]] * inv * sum_dxhat_xhat);
        }
    }
    dx
}

pub(crate) struct AttnBranchCache {
    ln1: LnCache,
    y1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    heads: Vec<AttnCache>,
    concat: Array2<f64>,
}

pub(crate) struct BlockCache {
    attn: Option<AttnBranchCache>,
    ln2: LnCache,
    y2: Array2<f64>,
    h_pre: Array2<f64>,
    h_act: Array2<f64>,
}

fn attention_branch(
    p: &BlockParams,
    x: &Array2<f64>,
    cfg: &FredformerConfig,
) -> Result<(Array2<f64>, AttnBranchCache), ModelError> {
    let (y1, ln1) = layer_norm(x, &p.ln1_gamma, &p.ln1_beta);
    let q = y1.dot(&p.wq) + &p.bq;
    let k = y1.dot(&p.wk) + &p.bk;
    let v = y1.dot(&p.wv) + &p.bv;
    let dh = cfg.head_dim;
    let mut concat = Array2::zeros((x.nrows(), cfg.attn_width()));
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols).to_owned();
        let kh = k.slice(cols).to_owned();
        let vh = v.slice(cols).to_owned();
        let (out, cache) = if cfg.use_nystrom {
            let (out, c) = nystrom_forward(&qh, &kh, &vh, cfg.landmarks)?;
            (out, AttnCache::Nystrom(c))
        } else {
            let (out, weights) = exact_attention(&qh, &kh, &vh);
            (out, AttnCache::Exact { weights })
        };
        concat.slice_mut(cols).assign(&out);
        heads.push(cache);
    }
    let attn_out = concat.dot(&p.wo) + &p.bo;
    Ok((attn_out, AttnBranchCache { ln1, y1, q, k, v, heads, concat }))
}

fn block_forward(
    p: &BlockParams,
    x: &Array2<f64>,
    cfg: &FredformerConfig,
) -> Result<(Array2<f64>, BlockCache), ModelError> {
    let (x_mid, attn) = if cfg.ablation == Ablation::NoChannelAttention {
        (x.clone(), None)
    } else {
        let (attn_out, cache) = attention_branch(p, x, cfg)?;
        (x + &attn_out, Some(cache))
    };
    let (y2, ln2) = layer_norm(&x_mid, &p.ln2_gamma, &p.ln2_beta);
    let h_pre = y2.dot(&p.w1) + &p.b1;
    let h_act = h_pre.mapv(gelu);
    let out = &x_mid + &h_act.dot(&p.w2) + &p.b2;
    Ok((out, BlockCache { attn, ln2, y2, h_pre, h_act }))
}

/// Returns `d_x_in`, accumulating parameter gradients into `g`.
fn block_backward(
    p: &BlockParams,
    cache: &BlockCache,
    d_out: &Array2<f64>,
    cfg: &FredformerConfig,
    g: &mut BlockParams,
) -> Array2<f64> {
    // Feed-forward branch.
    g.b2 += &d_out.sum_axis(Axis(0));
    g.w2 += &cache.h_act.t().dot(d_out);
    let d_h_act = d_out.dot(&p.w2.t());
    let d_h_pre = &d_h_act * &cache.h_pre.mapv(gelu_prime);
    g.b1 += &d_h_pre.sum_axis(Axis(0));
    g.w1 += &cache.y2.t().dot(&d_h_pre);
    let d_y2 = d_h_pre.dot(&p.w1.t());
    let d_from_ff = layer_norm_backward(&cache.ln2, &p.ln2_gamma, &d_y2, &mut g.ln2_gamma, &mut g.ln2_beta);
    let d_x_mid = d_out + &d_from_ff;

    let Some(attn) = &cache.attn else {
        return d_x_mid;
    };

    // Attention branch.
    g.bo += &d_x_mid.sum_axis(Axis(0));
    g.wo += &attn.concat.t().dot(&d_x_mid);
    let d_concat = d_x_mid.dot(&p.wo.t());

    let dh = cfg.head_dim;
    let mut dq = Array2::zeros(attn.q.dim());
    let mut dk = Array2::zeros(attn.k.dim());
    let mut dv = Array2::zeros(attn.v.dim());
    for h in 0..cfg.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = attn.q.slice(cols).to_owned();
        let kh = attn.k.slice(cols).to_owned();
        let vh = attn.v.slice(cols).to_owned();
        let d_out_h = d_concat.slice(cols).to_owned();
        let (dqh, dkh, dvh) = match &attn.heads[h] {
            AttnCache::Exact { weights } => exact_backward(&qh, &kh, &vh, weights, &d_out_h),
            AttnCache::Nystrom(c) => nystrom_backward(&qh, &kh, &vh, c, &d_out_h),
        };
        dq.slice_mut(cols).assign(&dqh);
        dk.slice_mut(cols).assign(&dkh);
        dv.slice_mut(cols).assign(&dvh);
    }

    g.bq += &dq.sum_axis(Axis(0));
    g.bk += &dk.sum_axis(Axis(0));
    g.bv += &dv.sum_axis(Axis(0));
    g.wq += &attn.y1.t().dot(&dq);
    g.wk += &attn.y1.t().dot(&dk);
    g.wv += &attn.y1.t().dot(&dv);
    let d_y1 = dq.dot(&p.wq.t()) + dk.dot(&p.wk.t()) + dv.dot(&p.wv.t());
    let d_from_attn =
        layer_norm_backward(&attn.ln1, &p.ln1_gamma, &d_y1, &mut g.ln1_gamma, &mut g.ln1_beta);
    d_x_mid + d_from_attn
}

pub(crate) struct BandCache {
    pub tokens: Array2<f64>,
    blocks: Vec<BlockCache>,
}

pub(crate) fn band_forward(
    bp: &BandParams,
    tokens: &Array2<f64>,
    cfg: &FredformerConfig,
) -> Result<(Array2<f64>, BandCache), ModelError> {
    let mut x = tokens.dot(&bp.embed_w) + &bp.embed_b;
    let mut blocks = Vec::with_capacity(bp.blocks.len());
    for block in &bp.blocks {
        let (next, cache) = block_forward(block, &x, cfg)?;
        x = next;
        blocks.push(cache);
    }
    Ok((x, BandCache { tokens: tokens.clone(), blocks }))
}

pub(crate) fn band_backward(
    bp: &BandParams,
    cache: &BandCache,
    d_feat: &Array2<f64>,
    cfg: &FredformerConfig,
    g: &mut BandParams,
) {
    let mut d = d_feat.clone();
    for i in (0..bp.blocks.len()).rev() {
        d = block_backward(&bp.blocks[i], &cache.blocks[i], &d, cfg, &mut g.blocks[i]);
    }
    g.embed_b += &d.sum_axis(Axis(0));
    g.embed_w += &cache.tokens.t().dot(&d);
}

/// One band's channel tokens: real slice then imaginary slice, width 2S.
pub(crate) fn band_tokens(bands: &BandSet, n: usize) -> Array2<f64> {
    let c = bands.channels();
    let s = bands.band_width();
    let mut tokens = Array2::zeros((c, 2 * s));
    tokens.slice_mut(s![.., ..s]).assign(&bands.real[n]);
    tokens.slice_mut(s![.., s..]).assign(&bands.imag[n]);
    tokens
}

/// Encode one band of channel tokens to `C x M` features.
pub fn channel_attention(
    tokens: &Array2<f64>,
    band: &BandParams,
    cfg: &FredformerConfig,
) -> Result<Array2<f64>, ModelError> {
    let (out, _) = band_forward(band, tokens, cfg)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { stage: "channel_attention" });
    }
    Ok(out)
}

/// Attention matrices (one per block and head) produced while encoding
/// `tokens`; rows are the per-channel mixing weights.
pub fn attention_maps(
    tokens: &Array2<f64>,
    band: &BandParams,
    cfg: &FredformerConfig,
) -> Result<Vec<Array2<f64>>, ModelError> {
    let (_, cache) = band_forward(band, tokens, cfg)?;
    let mut maps = Vec::new();
    for block in &cache.blocks {
        if let Some(attn) = &block.attn {
            for head in &attn.heads {
                maps.push(head.matrix().clone());
            }
        }
    }
    Ok(maps)
}

/// Encode every band independently into an `(N, C, M)` feature tensor.
pub fn encode_bands(
    bands: &BandSet,
    params: &ModelParams,
    cfg: &FredformerConfig,
) -> Result<Array3<f64>, ModelError> {
    let n = bands.num_bands();
    let c = bands.channels();
    let mut features = Array3::zeros((n, c, cfg.embed_dim));
    for i in 0..n {
        let tokens = band_tokens(bands, i);
        let (out, _) = band_forward(params.band(i), &tokens, cfg)?;
        features.slice_mut(s![i, .., ..]).assign(&out);
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { stage: "encode_bands" });
    }
    Ok(features)
}
