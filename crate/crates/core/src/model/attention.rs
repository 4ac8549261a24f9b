//! Scaled dot-product attention over channel tokens: the exact softmax form
//! and the landmark (segment-mean) approximation, with analytic backward
//! passes for both.

use ndarray::{Array2, Axis};

use super::linalg::{pinv, pinv_vjp};
use super::ModelError;

/// Row-wise softmax with max-shift stabilization.
pub(crate) fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

/// Given `p = softmax_rows(z)` and `dL/dp`, return `dL/dz`.
pub(crate) fn softmax_rows_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let mut dz = Array2::zeros(p.dim());
    for (i, (prow, dprow)) in p.rows().into_iter().zip(dp.rows()).enumerate() {
        let inner: f64 = prow.iter().zip(dprow.iter()).map(|(a, b)| a * b).sum();
        for (j, (&pv, &dv)) in prow.iter().zip(dprow.iter()).enumerate() {
            dz[[i, j]] = pv * (dv - inner);
        }
    }
    dz
}

/// `softmax(Q K^T / sqrt(d)) V` with the weight matrix returned alongside.
pub fn exact_attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let weights = softmax_rows(&(q.dot(&k.t()) * scale));
    (weights.dot(v), weights)
}

/// Contiguous segment sizes splitting `tokens` rows into `m` groups, as even
/// as integer arithmetic allows. Every size is 1 exactly when m = tokens.
pub(crate) fn segment_sizes(tokens: usize, m: usize) -> Vec<usize> {
    let base = tokens / m;
    let rem = tokens % m;
    (0..m).map(|g| base + usize::from(g < rem)).collect()
}

fn segment_means(x: &Array2<f64>, sizes: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((sizes.len(), x.ncols()));
    let mut row = 0usize;
    for (g, &size) in sizes.iter().enumerate() {
        let block = x.slice(ndarray::s![row..row + size, ..]);
        out.row_mut(g).assign(&block.mean_axis(Axis(0)).expect("nonempty segment"));
        row += size;
    }
    out
}

/// Intermediates of one landmark-attention application, kept for backward.
#[derive(Debug, Clone)]
pub(crate) struct NystromCache {
    pub f: Array2<f64>,
    pub a: Array2<f64>,
    /// pinv(a)
    pub p: Array2<f64>,
    pub b: Array2<f64>,
    pub s_hat: Array2<f64>,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) enum AttnCache {
    Exact { weights: Array2<f64> },
    Nystrom(NystromCache),
}

impl AttnCache {
    /// The (possibly approximated) attention matrix rows.
    pub(crate) fn matrix(&self) -> &Array2<f64> {
        match self {
            AttnCache::Exact { weights } => weights,
            AttnCache::Nystrom(n) => &n.s_hat,
        }
    }
}

pub(crate) fn nystrom_forward(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    m: usize,
) -> Result<(Array2<f64>, NystromCache), ModelError> {
    let tokens = q.nrows();
    if m == 0 || m > tokens {
        return Err(ModelError::LandmarksOutOfRange { landmarks: m, tokens });
    }
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let sizes = segment_sizes(tokens, m);
    let q_l = segment_means(q, &sizes);
    let k_l = segment_means(k, &sizes);
    let f = softmax_rows(&(q.dot(&k_l.t()) * scale));
    let a = softmax_rows(&(q_l.dot(&k_l.t()) * scale));
    let b = softmax_rows(&(q_l.dot(&k.t()) * scale));
    let p = pinv(&a);
    let s_hat = f.dot(&p).dot(&b);
    let out = s_hat.dot(v);
    Ok((out, NystromCache { f, a, p, b, s_hat, sizes }))
}

/// Landmark approximation of [`exact_attention`]; exact when `m` equals the
/// token count because every segment mean is then a single row.
pub fn nystrom_attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    m: usize,
) -> Result<Array2<f64>, ModelError> {
    nystrom_forward(q, k, v, m).map(|(out, _)| out)
}

/// Backward through exact attention. Returns `(dq, dk, dv)`.
pub(crate) fn exact_backward(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    weights: &Array2<f64>,
    d_out: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let dv = weights.t().dot(d_out);
    let dw = d_out.dot(&v.t());
    let dlogits = softmax_rows_backward(weights, &dw) * scale;
    let dq = dlogits.dot(k);
    let dk = dlogits.t().dot(q);
    (dq, dk, dv)
}

/// Scatter landmark-mean gradients back onto the member rows.
fn spread_segment_grad(d_landmarks: &Array2<f64>, sizes: &[usize], tokens: usize) -> Array2<f64> {
    let mut out = Array2::zeros((tokens, d_landmarks.ncols()));
    let mut row = 0usize;
    for (g, &size) in sizes.iter().enumerate() {
        let share = 1.0 / size as f64;
        for r in row..row + size {
            for (c, &dv) in d_landmarks.row(g).iter().enumerate() {
                out[[r, c]] = dv * share;
            }
        }
        row += size;
    }
    out
}

/// Backward through the landmark approximation. Returns `(dq, dk, dv)`.
pub(crate) fn nystrom_backward(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    cache: &NystromCache,
    d_out: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let sizes = &cache.sizes;
    let q_l = segment_means(q, sizes);
    let k_l = segment_means(k, sizes);

    let dv = cache.s_hat.t().dot(d_out);
    let ds_hat = d_out.dot(&v.t());
    let pb = cache.p.dot(&cache.b);
    let df = ds_hat.dot(&pb.t());
    let dp = cache.f.t().dot(&ds_hat).dot(&cache.b.t());
    let db = cache.f.dot(&cache.p).t().dot(&ds_hat);
    let da = pinv_vjp(&cache.a, &cache.p, &dp);

    let mut dq = Array2::zeros(q.dim());
    let mut dk = Array2::zeros(k.dim());
    let mut dq_l = Array2::zeros(q_l.dim());
    let mut dk_l = Array2::zeros(k_l.dim());

    let dlog_f = softmax_rows_backward(&cache.f, &df) * scale;
    dq += &dlog_f.dot(&k_l);
    dk_l += &dlog_f.t().dot(q);

    let dlog_a = softmax_rows_backward(&cache.a, &da) * scale;
    dq_l += &dlog_a.dot(&k_l);
    dk_l += &dlog_a.t().dot(&q_l);

    let dlog_b = softmax_rows_backward(&cache.b, &db) * scale;
    dq_l += &dlog_b.dot(k);
    dk += &dlog_b.t().dot(&q_l);

    dq += &spread_segment_grad(&dq_l, sizes, q.nrows());
    dk += &spread_segment_grad(&dk_l, sizes, k.nrows());
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    fn frob(a: &Array2<f64>) -> f64 {
        a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn attention_rows_are_distributions() {
        let (_, w) = exact_attention(&random(6, 4, 1), &random(6, 4, 2), &random(6, 4, 3));
        for row in w.rows() {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn full_landmarks_reproduce_exact_attention() {
        for seed in 0..20 {
            let q = random(32, 16, seed * 3 + 1);
            let k = random(32, 16, seed * 3 + 2);
            let v = random(32, 16, seed * 3 + 3);
            let (exact, _) = exact_attention(&q, &k, &v);
            let approx = nystrom_attention(&q, &k, &v, 32).unwrap();
            let rel = frob(&(&approx - &exact)) / frob(&exact);
            assert!(rel < 1e-5, "seed {seed}: rel {rel}");
        }
    }

    #[test]
    fn identical_queries_need_one_landmark() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let row: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = Array2::from_shape_fn((16, 8), |(_, j)| row[j]);
        let k = random(16, 8, 100);
        let v = random(16, 8, 101);
        let (exact, _) = exact_attention(&q, &k, &v);
        let approx = nystrom_attention(&q, &k, &v, 1).unwrap();
        let rel = frob(&(&approx - &exact)) / frob(&exact);
        assert!(rel < 1e-5, "rel {rel}");
    }

    #[test]
    fn more_landmarks_do_not_hurt_on_average() {
        let mut err = [0.0f64; 2];
        for seed in 0..20 {
            let q = random(64, 8, 1000 + seed);
            let k = random(64, 8, 2000 + seed);
            let v = random(64, 8, 3000 + seed);
            let (exact, _) = exact_attention(&q, &k, &v);
            for (slot, m) in [(0usize, 8usize), (1, 32)] {
                let approx = nystrom_attention(&q, &k, &v, m).unwrap();
                err[slot] += frob(&(&approx - &exact)) / frob(&exact);
            }
        }
        assert!(err[1] <= err[0], "m=32 mean {} vs m=8 mean {}", err[1] / 20.0, err[0] / 20.0);
    }

    #[test]
    fn landmark_count_is_validated() {
        let q = random(4, 2, 5);
        assert!(matches!(
            nystrom_attention(&q, &q, &q, 0),
            Err(ModelError::LandmarksOutOfRange { .. })
        ));
        assert!(matches!(
            nystrom_attention(&q, &q, &q, 5),
            Err(ModelError::LandmarksOutOfRange { .. })
        ));
    }

    #[test]
    fn segment_sizes_cover_all_tokens() {
        for tokens in 1..20 {
            for m in 1..=tokens {
                let sizes = segment_sizes(tokens, m);
                assert_eq!(sizes.len(), m);
                assert_eq!(sizes.iter().sum::<usize>(), tokens);
                assert!(sizes.iter().all(|&s| s >= 1));
            }
        }
    }

    #[test]
    fn exact_backward_matches_finite_differences() {
        let q = random(5, 3, 11);
        let k = random(5, 3, 12);
        let v = random(5, 3, 13);
        let w = random(5, 3, 14); // loss = sum(W .* attn(Q,K,V))
        let (_, weights) = exact_attention(&q, &k, &v);
        let (dq, dk, dv) = exact_backward(&q, &k, &v, &weights, &w);
        let eps = 1e-6;
        let loss = |q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>| -> f64 {
            (&exact_attention(q, k, v).0 * &w).sum()
        };
        for (which, (mat, grad)) in [(0, (&q, &dq)), (1, (&k, &dk)), (2, (&v, &dv))] {
            for i in 0..5 {
                for j in 0..3 {
                    let mut plus = mat.to_owned();
                    plus[[i, j]] += eps;
                    let mut minus = mat.to_owned();
                    minus[[i, j]] -= eps;
                    let (lp, lm) = match which {
                        0 => (loss(&plus, &k, &v), loss(&minus, &k, &v)),
                        1 => (loss(&q, &plus, &v), loss(&q, &minus, &v)),
                        _ => (loss(&q, &k, &plus), loss(&q, &k, &minus)),
                    };
                    let fd = (lp - lm) / (2.0 * eps);
                    let g = grad[[i, j]];
                    assert!(
                        (fd - g).abs() < 1e-6 * fd.abs().max(g.abs()).max(1.0),
                        "arg {which} ({i},{j}): {fd} vs {g}"
                    );
                }
            }
        }
    }

    #[test]
    fn nystrom_backward_matches_finite_differences() {
        let q = random(6, 3, 21);
        let k = random(6, 3, 22);
        let v = random(6, 3, 23);
        let w = random(6, 3, 24);
        let m = 3;
        let (_, cache) = nystrom_forward(&q, &k, &v, m).unwrap();
        let (dq, dk, dv) = nystrom_backward(&q, &k, &v, &cache, &w);
        let eps = 1e-6;
        let loss = |q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>| -> f64 {
            (&nystrom_attention(q, k, v, m).unwrap() * &w).sum()
        };
        for (which, (mat, grad)) in [(0, (&q, &dq)), (1, (&k, &dk)), (2, (&v, &dv))] {
            for i in 0..6 {
                for j in 0..3 {
                    let mut plus = mat.to_owned();
                    plus[[i, j]] += eps;
                    let mut minus = mat.to_owned();
                    minus[[i, j]] -= eps;
                    let (lp, lm) = match which {
                        0 => (loss(&plus, &k, &v), loss(&minus, &k, &v)),
                        1 => (loss(&q, &plus, &v), loss(&q, &minus, &v)),
                        _ => (loss(&q, &k, &plus), loss(&q, &k, &minus)),
                    };
                    let fd = (lp - lm) / (2.0 * eps);
                    let g = grad[[i, j]];
                    assert!(
                        (fd - g).abs() < 1e-5 * fd.abs().max(g.abs()).max(1.0),
                        "arg {which} ({i},{j}): {fd} vs {g}"
                    );
                }
            }
        }
    }
}
