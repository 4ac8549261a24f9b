//! Dense SVD and Moore-Penrose pseudo-inverse for the small square matrices
//! the landmark attention path needs. One-sided Jacobi keeps this exact and
//! dependency-free; matrices here are at most landmarks x landmarks.

use ndarray::{Array1, Array2};

/// Singular values below `PINV_TRUNCATION * sigma_max` are treated as zero.
pub const PINV_TRUNCATION: f64 = 1e-6;

const JACOBI_EPS: f64 = 1e-13;
const MAX_SWEEPS: usize = 60;

/// Thin SVD `A = U diag(s) V^T` via one-sided Jacobi column rotations.
/// Singular values come back sorted descending.
pub fn svd(a: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let (rows, cols) = a.dim();
    let mut u = a.clone();
    let mut v = Array2::eye(cols);
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for i in 0..cols {
            for j in (i + 1)..cols {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for r in 0..rows {
                    let ai = u[[r, i]];
                    let aj = u[[r, j]];
                    alpha += ai * ai;
                    beta += aj * aj;
                    gamma += ai * aj;
                }
                if gamma.abs() <= JACOBI_EPS * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt().max(f64::MIN_POSITIVE));
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..rows {
                    let ai = u[[r, i]];
                    let aj = u[[r, j]];
                    u[[r, i]] = c * ai - s * aj;
                    u[[r, j]] = s * ai + c * aj;
                }
                for r in 0..cols {
                    let vi = v[[r, i]];
                    let vj = v[[r, j]];
                    v[[r, i]] = c * vi - s * vj;
                    v[[r, j]] = s * vi + c * vj;
                }
            }
        }
        if off <= JACOBI_EPS {
            break;
        }
    }
    let mut sigma: Vec<f64> = (0..cols)
        .map(|j| (0..rows).map(|r| u[[r, j]] * u[[r, j]]).sum::<f64>().sqrt())
        .collect();
    // Normalize columns; zero columns get an arbitrary (unused) direction.
    for j in 0..cols {
        if sigma[j] > 0.0 {
            for r in 0..rows {
                u[[r, j]] /= sigma[j];
            }
        }
    }
    // Sort descending, permuting U and V columns alongside.
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&x, &y| sigma[y].partial_cmp(&sigma[x]).unwrap());
    let mut us = Array2::zeros((rows, cols));
    let mut vs = Array2::zeros((cols, cols));
    let mut ss = Array1::zeros(cols);
    for (new, &old) in order.iter().enumerate() {
        ss[new] = sigma[old];
        for r in 0..rows {
            us[[r, new]] = u[[r, old]];
        }
        for r in 0..cols {
            vs[[r, new]] = v[[r, old]];
        }
    }
    sigma.clear();
    (us, ss, vs)
}

/// Moore-Penrose pseudo-inverse with relative truncation of small singular
/// values. Exact inverse for well-conditioned square input.
pub fn pinv(a: &Array2<f64>) -> Array2<f64> {
    let (u, s, v) = svd(a);
    let cutoff = PINV_TRUNCATION * s.iter().cloned().fold(0.0f64, f64::max);
    let mut vsi = v; // V * diag(1/s), built in place column by column
    for (j, col) in vsi.columns_mut().into_iter().enumerate() {
        let inv = if s[j] > cutoff && s[j] > 0.0 { 1.0 / s[j] } else { 0.0 };
        for x in col {
            *x *= inv;
        }
    }
    vsi.dot(&u.t())
}

/// Gradient of a scalar loss through `P = pinv(A)`.
///
/// Given `g = dL/dP`, returns `dL/dA` using the full pseudo-inverse
/// differential; the two projection terms vanish when `A` is invertible.
pub fn pinv_vjp(a: &Array2<f64>, p: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
    let (m, n) = a.dim();
    let eye_m = Array2::eye(m);
    let eye_n = Array2::eye(n);
    let t1 = -p.t().dot(g).dot(&p.t());
    let left = &eye_m - &a.dot(p);
    let t2 = left.dot(&g.t()).dot(&p.dot(&p.t()));
    let right = &eye_n - &p.dot(a);
    let t3 = p.t().dot(p).dot(&g.t()).dot(&right);
    t1 + t2 + t3
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_square(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0))
    }

    fn frob(a: &Array2<f64>) -> f64 {
        a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn svd_reconstructs_the_matrix() {
        for seed in 0..5 {
            let a = random_square(8, seed);
            let (u, s, v) = svd(&a);
            let mut us = u.clone();
            for (j, mut col) in us.columns_mut().into_iter().enumerate() {
                for x in col.iter_mut() {
                    *x *= s[j];
                }
            }
            let back = us.dot(&v.t());
            assert!(frob(&(&back - &a)) < 1e-10 * frob(&a).max(1.0), "seed {seed}");
            // Descending order.
            for w in s.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn svd_factors_are_orthogonal() {
        let a = random_square(10, 42);
        let (u, _, v) = svd(&a);
        let utu = u.t().dot(&u);
        let vtv = v.t().dot(&v);
        let eye: Array2<f64> = Array2::eye(10);
        assert!(frob(&(&utu - &eye)) < 1e-9);
        assert!(frob(&(&vtv - &eye)) < 1e-9);
    }

    #[test]
    fn pinv_inverts_well_conditioned_matrices() {
        for seed in 0..5 {
            let a = random_square(6, 100 + seed) + Array2::<f64>::eye(6) * 3.0;
            let p = pinv(&a);
            let eye: Array2<f64> = Array2::eye(6);
            assert!(frob(&(&a.dot(&p) - &eye)) < 1e-9, "seed {seed}");
            assert!(frob(&(&p.dot(&a) - &eye)) < 1e-9, "seed {seed}");
        }
    }

    #[test]
    fn pinv_satisfies_the_penrose_identity_on_singular_input() {
        let mut a = random_square(7, 9);
        // Force rank deficiency: duplicate two columns.
        let col = a.column(0).to_owned();
        a.column_mut(6).assign(&col);
        let p = pinv(&a);
        let apa = a.dot(&p).dot(&a);
        assert!(frob(&(&apa - &a)) < 1e-8);
        let pap = p.dot(&a).dot(&p);
        assert!(frob(&(&pap - &p)) < 1e-8);
    }

    #[test]
    fn pinv_vjp_matches_finite_differences() {
        let n = 5;
        let a = random_square(n, 7) + Array2::<f64>::eye(n) * 2.0;
        // Scalar loss L = sum(W .* pinv(A)) for fixed random W.
        let w = random_square(n, 8);
        let p = pinv(&a);
        let grad = pinv_vjp(&a, &p, &w);
        let eps = 1e-6;
        for i in 0..n {
            for j in 0..n {
                let mut ap = a.clone();
                ap[[i, j]] += eps;
                let mut am = a.clone();
                am[[i, j]] -= eps;
                let lp: f64 = (&w * &pinv(&ap)).sum();
                let lm: f64 = (&w * &pinv(&am)).sum();
                let fd = (lp - lm) / (2.0 * eps);
                let g = grad[[i, j]];
                assert!(
                    (fd - g).abs() < 1e-5 * fd.abs().max(g.abs()).max(1.0),
                    "({i},{j}): fd {fd} vs analytic {g}"
                );
            }
        }
    }
}
