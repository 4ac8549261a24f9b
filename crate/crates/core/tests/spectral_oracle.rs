//! Cross-checks the transforms against direct evaluation of their defining
//! sums. The oracle here shares no code with the library: angles are computed
//! per term, scaling written out literally.

use fredformer::spectral::{dft, idft, spectral_energy, spectrum_of_values};
use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Literal forward sum: a_k = (1/L) sum_l x_l exp(-i 2 pi k l / L).
fn dft_by_definition(x: &[f64]) -> Vec<Complex64> {
    let len = x.len() as f64;
    (0..x.len() / 2)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (l, &v) in x.iter().enumerate() {
                let angle = -2.0 * std::f64::consts::PI * (k * l) as f64 / len;
                acc += Complex64::new(angle.cos(), angle.sin()) * v;
            }
            acc / len
        })
        .collect()
}

/// Literal inverse: complete the spectrum by conjugate symmetry (Nyquist
/// zero) and evaluate the full complex sum, returning real parts.
fn idft_by_definition(bins: &[Complex64], len: usize) -> (Vec<f64>, f64) {
    let mut full = vec![Complex64::new(0.0, 0.0); len];
    full[0] = bins[0];
    for (k, a) in bins.iter().enumerate().skip(1) {
        full[k] = *a;
        full[len - k] = a.conj();
    }
    // Imaginary DC cannot survive symmetric completion of a real signal.
    full[0] = Complex64::new(bins[0].re, 0.0);
    let mut out = Vec::with_capacity(len);
    let mut max_imag: f64 = 0.0;
    for l in 0..len {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, a) in full.iter().enumerate() {
            let angle = 2.0 * std::f64::consts::PI * (k * l) as f64 / len as f64;
            acc += a * Complex64::new(angle.cos(), angle.sin());
        }
        max_imag = max_imag.max(acc.im.abs());
        out.push(acc.re);
    }
    (out, max_imag)
}

fn random_series(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-4.0..4.0)).collect()
}

/// Random band-limited signal: inverse of a random half spectrum.
fn random_band_limited(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let bins: Vec<Complex64> = (0..len / 2)
        .map(|k| {
            let im = if k == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) };
            Complex64::new(rng.gen_range(-1.0..1.0), im)
        })
        .collect();
    idft(&bins, len).unwrap()
}

#[test]
fn forward_matches_definition_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &len in &[8usize, 17, 96, 250] {
        let x = random_series(&mut rng, len);
        let got = dft(&x).unwrap();
        let want = dft_by_definition(&x);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).norm() < 1e-10, "len {len}");
        }
    }
}

#[test]
fn inverse_matches_definition_sum_and_is_real() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for &len in &[8usize, 96, 128] {
        let bins: Vec<Complex64> = (0..len / 2)
            .map(|k| {
                let im = if k == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) };
                Complex64::new(rng.gen_range(-1.0..1.0), im)
            })
            .collect();
        let got = idft(&bins, len).unwrap();
        let (want, max_imag) = idft_by_definition(&bins, len);
        assert!(max_imag < 1e-9, "symmetric completion must be real");
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-9, "len {len}");
        }
    }
}

#[test]
fn roundtrip_is_identity_for_band_limited_signals() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for &len in &[16usize, 96, 720] {
        for _ in 0..5 {
            let x = random_band_limited(&mut rng, len);
            let back = idft(&dft(&x).unwrap(), len).unwrap();
            for (a, b) in x.iter().zip(back.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn parseval_holds_for_band_limited_signals() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random_band_limited(&mut rng, 96);
    let time_energy = spectral_energy(&x);
    let spec = dft(&x).unwrap();
    let mut freq_energy = spec[0].norm_sqr();
    for a in &spec[1..] {
        freq_energy += 2.0 * a.norm_sqr();
    }
    freq_energy *= 96.0;
    assert!((time_energy - freq_energy).abs() / time_energy < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_roundtrip_band_limited(seed in 0u64..1_000_000, len in prop::sample::select(vec![8usize, 16, 30, 96])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_band_limited(&mut rng, len);
        let back = idft(&dft(&x).unwrap(), len).unwrap();
        for (a, b) in x.iter().zip(back.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn prop_forward_linearity(seed in 0u64..1_000_000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_series(&mut rng, 64);
        let y = random_series(&mut rng, 64);
        let mixed: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| alpha * a + beta * b).collect();
        let sx = dft(&x).unwrap();
        let sy = dft(&y).unwrap();
        let sm = dft(&mixed).unwrap();
        for k in 0..sm.len() {
            let want = sx[k] * alpha + sy[k] * beta;
            prop_assert!((sm[k] - want).norm() < 1e-9);
        }
    }

    #[test]
    fn prop_parseval_full_symmetric(seed in 0u64..1_000_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_band_limited(&mut rng, 96);
        let spec = dft(&x).unwrap();
        let mut freq = spec[0].norm_sqr();
        for a in &spec[1..] {
            freq += 2.0 * a.norm_sqr();
        }
        let time = spectral_energy(&x);
        prop_assert!((time - 96.0 * freq).abs() <= 1e-9 * time.max(1.0));
    }

    #[test]
    fn prop_multichannel_matches_per_row(seed in 0u64..1_000_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = 3usize;
        let len = 32usize;
        let mut values = Array2::zeros((rows, len));
        for c in 0..rows {
            for (l, v) in random_series(&mut rng, len).into_iter().enumerate() {
                values[[c, l]] = v;
            }
        }
        let spec = spectrum_of_values(&values.view()).unwrap();
        for c in 0..rows {
            let row: Vec<f64> = values.row(c).to_vec();
            let want = dft(&row).unwrap();
            for (k, w) in want.iter().enumerate() {
                prop_assert!((spec.at(c, k) - w).norm() < 1e-12);
            }
        }
    }
}
