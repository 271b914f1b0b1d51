mod common;

use common::{max_abs_diff, naive_dft, naive_idft, random_signal, rng};
use faedkv::spectral::{self, dft_direct, dft_forward, idft_full, sparse_idft, spectral_energy};
use faedkv::{SparseSpectrum, Spectrum};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

fn max_complex_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

#[test]
fn length_eight_matches_nested_loop() {
    let mut r = rng(8);
    let x = random_signal(&mut r, 8);
    let fast = dft_forward(&x).unwrap();
    assert!(max_complex_diff(fast.bins(), &naive_dft(&x)) < 1e-12);
}

#[test]
fn round_trip_length_sixteen() {
    let mut r = rng(16);
    let x = random_signal(&mut r, 16);
    assert!(max_abs_diff(&idft_full(&dft_forward(&x).unwrap()), &x) < 1e-10);
}

#[test]
fn parseval_length_thirty_two() {
    let mut r = rng(32);
    let x = random_signal(&mut r, 32);
    let e = spectral_energy(&dft_forward(&x).unwrap());
    let t = 32.0 * x.iter().map(|v| v * v).sum::<f64>();
    assert!((e - t).abs() <= 1e-8 * t);
}

#[test]
fn sparse_half_matches_zero_filled_dense() {
    let mut r = rng(5);
    let m = 37;
    let bins: Vec<Complex64> = (0..m)
        .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect();
    let mut kept: Vec<usize> = (0..m).filter(|_| r.random_bool(0.5)).collect();
    kept.dedup();
    let coeffs = kept.iter().map(|&k| bins[k]).collect();
    let sparse = SparseSpectrum::new(m, kept.clone(), coeffs).unwrap();
    let dense: Vec<f64> = {
        let mut z = vec![Complex64::new(0.0, 0.0); m];
        kept.iter().for_each(|&k| z[k] = bins[k]);
        naive_idft(&z).into_iter().map(|c| c.re).collect()
    };
    assert!(max_abs_diff(&sparse_idft(&sparse, m).unwrap(), &dense) < 1e-10);
}

#[test]
fn sparse_with_all_bins_is_dense() {
    let mut r = rng(6);
    let x = random_signal(&mut r, 24);
    let s = dft_forward(&x).unwrap();
    let sparse = s.sparsify(&(0..24).collect::<Vec<_>>()).unwrap();
    assert!(max_abs_diff(&sparse_idft(&sparse, 24).unwrap(), &idft_full(&s)) < 1e-12);
}

#[test]
fn fast_and_direct_agree_on_awkward_lengths() {
    let mut r = rng(7);
    for m in [1, 2, 3, 7, 12, 97, 196, 251, 256, 509] {
        let x = random_signal(&mut r, m);
        let fast = dft_forward(&x).unwrap();
        let direct = dft_direct(&x).unwrap();
        let scale = direct.bins().iter().map(|b| b.norm()).fold(1.0, f64::max);
        assert!(
            max_complex_diff(fast.bins(), direct.bins()) <= 1e-9 * scale,
            "length {m}"
        );
    }
}

fn signal(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_identity(x in signal(512)) {
        let back = idft_full(&dft_forward(&x).unwrap());
        prop_assert!(max_abs_diff(&back, &x) < 1e-10);
    }

    #[test]
    fn linearity(
        pair in (1usize..200).prop_flat_map(|m| (
            prop::collection::vec(-5.0f64..5.0, m),
            prop::collection::vec(-5.0f64..5.0, m),
        )),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let (x, y) = pair;
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = dft_forward(&mix).unwrap();
        let fx = dft_forward(&x).unwrap();
        let fy = dft_forward(&y).unwrap();
        let rhs: Vec<Complex64> = fx.bins().iter().zip(fy.bins()).map(|(p, q)| p * a + q * b).collect();
        prop_assert!(max_complex_diff(lhs.bins(), &rhs) < 1e-9);
    }

    #[test]
    fn parseval(x in signal(300)) {
        let e = spectral_energy(&dft_forward(&x).unwrap());
        let t = x.len() as f64 * x.iter().map(|v| v * v).sum::<f64>();
        prop_assert!((e - t).abs() <= 1e-8 * t.max(1e-300));
    }

    #[test]
    fn real_input_is_conjugate_symmetric(x in signal(128)) {
        prop_assert!(dft_forward(&x).unwrap().is_conjugate_symmetric(1e-9));
    }

    #[test]
    fn sparse_equals_dense_for_any_pattern(
        (x, mask) in (1usize..120).prop_flat_map(|m| (
            prop::collection::vec(-5.0f64..5.0, m),
            prop::collection::vec(any::<bool>(), m),
        )),
    ) {
        let s = dft_forward(&x).unwrap();
        let kept: Vec<usize> = mask.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect();
        let sparse = s.sparsify(&kept).unwrap();
        let dense = idft_full(&sparse.densify());
        prop_assert!(max_abs_diff(&sparse_idft(&sparse, x.len()).unwrap(), &dense) < 1e-10);
    }
}

#[test]
fn spectrum_rejects_empty() {
    assert!(Spectrum::new(vec![]).is_err());
    assert!(spectral::dft_forward(&[]).is_err());
    assert!(spectral::dft_forward(&[1.0, f64::NAN]).is_err());
}
