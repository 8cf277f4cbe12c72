use led_cmaes::led::{effectiveness, xi_gain, xi_thresh, LedState, RotatedDirections};
use led_cmaes::stepsize::{led_tpa_points, tpa_points};
use led_cmaes::vecmat::{sym_eigendecompose, EigenPair, Matrix};
use proptest::prelude::*;

fn spd(n: usize, entries: &[f64]) -> Matrix {
    // A Aᵀ + I from the first n² entries.
    let a = Matrix::from_row_slice(n, n, &entries[..n * n]);
    let mut m = a.matmul(&a.transpose());
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    m
}

fn entries(max_n: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..=max_n).prop_flat_map(|n| (Just(n), prop::collection::vec(-3.0..3.0f64, n * n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigendecomposition_reconstructs((n, e) in entries(12)) {
        let m = spd(n, &e);
        let eig = sym_eigendecompose(&m).unwrap();
        let back = eig.compose(&eig.values);
        prop_assert!(back.max_abs_diff(&m) <= 1e-10 * m.max_abs());
        let gram = eig.basis.transpose().matmul(&eig.basis);
        prop_assert!(gram.max_abs_diff(&Matrix::identity(n)) <= 1e-12);
        for w in eig.values.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn effectiveness_is_bounded(
        snr in prop::collection::vec(0.0..1.0f64, 1..40),
        lambda in 4usize..60,
    ) {
        let n = snr.len();
        let max = snr.iter().cloned().fold(0.0, f64::max);
        let (v, n_hat) = effectiveness(&snr, xi_thresh(n, lambda), xi_gain(max));
        prop_assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!(n_hat >= 1.0 && n_hat <= n as f64);
    }

    #[test]
    fn estimator_stays_bounded(
        seq in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 10), 1..200),
    ) {
        let mut st = LedState::new(5, 10);
        for d in &seq {
            st.update(&RotatedDirections {
                delta_m_bar: d[..5].to_vec(),
                delta_c_bar: d[5..].to_vec(),
            });
            prop_assert!(st.v_snr.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
            prop_assert!(st.v.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!(st.n_eff_hat >= 1.0 && st.n_eff_hat <= 5.0);
        }
    }

    #[test]
    fn tpa_pair_is_symmetric(
        (n, e) in entries(8),
        sigma in 0.01..10.0f64,
        seed in prop::collection::vec(-1.0..1.0f64, 24),
    ) {
        let eig = sym_eigendecompose(&spd(n, &e)).unwrap();
        let mean = &seed[..n];
        let dm: Vec<f64> = seed[8..8 + n].iter().map(|x| x + 1.5).collect();
        let noise = &seed[16..16 + n];
        let v: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        for pair in [
            tpa_points(mean, sigma, &eig, &dm, noise),
            led_tpa_points(mean, sigma, &eig, &dm, &v, noise),
        ] {
            let (p, m) = pair.unwrap();
            for i in 0..n {
                prop_assert!((p[i] + m[i] - 2.0 * mean[i]).abs() <= 1e-12 * (1.0 + mean[i].abs() + p[i].abs()));
            }
        }
    }
}

#[test]
fn zero_shift_gives_no_pair() {
    let eig = EigenPair::identity(3);
    assert!(tpa_points(&[0.0; 3], 1.0, &eig, &[0.0; 3], &[1.0; 3]).is_none());
}
