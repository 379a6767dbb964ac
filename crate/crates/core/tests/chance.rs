use gpmpc_core::chance::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn quantile_matches_reference_values() {
    // scipy.special.ndtri
    let table = [
        (1e-6, -4.753424308822899),
        (0.001, -3.090232306167813),
        (0.05, -1.6448536269514729),
        (0.5, 0.0),
        (0.8, 0.8416212335729143),
        (0.95, 1.6448536269514722),
        (0.99, 2.3263478740408408),
        (0.999999, 4.753424308817087),
    ];
    for (p, z) in table {
        assert!((normal_quantile(p).unwrap() - z).abs() < 1e-9, "p = {p}");
    }
    assert!(normal_quantile(0.0).is_err());
    assert!(normal_quantile(1.0).is_err());
    assert!(normal_quantile(f64::NAN).is_err());
}

#[test]
fn tightening_trivial_cases() {
    let a = DVector::from_row_slice(&[0.6, 0.8]);
    assert_eq!(tighten_halfspace(&a, 2.0, &DMatrix::zeros(2, 2), 0.95).unwrap(), 2.0);
    assert_eq!(tighten_halfspace(&a, 2.0, &DMatrix::identity(2, 2), 0.5).unwrap(), 2.0);
    let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    assert!(tighten_halfspace(&DVector::from_row_slice(&[0.0, 1.0]), 1.0, &s, 0.9).is_err());
}

#[test]
fn tightened_boundary_violation_rate_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 200_000;
    for p_x in [0.8, 0.95, 0.99] {
        let sigma = 0.7;
        let b = 1.0;
        let mu = tighten_halfspace(&DVector::from_element(1, 1.0), b, &DMatrix::from_element(1, 1, sigma * sigma), p_x).unwrap();
        let d = Normal::new(mu, sigma).unwrap();
        let viol = (0..n).filter(|_| d.sample(&mut rng) > b).count() as f64 / n as f64;
        let se = (p_x * (1.0 - p_x) / n as f64).sqrt();
        assert!(viol <= 1.0 - p_x + 3.0 * se, "p_x {p_x}: {viol}");
    }
}

proptest! {
    #[test]
    fn quantile_is_odd_and_monotone(p in 0.001f64..0.999) {
        let z = normal_quantile(p).unwrap();
        prop_assert!((z + normal_quantile(1.0 - p).unwrap()).abs() < 1e-9);
        prop_assert!(normal_quantile((p + 0.0005).min(0.9995)).unwrap() >= z);
    }

    #[test]
    fn scalar_offset_is_quantile_times_sigma(s in 0.0f64..4.0, p in 0.5f64..0.999) {
        let off = tightening_offset(&DVector::from_element(1, 1.0), &DMatrix::from_element(1, 1, s * s), p).unwrap();
        prop_assert!((off - normal_quantile(p).unwrap() * s).abs() < 1e-12 * (1.0 + s));
    }
}
