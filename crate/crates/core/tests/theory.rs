use declip_core::theory_lab::{self, L1Spec};
use proptest::prelude::*;

const EPS: [f64; 3] = [0.05, 0.1, 0.2];

#[test]
fn circle_in_r10_has_dimension_near_one() {
    let pts = theory_lab::sphere_points(1, 10, 1000, 1).unwrap();
    let d = theory_lab::box_dim_estimate(pts.view(), &EPS).unwrap();
    assert!((0.8..=1.2).contains(&d), "{d}");
}

#[test]
fn three_sphere_has_dimension_near_three() {
    let pts = theory_lab::sphere_points(3, 4, 20_000, 2).unwrap();
    let d = theory_lab::box_dim_estimate(pts.view(), &[0.2, 0.3, 0.4]).unwrap();
    assert!((2.4..=3.6).contains(&d), "{d}");
}

#[test]
fn l1_with_one_measurement_matches_gaussian_tail() {
    // With k = 1 each operator yields a single |a.u|, so operators are the independent draws.
    let spec = L1Spec { cone_dim: 1, ambient_n: 10, operators: 5000, samples_per_operator: 1, seed: 3 };
    let row = &theory_lab::l1_concentration(&spec, &[1]).unwrap()[0];
    let p = 0.3173;
    let sd = (p * (1.0 - p) / spec.operators as f64).sqrt();
    assert!((row.violation_rate - p).abs() <= 3.0 * sd, "{}", row.violation_rate);
}

#[test]
fn l1_mean_tracks_expected_value() {
    let spec = L1Spec { cone_dim: 2, ambient_n: 20, operators: 50, samples_per_operator: 50, seed: 4 };
    for row in theory_lab::l1_concentration(&spec, &[50, 200]).unwrap() {
        assert!((row.expected_mean - (2.0 * row.m as f64 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!((row.mean_l1 / row.expected_mean - 1.0).abs() < 0.02, "{row:?}");
    }
}

#[test]
fn saturation_within_three_binomial_sd() {
    for (norm, mu) in [(1.0, 1.0), (2.0, 1.0), (0.5, 1.0), (1.0, 0.3)] {
        let (m, trials) = (500, 40);
        let s = theory_lab::saturation_fraction(norm, mu, m, trials, 5).unwrap();
        let sd = (s.analytic * (1.0 - s.analytic) / (m * trials) as f64).sqrt();
        assert!((s.empirical - s.analytic).abs() <= 3.0 * sd, "{norm} {mu}: {s:?}");
    }
}

proptest! {
    #[test]
    fn radius_bound_grows_with_m(k in 1usize..10, m in 1usize..500, mu in 0.01f64..10.0) {
        if let Ok(r) = theory_lab::radius_bound(k, m, mu) {
            let next = theory_lab::radius_bound(k, m + 1, mu).unwrap();
            prop_assert!(next > r);
            prop_assert!(r < mu / 2.0);
        } else {
            prop_assert!(m <= 2 * (k + 1));
        }
    }

    #[test]
    fn radius_bound_scales_with_mu(k in 1usize..10, m in 25usize..500, mu in 0.01f64..10.0, c in 0.1f64..10.0) {
        let r = theory_lab::radius_bound(k, m, mu).unwrap();
        let rc = theory_lab::radius_bound(k, m, c * mu).unwrap();
        prop_assert!((rc - c * r).abs() <= 1e-12 * rc.abs().max(1.0));
    }
}
