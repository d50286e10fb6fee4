use closure_uq::metrics::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{Continuous, Normal as StatNormal};

/// Truth drawn from the per-point Gaussians the model claims.
fn self_consistent(n: usize, d: usize, seed: u64) -> EvalBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let std: Vec<f64> = (0..n * d).map(|_| rng.random_range(0.05..2.0)).collect();
    let y = mean
        .iter()
        .zip(&std)
        .map(|(m, s)| Normal::new(*m, *s).unwrap().sample(&mut rng))
        .collect();
    EvalBundle::new(y, mean, std, d).unwrap()
}

fn scaled(b: &EvalBundle, k: f64) -> EvalBundle {
    EvalBundle::new(b.y().to_vec(), b.mean().to_vec(), b.std().iter().map(|s| s * k).collect(), b.n_outputs()).unwrap()
}

#[test]
fn honest_uncertainty_is_calibrated() {
    let b = self_consistent(100_000, 1, 1);
    let levels = uniform_levels(99);
    for kind in [IntervalKind::Central, IntervalKind::Quantile] {
        let c = calibration_curve(&b, &levels, kind).unwrap();
        assert!(miscalibration_area(&c) < 0.03);
        for (p, q) in c.expected.iter().zip(&c.observed) {
            // Five binomial standard errors.
            assert!((p - q).abs() < 5.0 * (p * (1.0 - p) / 1e5).sqrt() + 1e-12);
        }
    }
    let over = calibration_curve(&scaled(&b, 0.01), &levels, IntervalKind::Central).unwrap();
    assert!(miscalibration_area(&over) > 0.3);
    let under = calibration_curve(&scaled(&b, 100.0), &levels, IntervalKind::Central).unwrap();
    assert!(miscalibration_area(&under) > 0.3);
}

#[test]
fn nll_matches_density_oracle() {
    let b = self_consistent(500, 3, 2);
    let oracle: f64 = (0..b.y().len())
        .map(|i| -StatNormal::new(b.mean()[i], b.std()[i]).unwrap().ln_pdf(b.y()[i]))
        .sum();
    assert!((negative_log_likelihood(&b) - oracle).abs() < 1e-9 * oracle.abs().max(1.0));
}

#[test]
fn true_moments_beat_perturbed_ones() {
    let b = self_consistent(20_000, 1, 3);
    let base = negative_log_likelihood(&b);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let shift = rng.random_range(0.05..0.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let stretch = rng.random_range(0.6..1.6);
        let mean = b.mean().iter().zip(b.std()).map(|(m, s)| m + shift * s).collect();
        let std = b.std().iter().map(|s| s * stretch).collect();
        let alt = EvalBundle::new(b.y().to_vec(), mean, std, 1).unwrap();
        assert!(negative_log_likelihood(&alt) > base);
    }
}

#[test]
fn report_fields_equal_individual_metrics() {
    let b = self_consistent(1000, 3, 5);
    let levels = uniform_levels(99);
    let spec = ReportSpec {
        method: "SVI",
        split: "D_GE_0",
        subset: Subset::HeldOut,
        calibration: Some(IntervalKind::Central),
        levels: &levels,
    };
    let rows = report(&b, &spec).unwrap();
    assert_eq!(rows.len(), 4);
    let pooled = &rows[0];
    let pm = point_metrics(&b).unwrap();
    let c = calibration_curve(&b, &levels, IntervalKind::Central).unwrap();
    assert_eq!(pooled.mae, pm.mae);
    assert_eq!(pooled.rmse, pm.rmse);
    assert_eq!(pooled.miscal, Some(miscalibration_area(&c)));
    assert_eq!(pooled.ce, Some(calibration_error(&c).unwrap()));
    assert_eq!(pooled.sha, Some(sharpness(&b).unwrap()));
    assert_eq!(pooled.cv, Some(coeff_variation(&b).unwrap()));
    assert_eq!(pooled.nll, Some(negative_log_likelihood(&b)));
    assert_eq!(rows[2].output, "1");
    assert_eq!(rows[2].rmse, point_metrics(&b.output(1)).unwrap().rmse);
}

#[test]
fn tiny_honest_sigma_gives_large_negative_nll() {
    let y = vec![0.5; 30];
    let b = EvalBundle::new(y.clone(), y, vec![1e-6; 30], 3).unwrap();
    let r = &report(
        &b,
        &ReportSpec {
            method: "EGP",
            split: "FULL",
            subset: Subset::All,
            calibration: Some(IntervalKind::Central),
            levels: &uniform_levels(99),
        },
    )
    .unwrap()[0];
    assert_eq!(r.mae, 0.0);
    assert!(r.nll.unwrap() < -300.0);
}

fn arb_bundle() -> impl Strategy<Value = EvalBundle> {
    (1usize..4, 2usize..40).prop_flat_map(|(d, n)| {
        (
            prop::collection::vec(-5.0f64..5.0, n * d),
            prop::collection::vec(-5.0f64..5.0, n * d),
            prop::collection::vec(0.01f64..3.0, n * d),
        )
            .prop_map(move |(y, m, s)| EvalBundle::new(y, m, s, d).unwrap())
    })
}

proptest! {
    #[test]
    fn metric_ranges(b in arb_bundle()) {
        let levels = uniform_levels(99);
        let c = calibration_curve(&b, &levels, IntervalKind::Central).unwrap();
        let mc = miscalibration_area(&c);
        prop_assert!((0.0..=0.5 + 1.0 / 198.0).contains(&mc));
        prop_assert!(calibration_error(&c).unwrap() >= 0.0);
        prop_assert!(point_metrics(&b).unwrap().r2 <= 1.0);
        prop_assert!(c.observed.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn permutation_changes_nothing(b in arb_bundle(), seed in 0u64..1000) {
        let mut idx: Vec<usize> = (0..b.n_points()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let p = b.select(&idx);
        let close = |a: f64, c: f64| (a - c).abs() <= 1e-12 * a.abs().max(1.0);
        let (m1, m2) = (point_metrics(&b).unwrap(), point_metrics(&p).unwrap());
        prop_assert!(close(m1.mae, m2.mae) && close(m1.rmse, m2.rmse) && m1.mdae == m2.mdae && close(m1.r2, m2.r2));
        prop_assert!(close(negative_log_likelihood(&b), negative_log_likelihood(&p)));
        prop_assert!(close(sharpness(&b).unwrap(), sharpness(&p).unwrap()));
        let levels = uniform_levels(19);
        let c1 = calibration_curve(&b, &levels, IntervalKind::Central).unwrap();
        let c2 = calibration_curve(&p, &levels, IntervalKind::Central).unwrap();
        prop_assert_eq!(c1.observed, c2.observed);
    }

    #[test]
    fn pooled_mae_is_count_weighted(b in arb_bundle()) {
        let d = b.n_outputs();
        let per: f64 = (0..d).map(|k| point_metrics(&b.output(k)).unwrap().mae).sum::<f64>() / d as f64;
        prop_assert!((point_metrics(&b).unwrap().mae - per).abs() < 1e-12);
    }
}
