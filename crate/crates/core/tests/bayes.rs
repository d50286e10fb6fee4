use closure_uq::bayes::svi::{kl_gamma, kl_gaussian, kl_total, kl_total_grad, LinearModel};
use closure_uq::bayes::*;
use closure_uq::mlp::{MlpParams, TrainLog};
use closure_uq::rng::seeded;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn two_pass(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let s = samples.len() as f64;
    let width = samples[0].len();
    let mean: Vec<f64> = (0..width).map(|j| samples.iter().map(|v| v[j]).sum::<f64>() / s).collect();
    let var = (0..width)
        .map(|j| samples.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / (s - 1.0))
        .collect();
    (mean, var)
}

#[test]
fn streaming_moments_match_two_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(n_samples, width) in &[(2, 3), (17, 30), (400, 12)] {
        let samples: Vec<Vec<f64>> = (0..n_samples)
            .map(|_| (0..width).map(|_| rng.random_range(-5.0..5.0) + 100.0).collect())
            .collect();
        let p = PredictiveDistribution::from_samples(samples.iter().map(|v| v.as_slice()), 3, false).unwrap();
        let (mean, var) = two_pass(&samples);
        for j in 0..width {
            assert!((p.mean()[j] - mean[j]).abs() < 1e-12);
            assert!((p.var()[j] - var[j]).abs() < 1e-12 * var[j].max(1.0));
        }
    }
}

#[test]
fn one_sample_is_rejected() {
    let one = [vec![1.0, 2.0, 3.0]];
    assert!(PredictiveDistribution::from_samples(one.iter().map(|v| v.as_slice()), 3, false).is_err());
}

#[test]
fn ensemble_prediction_ignores_member_order() {
    let members: Vec<MlpParams> = (0..6).map(MlpParams::init_he).collect();
    let xs: Vec<[f64; 2]> = (0..50).map(|i| [(i as f64 * 0.13).sin(), (i as f64 * 0.29).cos()]).collect();
    let model = |ms: Vec<MlpParams>| EnsembleModel {
        logs: vec![TrainLog::default(); ms.len()],
        seeds: (0..ms.len() as u64).collect(),
        members: ms,
    };
    let a = ensemble_predict(&model(members.clone()), &xs, false).unwrap();
    let mut reversed = members.clone();
    reversed.reverse();
    reversed.swap(1, 4);
    let b = ensemble_predict(&model(reversed), &xs, false).unwrap();
    for j in 0..a.mean().len() {
        assert!((a.mean()[j] - b.mean()[j]).abs() < 1e-12);
        assert!((a.var()[j] - b.var()[j]).abs() < 1e-12);
    }
}

fn random_posterior(rng: &mut ChaCha8Rng, d: usize, kind: ScaleKind) -> SviPosterior {
    let mu = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut post = SviPosterior::new(mu, 1.0, kind, rng.random_range(0.5..50.0), rng.random_range(0.5..50.0));
    post.log_scale.iter_mut().for_each(|v| *v = rng.random_range(-3.0..1.0));
    post.unit_lower.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    post
}

#[test]
fn kl_is_non_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let prior = SviPrior {
        weight_var: 2.0,
        noise_shape: 2.0,
        noise_rate: 3.0,
    };
    for k in 0..1000 {
        let kind = if k % 2 == 0 { ScaleKind::Full } else { ScaleKind::Diagonal };
        let post = random_posterior(&mut rng, 1 + k % 6, kind);
        assert!(kl_total(&post, &prior) >= 0.0);
        assert!(kl_gaussian(&post, prior.weight_var) >= 0.0);
    }
}

#[test]
fn gaussian_kl_matches_dense_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let post = random_posterior(&mut rng, 4, ScaleKind::Full);
    let s2 = 3.0;
    let l = post.scale_tril();
    let lm = DMatrix::from_fn(4, 4, |i, j| l[(i, j)]);
    let cov = &lm * lm.transpose();
    let mu = DVector::from_column_slice(&post.mu);
    let oracle = 0.5 * (cov.trace() / s2 + mu.dot(&mu) / s2 - 4.0 + 4.0 * s2.ln() - cov.determinant().ln());
    assert!((kl_gaussian(&post, s2) - oracle).abs() < 1e-10);
    // Gamma KL by quadrature of q ln(q/p).
    let (a, b, a0, b0) = (3.0, 2.0, 1.5, 0.5);
    let ln_pdf = |t: f64, a: f64, b: f64| a * f64::ln(b) - statrs::function::gamma::ln_gamma(a) + (a - 1.0) * t.ln() - b * t;
    let h = 1e-4;
    let quad: f64 = (1..200_000)
        .map(|i| {
            let t = i as f64 * h;
            let lq = ln_pdf(t, a, b);
            lq.exp() * (lq - ln_pdf(t, a0, b0)) * h
        })
        .sum();
    assert!((kl_gamma(a, b, a0, b0) - quad).abs() < 1e-6);
}

#[test]
fn kl_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let prior = SviPrior {
        weight_var: 1.5,
        noise_shape: 2.0,
        noise_rate: 0.7,
    };
    for kind in [ScaleKind::Full, ScaleKind::Diagonal] {
        let post = random_posterior(&mut rng, 5, kind);
        let g = kl_total_grad(&post, &prior);
        let u0 = post.to_unconstrained();
        let h = 1e-6;
        for k in 0..u0.len() {
            let at = |e: f64| {
                let mut u = u0.clone();
                u[k] += e;
                let mut q = post.clone();
                q.set_unconstrained(&u);
                kl_total(&q, &prior)
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            assert!((g[k] - fd).abs() <= 1e-4 * fd.abs().max(1.0), "{kind:?} coordinate {k}: {} vs {fd}", g[k]);
        }
    }
}

fn linear_data(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = x
        .chunks(2)
        .map(|p| 1.0 + 2.0 * p[0] - p[1] + 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    (x, y)
}

#[test]
fn elbo_gradient_matches_differences() {
    let model = LinearModel { n_inputs: 2 };
    let (x, y) = linear_data(30, 3);
    let prior = SviPrior {
        weight_var: 4.0,
        noise_shape: 2.0,
        noise_rate: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for kind in [ScaleKind::Full, ScaleKind::Diagonal] {
        let post = random_posterior(&mut rng, 3, kind);
        let eval = |q: &SviPosterior| elbo_and_grad(&model, q, &x[..20], &y[..10], 30, &prior, 3, &mut seeded(5)).unwrap();
        let g = eval(&post).grad;
        let u0 = post.to_unconstrained();
        let h = 1e-6;
        for k in 0..u0.len() {
            let at = |e: f64| {
                let mut u = u0.clone();
                u[k] += e;
                let mut q = post.clone();
                q.set_unconstrained(&u);
                eval(&q).elbo
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            assert!((g[k] - fd).abs() <= 1e-4 * fd.abs().max(1.0), "{kind:?} coordinate {k}: {} vs {fd}", g[k]);
        }
    }
}

#[test]
fn linear_posterior_centres_on_least_squares() {
    let model = LinearModel { n_inputs: 2 };
    let (x, y) = linear_data(200, 4);
    let design = DMatrix::from_fn(200, 3, |i, j| if j == 0 { 1.0 } else { x[2 * i + j - 1] });
    let yv = DVector::from_column_slice(&y);
    let gram_inv = (design.transpose() * &design).try_inverse().unwrap();
    let beta = &gram_inv * design.transpose() * &yv;
    let resid = &yv - &design * &beta;
    let s2 = resid.dot(&resid) / 197.0;
    let cfg = SviConfig {
        batch_size: 200,
        lr: 5e-3,
        max_epochs: 3000,
        init_scale: 1e-2,
        val_every: 100,
        seed: 1,
        ..Default::default()
    };
    let (post, _) = train_svi(&model, vec![0.0; 3], (&x, &y), (&x, &y), &cfg).unwrap();
    for j in 0..3 {
        let se = (s2 * gram_inv[(j, j)]).sqrt();
        assert!((post.mu[j] - beta[j]).abs() < 2.0 * se, "coefficient {j}: {} vs {} (se {se})", post.mu[j], beta[j]);
    }
    let noise = post.noise_variance();
    assert!(noise > 0.5 * s2 && noise < 2.0 * s2, "noise {noise} vs {s2}");
}

#[test]
fn dropout_moments_stabilize_with_samples() {
    let params = MlpParams::init_he(3);
    let xs: Vec<[f64; 2]> = (0..40).map(|i| [(i as f64 * 0.21).sin(), (i as f64 * 0.17).cos()]).collect();
    let small = mcd_predictive(&params, &xs, 100, 0.1, 11, false).unwrap();
    let large = mcd_predictive(&params, &xs, 1000, 0.1, 12, false).unwrap();
    let mut within = 0;
    let mut checked = 0;
    for j in 0..small.mean().len() {
        let v = large.var()[j];
        if v == 0.0 {
            assert_eq!(small.var()[j], 0.0);
            continue;
        }
        let se = (v / 100.0 + v / 1000.0).sqrt();
        checked += 1;
        if (small.mean()[j] - large.mean()[j]).abs() <= 3.0 * se {
            within += 1;
        }
    }
    assert!(checked > 0);
    assert!(within as f64 >= 0.95 * checked as f64, "{within} of {checked}");
}

proptest! {
    #[test]
    fn kl_vanishes_only_at_the_prior(s2 in 0.1f64..10.0, shift in -1.0f64..1.0) {
        let prior = SviPrior { weight_var: s2, noise_shape: 3.0, noise_rate: 2.0 };
        let at_prior = SviPosterior::from_prior(4, &prior, ScaleKind::Full);
        prop_assert!(kl_total(&at_prior, &prior).abs() < 1e-12);
        let mut moved = at_prior.clone();
        moved.mu[2] += shift;
        prop_assume!(shift.abs() > 1e-3);
        prop_assert!(kl_total(&moved, &prior) > 0.0);
    }
}
