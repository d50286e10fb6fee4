use closure_uq::mlp::{
    forward, loss_and_grad, mc_dropout_predict, pre_activations, predict_batch, DropoutMask, MaskSource, MlpParams,
    N_PARAMS,
};
use closure_uq::rng::seeded;
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{Continuous, Normal};

fn random_batch(seed: u64, n: usize) -> (Vec<[f64; 2]>, Vec<[f64; 3]>) {
    let mut rng = seeded(seed);
    let xs = (0..n).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
    let ys = (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    (xs, ys)
}

fn activation_pattern(p: &MlpParams, xs: &[[f64; 2]]) -> Vec<bool> {
    xs.iter()
        .flat_map(|x| pre_activations(p, *x).into_iter().flatten().map(|z| z > 0.0).collect::<Vec<_>>())
        .collect()
}

fn loss(p: &MlpParams, xs: &[[f64; 2]], ys: &[[f64; 3]], lambda: f64) -> f64 {
    loss_and_grad(p, xs, ys, lambda, MaskSource::None).0
}

#[test]
fn gradient_matches_central_differences() {
    let h = 1e-5;
    let lambda = 1e-3;
    let mut checked = 0;
    let mut seed = 0;
    // A configuration whose +-h perturbations flip a ReLU is not differentiable
    // there; it is skipped and another one drawn.
    while checked < 20 {
        seed += 1;
        assert!(seed < 200, "too many non-smooth configurations");
        let p = MlpParams::init_he(1000 + seed);
        let (xs, ys) = random_batch(seed, 8);
        let base = activation_pattern(&p, &xs);
        let (_, g) = loss_and_grad(&p, &xs, &ys, lambda, MaskSource::None);
        let mut smooth = true;
        let mut fd = vec![0.0; N_PARAMS];
        for k in 0..N_PARAMS {
            let mut plus = p.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = p.clone();
            minus.as_mut_slice()[k] -= h;
            if activation_pattern(&plus, &xs) != base || activation_pattern(&minus, &xs) != base {
                smooth = false;
                break;
            }
            fd[k] = (loss(&plus, &xs, &ys, lambda) - loss(&minus, &xs, &ys, lambda)) / (2.0 * h);
        }
        if !smooth {
            continue;
        }
        for k in 0..N_PARAMS {
            let a = g.as_slice()[k];
            let scale = a.abs().max(fd[k].abs()).max(1e-5);
            assert!((a - fd[k]).abs() / scale < 1e-4, "config {seed}, coord {k}: analytic {a}, fd {}", fd[k]);
        }
        checked += 1;
    }
}

#[test]
fn dropout_gradient_matches_differences_under_fixed_masks() {
    let h = 1e-5;
    let p = MlpParams::init_he(55);
    let (xs, ys) = random_batch(55, 6);
    let mask = DropoutMask::sample(0.3, &mut seeded(8));
    let l = |q: &MlpParams| loss_and_grad(q, &xs, &ys, 0.0, MaskSource::Shared(&mask)).0;
    let (_, g) = loss_and_grad(&p, &xs, &ys, 0.0, MaskSource::Shared(&mask));
    let base = activation_pattern(&p, &xs);
    for k in (0..N_PARAMS).step_by(7) {
        let mut plus = p.clone();
        plus.as_mut_slice()[k] += h;
        let mut minus = p.clone();
        minus.as_mut_slice()[k] -= h;
        if activation_pattern(&plus, &xs) != base || activation_pattern(&minus, &xs) != base {
            continue;
        }
        let fd = (l(&plus) - l(&minus)) / (2.0 * h);
        let a = g.as_slice()[k];
        assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-5) < 1e-4, "coord {k}: {a} vs {fd}");
    }
}

/// Log posterior under a unit-variance Gaussian likelihood and an isotropic
/// Gaussian prior of variance 1/lambda, evaluated with an independent density.
fn log_posterior(p: &MlpParams, xs: &[[f64; 2]], ys: &[[f64; 3]], lambda: f64) -> f64 {
    let prior = Normal::new(0.0, (1.0 / lambda).sqrt()).unwrap();
    let mut lp: f64 = p.as_slice().iter().map(|t| prior.ln_pdf(*t)).sum();
    for (x, y) in xs.iter().zip(ys) {
        let f = forward(p, *x, None).unwrap();
        for o in 0..3 {
            lp += Normal::new(f[o], 1.0).unwrap().ln_pdf(y[o]);
        }
    }
    lp
}

#[test]
fn l2_loss_is_negative_twice_log_posterior_up_to_a_constant() {
    let lambda = 0.05;
    let (xs, ys) = random_batch(3, 16);
    let params: Vec<MlpParams> = (0..6).map(|s| MlpParams::init_he(300 + s)).collect();
    for a in &params {
        for b in &params {
            let dl = loss(a, &xs, &ys, lambda) - loss(b, &xs, &ys, lambda);
            let dp = log_posterior(a, &xs, &ys, lambda) - log_posterior(b, &xs, &ys, lambda);
            assert!((dl + 2.0 * dp).abs() < 1e-9, "{dl} vs {}", -2.0 * dp);
        }
    }
}

#[test]
fn mc_dropout_without_dropping_repeats_the_deterministic_forward() {
    let p = MlpParams::init_he(1);
    let (xs, _) = random_batch(1, 20);
    let det = predict_batch(&p, &xs, None).unwrap();
    let samples = mc_dropout_predict(&p, &xs, 5, 0.0, 3).unwrap();
    assert!(samples.iter().all(|s| *s == det));
}

#[test]
fn mc_dropout_is_seeded() {
    let p = MlpParams::init_he(1);
    let (xs, _) = random_batch(2, 20);
    let a = mc_dropout_predict(&p, &xs, 10, 0.2, 3).unwrap();
    let b = mc_dropout_predict(&p, &xs, 10, 0.2, 3).unwrap();
    let c = mc_dropout_predict(&p, &xs, 10, 0.2, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

proptest! {
    #[test]
    fn sampled_masks_are_binary(p in 0.0f64..0.99, seed in any::<u64>()) {
        let m = DropoutMask::sample(p, &mut seeded(seed));
        for (layer, width) in m.hidden.iter().zip([20, 20, 20]) {
            prop_assert_eq!(layer.len(), width);
            prop_assert!(layer.iter().all(|v| *v == 0.0 || *v == 1.0));
        }
    }

    #[test]
    fn batched_loss_is_additive(seed in 0u64..1000, split in 1usize..15) {
        let p = MlpParams::init_he(seed);
        let (xs, ys) = random_batch(seed, 16);
        let whole = loss(&p, &xs, &ys, 0.0);
        let parts = loss(&p, &xs[..split], &ys[..split], 0.0) + loss(&p, &xs[split..], &ys[split..], 0.0);
        prop_assert!((whole - parts).abs() <= 1e-12 * whole.max(1.0));
    }
}
