//! End-to-end acceptance checks. Each test prints one PASS/FAIL line straight
//! to stderr (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use closure_uq::arsm::{self, SsgConstants};
use closure_uq::bayes::svi::{kl_total, kl_total_grad};
use closure_uq::bayes::{ScaleKind, SviPosterior, SviPrior};
use closure_uq::datagen::{sample_log_uniform, SamplingConfig, SplitLabel};
use closure_uq::gp::{exact_predict, kernel_eval, ExactGpModel, KernelHyperparams, KernelKind};
use closure_uq::harness::report::Manifest;
use closure_uq::harness::{self, ExperimentConfig, Method, Run};
use closure_uq::metrics::{
    calibration_curve, miscalibration_area, negative_log_likelihood, read_metrics_csv, uniform_levels, EvalBundle,
    IntervalKind, MetricsReport, Subset,
};
use closure_uq::mlp::{loss_and_grad, pre_activations, MaskSource, MlpParams, N_PARAMS};
use closure_uq::rng::seeded;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn verdict(name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "{tag}: {name} ({detail})");
    assert!(pass, "{name}: {detail}");
}

fn desk_run(dir: &Path) -> Run {
    let cfg = ExperimentConfig::from_value(serde_json::json!({ "output_dir": dir }), None, None).unwrap();
    Run::new(cfg)
}

/// Runs the desk pipeline into a fresh directory under the target tree, kept
/// afterwards for inspection.
fn fresh_run(name: &str) -> Run {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    let run = desk_run(&dir);
    harness::run_all(&run).expect("desk pipeline");
    run
}

/// One desk pipeline shared by every test that reads its outputs.
fn shared() -> &'static Run {
    static CELL: OnceLock<Run> = OnceLock::new();
    CELL.get_or_init(|| fresh_run("acceptance-desk"))
}

fn rows(run: &Run, split: SplitLabel, method: Method) -> Vec<MetricsReport> {
    read_metrics_csv(&run.eval_dir(split, method).join("metrics.csv")).unwrap()
}

fn pooled_rmse(run: &Run, split: SplitLabel, method: Method, subset: Subset) -> f64 {
    rows(run, split, method)
        .into_iter()
        .find(|r| r.subset == subset && r.output == "pooled")
        .expect("pooled row")
        .rmse
}

#[test]
fn cubic_residual_oracle() {
    let inputs = sample_log_uniform(&SamplingConfig::desk(), 100_000, 12345);
    let k = SsgConstants::ssg();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for &[e1, e2] in &inputs {
        let p = arsm::closure_coefficients(e1, e2).unwrap();
        let c = arsm::compute_intermediates(e1, e2, &k).unwrap();
        worst = worst.max(c.residual(p.g1).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "cubic residual below 1e-9 on 1e5 inputs within 5 s",
        worst < 1e-9 && secs < 5.0,
        &format!("max residual {worst:.3e}, {secs:.2} s"),
    );
}

#[test]
fn derived_l_constants() {
    let k = SsgConstants::ssg();
    // -0.486667 is the rounded form of 0.18 - 2/3.
    let expected = [0.7, 3.8, 0.18 - 2.0 / 3.0, -0.375, -0.8];
    let got = [k.l1_0, k.l1_1, k.l2, k.l3, k.l4];
    let err = got.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let rounded = (k.l2 - -0.486667).abs() < 5e-7;
    verdict("L-constants", err < 1e-12 && rounded, &format!("max error {err:.1e}, got {got:?}"));
}

fn activation_pattern(p: &MlpParams, xs: &[[f64; 2]]) -> Vec<bool> {
    xs.iter()
        .flat_map(|x| pre_activations(p, *x).into_iter().flatten().map(|z| z > 0.0).collect::<Vec<_>>())
        .collect()
}

#[test]
fn gradient_correctness() {
    // The summed loss is O(100), so a short central step drowns gradients
    // near 1e-6 in rounding. A fourth-order stencil at a wider step keeps
    // truncation and rounding both far below the tolerance.
    let h = 1e-3;
    let mut checked = 0;
    let mut seed = 0;
    let mut worst: f64 = 0.0;
    while checked < 20 {
        seed += 1;
        assert!(seed < 200, "too many non-smooth configurations");
        let p = MlpParams::init_he(5000 + seed);
        let mut rng = seeded(seed);
        let xs: Vec<[f64; 2]> = (0..8).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let ys: Vec<[f64; 3]> = (0..8).map(|_| [0.0; 3].map(|_: f64| rng.random_range(-1.0..1.0))).collect();
        let base = activation_pattern(&p, &xs);
        let (_, g) = loss_and_grad(&p, &xs, &ys, 1e-3, MaskSource::None);
        let mut rel = Vec::with_capacity(N_PARAMS);
        let mut smooth = true;
        for k in 0..N_PARAMS {
            let stencil: Vec<MlpParams> = [-2.0, -1.0, 1.0, 2.0]
                .iter()
                .map(|m| {
                    let mut q = p.clone();
                    q.as_mut_slice()[k] += m * h;
                    q
                })
                .collect();
            // A ReLU kink inside the stencil makes the difference meaningless.
            if stencil.iter().any(|q| activation_pattern(q, &xs) != base) {
                smooth = false;
                break;
            }
            let l: Vec<f64> = stencil.iter().map(|q| loss_and_grad(q, &xs, &ys, 1e-3, MaskSource::None).0).collect();
            let fd = (8.0 * (l[2] - l[1]) - (l[3] - l[0])) / (12.0 * h);
            let a = g.as_slice()[k];
            rel.push((a - fd).abs() / a.abs().max(fd.abs()).max(1e-5));
        }
        if smooth {
            worst = rel.into_iter().fold(worst, f64::max);
            checked += 1;
        }
    }

    let mut rng = seeded(77);
    let prior = SviPrior {
        weight_var: 1.5,
        noise_shape: 2.0,
        noise_rate: 0.7,
    };
    let mut post = SviPosterior::new((0..6).map(|_| rng.random_range(-1.0..1.0)).collect(), 1.0, ScaleKind::Full, 3.0, 2.0);
    post.log_scale.iter_mut().for_each(|v| *v = rng.random_range(-2.0..0.5));
    post.unit_lower.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    let g = kl_total_grad(&post, &prior);
    let u0 = post.to_unconstrained();
    let mut kl_worst: f64 = 0.0;
    for k in 0..u0.len() {
        let at = |e: f64| {
            let mut u = u0.clone();
            u[k] += e;
            let mut q = post.clone();
            q.set_unconstrained(&u);
            kl_total(&q, &prior)
        };
        let fd = (at(1e-6) - at(-1e-6)) / 2e-6;
        kl_worst = kl_worst.max((g[k] - fd).abs() / fd.abs().max(1.0));
    }
    verdict(
        "backprop and KL gradients match central differences to 1e-4",
        worst < 1e-4 && kl_worst < 1e-4,
        &format!("20 configs x {N_PARAMS} coords, worst rel {worst:.2e}; KL worst {kl_worst:.2e}"),
    );
}

#[test]
fn exact_gp_equivalence() {
    let mut rng = seeded(3);
    // Perturbed 7x7 lattice keeps the noiseless kernel matrix well conditioned.
    let x: Vec<f64> = (0..49)
        .flat_map(|k| {
            let (i, j) = ((k / 7) as f64, (k % 7) as f64);
            [0.5 * i - 1.5 + rng.random_range(-0.05..0.05), 0.5 * j - 1.5 + rng.random_range(-0.05..0.05)]
        })
        .collect();
    let y: Vec<f64> = x.chunks(2).map(|p| (1.7 * p[0]).sin() * (0.8 * p[1]).cos() + 0.2 * p[1]).collect();
    let xs: Vec<f64> = (0..60).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut pred_err: f64 = 0.0;
    let mut interp_err: f64 = 0.0;
    for kind in [KernelKind::SquaredExponential, KernelKind::Matern52] {
        let hp = KernelHyperparams::new(kind, 1.3, 0.4, 0.0).unwrap();
        let m = ExactGpModel::condition(&x, 2, &y, hp).unwrap();
        let kmat = |a: &[f64], b: &[f64]| {
            DMatrix::from_fn(a.len() / 2, b.len() / 2, |i, j| kernel_eval(kind, &hp, &a[2 * i..2 * i + 2], &b[2 * j..2 * j + 2]))
        };
        let kinv = (kmat(&x, &x) + DMatrix::identity(49, 49) * m.jitter_used()).try_inverse().unwrap();
        let ks = kmat(&x, &xs);
        let mean = ks.transpose() * &kinv * DVector::from_column_slice(&y);
        let p = exact_predict(&m, &xs).unwrap();
        for j in 0..30 {
            let kj = ks.column(j);
            let var = (hp.sigma1 - (kj.transpose() * &kinv * kj)[(0, 0)]).max(0.0);
            pred_err = pred_err.max((p.mean()[j] - mean[j]).abs()).max((p.var()[j] - var).abs());
        }
        let at_train = exact_predict(&m, &x).unwrap();
        for (a, b) in at_train.mean().iter().zip(&y) {
            interp_err = interp_err.max((a - b).abs());
        }
    }
    verdict(
        "exact GP matches dense inverse to 1e-8 and interpolates to 1e-6",
        pred_err < 1e-8 && interp_err < 1e-6,
        &format!("n = 49, max predictive error {pred_err:.2e}, max interpolation error {interp_err:.2e}"),
    );
}

#[test]
fn metric_self_consistency() {
    let mut rng = seeded(11);
    let n = 100_000;
    let mean: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let std: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
    let y: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| Normal::new(*m, *s).unwrap().sample(&mut rng)).collect();
    let levels = uniform_levels(99);
    let honest = EvalBundle::new(y.clone(), mean.clone(), std.clone(), 1).unwrap();
    let a = miscalibration_area(&calibration_curve(&honest, &levels, IntervalKind::Central).unwrap());
    let deflated = EvalBundle::new(y, mean, std.iter().map(|s| s / 100.0).collect(), 1).unwrap();
    let b = miscalibration_area(&calibration_curve(&deflated, &levels, IntervalKind::Central).unwrap());
    verdict(
        "MisCal below 0.03 when honest, above 0.3 with sigma/100",
        a < 0.03 && b > 0.3,
        &format!("honest {a:.4}, deflated {b:.4}"),
    );
}

#[test]
fn nll_closed_form() {
    let mut worst: f64 = 0.0;
    for d in [1usize, 3] {
        let b = EvalBundle::new(vec![0.25; d], vec![0.25; d], vec![1.0; d], d).unwrap();
        let expected = 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
        worst = worst.max((negative_log_likelihood(&b) - expected).abs());
    }
    verdict("zero-residual NLL equals d/2 log 2 pi", worst < 1e-9, &format!("max error {worst:.1e}"));
}

#[test]
fn mlp_desk_accuracy() {
    let run = shared();
    let rmse = pooled_rmse(run, SplitLabel::Full, Method::Mlp, Subset::All);
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(run.dir().join("manifest.json")).unwrap()).unwrap();
    let secs = manifest.stages.iter().find(|s| s.stage == "train/full/mlp").unwrap().seconds;
    verdict(
        "deterministic MLP desk RMSE at most 5e-3 within 10 min",
        rmse <= 5e-3 && secs < 600.0,
        &format!("RMSE {rmse:.3e}, training {secs:.1} s"),
    );
}

#[test]
fn method_ordering_on_full_split() {
    let run = shared();
    let r = |m| pooled_rmse(run, SplitLabel::Full, m, Subset::All);
    let (egp, de, mcd, svi) = (r(Method::Egp), r(Method::De), r(Method::Mcd), r(Method::Svi));
    verdict(
        "RMSE ordering EGP x 1.2 < DE < MCD and SVI",
        1.2 * egp < de && de < mcd && de < svi,
        &format!("EGP {egp:.3e}, DE {de:.3e}, MCD {mcd:.3e}, SVI {svi:.3e}"),
    );
}

/// Predictive standard deviations from an evaluation grid, split by whether
/// the point lies in the training region.
fn grid_sigmas(path: &PathBuf) -> (Vec<f64>, Vec<f64>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let flag = col("in_training_region");
    let stds = [col("std0"), col("std1"), col("std2")];
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let dst = if &rec[flag] == "1" { &mut inside } else { &mut outside };
        dst.extend(stds.iter().map(|&c| rec[c].parse::<f64>().unwrap()));
    }
    (inside, outside)
}

#[test]
fn ensemble_uncertainty_grows_out_of_region() {
    let run = shared();
    let mut pass = true;
    let mut detail = Vec::new();
    for split in [SplitLabel::DGe0, SplitLabel::DLt0] {
        let (mut inside, outside) = grid_sigmas(&run.eval_dir(split, Method::De).join("grid.csv"));
        inside.sort_by(f64::total_cmp);
        let median = inside[inside.len() / 2];
        let mean = outside.iter().sum::<f64>() / outside.len() as f64;
        pass &= mean >= 2.0 * median;
        detail.push(format!("{split}: held-out mean {mean:.3e} vs in-region median {median:.3e}"));
    }
    verdict("DE held-out mean sigma at least 2x in-region median", pass, &detail.join("; "));
}

#[test]
fn error_grows_out_of_region() {
    let run = shared();
    let mut failures = Vec::new();
    let mut worst = f64::INFINITY;
    for split in [SplitLabel::DGe0, SplitLabel::DLt0] {
        for &method in &run.cfg.methods {
            let inside = pooled_rmse(run, split, method, Subset::InRegion);
            let outside = pooled_rmse(run, split, method, Subset::HeldOut);
            let ratio = outside / inside;
            worst = worst.min(ratio);
            if ratio < 5.0 {
                failures.push(format!("{} on {split}: {ratio:.2}x", method.label()));
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("smallest ratio {worst:.1}x")
    } else {
        failures.join("; ")
    };
    verdict("every held-out RMSE at least 5x in-region RMSE", failures.is_empty(), &detail);
}

fn metrics_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "metrics.csv") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn end_to_end_determinism() {
    let first = shared();
    let second = fresh_run("acceptance-desk-repeat");
    let files = metrics_files(first.dir());
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(first.dir().join(f)).unwrap() != std::fs::read(second.dir().join(f)).unwrap())
        .map(|f| f.display().to_string())
        .collect();
    let same_set = files == metrics_files(second.dir());
    verdict(
        "repeated desk pipeline gives byte-identical metrics CSVs",
        same_set && differing.is_empty() && !files.is_empty(),
        &format!("{} files compared, differing: {differing:?}", files.len()),
    );
}
