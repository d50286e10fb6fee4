//! Exact zero-mean GP regression for a single output.

use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::kernel::{cross_covariance, cross_covariance_grad, gram, KernelHyperparams};
use crate::bayes::PredictiveDistribution;
use crate::container;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, CholeskyFactor, DenseMatrix};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::{derive_seed, seeded};

/// Largest training set the dense solver accepts.
pub const MAX_EXACT_POINTS: usize = 10_000;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
const PREDICT_CHUNK: usize = 128;

/// Hyperparameter search settings shared by the exact and sparse fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpFitConfig {
    /// Adam iterations on the log hyperparameters; 0 keeps the initial values.
    pub iters: usize,
    pub lr: f64,
    /// Exact GP: size of the random subset the likelihood is maximized on.
    pub hp_subset: usize,
    pub learn_noise: bool,
    /// Lower bound on a learned `sigma_n`.
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        GpFitConfig {
            iters: 100,
            lr: 0.05,
            hp_subset: 500,
            learn_noise: false,
            noise_floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GpFitLog {
    pub objective: Vec<f64>,
    pub best_objective: f64,
    pub fit_points: usize,
}

/// Clamp range for every log hyperparameter.
const LOG_BOUNDS: (f64, f64) = (-13.8, 13.8);

pub(crate) fn hp_from_logs(base: &KernelHyperparams, logs: &[f64], learn_noise: bool, noise_floor: f64) -> KernelHyperparams {
    KernelHyperparams {
        sigma1: logs[0].exp(),
        sigma2: logs[1].exp(),
        sigma_n: if learn_noise { logs[2].exp().max(noise_floor) } else { base.sigma_n },
        kind: base.kind,
    }
}

/// Adam ascent over log hyperparameters, keeping the best visited point.
pub(crate) fn maximize_logs<F>(init: &KernelHyperparams, cfg: &GpFitConfig, mut objective: F) -> Result<(KernelHyperparams, GpFitLog)>
where
    F: FnMut(&KernelHyperparams) -> Result<(f64, [f64; 3])>,
{
    init.validate()?;
    let n_free = if cfg.learn_noise { 3 } else { 2 };
    let mut logs = vec![init.sigma1.ln(), init.sigma2.ln()];
    if cfg.learn_noise {
        logs.push(init.sigma_n.max(cfg.noise_floor).ln());
    }
    let mut opt = Optimizer::new(OptimizerKind::adam(), n_free);
    let mut best = hp_from_logs(init, &logs, cfg.learn_noise, cfg.noise_floor);
    let mut log = GpFitLog {
        best_objective: f64::NEG_INFINITY,
        ..Default::default()
    };
    for it in 0..=cfg.iters {
        let hp = hp_from_logs(init, &logs, cfg.learn_noise, cfg.noise_floor);
        let (f, g) = objective(&hp)?;
        if !f.is_finite() {
            return Err(Error::Divergence(format!("non-finite GP objective at iteration {it}")));
        }
        log.objective.push(f);
        if f > log.best_objective {
            log.best_objective = f;
            best = hp;
        }
        if it == cfg.iters {
            break;
        }
        let neg: Vec<f64> = g[..n_free].iter().map(|v| -v).collect();
        opt.step(&mut logs, &neg, cfg.lr);
        for v in &mut logs {
            *v = v.clamp(LOG_BOUNDS.0, LOG_BOUNDS.1);
        }
        if cfg.learn_noise {
            logs[2] = logs[2].max(cfg.noise_floor.ln());
        }
    }
    Ok((best, log))
}

fn check_shapes(x: &[f64], dim: usize, y: &[f64]) -> Result<()> {
    if dim == 0 || x.len() != y.len() * dim {
        return Err(Error::Dimension(format!("{} inputs of dimension {dim} for {} targets", x.len(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::EmptySplit("GP training set is empty".into()));
    }
    if y.len() > MAX_EXACT_POINTS {
        return Err(Error::TooLarge(format!(
            "exact GP on {} points exceeds the dense limit of {MAX_EXACT_POINTS}",
            y.len()
        )));
    }
    Ok(())
}

fn noisy_cholesky(k: &DenseMatrix, sigma_n: f64) -> Result<CholeskyFactor> {
    let mut s = k.clone();
    s.add_diag(sigma_n * sigma_n);
    cholesky(&s)
}

/// Log marginal likelihood and its gradient in `(ln sigma1, ln sigma2, ln sigma_n)`.
pub fn log_marginal_likelihood(x: &[f64], dim: usize, y: &[f64], hp: &KernelHyperparams) -> Result<(f64, [f64; 3])> {
    check_shapes(x, dim, y)?;
    hp.validate()?;
    let n = y.len();
    let (k, d1, d2) = cross_covariance_grad(hp, x, x, dim);
    let f = noisy_cholesky(&k, hp.sigma_n)?;
    let alpha = f.solve_vec(y)?;
    let lml = -0.5 * dot(y, &alpha) - 0.5 * crate::linalg::log_det(&f) - 0.5 * n as f64 * LN_2PI;
    let w = f.inverse();
    let mut g = [0.0; 3];
    for (gi, dk) in g.iter_mut().zip([&d1, &d2]) {
        let mut quad = 0.0;
        let mut tr = 0.0;
        for i in 0..n {
            let row = dk.row(i);
            quad += alpha[i] * dot(row, &alpha);
            tr += dot(row, w.row(i));
        }
        *gi = 0.5 * (quad - tr);
    }
    let tr_w: f64 = w.diag().iter().sum();
    g[2] = hp.sigma_n * hp.sigma_n * (dot(&alpha, &alpha) - tr_w);
    Ok((lml, g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactGpModel {
    x: Vec<f64>,
    dim: usize,
    y: Vec<f64>,
    hp: KernelHyperparams,
    factor: CholeskyFactor,
    alpha: Vec<f64>,
}

impl ExactGpModel {
    /// Conditions on `(x, y)` with fixed hyperparameters.
    pub fn condition(x: &[f64], dim: usize, y: &[f64], hp: KernelHyperparams) -> Result<Self> {
        check_shapes(x, dim, y)?;
        hp.validate()?;
        let factor = noisy_cholesky(&gram(&hp, x, dim), hp.sigma_n)?;
        let alpha = factor.solve_vec(y)?;
        Ok(ExactGpModel {
            x: x.to_vec(),
            dim,
            y: y.to_vec(),
            hp,
            factor,
            alpha,
        })
    }

    pub fn hyperparams(&self) -> &KernelHyperparams {
        &self.hp
    }

    pub fn train_x(&self) -> &[f64] {
        &self.x
    }

    pub fn train_y(&self) -> &[f64] {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_train(&self) -> usize {
        self.y.len()
    }

    pub fn jitter_used(&self) -> f64 {
        self.factor.jitter_used()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Recomputes the cached factorization and weights and compares them.
    pub fn check_cache(&self, tol: f64) -> Result<()> {
        let fresh = Self::condition(&self.x, self.dim, &self.y, self.hp)?;
        let scale = self.alpha.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let worst = fresh.alpha.iter().zip(&self.alpha).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if worst > tol * scale {
            return Err(Error::Format {
                path: Default::default(),
                reason: format!("cached GP weights differ from a refit by {worst:e}"),
            });
        }
        Ok(())
    }

    fn check_query(&self, xs: &[f64]) -> Result<usize> {
        if xs.len() % self.dim != 0 {
            return Err(Error::Dimension(format!("query length {} is not a multiple of {}", xs.len(), self.dim)));
        }
        Ok(xs.len() / self.dim)
    }
}

/// Exact fit: hyperparameters maximize the log marginal likelihood on a
/// seeded subset of at most `cfg.hp_subset` points; the returned model is
/// conditioned on every point.
pub fn exact_fit(
    x: &[f64],
    dim: usize,
    y: &[f64],
    init: KernelHyperparams,
    cfg: &GpFitConfig,
) -> Result<(ExactGpModel, GpFitLog)> {
    check_shapes(x, dim, y)?;
    let n = y.len();
    let (sx, sy) = if cfg.hp_subset > 0 && cfg.hp_subset < n {
        let mut rng = seeded(derive_seed(cfg.seed, "gp/exact-subset"));
        let mut idx = sample(&mut rng, n, cfg.hp_subset).into_vec();
        idx.sort_unstable();
        let sx = idx.iter().flat_map(|&i| x[i * dim..(i + 1) * dim].iter().copied()).collect();
        let sy = idx.iter().map(|&i| y[i]).collect();
        (sx, sy)
    } else {
        (x.to_vec(), y.to_vec())
    };
    let (hp, mut log) = maximize_logs(&init, cfg, |hp| log_marginal_likelihood(&sx, dim, &sy, hp))?;
    log.fit_points = sy.len();
    Ok((ExactGpModel::condition(x, dim, y, hp)?, log))
}

/// Predictive mean and latent-function variance at each query point.
pub fn exact_predict(m: &ExactGpModel, xs: &[f64]) -> Result<PredictiveDistribution> {
    let n_query = m.check_query(xs)?;
    let mut mean = Vec::with_capacity(n_query);
    let mut var = Vec::with_capacity(n_query);
    let d = m.dim;
    for chunk in xs.chunks(PREDICT_CHUNK * d) {
        let mut kxs = cross_covariance(&m.hp, &m.x, chunk, d);
        let c = kxs.cols();
        let mut mu = vec![0.0; c];
        for (i, a) in m.alpha.iter().enumerate() {
            crate::linalg::axpy(*a, kxs.row(i), &mut mu);
        }
        m.factor.forward_solve_columns(&mut kxs)?;
        let mut sq = vec![0.0; c];
        for i in 0..kxs.rows() {
            for (s, v) in sq.iter_mut().zip(kxs.row(i)) {
                *s += v * v;
            }
        }
        mean.extend(mu);
        var.extend(sq.iter().map(|s| (m.hp.sigma1 - s).max(0.0)));
    }
    PredictiveDistribution::from_moments(mean, var, 1)
}

/// Joint posterior mean and covariance over a (small) set of query points.
pub fn exact_predict_joint(m: &ExactGpModel, xs: &[f64]) -> Result<(Vec<f64>, DenseMatrix)> {
    m.check_query(xs)?;
    let mut kxs = cross_covariance(&m.hp, &m.x, xs, m.dim);
    let mut mean = vec![0.0; kxs.cols()];
    for (i, a) in m.alpha.iter().enumerate() {
        crate::linalg::axpy(*a, kxs.row(i), &mut mean);
    }
    m.factor.forward_solve_columns(&mut kxs)?;
    let reduction = kxs.transpose().matmul(&kxs)?;
    let cov = gram(&m.hp, xs, m.dim).sub(&reduction)?;
    Ok((mean, cov))
}

pub const EXACT_KIND: &str = "gp-exact";
pub const EXACT_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ExactHeader {
    hp: KernelHyperparams,
    dim: usize,
    n: usize,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Writes `x`, `y` and the weights; loading refactors and verifies them.
pub fn save_exact(m: &ExactGpModel, meta: serde_json::Value, path: &Path) -> Result<()> {
    let header = ExactHeader {
        hp: m.hp,
        dim: m.dim,
        n: m.n_train(),
        meta,
    };
    let mut payload = m.x.clone();
    payload.extend_from_slice(&m.y);
    payload.extend_from_slice(&m.alpha);
    container::write(path, EXACT_KIND, EXACT_SCHEMA_VERSION, &header, &payload)
}

pub fn load_exact(path: &Path) -> Result<(ExactGpModel, serde_json::Value)> {
    let (h, payload): (ExactHeader, Vec<f64>) = container::read(path, EXACT_KIND, EXACT_SCHEMA_VERSION)?;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if payload.len() != h.n * (h.dim + 2) {
        return Err(bad(format!("payload of {} values does not hold {} points", payload.len(), h.n)));
    }
    let (x, rest) = payload.split_at(h.n * h.dim);
    let (y, alpha) = rest.split_at(h.n);
    let m = ExactGpModel::condition(x, h.dim, y, h.hp)?;
    let worst = m.alpha.iter().zip(alpha).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = alpha.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    if worst > 1e-6 * scale {
        return Err(bad(format!("stored weights disagree with the refactorized model by {worst:e}")));
    }
    Ok((m, h.meta))
}
