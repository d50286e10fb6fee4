//! Stochastic variational inference with a Gaussian posterior over network
//! weights and a Gamma posterior over the output-noise precision.
//!
//! The weight factor is `q(theta) = N(mu, L L^T)` with
//! `L = diag(exp(rho)) U`, `U` unit lower-triangular (full rank) or the
//! identity (diagonal). The prior is `N(0, s^2 I) x Gamma(tau; a0, b0)` and
//! the likelihood is `N(y; f_theta(x), tau^-1 I)`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::predictive::{MomentAccumulator, PredictiveDistribution};
use crate::container;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, DenseMatrix};
use crate::mlp::{self, MlpParams, N_INPUTS, N_OUTPUTS, N_PARAMS};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::{derive_seed, seeded, Rng};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A regression model with a flat parameter vector. Inputs and targets are
/// row-major flat slices.
pub trait ParametricRegressor: Sync {
    fn n_params(&self) -> usize;
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    /// Sum of squared residuals and its gradient (written into `grad`).
    fn sse_and_grad(&self, theta: &[f64], x: &[f64], y: &[f64], grad: &mut [f64]) -> f64;
    fn predict(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>>;
}

/// The fixed closure surrogate network.
#[derive(Debug, Clone, Copy, Default)]
pub struct SurrogateNet;

fn as_pairs(x: &[f64]) -> Vec<[f64; 2]> {
    x.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

fn as_triples(y: &[f64]) -> Vec<[f64; 3]> {
    y.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

impl ParametricRegressor for SurrogateNet {
    fn n_params(&self) -> usize {
        N_PARAMS
    }
    fn n_inputs(&self) -> usize {
        N_INPUTS
    }
    fn n_outputs(&self) -> usize {
        N_OUTPUTS
    }
    fn sse_and_grad(&self, theta: &[f64], x: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
        let p = MlpParams::from_vec(theta.to_vec()).expect("parameter count checked by caller");
        mlp::sse_and_grad(&p, &as_pairs(x), &as_triples(y), mlp::MaskSource::None, grad)
    }
    fn predict(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let p = MlpParams::from_vec(theta.to_vec())?;
        Ok(mlp::predict_batch(&p, &as_pairs(x), None)?.into_flattened())
    }
}

/// Single-output affine model `y = theta_0 + sum_k theta_{k+1} x_k`.
#[derive(Debug, Clone, Copy)]
pub struct LinearModel {
    pub n_inputs: usize,
}

impl ParametricRegressor for LinearModel {
    fn n_params(&self) -> usize {
        self.n_inputs + 1
    }
    fn n_inputs(&self) -> usize {
        self.n_inputs
    }
    fn n_outputs(&self) -> usize {
        1
    }
    fn sse_and_grad(&self, theta: &[f64], x: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let mut sse = 0.0;
        for (xi, yi) in x.chunks_exact(self.n_inputs).zip(y) {
            let r = theta[0] + dot(&theta[1..], xi) - yi;
            sse += r * r;
            grad[0] += 2.0 * r;
            axpy(2.0 * r, xi, &mut grad[1..]);
        }
        sse
    }
    fn predict(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.chunks_exact(self.n_inputs).map(|xi| theta[0] + dot(&theta[1..], xi)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    Full,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SviPrior {
    /// Variance of the isotropic weight prior (the inverse of the L2 weight).
    pub weight_var: f64,
    pub noise_shape: f64,
    pub noise_rate: f64,
}

impl Default for SviPrior {
    fn default() -> Self {
        SviPrior {
            weight_var: 1e7,
            noise_shape: 1e-3,
            noise_rate: 1e-3,
        }
    }
}

impl SviPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight_var > 0.0 && self.noise_shape > 0.0 && self.noise_rate > 0.0) {
            return Err(Error::Config("prior variance, shape and rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SviPosterior {
    pub mu: Vec<f64>,
    /// Log of the diagonal of `L`.
    pub log_scale: Vec<f64>,
    /// Strict lower triangle of `U`, row-major packed (row `i` holds `i`
    /// entries). Empty for a diagonal posterior.
    pub unit_lower: Vec<f64>,
    pub kind: ScaleKind,
    pub noise_shape: f64,
    pub noise_rate: f64,
}

fn row_start(i: usize) -> usize {
    i * i.saturating_sub(1) / 2
}

impl SviPosterior {
    /// `N(mu, init_scale^2 I)` with the given noise factor.
    pub fn new(mu: Vec<f64>, init_scale: f64, kind: ScaleKind, noise_shape: f64, noise_rate: f64) -> Self {
        let d = mu.len();
        let n_lower = match kind {
            ScaleKind::Full => d * d.saturating_sub(1) / 2,
            ScaleKind::Diagonal => 0,
        };
        SviPosterior {
            log_scale: vec![init_scale.ln(); d],
            unit_lower: vec![0.0; n_lower],
            mu,
            kind,
            noise_shape,
            noise_rate,
        }
    }

    /// The prior itself, as a variational distribution.
    pub fn from_prior(dim: usize, prior: &SviPrior, kind: ScaleKind) -> Self {
        Self::new(vec![0.0; dim], prior.weight_var.sqrt(), kind, prior.noise_shape, prior.noise_rate)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn unit_row(&self, i: usize) -> &[f64] {
        match self.kind {
            ScaleKind::Full => &self.unit_lower[row_start(i)..row_start(i) + i],
            ScaleKind::Diagonal => &[],
        }
    }

    /// `(L z)_i / L_ii`.
    fn whitened(&self, i: usize, z: &[f64]) -> f64 {
        z[i] + dot(self.unit_row(i), &z[..self.unit_row(i).len()])
    }

    /// `mu + L z`.
    pub fn reparameterize(&self, z: &[f64], theta: &mut [f64]) {
        for i in 0..self.dim() {
            theta[i] = self.mu[i] + self.log_scale[i].exp() * self.whitened(i, z);
        }
    }

    pub fn sample_theta(&self, rng: &mut Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        let mut theta = vec![0.0; self.dim()];
        self.reparameterize(&z, &mut theta);
        theta
    }

    /// Dense lower-triangular `L`.
    pub fn scale_tril(&self) -> DenseMatrix {
        let d = self.dim();
        DenseMatrix::from_fn(d, d, |i, j| {
            let s = self.log_scale[i].exp();
            match j.cmp(&i) {
                std::cmp::Ordering::Equal => s,
                std::cmp::Ordering::Less => s * self.unit_row(i).get(j).copied().unwrap_or(0.0),
                std::cmp::Ordering::Greater => 0.0,
            }
        })
    }

    pub fn covariance(&self) -> DenseMatrix {
        let l = self.scale_tril();
        l.matmul(&l.transpose()).expect("square factor")
    }

    /// Posterior mean of the noise variance `1 / tau`, as `b / a`.
    pub fn noise_variance(&self) -> f64 {
        self.noise_rate / self.noise_shape
    }

    /// Flat unconstrained vector `[mu | rho | U | ln a | ln b]`.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.n_unconstrained());
        u.extend_from_slice(&self.mu);
        u.extend_from_slice(&self.log_scale);
        u.extend_from_slice(&self.unit_lower);
        u.push(self.noise_shape.ln());
        u.push(self.noise_rate.ln());
        u
    }

    pub fn set_unconstrained(&mut self, u: &[f64]) {
        let d = self.dim();
        let nl = self.unit_lower.len();
        self.mu.copy_from_slice(&u[..d]);
        self.log_scale.copy_from_slice(&u[d..2 * d]);
        self.unit_lower.copy_from_slice(&u[2 * d..2 * d + nl]);
        self.noise_shape = u[2 * d + nl].exp();
        self.noise_rate = u[2 * d + nl + 1].exp();
    }

    pub fn n_unconstrained(&self) -> usize {
        2 * self.dim() + self.unit_lower.len() + 2
    }

    fn validate(&self) -> Result<()> {
        let ok = self.mu.iter().chain(&self.log_scale).chain(&self.unit_lower).all(|v| v.is_finite())
            && self.noise_shape > 0.0
            && self.noise_rate > 0.0;
        if ok { Ok(()) } else { Err(Error::NonFinite) }
    }
}

/// Trigamma function, by upward recurrence into the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    acc + 1.0 / x + r / 2.0 + r / x * (1.0 / 6.0 - r * (1.0 / 30.0 - r * (1.0 / 42.0 - r / 30.0)))
}

/// `KL(N(mu, L L^T) || N(0, s^2 I))`.
pub fn kl_gaussian(post: &SviPosterior, prior_var: f64) -> f64 {
    let d = post.dim();
    let mut tr = 0.0;
    for i in 0..d {
        let u = post.unit_row(i);
        tr += (2.0 * post.log_scale[i]).exp() * (1.0 + dot(u, u));
    }
    let log_det_q: f64 = 2.0 * post.log_scale.iter().sum::<f64>();
    0.5 * ((tr + dot(&post.mu, &post.mu)) / prior_var - d as f64 + d as f64 * prior_var.ln() - log_det_q)
}

/// `KL(Gamma(a, b) || Gamma(a0, b0))`, shape/rate convention.
pub fn kl_gamma(a: f64, b: f64, a0: f64, b0: f64) -> f64 {
    (a - a0) * digamma(a) - ln_gamma(a) + ln_gamma(a0) + a0 * (b.ln() - b0.ln()) + a * (b0 - b) / b
}

/// Gradient of both KL terms with respect to the unconstrained vector.
fn kl_grad(post: &SviPosterior, prior: &SviPrior, grad: &mut [f64]) {
    let d = post.dim();
    let nl = post.unit_lower.len();
    let s2 = prior.weight_var;
    for i in 0..d {
        grad[i] = post.mu[i] / s2;
        let si2 = (2.0 * post.log_scale[i]).exp();
        let u = post.unit_row(i);
        grad[d + i] = si2 * (1.0 + dot(u, u)) / s2 - 1.0;
        let off = 2 * d + row_start(i);
        for (j, uij) in u.iter().enumerate() {
            grad[off + j] = si2 * uij / s2;
        }
    }
    let (a, b) = (post.noise_shape, post.noise_rate);
    let (a0, b0) = (prior.noise_shape, prior.noise_rate);
    let d_a = (a - a0) * trigamma(a) + b0 / b - 1.0;
    let d_b = a0 / b - a * b0 / (b * b);
    grad[2 * d + nl] = a * d_a;
    grad[2 * d + nl + 1] = b * d_b;
}

/// `KL(q || p)` summed over the weight and noise factors.
pub fn kl_total(post: &SviPosterior, prior: &SviPrior) -> f64 {
    kl_gaussian(post, prior.weight_var) + kl_gamma(post.noise_shape, post.noise_rate, prior.noise_shape, prior.noise_rate)
}

/// Gradient of [`kl_total`] in the unconstrained coordinates.
pub fn kl_total_grad(post: &SviPosterior, prior: &SviPrior) -> Vec<f64> {
    let mut g = vec![0.0; post.n_unconstrained()];
    kl_grad(post, prior, &mut g);
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboEstimate {
    pub elbo: f64,
    /// Gradient of the estimate in the unconstrained coordinates.
    pub grad: Vec<f64>,
    /// Mean minibatch sum of squared residuals over the Monte-Carlo draws.
    pub mean_sse: f64,
}

/// Reparameterized Monte-Carlo ELBO estimate on a minibatch of a dataset
/// of `n_total` rows. The data term is rescaled by `n_total / batch`.
pub fn elbo_and_grad<M: ParametricRegressor>(
    model: &M,
    post: &SviPosterior,
    x: &[f64],
    y: &[f64],
    n_total: usize,
    prior: &SviPrior,
    n_mc: usize,
    rng: &mut Rng,
) -> Result<ElboEstimate> {
    if n_mc == 0 {
        return Err(Error::Config("n_mc must be at least 1".into()));
    }
    let d = post.dim();
    if d != model.n_params() || x.len() * model.n_outputs() != y.len() * model.n_inputs() {
        return Err(Error::Dimension("posterior, model and batch shapes disagree".into()));
    }
    post.validate()?;
    let nl = post.unit_lower.len();
    let n_batch = y.len() / model.n_outputs();
    let mut grad = vec![0.0; post.n_unconstrained()];
    kl_grad(post, prior, &mut grad);
    grad.iter_mut().for_each(|g| *g = -*g);
    let mut elbo = -kl_total(post, prior);
    let mut mean_sse = 0.0;

    if n_batch > 0 {
        let (a, b) = (post.noise_shape, post.noise_rate);
        let scale = n_total as f64 / n_batch as f64;
        let k = y.len() as f64;
        let e_tau = a / b;
        let e_ln_tau = digamma(a) - b.ln();
        let inv_mc = 1.0 / n_mc as f64;
        let mut z = vec![0.0; d];
        let mut theta = vec![0.0; d];
        let mut g = vec![0.0; d];
        for _ in 0..n_mc {
            z.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
            post.reparameterize(&z, &mut theta);
            let sse = model.sse_and_grad(&theta, x, y, &mut g);
            mean_sse += sse * inv_mc;
            elbo += inv_mc * scale * (0.5 * k * (e_ln_tau - LN_2PI) - 0.5 * e_tau * sse);
            // d(data)/d(theta) = -scale * E[tau] / 2 * d(sse)/d(theta)
            let c = -inv_mc * scale * 0.5 * e_tau;
            for i in 0..d {
                let dth = c * g[i];
                grad[i] += dth;
                let s = post.log_scale[i].exp();
                grad[d + i] += dth * s * post.whitened(i, &z);
                if post.kind == ScaleKind::Full && i > 0 {
                    let off = 2 * d + row_start(i);
                    axpy(dth * s, &z[..i], &mut grad[off..off + i]);
                }
            }
            grad[2 * d + nl] += inv_mc * scale * a * (0.5 * k * trigamma(a) - 0.5 * sse / b);
            grad[2 * d + nl + 1] += inv_mc * scale * b * (-0.5 * k / b + 0.5 * a * sse / (b * b));
        }
    }
    if !elbo.is_finite() {
        return Err(Error::Divergence("non-finite ELBO".into()));
    }
    Ok(ElboEstimate { elbo, grad, mean_sse })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SviConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub n_mc: usize,
    pub init_scale: f64,
    pub scale_kind: ScaleKind,
    pub prior: SviPrior,
    /// Step size of the natural-gradient update of the noise factor.
    pub noise_step: f64,
    /// Epochs between validation checks.
    pub val_every: usize,
    pub val_samples: usize,
    /// Validation checks without improvement before stopping; 0 never stops.
    pub patience: usize,
    pub seed: u64,
}

impl Default for SviConfig {
    fn default() -> Self {
        SviConfig {
            batch_size: 1024,
            lr: 1e-3,
            max_epochs: 2000,
            n_mc: 1,
            init_scale: 1e-4,
            scale_kind: ScaleKind::Full,
            prior: SviPrior::default(),
            noise_step: 0.1,
            val_every: 10,
            val_samples: 10,
            patience: 0,
            seed: 0,
        }
    }
}

impl SviConfig {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if !(self.lr > 0.0 && self.init_scale > 0.0) {
            return Err(Error::Config("lr and init_scale must be positive".into()));
        }
        if !(self.noise_step > 0.0 && self.noise_step <= 1.0) {
            return Err(Error::Config("noise_step must be in (0, 1]".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.n_mc == 0 || self.val_every == 0 {
            return Err(Error::Config("batch_size, max_epochs, n_mc and val_every must be positive".into()));
        }
        if self.val_samples < 2 {
            return Err(Error::TooFewSamples(self.val_samples));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SviEpochLog {
    pub epoch: usize,
    pub elbo: f64,
    pub val_nll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SviLog {
    pub epochs: Vec<SviEpochLog>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
}

/// Mean per-point Gaussian NLL of the posterior predictive including the
/// expected observation noise.
fn validation_nll<M: ParametricRegressor>(
    model: &M,
    post: &SviPosterior,
    x: &[f64],
    y: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let pred = svi_predictive(model, post, x, n_samples, seed, false)?;
    let noise = post.noise_variance();
    let n = pred.n_points().max(1) as f64;
    let total: f64 = pred
        .mean()
        .iter()
        .zip(pred.var())
        .zip(y)
        .map(|((m, v), t)| {
            let v = v + noise;
            0.5 * (LN_2PI + v.ln() + (t - m).powi(2) / v)
        })
        .sum();
    Ok(total / n)
}

/// Stochastic gradient ascent on the ELBO, Adam on the weight factor and
/// natural-gradient steps on the conjugate noise factor. Returns the
/// posterior with the best validation NLL.
pub fn train_svi<M: ParametricRegressor>(
    model: &M,
    init_mu: Vec<f64>,
    train: (&[f64], &[f64]),
    val: (&[f64], &[f64]),
    cfg: &SviConfig,
) -> Result<(SviPosterior, SviLog)> {
    cfg.validate()?;
    let (ni, no) = (model.n_inputs(), model.n_outputs());
    let n = train.1.len() / no;
    if init_mu.len() != model.n_params() || n == 0 || train.0.len() != n * ni || val.0.len() * no != val.1.len() * ni {
        return Err(Error::Dimension("training data or initial mean do not fit the model".into()));
    }
    let a0 = cfg.prior.noise_shape;
    let b0 = cfg.prior.noise_rate;
    let a_hat = a0 + 0.5 * (n * no) as f64;
    let mut post = SviPosterior::new(init_mu, cfg.init_scale, cfg.scale_kind, a_hat, a_hat);

    let mut mc_rng = seeded(derive_seed(cfg.seed, "svi/mc"));
    let mut shuffle_rng = seeded(derive_seed(cfg.seed, "svi/shuffle"));
    let val_seed = derive_seed(cfg.seed, "svi/val");
    let n_weight = post.n_unconstrained() - 2;
    let mut opt = Optimizer::new(OptimizerKind::adam(), n_weight);
    let mut u = post.to_unconstrained();
    let mut order: Vec<usize> = (0..n).collect();
    let (mut bx, mut by) = (Vec::new(), Vec::new());

    let mut log = SviLog {
        best_val_nll: f64::INFINITY,
        ..Default::default()
    };
    let mut best = post.clone();
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut elbo_sum = 0.0;
        let mut n_steps = 0;
        for idx in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            for &i in idx {
                bx.extend_from_slice(&train.0[i * ni..(i + 1) * ni]);
                by.extend_from_slice(&train.1[i * no..(i + 1) * no]);
            }
            let est = elbo_and_grad(model, &post, &bx, &by, n, &cfg.prior, cfg.n_mc, &mut mc_rng)?;
            elbo_sum += est.elbo;
            n_steps += 1;
            let neg: Vec<f64> = est.grad[..n_weight].iter().map(|g| -g).collect();
            opt.step(&mut u[..n_weight], &neg, cfg.lr);
            post.set_unconstrained(&u);
            // Conjugate update of q(tau) towards its minibatch optimum.
            let b_hat = b0 + 0.5 * (n as f64 / idx.len() as f64) * est.mean_sse;
            post.noise_shape = (1.0 - cfg.noise_step) * post.noise_shape + cfg.noise_step * a_hat;
            post.noise_rate = (1.0 - cfg.noise_step) * post.noise_rate + cfg.noise_step * b_hat;
            u[n_weight] = post.noise_shape.ln();
            u[n_weight + 1] = post.noise_rate.ln();
        }
        post.validate().map_err(|_| Error::Divergence(format!("non-finite posterior after epoch {epoch}")))?;
        let check = (epoch + 1) % cfg.val_every == 0 || epoch + 1 == cfg.max_epochs;
        let val_nll = if check && !val.1.is_empty() {
            Some(validation_nll(model, &post, val.0, val.1, cfg.val_samples, val_seed)?)
        } else {
            None
        };
        log.epochs.push(SviEpochLog {
            epoch,
            elbo: elbo_sum / n_steps as f64,
            val_nll,
        });
        if let Some(v) = val_nll {
            if v < log.best_val_nll {
                log.best_val_nll = v;
                log.best_epoch = epoch;
                best.clone_from(&post);
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience > 0 && stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    if val.1.is_empty() {
        best = post;
        log.best_epoch = cfg.max_epochs - 1;
    }
    Ok((best, log))
}

/// Moments of `n_samples` forward passes at parameters drawn from `q`.
pub fn svi_predictive<M: ParametricRegressor>(
    model: &M,
    post: &SviPosterior,
    x: &[f64],
    n_samples: usize,
    seed: u64,
    retain: bool,
) -> Result<PredictiveDistribution> {
    if n_samples < 2 {
        return Err(Error::TooFewSamples(n_samples));
    }
    post.validate()?;
    let mut rng = seeded(seed);
    let mut acc = MomentAccumulator::new(retain);
    for _ in 0..n_samples {
        let theta = post.sample_theta(&mut rng);
        acc.push(&model.predict(&theta, x)?)?;
    }
    acc.finish(model.n_outputs())
}

pub const POSTERIOR_KIND: &str = "svi-posterior";
pub const POSTERIOR_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PosteriorHeader {
    dim: usize,
    scale_kind: ScaleKind,
    noise_shape: f64,
    noise_rate: f64,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Payload: `mu`, then `log_scale`, then the packed unit-lower entries.
pub fn save_posterior(post: &SviPosterior, meta: serde_json::Value, path: &Path) -> Result<()> {
    post.validate()?;
    let header = PosteriorHeader {
        dim: post.dim(),
        scale_kind: post.kind,
        noise_shape: post.noise_shape,
        noise_rate: post.noise_rate,
        meta,
    };
    let mut payload = post.mu.clone();
    payload.extend_from_slice(&post.log_scale);
    payload.extend_from_slice(&post.unit_lower);
    container::write(path, POSTERIOR_KIND, POSTERIOR_SCHEMA_VERSION, &header, &payload)
}

pub fn load_posterior(path: &Path) -> Result<(SviPosterior, serde_json::Value)> {
    let (h, payload): (PosteriorHeader, Vec<f64>) = container::read(path, POSTERIOR_KIND, POSTERIOR_SCHEMA_VERSION)?;
    let mut post = SviPosterior::new(vec![0.0; h.dim], 1.0, h.scale_kind, h.noise_shape, h.noise_rate);
    let n_lower = post.unit_lower.len();
    if payload.len() != 2 * h.dim + n_lower {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("payload of {} values does not fit a {}-dimensional posterior", payload.len(), h.dim),
        });
    }
    post.mu.copy_from_slice(&payload[..h.dim]);
    post.log_scale.copy_from_slice(&payload[h.dim..2 * h.dim]);
    post.unit_lower.copy_from_slice(&payload[2 * h.dim..]);
    post.validate()?;
    Ok((post, h.meta))
}
