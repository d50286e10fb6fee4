//! Inducing-point GP with the collapsed variational bound
//! `log N(y | 0, Q + s^2 I) - tr(K - Q) / (2 s^2)`, `Q = K_nm K_mm^-1 K_mn`,
//! where the inducing outputs are integrated out at their optimum.

use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::exact::{maximize_logs, GpFitConfig, GpFitLog};
use super::kernel::{cross_covariance, cross_covariance_grad, gram, KernelHyperparams};
use crate::bayes::PredictiveDistribution;
use crate::container;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, CholeskyFactor, DenseMatrix};
use crate::rng::{derive_seed, seeded};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const PREDICT_CHUNK: usize = 512;

struct State {
    lm: CholeskyFactor,
    /// `L_m^-1 K_mn`.
    v: DenseMatrix,
    /// Factor of `B = I + V V^T / s^2`.
    lb: CholeskyFactor,
    /// `L_B^-1 V y / s^2`.
    c: Vec<f64>,
    trace_a: f64,
}

fn check(x: &[f64], dim: usize, y: &[f64], z: &[f64], hp: &KernelHyperparams) -> Result<()> {
    hp.validate()?;
    if dim == 0 || x.len() != y.len() * dim || z.len() % dim != 0 || z.is_empty() {
        return Err(Error::Dimension("inputs, targets and inducing points disagree in shape".into()));
    }
    if y.is_empty() {
        return Err(Error::EmptySplit("GP training set is empty".into()));
    }
    if z.len() / dim > y.len() {
        return Err(Error::Config(format!("{} inducing points for {} data points", z.len() / dim, y.len())));
    }
    if !(hp.sigma_n > 0.0) {
        return Err(Error::Domain("the inducing-point bound needs sigma_n > 0".into()));
    }
    Ok(())
}

fn state_from(kmm: &DenseMatrix, kmn: DenseMatrix, y: &[f64], s2: f64) -> Result<State> {
    let lm = cholesky(kmm)?;
    let mut v = kmn;
    lm.forward_solve_columns(&mut v)?;
    let a = v.gram();
    let trace_a = a.diag().iter().sum();
    let mut b = a.scale(1.0 / s2);
    b.add_diag(1.0);
    let lb = cholesky(&b)?;
    let mut c = v.mat_vec(y)?;
    lb.solve_lower_in_place(&mut c)?;
    c.iter_mut().for_each(|ci| *ci /= s2);
    Ok(State { lm, v, lb, c, trace_a })
}

fn bound_value(st: &State, y: &[f64], hp: &KernelHyperparams) -> f64 {
    let n = y.len() as f64;
    let s2 = hp.sigma_n * hp.sigma_n;
    let log_det_b: f64 = st.lb.l().diag().iter().map(|d| d.ln()).sum();
    -0.5 * n * LN_2PI - 0.5 * n * s2.ln() - log_det_b - 0.5 * dot(y, y) / s2 + 0.5 * dot(&st.c, &st.c)
        - 0.5 * (n * hp.sigma1 - st.trace_a) / s2
}

/// Collapsed bound and its gradient in `(ln sigma1, ln sigma2, ln sigma_n)`.
pub fn sparse_bound(x: &[f64], dim: usize, y: &[f64], z: &[f64], hp: &KernelHyperparams) -> Result<(f64, [f64; 3])> {
    check(x, dim, y, z, hp)?;
    let n = y.len();
    let m = z.len() / dim;
    let s2 = hp.sigma_n * hp.sigma_n;
    let (kmm, dmm1, dmm2) = cross_covariance_grad(hp, z, z, dim);
    let (kmn, dmn1, dmn2) = cross_covariance_grad(hp, z, x, dim);
    let st = state_from(&kmm, kmn, y, s2)?;
    let f = bound_value(&st, y, hp);

    let lmi = st.lm.lower_inverse();
    let lmi_t = lmi.transpose();
    let b_inv = st.lb.inverse();
    // P = K_nm K_mm^-1 = V^T L_m^-1, so P^T = L_m^-T V.
    let pt = lmi_t.matmul(&st.v)?;
    // (C^-1 P)^T = L_m^-T B^-1 V / s^2.
    let cip_t = lmi_t.matmul(&b_inv)?.matmul(&st.v)?.scale(1.0 / s2);
    let mut i_minus_binv = b_inv.scale(-1.0);
    i_minus_binv.add_diag(1.0);
    let ptcip = lmi_t.matmul(&i_minus_binv)?.matmul(&lmi)?;
    let ptp = pt.gram();
    // beta = C^-1 y = (y - V^T L_B^-T c) / s^2
    let mut lbt_c = st.c.clone();
    st.lb.solve_upper_in_place(&mut lbt_c)?;
    let vt_lbc = st.v.transpose().mat_vec(&lbt_c)?;
    let beta: Vec<f64> = y.iter().zip(&vt_lbc).map(|(yi, w)| (yi - w) / s2).collect();
    let pt_beta = pt.mat_vec(&beta)?;

    let r = pt.scale(1.0 / s2).sub(&cip_t)?;
    let r2 = ptcip.sub(&ptp.scale(1.0 / s2))?.scale(0.5);
    let mut g = [0.0; 3];
    for (t, (dmn, dmm)) in [(&dmn1, &dmm1), (&dmn2, &dmm2)].into_iter().enumerate() {
        let s_nm = dot(r.as_slice(), dmn.as_slice());
        let s_mm = dot(r2.as_slice(), dmm.as_slice());
        let q1: f64 = (0..m).map(|j| pt_beta[j] * dot(dmn.row(j), &beta)).sum();
        let q2 = dot(&pt_beta, &dmm.mat_vec(&pt_beta)?);
        let d_tr_knn = if t == 0 { n as f64 * hp.sigma1 } else { 0.0 };
        g[t] = s_nm + s_mm + q1 - 0.5 * q2 - 0.5 * d_tr_knn / s2;
    }
    let tr_c_inv = (n as f64 - (m as f64 - b_inv.diag().iter().sum::<f64>())) / s2;
    g[2] = -s2 * tr_c_inv + s2 * dot(&beta, &beta) + (n as f64 * hp.sigma1 - st.trace_a) / s2;
    Ok((f, g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseGpModel {
    x: Vec<f64>,
    dim: usize,
    y: Vec<f64>,
    z: Vec<f64>,
    hp: KernelHyperparams,
    lm: CholeskyFactor,
    lb: CholeskyFactor,
    c: Vec<f64>,
    bound: f64,
}

impl SparseGpModel {
    pub fn condition(x: &[f64], dim: usize, y: &[f64], z: &[f64], hp: KernelHyperparams) -> Result<Self> {
        check(x, dim, y, z, &hp)?;
        let s2 = hp.sigma_n * hp.sigma_n;
        let st = state_from(&gram(&hp, z, dim), cross_covariance(&hp, z, x, dim), y, s2)?;
        let bound = bound_value(&st, y, &hp);
        Ok(SparseGpModel {
            x: x.to_vec(),
            dim,
            y: y.to_vec(),
            z: z.to_vec(),
            hp,
            lm: st.lm,
            lb: st.lb,
            c: st.c,
            bound,
        })
    }

    pub fn hyperparams(&self) -> &KernelHyperparams {
        &self.hp
    }

    pub fn inducing(&self) -> &[f64] {
        &self.z
    }

    pub fn n_inducing(&self) -> usize {
        self.z.len() / self.dim
    }

    pub fn train_x(&self) -> &[f64] {
        &self.x
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    fn project(&self, xs: &[f64]) -> Result<(DenseMatrix, DenseMatrix)> {
        if xs.len() % self.dim != 0 {
            return Err(Error::Dimension(format!("query length {} is not a multiple of {}", xs.len(), self.dim)));
        }
        let mut w = cross_covariance(&self.hp, &self.z, xs, self.dim);
        self.lm.forward_solve_columns(&mut w)?;
        let mut u = w.clone();
        self.lb.forward_solve_columns(&mut u)?;
        Ok((w, u))
    }
}

/// Picks `m_inducing` training inputs at random (seeded) as inducing
/// locations and maximizes the bound over the hyperparameters.
pub fn sparse_fit(
    x: &[f64],
    dim: usize,
    y: &[f64],
    m_inducing: usize,
    init: KernelHyperparams,
    cfg: &GpFitConfig,
) -> Result<(SparseGpModel, GpFitLog)> {
    let n = y.len();
    if m_inducing == 0 || m_inducing > n {
        return Err(Error::Config(format!("{m_inducing} inducing points for {n} data points")));
    }
    let mut rng = seeded(derive_seed(cfg.seed, "gp/inducing"));
    let mut idx = sample(&mut rng, n, m_inducing).into_vec();
    idx.sort_unstable();
    let z: Vec<f64> = idx.iter().flat_map(|&i| x[i * dim..(i + 1) * dim].iter().copied()).collect();
    let (hp, mut log) = maximize_logs(&init, cfg, |hp| sparse_bound(x, dim, y, &z, hp))?;
    log.fit_points = n;
    Ok((SparseGpModel::condition(x, dim, y, &z, hp)?, log))
}

pub fn sparse_predict(m: &SparseGpModel, xs: &[f64]) -> Result<PredictiveDistribution> {
    let mut mean = Vec::with_capacity(xs.len() / m.dim);
    let mut var = Vec::with_capacity(xs.len() / m.dim);
    for chunk in xs.chunks(PREDICT_CHUNK * m.dim) {
        let (w, u) = m.project(chunk)?;
        let cols = w.cols();
        let mut mu = vec![0.0; cols];
        let mut v = vec![m.hp.sigma1; cols];
        for i in 0..w.rows() {
            crate::linalg::axpy(m.c[i], u.row(i), &mut mu);
            for ((vj, wj), uj) in v.iter_mut().zip(w.row(i)).zip(u.row(i)) {
                *vj += uj * uj - wj * wj;
            }
        }
        mean.extend(mu);
        var.extend(v.into_iter().map(|s| s.max(0.0)));
    }
    PredictiveDistribution::from_moments(mean, var, 1)
}

pub fn sparse_predict_joint(m: &SparseGpModel, xs: &[f64]) -> Result<(Vec<f64>, DenseMatrix)> {
    let (w, u) = m.project(xs)?;
    let mean = u.transpose().mat_vec(&m.c)?;
    let wt = w.transpose();
    let ut = u.transpose();
    let explained = wt.matmul(&w)?.sub(&ut.matmul(&u)?)?;
    let cov = gram(&m.hp, xs, m.dim).sub(&explained)?;
    Ok((mean, cov))
}

pub const SPARSE_KIND: &str = "gp-sparse";
pub const SPARSE_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SparseHeader {
    hp: KernelHyperparams,
    dim: usize,
    n: usize,
    n_inducing: usize,
    bound: f64,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn save_sparse(m: &SparseGpModel, meta: serde_json::Value, path: &Path) -> Result<()> {
    let header = SparseHeader {
        hp: m.hp,
        dim: m.dim,
        n: m.y.len(),
        n_inducing: m.n_inducing(),
        bound: m.bound(),
        meta,
    };
    let mut payload = m.x.clone();
    payload.extend_from_slice(&m.y);
    payload.extend_from_slice(&m.z);
    container::write(path, SPARSE_KIND, SPARSE_SCHEMA_VERSION, &header, &payload)
}

pub fn load_sparse(path: &Path) -> Result<(SparseGpModel, serde_json::Value)> {
    let (h, payload): (SparseHeader, Vec<f64>) = container::read(path, SPARSE_KIND, SPARSE_SCHEMA_VERSION)?;
    if payload.len() != h.n * (h.dim + 1) + h.n_inducing * h.dim {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("payload of {} values does not match the header sizes", payload.len()),
        });
    }
    let (x, rest) = payload.split_at(h.n * h.dim);
    let (y, z) = rest.split_at(h.n);
    Ok((SparseGpModel::condition(x, h.dim, y, z, h.hp)?, h.meta))
}
