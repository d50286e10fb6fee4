//! Gaussian-process regression with exact and inducing-point inference.
//! Each output dimension gets its own independent GP over shared inputs.

pub mod exact;
pub mod kernel;
pub mod sparse;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use exact::{
    exact_fit, exact_predict, exact_predict_joint, load_exact, log_marginal_likelihood, save_exact, ExactGpModel,
    GpFitConfig, GpFitLog, MAX_EXACT_POINTS,
};
pub use kernel::{cross_covariance, gram, kernel_eval, KernelHyperparams, KernelKind};
pub use sparse::{load_sparse, save_sparse, sparse_bound, sparse_fit, sparse_predict, sparse_predict_joint, SparseGpModel};

use crate::bayes::PredictiveDistribution;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GpBackend {
    Exact,
    Sparse { n_inducing: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum GpModel {
    Exact(ExactGpModel),
    Sparse(SparseGpModel),
}

impl GpModel {
    pub fn hyperparams(&self) -> &KernelHyperparams {
        match self {
            GpModel::Exact(m) => m.hyperparams(),
            GpModel::Sparse(m) => m.hyperparams(),
        }
    }

    pub fn train_x(&self) -> &[f64] {
        match self {
            GpModel::Exact(m) => m.train_x(),
            GpModel::Sparse(m) => m.train_x(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GpModel::Exact(m) => m.dim(),
            GpModel::Sparse(m) => m.dim(),
        }
    }

    pub fn predict(&self, xs: &[f64]) -> Result<PredictiveDistribution> {
        match self {
            GpModel::Exact(m) => exact_predict(m, xs),
            GpModel::Sparse(m) => sparse_predict(m, xs),
        }
    }

    pub fn predict_joint(&self, xs: &[f64]) -> Result<(Vec<f64>, DenseMatrix)> {
        match self {
            GpModel::Exact(m) => exact_predict_joint(m, xs),
            GpModel::Sparse(m) => sparse_predict_joint(m, xs),
        }
    }
}

/// Independent per-output GPs sharing one training input set.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiOutputGp {
    outputs: Vec<GpModel>,
}

impl MultiOutputGp {
    pub fn new(outputs: Vec<GpModel>) -> Result<Self> {
        let Some(first) = outputs.first() else {
            return Err(Error::Dimension("a multi-output GP needs at least one output".into()));
        };
        if outputs.iter().any(|m| m.dim() != first.dim() || m.train_x() != first.train_x()) {
            return Err(Error::Dimension("per-output GPs were conditioned on different inputs".into()));
        }
        Ok(MultiOutputGp { outputs })
    }

    pub fn outputs(&self) -> &[GpModel] {
        &self.outputs
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn predict(&self, xs: &[f64]) -> Result<PredictiveDistribution> {
        let parts = self.outputs.iter().map(|m| m.predict(xs)).collect::<Result<Vec<_>>>()?;
        PredictiveDistribution::stack_outputs(&parts)
    }

    pub fn save(&self, dir: &Path, meta: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (k, m) in self.outputs.iter().enumerate() {
            let path = dir.join(format!("output_{k}.bin"));
            match m {
                GpModel::Exact(e) => save_exact(e, meta.clone(), &path)?,
                GpModel::Sparse(s) => save_sparse(s, meta.clone(), &path)?,
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path, backend: GpBackend, n_outputs: usize) -> Result<Self> {
        let mut outputs = Vec::with_capacity(n_outputs);
        for k in 0..n_outputs {
            let path = dir.join(format!("output_{k}.bin"));
            if !path.exists() {
                return Err(Error::Missing(format!("GP checkpoint {}", path.display())));
            }
            outputs.push(match backend {
                GpBackend::Exact => GpModel::Exact(load_exact(&path)?.0),
                GpBackend::Sparse { .. } => GpModel::Sparse(load_sparse(&path)?.0),
            });
        }
        MultiOutputGp::new(outputs)
    }
}

/// Fits one GP per column of `y` (row-major, `n_outputs` wide).
pub fn fit_multi_output(
    x: &[f64],
    dim: usize,
    y: &[f64],
    n_outputs: usize,
    backend: GpBackend,
    init: KernelHyperparams,
    cfg: &GpFitConfig,
) -> Result<(MultiOutputGp, Vec<GpFitLog>)> {
    if n_outputs == 0 || y.len() % n_outputs != 0 {
        return Err(Error::Dimension(format!("{} targets cannot be split into {n_outputs} outputs", y.len())));
    }
    let mut outputs = Vec::with_capacity(n_outputs);
    let mut logs = Vec::with_capacity(n_outputs);
    for k in 0..n_outputs {
        let yk: Vec<f64> = y.iter().skip(k).step_by(n_outputs).copied().collect();
        let cfg_k = GpFitConfig {
            seed: derive_seed(cfg.seed, &format!("gp/output{k}")),
            ..cfg.clone()
        };
        let (model, log) = match backend {
            GpBackend::Exact => {
                let (m, l) = exact_fit(x, dim, &yk, init, &cfg_k)?;
                (GpModel::Exact(m), l)
            }
            GpBackend::Sparse { n_inducing } => {
                let (m, l) = sparse_fit(x, dim, &yk, n_inducing, init, &cfg_k)?;
                (GpModel::Sparse(m), l)
            }
        };
        outputs.push(model);
        logs.push(log);
    }
    Ok((MultiOutputGp::new(outputs)?, logs))
}
