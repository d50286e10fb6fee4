use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    #[serde(rename = "SE")]
    SquaredExponential,
    #[serde(rename = "MATERN_2_5")]
    Matern52,
}

/// `sigma1` is the signal variance, `sigma2` the length scale and `sigma_n`
/// the observation-noise standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma_n: f64,
    pub kind: KernelKind,
}

impl KernelHyperparams {
    pub fn new(kind: KernelKind, sigma1: f64, sigma2: f64, sigma_n: f64) -> Result<Self> {
        let hp = KernelHyperparams {
            sigma1,
            sigma2,
            sigma_n,
            kind,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0 && self.sigma_n >= 0.0)
            || !(self.sigma1.is_finite() && self.sigma2.is_finite() && self.sigma_n.is_finite())
        {
            return Err(Error::Domain(format!(
                "kernel hyperparameters need sigma1 > 0, sigma2 > 0, sigma_n >= 0; got {}, {}, {}",
                self.sigma1, self.sigma2, self.sigma_n
            )));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Covariance as a function of the squared distance.
#[inline]
pub fn kernel_r2(kind: KernelKind, sigma1: f64, sigma2: f64, r2: f64) -> f64 {
    match kind {
        KernelKind::SquaredExponential => sigma1 * (-r2 / (2.0 * sigma2 * sigma2)).exp(),
        KernelKind::Matern52 => {
            let s = 5f64.sqrt() * r2.sqrt() / sigma2;
            sigma1 * (1.0 + s + s * s / 3.0) * (-s).exp()
        }
    }
}

/// Covariance and its derivatives with respect to `ln sigma1` and `ln sigma2`.
#[inline]
pub fn kernel_r2_grad(kind: KernelKind, sigma1: f64, sigma2: f64, r2: f64) -> (f64, f64, f64) {
    match kind {
        KernelKind::SquaredExponential => {
            let k = sigma1 * (-r2 / (2.0 * sigma2 * sigma2)).exp();
            (k, k, k * r2 / (sigma2 * sigma2))
        }
        KernelKind::Matern52 => {
            let s = 5f64.sqrt() * r2.sqrt() / sigma2;
            let e = (-s).exp();
            let k = sigma1 * (1.0 + s + s * s / 3.0) * e;
            (k, k, sigma1 * e * s * s * (1.0 + s) / 3.0)
        }
    }
}

pub fn kernel_eval(kind: KernelKind, hp: &KernelHyperparams, xi: &[f64], xj: &[f64]) -> f64 {
    kernel_r2(kind, hp.sigma1, hp.sigma2, sq_dist(xi, xj))
}

/// `K(A, B)` for row-major point sets of dimension `dim`.
pub fn cross_covariance(hp: &KernelHyperparams, a: &[f64], b: &[f64], dim: usize) -> DenseMatrix {
    let (na, nb) = (a.len() / dim, b.len() / dim);
    let mut k = DenseMatrix::zeros(na, nb);
    for i in 0..na {
        let ai = &a[i * dim..(i + 1) * dim];
        let row = k.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = kernel_r2(hp.kind, hp.sigma1, hp.sigma2, sq_dist(ai, &b[j * dim..(j + 1) * dim]));
        }
    }
    k
}

/// `K(A, B)` together with its derivatives in `ln sigma1` and `ln sigma2`.
pub fn cross_covariance_grad(
    hp: &KernelHyperparams,
    a: &[f64],
    b: &[f64],
    dim: usize,
) -> (DenseMatrix, DenseMatrix, DenseMatrix) {
    let (na, nb) = (a.len() / dim, b.len() / dim);
    let mut k = DenseMatrix::zeros(na, nb);
    let mut d1 = DenseMatrix::zeros(na, nb);
    let mut d2 = DenseMatrix::zeros(na, nb);
    for i in 0..na {
        let ai = &a[i * dim..(i + 1) * dim];
        for j in 0..nb {
            let (v, g1, g2) = kernel_r2_grad(hp.kind, hp.sigma1, hp.sigma2, sq_dist(ai, &b[j * dim..(j + 1) * dim]));
            k[(i, j)] = v;
            d1[(i, j)] = g1;
            d2[(i, j)] = g2;
        }
    }
    (k, d1, d2)
}

/// Symmetric `K(A, A)`.
pub fn gram(hp: &KernelHyperparams, a: &[f64], dim: usize) -> DenseMatrix {
    let n = a.len() / dim;
    let mut k = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let ai = &a[i * dim..(i + 1) * dim];
        for j in 0..=i {
            let v = kernel_r2(hp.kind, hp.sigma1, hp.sigma2, sq_dist(ai, &a[j * dim..(j + 1) * dim]));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(kind: KernelKind) -> KernelHyperparams {
        KernelHyperparams::new(kind, 1.7, 0.6, 0.0).unwrap()
    }

    #[test]
    fn zero_separation_gives_signal_variance() {
        for kind in [KernelKind::SquaredExponential, KernelKind::Matern52] {
            assert_eq!(kernel_eval(kind, &hp(kind), &[0.3, 0.4], &[0.3, 0.4]), 1.7);
        }
    }

    #[test]
    fn se_at_exponent_minus_one() {
        let h = hp(KernelKind::SquaredExponential);
        // |xi - xj|^2 = 2 sigma2^2
        let d = (2.0f64).sqrt() * h.sigma2;
        let k = kernel_eval(h.kind, &h, &[0.0, 0.0], &[d, 0.0]);
        assert!((k - 1.7 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn matern_closed_form() {
        let h = hp(KernelKind::Matern52);
        let r: f64 = 0.9;
        let s = 5f64.sqrt() * r / 0.6;
        let expected = 1.7 * (1.0 + s + 5.0 * r * r / (3.0 * 0.36)) * (-s).exp();
        assert!((kernel_eval(h.kind, &h, &[0.0, 0.0], &[0.0, r]) - expected).abs() < 1e-15);
    }

    #[test]
    fn far_separation_vanishes() {
        for kind in [KernelKind::SquaredExponential, KernelKind::Matern52] {
            assert!(kernel_eval(kind, &hp(kind), &[0.0, 0.0], &[1e3, 0.0]) < 1e-300);
        }
    }

    #[test]
    fn derivatives_match_differences() {
        let h: f64 = 1e-6;
        for kind in [KernelKind::SquaredExponential, KernelKind::Matern52] {
            for r2 in [0.0, 0.04, 0.7, 3.0] {
                let (k, g1, g2) = kernel_r2_grad(kind, 1.3, 0.8, r2);
                assert_eq!(k, kernel_r2(kind, 1.3, 0.8, r2));
                let f1 = (kernel_r2(kind, 1.3 * h.exp(), 0.8, r2) - kernel_r2(kind, 1.3 * (-h).exp(), 0.8, r2)) / (2.0 * h);
                let f2 = (kernel_r2(kind, 1.3, 0.8 * h.exp(), r2) - kernel_r2(kind, 1.3, 0.8 * (-h).exp(), r2)) / (2.0 * h);
                assert!((g1 - f1).abs() < 1e-8, "{kind:?} {r2}");
                assert!((g2 - f2).abs() < 1e-8, "{kind:?} {r2}");
            }
        }
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(KernelHyperparams::new(KernelKind::Matern52, 0.0, 1.0, 0.0).is_err());
        assert!(KernelHyperparams::new(KernelKind::Matern52, 1.0, 1.0, -1e-3).is_err());
    }
}
