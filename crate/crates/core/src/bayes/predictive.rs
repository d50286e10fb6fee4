//! Sample-moment reduction shared by every posterior approximation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-point predictive mean and diagonal variance, stored row-major as
/// `n_points x n_outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    n_outputs: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
    /// Number of posterior samples behind the moments; 0 for analytic ones.
    n_samples: usize,
    /// Raw samples, `n_samples x n_points x n_outputs`, when retained.
    #[serde(skip)]
    samples: Option<Vec<f64>>,
}

impl PredictiveDistribution {
    /// Wraps closed-form moments. Negative variances are rejected.
    pub fn from_moments(mean: Vec<f64>, var: Vec<f64>, n_outputs: usize) -> Result<Self> {
        if n_outputs == 0 || mean.len() != var.len() || mean.len() % n_outputs != 0 {
            return Err(Error::Dimension(format!(
                "{} means and {} variances do not form rows of {n_outputs}",
                mean.len(),
                var.len()
            )));
        }
        if var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("predictive variances must be non-negative".into()));
        }
        Ok(PredictiveDistribution {
            n_outputs,
            mean,
            var,
            n_samples: 0,
            samples: None,
        })
    }

    /// Unbiased sample mean and variance over a set of equally shaped
    /// prediction vectors.
    pub fn from_samples<'a, I>(samples: I, n_outputs: usize, retain: bool) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut acc = MomentAccumulator::new(retain);
        for s in samples {
            acc.push(s)?;
        }
        acc.finish(n_outputs)
    }

    pub fn n_points(&self) -> usize {
        self.mean.len() / self.n_outputs
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn mean_at(&self, i: usize) -> &[f64] {
        &self.mean[i * self.n_outputs..(i + 1) * self.n_outputs]
    }

    pub fn var_at(&self, i: usize) -> &[f64] {
        &self.var[i * self.n_outputs..(i + 1) * self.n_outputs]
    }

    pub fn std(&self) -> Vec<f64> {
        self.var.iter().map(|v| v.sqrt()).collect()
    }

    pub fn samples(&self) -> Option<&[f64]> {
        self.samples.as_deref()
    }

    /// Sample `s` as a flat `n_points x n_outputs` slice.
    pub fn sample(&self, s: usize) -> Option<&[f64]> {
        let len = self.mean.len();
        self.samples.as_ref().map(|v| &v[s * len..(s + 1) * len])
    }

    /// Restriction to a subset of points, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let d = self.n_outputs;
        let pick = |v: &[f64]| idx.iter().flat_map(|&i| v[i * d..(i + 1) * d].iter().copied()).collect::<Vec<_>>();
        let samples = self.samples.as_ref().map(|all| {
            let len = self.mean.len();
            (0..self.n_samples).flat_map(|s| pick(&all[s * len..(s + 1) * len])).collect()
        });
        PredictiveDistribution {
            n_outputs: d,
            mean: pick(&self.mean),
            var: pick(&self.var),
            n_samples: self.n_samples,
            samples,
        }
    }

    /// Joins per-output single-column distributions into one with
    /// `parts.len()` outputs.
    pub fn stack_outputs(parts: &[PredictiveDistribution]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::Dimension("no outputs to stack".into()));
        };
        let n = first.n_points();
        if parts.iter().any(|p| p.n_outputs != 1 || p.n_points() != n) {
            return Err(Error::Dimension("stacked parts must be single-output and equally long".into()));
        }
        let d = parts.len();
        let mut mean = vec![0.0; n * d];
        let mut var = vec![0.0; n * d];
        for (o, p) in parts.iter().enumerate() {
            for i in 0..n {
                mean[i * d + o] = p.mean[i];
                var[i * d + o] = p.var[i];
            }
        }
        Self::from_moments(mean, var, d)
    }
}

/// Streaming mean/variance (Welford) over flat prediction vectors.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    retained: Option<Vec<f64>>,
}

impl MomentAccumulator {
    pub fn new(retain: bool) -> Self {
        MomentAccumulator {
            count: 0,
            mean: Vec::new(),
            m2: Vec::new(),
            retained: retain.then(Vec::new),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, sample: &[f64]) -> Result<()> {
        if self.count == 0 {
            self.mean = vec![0.0; sample.len()];
            self.m2 = vec![0.0; sample.len()];
        } else if sample.len() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "sample of length {} after samples of length {}",
                sample.len(),
                self.mean.len()
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let delta = x - *m;
            *m += delta / n;
            *s2 += delta * (x - *m);
        }
        if let Some(r) = &mut self.retained {
            r.extend_from_slice(sample);
        }
        Ok(())
    }

    pub fn finish(self, n_outputs: usize) -> Result<PredictiveDistribution> {
        if self.count < 2 {
            return Err(Error::TooFewSamples(self.count));
        }
        let denom = (self.count - 1) as f64;
        let var = self.m2.iter().map(|v| (v / denom).max(0.0)).collect();
        let mut p = PredictiveDistribution::from_moments(self.mean, var, n_outputs)?;
        p.n_samples = self.count;
        p.samples = self.retained;
        Ok(p)
    }
}
