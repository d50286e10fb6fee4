//! First-order optimizers over flat parameter vectors. `step` always
//! descends; callers maximizing an objective pass the negated gradient.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd { momentum: 0.0 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        let v = match kind {
            OptimizerKind::Adam { .. } => vec![0.0; n],
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        Optimizer {
            kind,
            m: vec![0.0; n],
            v,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd { momentum } if momentum == 0.0 => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Sgd { momentum } => {
                for ((p, g), m) in params.iter_mut().zip(grad).zip(&mut self.m) {
                    *m = momentum * *m + g;
                    *p -= lr * *m;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.t as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimize(kind: OptimizerKind, lr: f64, steps: usize) -> Vec<f64> {
        // f(x) = (x0 - 3)^2 + 10 (x1 + 1)^2
        let mut x = vec![0.0, 0.0];
        let mut opt = Optimizer::new(kind, 2);
        for _ in 0..steps {
            let g = [2.0 * (x[0] - 3.0), 20.0 * (x[1] + 1.0)];
            opt.step(&mut x, &g, lr);
        }
        x
    }

    #[test]
    fn all_variants_reach_the_quadratic_minimum() {
        for (kind, lr) in [
            (OptimizerKind::sgd(), 0.04),
            (OptimizerKind::Sgd { momentum: 0.5 }, 0.02),
            (OptimizerKind::adam(), 0.05),
        ] {
            let x = minimize(kind, lr, 3000);
            assert!((x[0] - 3.0).abs() < 1e-6 && (x[1] + 1.0).abs() < 1e-6, "{kind:?} -> {x:?}");
        }
    }
}
