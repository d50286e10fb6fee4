//! Monte-Carlo dropout: posterior samples are masked forward passes of one
//! network trained with the same drop probability.

use super::predictive::{MomentAccumulator, PredictiveDistribution};
use crate::error::{Error, Result};
use crate::mlp::{self, DropoutMask, MlpParams, N_OUTPUTS};
use crate::rng::seeded;

pub fn mcd_predictive(
    params: &MlpParams,
    xs: &[[f64; 2]],
    n_samples: usize,
    p: f64,
    seed: u64,
    retain: bool,
) -> Result<PredictiveDistribution> {
    if n_samples < 2 {
        return Err(Error::TooFewSamples(n_samples));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability must be in [0, 1), got {p}")));
    }
    let mut rng = seeded(seed);
    let mut acc = MomentAccumulator::new(retain);
    for _ in 0..n_samples {
        let mask = DropoutMask::sample(p, &mut rng);
        let pred = mlp::predict_batch(params, xs, Some(&mask))?;
        acc.push(pred.as_flattened())?;
    }
    acc.finish(N_OUTPUTS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> Vec<[f64; 2]> {
        (0..25).map(|i| [(i % 5) as f64 - 2.0, (i / 5) as f64 - 2.0]).collect()
    }

    #[test]
    fn no_dropout_means_no_variance() {
        let p = MlpParams::init_he(3);
        let d = mcd_predictive(&p, &inputs(), 10, 0.0, 1, false).unwrap();
        assert!(d.var().iter().all(|v| *v == 0.0));
        let det = mlp::predict_batch(&p, &inputs(), None).unwrap();
        assert_eq!(d.mean(), det.as_flattened());
    }

    #[test]
    fn sample_count_contract() {
        let p = MlpParams::init_he(3);
        assert!(matches!(mcd_predictive(&p, &inputs(), 1, 0.1, 1, false), Err(Error::TooFewSamples(1))));
    }

    #[test]
    fn retained_samples_match_mcd_sampler() {
        let p = MlpParams::init_he(4);
        let xs = inputs();
        let d = mcd_predictive(&p, &xs, 6, 0.3, 9, true).unwrap();
        let raw = mlp::mc_dropout_predict(&p, &xs, 6, 0.3, 9).unwrap();
        for (s, r) in raw.iter().enumerate() {
            assert_eq!(d.sample(s).unwrap(), r.as_flattened());
        }
    }
}
