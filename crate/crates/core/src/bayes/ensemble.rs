//! Naive deep ensembles: independently initialized and shuffled members,
//! equally weighted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::predictive::{MomentAccumulator, PredictiveDistribution};
use crate::error::{Error, Result};
use crate::mlp::{self, MlpParams, TrainConfig, TrainLog, N_OUTPUTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<MlpParams>,
    pub logs: Vec<TrainLog>,
    pub seeds: Vec<u64>,
}

impl EnsembleModel {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Trains `n_members` networks with seeds `base_seed + i`.
pub fn train_ensemble(
    train: (&[[f64; 2]], &[[f64; 3]]),
    val: (&[[f64; 2]], &[[f64; 3]]),
    cfg: &TrainConfig,
    n_members: usize,
    base_seed: u64,
) -> Result<EnsembleModel> {
    if n_members == 0 {
        return Err(Error::Config("an ensemble needs at least one member".into()));
    }
    let seeds: Vec<u64> = (0..n_members as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let trained: Vec<(MlpParams, TrainLog)> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let member_cfg = TrainConfig { seed, ..cfg.clone() };
            mlp::train(train.0, train.1, val.0, val.1, &member_cfg).map_err(|e| match e {
                Error::Divergence(msg) => Error::Divergence(format!("ensemble member {i}: {msg}")),
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let (members, logs) = trained.into_iter().unzip();
    Ok(EnsembleModel { members, logs, seeds })
}

/// Member average and unbiased member variance at every input.
pub fn ensemble_predict(m: &EnsembleModel, xs: &[[f64; 2]], retain: bool) -> Result<PredictiveDistribution> {
    if m.len() < 2 {
        return Err(Error::TooFewSamples(m.len()));
    }
    let preds: Vec<Vec<[f64; 3]>> = m
        .members
        .par_iter()
        .map(|p| mlp::predict_batch(p, xs, None))
        .collect::<Result<_>>()?;
    let mut acc = MomentAccumulator::new(retain);
    for p in &preds {
        acc.push(p.as_flattened())?;
    }
    acc.finish(N_OUTPUTS)
}
