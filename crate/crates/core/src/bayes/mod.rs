//! Posterior approximations for the surrogate network and the reduction of
//! posterior samples to predictive moments.

pub mod dropout;
pub mod ensemble;
pub mod predictive;
pub mod svi;

pub use dropout::mcd_predictive;
pub use ensemble::{ensemble_predict, train_ensemble, EnsembleModel};
pub use predictive::{MomentAccumulator, PredictiveDistribution};
pub use svi::{
    elbo_and_grad, svi_predictive, train_svi, ParametricRegressor, ScaleKind, SurrogateNet, SviConfig, SviPosterior,
    SviPrior,
};
