//! Epistemic-uncertainty surrogates for an algebraic Reynolds-stress
//! turbulence closure.
//!
//! The crate generates closure data ([`arsm`], [`datagen`]), trains a small
//! fixed-shape network ([`mlp`]) and its Bayesian variants ([`bayes`]),
//! fits exact and inducing-point Gaussian processes ([`gp`]), and scores
//! accuracy and calibration ([`metrics`]). [`harness`] wires everything into
//! the `closure-uq` command-line pipeline.

pub mod arsm;
pub mod bayes;
pub mod container;
pub mod datagen;
pub mod error;
pub mod gp;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod mlp;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
