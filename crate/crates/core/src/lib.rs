//! Semiparametric dual estimation of φ-mutual information.
//!
//! The mutual information I_φ(P) = D_φ(P, P₁⊗P₂) is estimated through its
//! dual representation over a parametric model h_θ for the density ratio
//! dP/d(P₁⊗P₂). On top of the estimator the crate provides independence tests
//! (asymptotic, exact χ², bootstrap), k-fold model selection, simulation
//! samplers and a Monte-Carlo power study harness.
#![allow(clippy::redundant_guards, clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod config;
pub mod distributions;
pub mod divergence;
pub mod error;
pub mod estimator;
pub mod io;
pub mod models;
pub mod numeric;
pub mod optim;
pub mod sample;
pub mod samplers;
pub mod selection;
pub mod study;
pub mod testing;

pub use divergence::DivergenceSpec;
pub use error::{Error, Interval, Result};
pub use estimator::{plugin_estimate, DualEstimate, ObjectiveContext};
pub use models::{BasisFn, BasisTerm, Family, Link, ModelSpec, ParamVector, RatioModel};
pub use sample::{CategoricalColumn, PairedSample, Value};
