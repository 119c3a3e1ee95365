//! Entropy-regularised exploratory linear-quadratic control under
//! volatility ambiguity.
//!
//! The crate solves the scalar exploratory LQ problem in closed form, builds
//! the general Boltzmann policy by quadrature, simulates the controlled
//! dynamics under families of volatility scenarios, and runs a verification
//! harness (normality tests, sensitivity and convergence sweeps).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod lq;
pub mod model;
pub mod quadrature;
pub mod relaxed;
pub mod simulation;
pub mod stability;
pub mod stats;
pub mod verify;
pub mod volatility;

pub use error::{Error, Result};
pub use lq::{GaussianPolicy, HjbCoefficients, RootSelection};
pub use model::{AgentParams, AmbiguityBounds, ModelParams};
