//! Bayesian continual learning with mean-field Gaussian networks.
//!
//! The crate trains a sequence of tasks with variational continual learning:
//! each task's approximate posterior becomes the prior for the next. Two
//! additions sit on top of that loop:
//!
//! * [`optimizers`] can precondition gradients with the closed-form Fisher of a
//!   mean-field Gaussian (`ĝ_μ = σ² g_μ`, `ĝ_v = g_v / 2`) before handing them to
//!   SGD or Adam.
//! * [`coresets`] can refine a random coreset with Stein variational updates
//!   driven by the trained posterior.
//!
//! [`continual`] ties these together; [`tasks`] builds the task streams.

// guards of the form `!(x > 0.0)` are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bnn;
pub mod continual;
pub mod coresets;
pub mod error;
pub mod io;
pub mod math;
pub mod optimizers;
pub mod tasks;

pub use error::{Error, Result};
