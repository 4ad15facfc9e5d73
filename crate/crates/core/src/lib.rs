//! Geometry of the training manifold of linear models.
//!
//! Gradient-descent trajectories of an over-parameterized linear model live,
//! in residual space, on a low-dimensional "hyper-ribbon". This crate
//! simulates ensembles of such trajectories, computes their PCA spectrum both
//! empirically and in closed form, and evaluates the analytic eigenvalue
//! bounds that explain the geometric decay of that spectrum.
//!
//! Module map:
//!
//! - [`specgen`]: synthetic sloppy datasets and slope estimation.
//! - [`dynamics`]: residual dynamics for GD, Langevin SGD, weight decay and
//!   kernel gradient descent.
//! - [`manifold`]: empirical and analytic PCA matrices, Lyapunov machinery.
//! - [`bounds`]: eigenvalue bounds and dominance reports.
//! - [`phase`]: hyper-ribbon dimension sweeps and contour extraction.
//! - [`formats`]: on-disk encodings (HRB1 ensembles, CSV tables).

pub mod bounds;
pub mod dynamics;
pub mod error;
pub mod formats;
pub mod linalg;
pub mod manifold;
pub mod phase;
pub mod rng;
pub mod specgen;

pub use error::{Error, Result};
