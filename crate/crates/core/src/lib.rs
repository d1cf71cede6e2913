//! Finite-time Lyapunov exponent fields for passive and actively controlled
//! agents in unsteady planar flows.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only pure numerics:
//! analytic velocity fields, fixed-step integrators, flow-map Jacobians and
//! FTLE fields, a box-constrained finite-horizon optimal-control solver,
//! space-time policy grids, and the cost-landscape diagnostics that tie the
//! two together. File formats, configuration and the command-line driver
//! live in the companion `cftle` crate.
//!
//! Grid-wide work goes through an [`Executor`], so a caller can supply a
//! thread pool; every executor must return results in index order, which
//! makes all grid outputs independent of scheduling.
#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod flowfield;
pub mod ftle;
pub mod grid;
pub mod math;
pub mod ocp;
pub mod odeint;
pub mod policy;
pub mod vec2;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use flowfield::{AnalyticFlow, DomainBox, DoubleGyreParams, VelocityField};
pub use grid::{GridSpec, ScalarField, VectorField};
pub use vec2::{Mat2, Vec2};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
