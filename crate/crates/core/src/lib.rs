//! Particle-in-cell approximation of the spherically symmetric, asymptotically
//! flat Vlasov-Einstein system in Schwarzschild coordinates.
//!
//! The support of an initial phase-space density in `(r, w, L)` is cut into
//! small cells; each cell becomes a macro-particle carrying the integral of the
//! density over the cell. Particles are smeared in radius by a hat kernel, the
//! smeared sources determine the metric explicitly, and the particles follow
//! the characteristic system in that metric. Two time discretizations are
//! provided: classical RK4 on the semi-discrete ODE system, and a first-order
//! two-phase scheme which differences the cumulative kernel instead of the
//! kernel-weighted velocities.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod fields;
pub mod harness;
pub mod kernel;
pub mod phase_space;
pub mod quadrature;

pub use error::{Error, Result};
pub use exec::Execution;
pub use fields::{FieldSample, SortedFieldView};
pub use kernel::KernelWidth;
pub use phase_space::{InitialDatum, ParticleEnsemble, SupportBox};
