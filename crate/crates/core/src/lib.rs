//! Spectral analysis of the three-particle lattice operator
//! `H = H0 - mu1 V1 - mu2 V2` on `L2(T3 x T3)`.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice_model`]: torus points, dispersions, form factors, reference models
//!   and sampled checks of the standing hypotheses.
//! * [`quadrature`]: periodic trapezoid rules on the 3-torus, including a
//!   singularity-subtracted rule for integrands with a quadratic zero in the
//!   denominator.
//! * [`friedrichs`]: the fiber operators `h_alpha(p)`, their Fredholm
//!   determinant, bound-state branch and threshold analysis.
//! * [`spectrum`]: bands of the essential spectrum and the coupling regime.
//! * [`birman_schwinger`]: Nystrom discretisation of the compact operator
//!   `T(z)` and eigenvalue counting below the essential spectrum.
//! * [`efimov`]: the Efimov constant from the Sobolev-type operators and the
//!   growth fit of `N(z)`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod birman_schwinger;
pub mod efimov;
mod error;
pub mod friedrichs;
pub mod lattice_model;
pub mod linalg;
mod numeric;
pub mod quadrature;
pub mod spectrum;

pub use error::{Error, Result};
pub use lattice_model::{Channel, Dispersion, FormFactor, HessianBlocks, ModelSpec, Parity, TorusPoint};
pub use quadrature::{QuadratureResult, UniformGrid};
