//! Effective drift and diffusion for nonlocal convolution-type operators with
//! periodic, non-symmetric jump kernels.
//!
//! The pipeline discretizes the unit torus, periodizes the jump kernel, solves
//! for the invariant density `v0`, the drift `b` and the correctors, and
//! assembles the effective matrix `Theta`. The [`evolution`] module checks the
//! resulting limit against direct simulation of the rescaled jump process, and
//! [`einstein`] studies the linear response of `b` to small antisymmetric
//! kernel perturbations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cell;
pub mod config;
pub mod einstein;
pub mod error;
pub mod evolution;
pub mod fft;
pub mod harness;
pub mod kernel;
pub mod krylov;
pub mod oracle;
pub mod quadrature;
pub mod torus;

pub use error::{Error, Result};
