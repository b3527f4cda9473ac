//! Transfer operators, invariant densities and linear response for
//! interval maps with a power-law cusp.
//!
//! The crate is organised bottom-up:
//!
//! - [`map_family`]: two-branch maps, the cusp tent family, assumption audits
//! - [`function_space`]: graded meshes, piecewise cubics, cusp-aware norms
//! - [`transfer_operator`]: `P`, its derivative actions, the Ulam matrix
//! - [`spectral`]: invariant densities, Ulam spectra, the resolvent
//! - [`response`]: the response kernel and the finite-difference sweep
//! - [`cli`]: configuration and the `cusp-response` commands

pub mod cli;
pub mod corpus;
pub mod error;
pub mod function_space;
pub mod map_family;
pub mod response;
pub mod spectral;
pub mod transfer_operator;

pub use error::{CuspError, Result};
