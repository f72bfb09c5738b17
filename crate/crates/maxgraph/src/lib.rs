//! Solver and verification suite for the Dirichlet problem of spacelike
//! maximal graphs in the split-signature space R^{n,m}.
//!
//! The crate solves the quasilinear elliptic system for a vector-valued
//! graph function `u: Ω → R^m` with prescribed acausal boundary data, and
//! provides numerical certificates for the structural properties of the
//! solutions: uniqueness across solve routes, volume maximality, gradient
//! and ellipticity bounds, barrier comparison, and Ricci non-negativity.

pub mod analysis;
pub mod barrier;
pub mod boundary;
pub mod config;
pub mod element;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod lorentz;
pub mod quadrature;
pub mod solver;

pub use error::{Error, Result};
