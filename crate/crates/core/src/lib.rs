//! Simulator for ultracold lattice bosons measured through cavity-enhanced
//! light scattering from the bonds between sites.
//!
//! The library builds the Bose-Hubbard Hamiltonian and the engineered
//! bond-coupled jump operators in an exact Fock basis, unravels the open
//! dynamics into photodetection quantum trajectories, integrates the
//! ensemble master equation, and computes the measurement / conserved /
//! emergent subspace projectors the dynamics gets confined to.

pub mod analysis;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod fock;
pub mod lightmatter;
pub mod linalg;
pub mod operator;
pub mod subspace;

pub use error::{Error, Result};
