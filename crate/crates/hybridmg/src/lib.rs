//! Hybrid neural-network / geometric-multigrid solver for the 2D instationary
//! incompressible Navier-Stokes equations.
//!
//! The library couples a Q2/Q2 LPS-stabilized finite element solver (Newton +
//! GMRES with a V-cycle multigrid preconditioner and cell-based Vanka
//! smoothing) with a patch-local neural network that corrects coarse-grid
//! time steps on a finer mesh level. It ships the full pipeline around that
//! idea: mesh generation and refinement, training-data generation with noise
//! augmentation, from-scratch MLP/GRU/transformer training (including replay
//! finetuning), the hybrid time-stepping loop, and an evaluation metric
//! suite.
//!
//! Start from the `examples/` directory for runnable entry points per
//! capability, or use the `hybridmg` binary for config-driven workflows.

pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod fem;
pub mod hybrid;
pub mod linalg;
pub mod mesh;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod solver;
pub mod training;
pub mod transfer;

pub use error::{Error, Result};
