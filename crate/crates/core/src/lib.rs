//! High-order nodal discontinuous Galerkin solver for hyperbolic
//! conservation laws on periodic Cartesian grids.
//!
//! Modules build on each other bottom-up: [`basis`] (Gauss-Lobatto nodes,
//! Lagrange basis, differentiation matrix), [`models`] (fluxes and
//! wavespeeds), [`grid`] (mesh, state storage, initial conditions,
//! integrals), [`solver`] (semi-discrete operator and Runge-Kutta stepping),
//! and [`partition`] with [`halo`] and [`transport`] for block-parallel runs.

pub mod basis;
pub mod grid;
pub mod halo;
pub mod models;
pub mod partition;
pub mod solver;
pub mod transport;

pub use basis::{gauss_lobatto, BasisError, NodalBasis, QuadratureRule, MAX_ORDER};
pub use grid::{GridError, Layout, Mesh, StateField};
pub use models::{EquationKind, EquationModel, ModelError};
pub use partition::{decompose, run_partitioned, BlockDecomposition, PartitionError, RunMode, TransportKind};
pub use solver::{advance, RkScheme, SolverConfig, SolverError, StepStats};
