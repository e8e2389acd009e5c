//! Random walks in heavy-tailed trap environments on the discrete torus.
//!
//! The crate covers environment sampling and discretization, event-driven
//! simulation of the trap walk and of its trace on deep traps, exact linear
//! algebra for capacities and trace rates, truncated K-processes, and the
//! one-dimensional independent-particle hydrodynamics with its lattice
//! Krein–Feller solver.

pub mod environment;
pub mod error;
pub mod hydro;
pub mod kprocess;
pub mod lattice;
pub mod potential;
pub mod rng;
pub mod solver;
pub mod stats;
pub mod walk;

pub use error::{Result, TrapError};
pub use lattice::{Site, SiteSet, TorusSpec};
