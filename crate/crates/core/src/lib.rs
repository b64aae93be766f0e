//! Numerics for singularly perturbed Hamilton–Jacobi equations: explicit
//! monotone solvers, dual Fokker–Planck runs, discounted cell problems,
//! ε-sweep rate fits and a mean field game of acceleration.

pub mod adjoint;
pub mod cell;
pub mod error;
pub mod grid;
pub mod hamiltonians;
pub mod hj;
pub mod io;
pub mod mfg;
pub mod plot;
pub mod rate;
pub mod runner;
pub mod scenarios;
pub mod transport;

pub use error::{Error, Result};
