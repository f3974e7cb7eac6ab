//! Band-edge scaling of random Jacobi matrices.
//!
//! The crate covers the whole chain from the random operator to the scaling
//! exponents: transfer matrices and their normal forms at a band edge,
//! Pruefer phase Monte Carlo, the perturbative Lyapunov/rotation formulas,
//! singular first order ODEs and the Fokker-Planck groundstate, and a driver
//! that compares simulation against the predicted scaling laws.

pub mod anomaly;
pub mod error;
pub mod fokker_planck;
pub mod harness;
pub mod mat2;
pub mod model;
pub mod pruefer;
pub mod quadrature;
pub mod singular_ode;
pub mod stats;
pub mod transfer;

pub use error::{Error, Result};
pub use mat2::{JetMat2, Mat2};
