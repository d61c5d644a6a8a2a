//! Simulation of independent Poisson/determinantal superpositions on finite
//! ground spaces, and recovery of both component laws from the generating
//! functional of the superposition alone.
//!
//! The recovery rests on a factorization: along any ray `z ↦ B(zφ)` the
//! Poisson factor is `exp(cz)` and never vanishes, while the determinantal
//! factor is the polynomial `det(I + zφK)` and is fixed by its zeros. Locating
//! the zeros of the product therefore splits it.

pub mod config;
pub mod disentangle;
pub mod error;
pub mod linalg;
pub mod model;
pub mod pgf;
pub mod samplers;
pub mod zeros;

pub use error::{Error, Result};
pub use nalgebra::DMatrix;
pub use nalgebra::Complex;

pub type C64 = nalgebra::Complex<f64>;
