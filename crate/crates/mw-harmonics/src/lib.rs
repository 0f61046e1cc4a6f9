//! Matrix-weighted multilinear harmonic analysis on discretized dyadic domains.

pub mod convex;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod czo;
pub mod maximal;
pub mod muckenhoupt;
pub mod nets;
pub mod par;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
