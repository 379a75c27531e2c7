//! Polynomial node tokens, node-wise attention filters and the PolyFormer
//! stack, with an exact eigendecomposition oracle for spectral checks.

pub mod autodiff;
pub mod basis;
pub mod cache;
pub mod error;
pub mod filter;
pub mod graph;
pub mod io;
pub mod kmeans;
pub mod linalg;
pub mod matrix;
pub mod model;
pub mod polyattn;
pub mod synth;
pub mod tokens;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
