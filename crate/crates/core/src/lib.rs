//! Training-free inference-time adaptation of a small discrete-diffusion
//! routing solver, with exact oracles for small instances.

pub mod adapt;
pub mod decode;
pub mod denoiser;
pub mod diffusion;
pub mod energy;
pub mod error;
pub mod guidance;
pub mod instances;
pub mod matrix;
pub mod oracles;

pub use error::{Error, Result};
pub use instances::{Instance, ProblemKind};
pub use matrix::{DistanceMatrix, Heatmap, SquareMatrix};
