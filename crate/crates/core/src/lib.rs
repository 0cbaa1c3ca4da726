//! Joint continuous/discrete diffusion for parametric CAD sketches.
//!
//! Class labels and construction flags diffuse on the probability simplex
//! through Gaussian-Softmax noise, primitive parameters through ordinary
//! Gaussian diffusion, and every primitive of a sketch is noised and
//! denoised independently so the whole process commutes with reordering.

pub mod denoiser;
pub mod error;
pub mod gaussian;
pub mod gs_diffusion;
pub mod joint;
pub mod schedule;
pub mod simplex;
pub mod sketch;
pub mod verify;

pub use error::{Error, Result};
