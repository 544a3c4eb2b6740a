//! Maximal snake polyominoes: exact enumeration, structural classification and a
//! pixel-space denoising diffusion generator.

pub mod dataset;
pub mod diffusion;
pub mod enumerate;
pub mod eval;
pub mod grid;
pub mod nn;
