//! Synthesis of labeled object-in-scene images.
//!
//! Object photos with rough masks are reduced to polar outlines and alpha
//! mattes, blended into scene images with Poisson editing, and labeled with
//! COCO-style polygon annotations. Every stage is deterministic for a given
//! seed.

pub mod blending;
pub mod cli;
pub mod coco;
pub mod error;
pub mod io;
pub mod matting;
pub mod outline;
pub mod pool;
pub mod raster;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
