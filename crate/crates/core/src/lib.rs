//! Overlap-tiled semantic mapping of large multi-band rasters.
//!
//! Scenes are sliced into padded, overlapping tiles, augmented with
//! normalized-difference indices, classified by a pluggable backend and
//! stitched back from tile centers only, so tile borders never reach the
//! output map.

pub mod backend;
pub mod classes;
pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod hash;
pub mod pipeline;
pub mod raster;
pub mod spectral;
pub mod synth;
pub mod tiling;

pub use error::{Error, ErrorKind, Result};
