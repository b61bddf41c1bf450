//! Instance segmentation of elongated objects (fallen stems) from a
//! per-pixel probability raster by evolving many rectangle contours under a
//! shared energy, optimized with simulated annealing.

pub mod contour;
pub mod geometry;
pub mod raster_io;
pub mod priors;
pub mod sac_init;
pub mod energy;
pub mod anneal;
pub mod pipeline;
pub mod eval;
