//! Self-supervised voxel-SDF scene reconstruction from posed monocular video.

pub mod config;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod mpi;
pub mod optimize;
pub mod raster;
pub mod superpixel;
pub mod synth;
pub mod voxel;
