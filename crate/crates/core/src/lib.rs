//! Volumetric CT dataset toolkit.

pub mod batch;
pub mod dataset;
pub mod infer;
pub mod io;
pub mod json;
pub mod metrics;
pub mod orientation;
pub mod parallel;
pub mod preprocess;
pub mod volume;

pub use io::{read_volume, write_volume, FormatError, WriteOptions};
pub use orientation::{orientation_of, reorient, OrientationCode};
pub use volume::{ElementType, Geometry, Volume, VolumeError, VoxelBuffer};
