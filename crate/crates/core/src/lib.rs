//! Heatmap and depth-volume codecs, soft-argmax decoding, a residual
//! lifting network and pose metrics for monocular 3D pose estimation.
//!
//! Everything is double precision and CPU-only. Coordinates: 3D poses in mm
//! (camera frame x right, y down, z forward), 2D poses in pixels with pixel
//! centers at integer coordinates, root-relative depth `z_root - z_joint`.

pub mod cli;
pub mod datagen;
pub mod depthvol;
pub mod error;
pub mod gradcheck;
pub mod heatmap;
pub mod io;
pub mod lifting;
pub mod metrics;
pub mod pipeline;
pub mod skeleton;
pub mod softargmax;
pub mod tensor_file;

pub use error::{Error, Result};
