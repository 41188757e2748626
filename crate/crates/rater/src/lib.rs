//! Cluster rating classifier: kernel density voxelization of a point
//! cluster followed by a 3D convolutional network that sorts it into
//! single tree, multiple trees or not a tree.

pub mod augment;
pub mod error;
pub mod io;
pub mod kde;
pub mod net;
pub mod params;
pub mod real;
pub mod train;
pub mod weights;

pub use augment::{augment_rotation_z, rotate_z};
pub use error::{Error, Result};
pub use io::{load_params, read_params, save_params, write_params};
pub use kde::{kde_voxelize, kde_voxelize_as, kernel_mass, VoxelGrid};
pub use net::{forward, Mode};
pub use params::{RaterParams, Topology};
pub use real::Real;
pub use train::{train_rater, Rater, TrainingReport};
pub use weights::class_weights;
