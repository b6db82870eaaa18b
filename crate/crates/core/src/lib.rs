//! Unsupervised rigid point-cloud registration by self-distillation.
//!
//! A momentum teacher network plus a learning-free robust solver (RANSAC,
//! optionally ICP) produce correspondence pseudo-labels on the fly. Those
//! labels supervise a student descriptor network through a
//! hardest-contrastive loss. Ground-truth poses are never read by training.

pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod solvers;
pub mod spatial;

pub use error::{Error, Result};
pub use geometry::{CorrespondenceSet, PointCloud, RigidTransform};
