//! Per-frame localization on color-granulate industrial floors.
//!
//! A downward camera a few centimeters above the floor sees a random pattern
//! of red, green, blue and white granulate blobs on a black background.
//! This crate builds a keypoint map of that pattern from ground-truth-tagged
//! mapping runs and then estimates the camera pose of any single frame
//! against the map, with no temporal state: every frame is localized from
//! scratch, so a teleported ("kidnapped") camera recovers immediately.
//!
//! The crate ships a synthetic floor simulator with exact ground truth, so
//! the full pipeline runs and is measurable at desk scale:
//!
//! - [`floorsim`]: seeded floor generation, a calibrated close-up camera
//!   model, view rendering, mapping/evaluation run generation and dataset
//!   persistence.
//! - [`detector`]: color segmentation, connected-component labeling and the
//!   keypoint eligibility rules.
//! - [`descriptor`]: rotation-normalized patches and a 30-dimensional
//!   L2-normalized descriptor.
//! - [`mapper`]: pose-outlier filtering, keypoint projection, density
//!   clustering and map construction.
//! - [`mapdb`]: the persistent map database with exact and approximate
//!   cosine k-NN queries.
//! - [`localizer`]: retrieval, mode filtering and RANSAC alignment per
//!   frame.
//! - [`harness`]: experiment driver, success metrics and report emission.
//!
//! See the crate examples for runnable entry points per capability, and the
//! `floorloc` binary for the equivalent command-line interface.

pub mod color;
pub mod config;
pub mod descriptor;
pub mod detector;
pub mod floorsim;
pub mod geometry;
pub mod harness;
pub mod image;
pub mod localizer;
pub mod mapdb;
pub mod mapper;
pub mod pipeline;

pub use color::{BlobColor, ColorClass, Palette};
pub use floorsim::{CameraModel, FloorSpec, FloorTruth, Frame, PoseLog, PoseSample};
pub use geometry::{Pose2D, RansacParams, RigidTransform2D};

/// Derives an independent RNG seed from a base seed and a salt (splitmix64
/// finalizer). Used to give every frame, run and subsystem its own stream
/// while staying reproducible from one top-level seed.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
