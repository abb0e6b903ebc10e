//! Evaluation toolkit for radiological PCI (rPCI) region segmentation on CT.
//!
//! The crate covers the whole evaluation stack for the 13 rPCI regions:
//!
//! - [`volume`]: label / intensity volumes, voxel geometry and NIfTI-1 I/O.
//! - [`preprocess`]: mask-bounded cropping with a metric margin and
//!   spacing-aware multi-label dilation.
//! - [`metrics`]: Dice, HD95 and ASD on exact anisotropic Euclidean distance
//!   transforms, with a brute-force reference implementation.
//! - [`agreement`]: observer-vs-rest and model-vs-observers protocols.
//! - [`priors`]: the volume-balanced small-bowel fan around the mesenteric root.
//! - [`phantom`]: deterministic synthetic abdomens and observer perturbations.
//! - [`study`]: manifests, fold splits, aggregation and table reports.
//! - [`cli`]: the `rpci` command-line front end.
//!
//! Label convention: a stored voxel value `L > 0` denotes rPCI region `L - 1`;
//! `0` is background.

pub mod agreement;
pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
pub mod priors;
pub mod rng;
pub mod study;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{
    BinaryMask, BoundingBox, Geometry, LabelVolume, RegionId, ScalarVolume, Spacing,
    WorldTransform,
};
