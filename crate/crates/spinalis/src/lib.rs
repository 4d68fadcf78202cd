//! Lumbar-spine tumor analysis pipeline.
//!
//! The crate covers the full desk-scale workflow: seeded synthetic phantom
//! volumes, CSF-glide tumor augmentation, fuzzy c-means clustering, random
//! forest pixel segmentation, a from-scratch CNN for tumor typing, vertebra
//! labeling with tumor fusion, and the evaluation metrics used to score all
//! of it. Everything is deterministic given a seed.

pub mod augment;
pub mod cnn;
pub mod error;
pub mod fcm;
pub mod features;
pub mod forest;
pub mod io;
pub mod localize;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
pub mod regions;
pub mod segment;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{label, Mask2d, MaskSlice, MaskVolume, Slice, TumorType, Volume};
