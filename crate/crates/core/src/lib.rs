//! Thermal-radiation rank relations for infrared object detection.
//!
//! The crate covers the whole knowledge pipeline:
//!
//! - [`ingest`] reduces annotated grayscale images to per-class mean gray values.
//! - [`rankcore`] ranks those values and measures agreement with Spearman's ρ.
//! - [`stability`] quantifies how consistently one class out-radiates another.
//! - [`weights`] turns agreement and stability into per-sample loss weights.
//! - [`radiance`] renders synthetic scenes through a Planck gray-body imaging chain.
//! - [`theorem`] evaluates the expected rank agreement of the Gaussian class model.
//! - [`trainer`] runs a small surrogate detector with and without reweighting.
//!
//! Weighting schemes and permutation-weighting engines are registered by name
//! (see [`registry`]) so callers can pick one at runtime.

pub mod artifact;
pub mod error;
pub mod ingest;
pub mod normal;
pub mod radiance;
pub mod rankcore;
pub mod registry;
pub mod stability;
pub mod theorem;
pub mod trainer;
pub mod weights;

pub use error::{Error, Result};
pub use ingest::{BoundingBox, ClassId, Dataset, GrayImage, ImageId, ImageRelation, PixelMask};
pub use rankcore::{RankVector, RelationPair};
pub use stability::{GaussianClassPair, StabilityMatrix};
pub use weights::{WeightConfig, WeightRecord};
