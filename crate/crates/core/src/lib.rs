//! Individual identification from animal face images.
//!
//! The building blocks, in pipeline order:
//!
//! - [`dedup`]: per-identity near-duplicate filtering with SSIM
//! - [`providers`]: detector, segmenter and embedder seams (with mocks)
//! - [`landmarks`]: landmark disk masks and centroid extraction
//! - [`align`]: eye-line rotation and proportional face crop
//! - [`gallery`]: enrollment, cosine matching, binary persistence
//! - [`eval`]: splits, CMC, ROC and cross-validated rank tables
//! - [`pipeline`]: one image end to end
//!
//! [`imaging`] holds the pixel primitives, [`manifest`] the dataset format,
//! [`cli`] the command-line front end and [`synthetic`] a generator for
//! reproducible demo data.

pub mod align;
pub mod cli;
pub mod dedup;
pub mod eval;
pub mod gallery;
pub mod imaging;
pub mod landmarks;
pub mod manifest;
pub mod pipeline;
pub mod providers;
pub mod seeds;
pub mod synthetic;
