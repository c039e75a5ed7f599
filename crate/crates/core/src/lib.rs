//! Neighboring pixel relationship (NPR) forensics toolkit.
//!
//! The crate is split along the pipeline:
//!
//! * [`npr`] – the image container, NPR extraction and its visualizations.
//! * [`synthgen`] – seeded toy generator tails and procedural real textures.
//! * [`nn`] – tensors, convolution, the residual detector, BCE, Adam and training.
//! * [`data`] – corpus ingestion, preprocessing, splits and batching.
//! * [`eval`] – accuracy / average precision and the cross-source harness.
//! * [`experiment`] – the end-to-end train-on-one-generator, test-on-another run.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod npr;
pub mod seed;
pub mod synthgen;

pub use error::{Error, Result};
pub use npr::{extract_npr, npr_difference, npr_heatmap, GridSpec, ImageTensor, NprMap, Pivot};
