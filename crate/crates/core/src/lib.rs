//! Quantification of intracellular parasite infection in multi-channel
//! fluorescence microscopy.
//!
//! The crate follows the image through the stages of the analysis:
//!
//! * [`raster`]: planes, channel splitting, overlays
//! * [`preprocess`]: histograms, contrast stretch, equalization, Gaussian blur
//! * [`segment`]: peak analysis, (multi-)Otsu thresholding, connected components
//! * [`features`]: area, centroid, bounding box, chain-code shape descriptor
//! * [`classify`]: zoom estimation, rule-based and SVM nuclei counting, voting
//! * [`mixture`]: k-means seeding and EM Gaussian mixtures for declustering
//! * [`associate`]: parasite to macrophage assignment
//! * [`report`]: infection statistics, text report, evaluation against annotations
//! * [`synth`]: synthetic scenes with exact ground truth
//! * [`pipeline`]: the end-to-end per-image workflow

pub mod associate;
pub mod classify;
mod error;
pub mod features;
pub mod mixture;
pub mod pipeline;
pub mod preprocess;
pub mod raster;
pub mod report;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
