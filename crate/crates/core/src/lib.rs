//! Femoral-head auto-segmentation toolkit for pelvic CT.
//!
//! Image operators, a declarative pipeline engine, DICOM ingestion, the
//! femur delineation procedure and evaluation metrics.

pub mod dicom;
pub mod edges;
pub mod error;
pub mod evaluation;
pub mod femur;
pub mod filters;
pub mod geometry;
pub mod image;
pub mod morphology;
pub mod phantom;
pub mod pipeline;
pub mod point;
pub mod regions;
pub mod synth;

pub use error::{OpError, OpResult};
pub use image::{ImageBuffer, Kind};
