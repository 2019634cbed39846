//! Evaluation and data-engineering toolkit for document parsing.
//!
//! The evaluation side scores model output against ground-truth page
//! elements: [`mgam`] aligns predictions to ground truth across segmentation
//! granularities, [`contentsim`] and [`tableteds`] supply the similarity
//! kernels, and [`protocol`] rolls per-page scores into tiered reports.
//!
//! The data-engine side covers cross-model consistency stratification
//! ([`cmcv`]), difficulty-aware sampling over embedding clusters ([`ddas`]),
//! the OTSL table codec ([`otsl`]) and document-assembly merging
//! ([`assembly`]).

pub mod assembly;
pub mod cmcv;
pub mod config;
pub mod contentsim;
pub mod ddas;
pub mod extract;
pub mod mgam;
pub mod otsl;
pub mod protocol;
pub mod tableteds;
pub mod types;

pub use types::{iou, BBox, BoxError, Category, DifficultyTier, DocElement, Rotation};
