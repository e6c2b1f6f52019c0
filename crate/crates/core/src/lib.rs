//! Prior-box layout design and detector scoring for small-object detection.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: boxes, IoU and the stride/IoU bound.
//! * [`netgraph`]: cumulative stride and receptive field of conv DAGs.
//! * [`priors`]: prior-box grids with sub-cell center offsets.
//! * [`matching`]: prior/ground-truth matching and coverage histograms.
//! * [`lossaudit`]: evaluation of the confidence, localization and state losses.
//! * [`nms`]: class-independent non-maximum suppression.
//! * [`evalkit`]: don't-care filtering, ROC over confidence, LAMR, per-width and
//!   per-track recall.
//! * [`records`], [`jsonl`], [`synth`], [`manifest`]: file formats and tooling
//!   shared by the command-line front end.

#[cfg(feature = "dtld")]
pub mod dtld;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod jsonl;
pub mod lossaudit;
pub mod manifest;
pub mod matching;
pub mod netgraph;
pub mod nms;
pub mod priors;
pub mod records;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::BoundingBox;
