//! Multi-task segmentation engine built on a universal mask-proposal
//! representation: task-specific MERGE operations, Hungarian matching, fully-
//! and weakly-supervised losses with analytic gradients, inference
//! post-processing, standard metrics (PQ / mIoU / mask AP), and a desk-scale
//! multi-dataset co-training harness on synthetic data.

pub mod embedding;
pub mod error;
pub mod losses;
pub mod merge;
pub mod rle;
pub mod types;

pub use error::{Error, Result};
