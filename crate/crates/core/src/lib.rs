//! Referring video object segmentation tooling: key-frame sampling, mask
//! propagation through pluggable backends, pixel-vote ensembling of expert
//! predictions, and J / F / J&F evaluation over benchmark mask trees.
//!
//! The modules build on each other bottom-up:
//!
//! - [`mask`]: dense binary masks, RLE and PNG codecs, IoU and morphology.
//! - [`dataset`]: `meta_expressions.json` parsing and mask-tree I/O.
//! - [`sampler`]: uniform and first-k key-frame plans.
//! - [`pipeline`]: key-frame segmentation plus temporal propagation.
//! - [`fusion`]: strict-majority voting across prediction sets.
//! - [`metrics`]: region similarity, boundary F-measure, aggregation.
//! - [`report`] and [`runner`]: the command workflows behind the CLI.

// Errors carry the offending key, frame and path; they are not on a hot path.
#![allow(clippy::result_large_err)]

pub mod dataset;
pub mod fusion;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod runner;
pub mod sampler;
pub mod seed;
pub mod synthetic;

pub use dataset::{DatasetIndex, ExpressionRecord, SequenceKey, SequenceMap, VideoRecord};
pub use mask::{iou, BinaryMask, MaskSequence, RleMask, Shape};
pub use metrics::{AggregateReport, MetricsRecord, Summary};
pub use runner::{RunConfig, RunError};
