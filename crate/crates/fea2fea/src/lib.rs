//! Structural-feature correlation analysis for graphs.
//!
//! The pipeline: compute five structural features per node (constant,
//! degree, clustering coefficient, PageRank, average shortest-path length),
//! train one small GNN per feature pair to measure how well each feature
//! predicts each other ("single" stage), filter feature combinations by a
//! redundancy threshold and train multi-input predictors ("multiple" stage),
//! and finally augment downstream node/graph classifiers with the surviving
//! structural embeddings ("application" stage).
//!
//! Everything is deterministic given a root seed; independent training
//! tasks run data-parallel under the default `parallel` feature and fall
//! back to sequential execution without it.

pub mod application;
pub mod binning;
pub mod error;
pub mod features;
pub mod graph;
pub mod multiple;
pub mod nn;
pub mod report;
pub mod single;
pub mod par;
pub mod seeds;
pub mod tensor;

pub use error::{Error, Result};
