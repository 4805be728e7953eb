//! Eigen-centrality self-attention.
//!
//! A sequence of hidden states is turned into a fully connected word graph by
//! a learned connectivity network, and each word's aggregation weight is its
//! eigenvector centrality in that graph. The dominant eigenvector comes from
//! the power method; its gradient is computed analytically at the fixed point
//! with `O(n²)` memory instead of by unrolling the iteration.
//!
//! Modules, bottom up:
//!
//! - [`numerics`]: dense matrices, softmax, RNG, finite differences
//! - [`adjacency`]: connectivity network and column-stochastic adjacency
//! - [`eigencentrality`]: power method and convergence statistics
//! - [`powergrad`]: analytic and unrolled gradients of the power method
//! - [`aggregators`]: eigen-centrality, self-attention, max and average pooling
//! - [`model`]: flat, hierarchical and pair (NLI) classifiers with manual backward
//! - [`gradcheck`]: randomized gradient and decay checks
//! - [`train`]: Adam, data ingestion, synthetic task, checkpoints, training loop
//! - [`cli`]: the `eigencent` command-line front end

pub mod adjacency;
pub mod aggregators;
pub mod cli;
pub mod eigencentrality;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod numerics;
pub mod powergrad;
pub mod train;

pub use error::{Error, Result};
