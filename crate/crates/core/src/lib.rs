//! Graph-aware weight initialization for graph convolutional networks.
//!
//! * [`graph`]: graphs, the renormalized adjacency, node data and file formats.
//! * [`init`]: classic and graph-aware per-layer weight-variance plans.
//! * [`gcn`]: a dense/sparse GCN with manual backpropagation and Adam.
//! * [`probe`]: empirical and theoretical per-layer variances.
//! * [`lab`]: path enumeration and checks on the independence assumptions.
//! * [`experiment`]: spec-file driven experiments shared with the CLI.

pub mod error;
pub mod experiment;
pub mod graph;
pub mod gcn;
pub mod init;
pub mod lab;
pub mod plot;
pub mod probe;
pub mod stats;

pub use error::{Error, Result};
