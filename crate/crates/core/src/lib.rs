//! Strong sparse partition hierarchies built from dangling nets and cluster
//! aggregation, with solvers for general graphs, trees, bounded pathwidth and
//! bounded doubling dimension, plus checkers and universal Steiner tree
//! evaluation.

pub mod ca_doubling;
pub mod ca_general;
pub mod ca_pathwidth;
pub mod ca_tree;
pub mod dangling_net;
pub mod error;
pub mod graph;
pub mod hierarchy;
pub mod instances;
pub mod rng;
pub mod suite;
pub mod ust_eval;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{VertexSet, WeightedGraph};
pub use instances::{Assignment, ClusterAggInstance, Partition, PathDecomposition};
