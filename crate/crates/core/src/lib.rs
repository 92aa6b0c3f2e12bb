//! Deep active learning over pairwise gene-interaction matrices.
//!
//! A heterogeneous knowledge graph is encoded by an R-GCN, pretrained with a
//! DistMult link objective, and fine-tuned with a bilinear Softplus head on
//! revealed pair measurements. An ensemble of such members scores every
//! unrevealed pair and an acquisition rule picks the next batch.

pub mod activeloop;
pub mod error;
pub mod experiment;
pub mod heads;
pub mod hetgraph;
pub mod model;
pub mod numerics;
pub mod rgcn;
pub mod seed;
pub mod synthworld;
pub mod training;

pub use error::{Error, Result};
