//! Transmission-risk analytics on bipartite people-location networks.
//!
//! The pipeline runs from mobility records ([`ingest`]) to a bipartite network
//! ([`graph`]), PageRank and source-seeded Personalized PageRank scores
//! ([`rank`]), a first-generation transmission simulation used as ground
//! truth ([`simulate`]), testing priority orders for five tracing strategies
//! ([`strategy`]) and recall, zone accuracy and Spearman metrics
//! ([`evaluate`]). [`experiment`] wires the steps together and [`cli`] exposes
//! them as the `mobrisk` command.

pub mod cli;
pub mod evaluate;
pub mod experiment;
pub mod graph;
pub mod ingest;
pub mod rank;
pub mod simulate;
pub mod strategy;

pub use graph::{BipartiteGraph, NodeClass, NodeRef, Weighting};
pub use ingest::{MobilityDataset, VisitRecord};
pub use rank::{RankConfig, ScoreVector};
pub use strategy::StrategyKind;
