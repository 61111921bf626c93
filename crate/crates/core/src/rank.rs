//! PageRank and source-seeded Personalized PageRank by synchronous power
//! iteration over the bipartite network.
//!
//! Each undirected visit edge carries mass in both directions. A node passes
//! `score * w / C` along an edge of weight `w`, where `C` is its weighted
//! degree. PageRank adds a uniform `(1 - d) / N` to every node; the
//! personalized variant instead adds the whole `(1 - d)` to the source, split
//! evenly when several sources are given.

use std::collections::BTreeSet;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{BipartiteGraph, NodeClass, NodeRef};

/// Graphs at least this large are updated with rayon. Each node's sum is
/// evaluated in adjacency order either way, so results are bit-identical.
const PARALLEL_THRESHOLD: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("damping must lie in [0, 1], got {0}")]
    Damping(f64),
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("max_iter must be at least 1")]
    MaxIter,
    #[error("cannot rank an empty graph")]
    EmptyGraph,
    #[error("personalized PageRank needs a source node")]
    MissingSource,
    #[error("source {0} is not in the graph")]
    UnknownSource(NodeRef),
    #[error("PageRank takes no source node")]
    UnexpectedSource,
    #[error("fraction must lie in (0, 1], got {0}")]
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankConfig {
    pub damping: f64,
    /// Per-node convergence threshold on the max-norm of successive iterates.
    pub tol: f64,
    pub max_iter: usize,
    /// Seed nodes for the personalized variant. One source is the usual
    /// case; several split the injection evenly.
    pub sources: Vec<NodeRef>,
    /// Divide the final scores by their sum. Rankings are unaffected.
    pub normalize: bool,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            damping: 0.85,
            tol: 1e-10,
            max_iter: 1000,
            sources: Vec::new(),
            normalize: false,
        }
    }
}

impl RankConfig {
    pub fn with_source(mut self, source: NodeRef) -> Self {
        self.sources = vec![source];
        self
    }

    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    pub fn validate(&self) -> Result<(), RankError> {
        if !(0.0..=1.0).contains(&self.damping) {
            return Err(RankError::Damping(self.damping));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(RankError::Tolerance(self.tol));
        }
        if self.max_iter == 0 {
            return Err(RankError::MaxIter);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    nodes: Vec<NodeRef>,
    scores: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ScoreVector {
    pub fn new(nodes: Vec<NodeRef>, scores: Vec<f64>, iterations: usize, converged: bool) -> Self {
        assert_eq!(nodes.len(), scores.len());
        Self {
            nodes,
            scores,
            iterations,
            converged,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, node: &NodeRef) -> Option<f64> {
        self.nodes
            .iter()
            .position(|n| n == node)
            .map(|i| self.scores[i])
    }

    pub fn values(&self) -> &[f64] {
        &self.scores
    }

    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeRef, f64)> {
        self.nodes.iter().zip(self.scores.iter().copied())
    }

    pub fn sum(&self) -> f64 {
        self.scores.iter().sum()
    }

    /// Writes `class,id,score,rank` rows in rank order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "class,id,score,rank")?;
        let index: std::collections::HashMap<&NodeRef, usize> =
            self.nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();
        for (rank, node) in rank_nodes(self, None).iter().enumerate() {
            let score = self.scores[index[node]];
            writeln!(out, "{},{},{},{}", node.class, node.id, score, rank + 1)?;
        }
        Ok(())
    }
}

/// Classic PageRank with uniform teleportation, starting from `1/N`.
pub fn pagerank(graph: &BipartiteGraph, config: &RankConfig) -> Result<ScoreVector, RankError> {
    config.validate()?;
    if !config.sources.is_empty() {
        return Err(RankError::UnexpectedSource);
    }
    let n = graph.node_count();
    if n == 0 {
        return Err(RankError::EmptyGraph);
    }
    let injection = vec![(1.0 - config.damping) / n as f64; n];
    Ok(iterate(graph, config, &injection))
}

/// Personalized PageRank seeded at `config.sources`, starting from `1/N`.
///
/// Only the sources receive the `(1 - d)` injection. Nodes the sources
/// cannot reach decay to zero.
pub fn personalized_pagerank(
    graph: &BipartiteGraph,
    config: &RankConfig,
) -> Result<ScoreVector, RankError> {
    config.validate()?;
    if config.sources.is_empty() {
        return Err(RankError::MissingSource);
    }
    let n = graph.node_count();
    if n == 0 {
        return Err(RankError::EmptyGraph);
    }
    let sources: BTreeSet<usize> = config
        .sources
        .iter()
        .map(|s| {
            graph
                .index_of(s)
                .ok_or_else(|| RankError::UnknownSource(s.clone()))
        })
        .collect::<Result<_, _>>()?;
    let share = (1.0 - config.damping) / sources.len() as f64;
    let mut injection = vec![0.0; n];
    for s in sources {
        injection[s] = share;
    }
    Ok(iterate(graph, config, &injection))
}

fn propagate(
    graph: &BipartiteGraph,
    damping: f64,
    injection: &[f64],
    outflow: &[f64],
    index: usize,
) -> f64 {
    let (targets, weights) = graph.row(index);
    let mut inflow = 0.0;
    for (&t, &w) in targets.iter().zip(weights) {
        inflow += w as f64 * outflow[t];
    }
    injection[index] + damping * inflow
}

fn iterate(graph: &BipartiteGraph, config: &RankConfig, injection: &[f64]) -> ScoreVector {
    let n = graph.node_count();
    let d = config.damping;
    let inv_out_degree: Vec<f64> = (0..n)
        .map(|i| 1.0 / graph.weighted_degree_at(i) as f64)
        .collect();
    let mut current = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut outflow = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iter {
        for ((o, &x), &inv) in outflow.iter_mut().zip(&current).zip(&inv_out_degree) {
            *o = x * inv;
        }
        if n >= PARALLEL_THRESHOLD {
            next.par_iter_mut()
                .enumerate()
                .for_each(|(i, v)| *v = propagate(graph, d, injection, &outflow, i));
        } else {
            for (i, v) in next.iter_mut().enumerate() {
                *v = propagate(graph, d, injection, &outflow, i);
            }
        }
        iterations += 1;
        let change = current
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut current, &mut next);
        if change < config.tol {
            converged = true;
            break;
        }
    }

    if config.normalize {
        let total: f64 = current.iter().sum();
        if total > 0.0 {
            current.iter_mut().for_each(|x| *x /= total);
        }
    }
    ScoreVector::new(graph.nodes(), current, iterations, converged)
}

/// Nodes in descending score order, ties broken by `(class, id)`.
pub fn rank_nodes(scores: &ScoreVector, class_filter: Option<NodeClass>) -> Vec<NodeRef> {
    let mut entries: Vec<(&NodeRef, f64)> = scores
        .iter()
        .filter(|(n, _)| class_filter.is_none_or(|c| n.class == c))
        .collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    entries.into_iter().map(|(n, _)| n.clone()).collect()
}

/// `ceil(fraction * len)`, tolerant of representation error in `fraction`
/// (e.g. `0.7 * 10` evaluates slightly above 7).
pub fn capacity_count(fraction: f64, len: usize) -> Result<usize, RankError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(RankError::Fraction(fraction));
    }
    let raw = fraction * len as f64;
    let count = (raw - 1e-9).ceil().max(0.0) as usize;
    Ok(count.clamp(len.min(1), len))
}

/// The first `ceil(fraction * len)` entries of `ranking`.
pub fn top_fraction<T: Ord + Clone>(
    ranking: &[T],
    fraction: f64,
) -> Result<BTreeSet<T>, RankError> {
    let k = capacity_count(fraction, ranking.len())?;
    Ok(ranking[..k].iter().cloned().collect())
}
