//! Bipartite people-location network stored as a symmetric CSR adjacency.
//!
//! Node indices are laid out as all persons first, then all locations, each
//! block sorted lexicographically by token. Every undirected visit edge is
//! stored once in each endpoint's adjacency row.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::ingest::MobilityDataset;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("cannot build a graph from an empty dataset")]
    EmptyDataset,
    #[error("unknown node {0}")]
    UnknownNode(NodeRef),
    #[error("invalid node reference `{0}`: expected person:<id> or location:<id>")]
    BadNodeRef(String),
    #[error("unknown weighting `{0}`: expected binary or count")]
    BadWeighting(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeClass {
    Person,
    Location,
}

impl NodeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeClass::Person => "person",
            NodeClass::Location => "location",
        }
    }
}

impl fmt::Display for NodeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A node identity: the same token may name both a person and a location.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub class: NodeClass,
    pub id: String,
}

impl NodeRef {
    pub fn person(id: impl Into<String>) -> Self {
        Self {
            class: NodeClass::Person,
            id: id.into(),
        }
    }

    pub fn location(id: impl Into<String>) -> Self {
        Self {
            class: NodeClass::Location,
            id: id.into(),
        }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.class, self.id)
    }
}

impl FromStr for NodeRef {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (class, id) = s
            .split_once(':')
            .ok_or_else(|| GraphError::BadNodeRef(s.to_string()))?;
        if !crate::ingest::is_valid_token(id) {
            return Err(GraphError::BadNodeRef(s.to_string()));
        }
        match class {
            "person" | "p" => Ok(NodeRef::person(id)),
            "location" | "l" => Ok(NodeRef::location(id)),
            _ => Err(GraphError::BadNodeRef(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Weighting {
    #[default]
    Binary,
    VisitCount,
}

impl FromStr for Weighting {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(Weighting::Binary),
            "count" => Ok(Weighting::VisitCount),
            _ => Err(GraphError::BadWeighting(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    persons: Vec<String>,
    locations: Vec<String>,
    person_index: HashMap<String, usize>,
    location_index: HashMap<String, usize>,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<u64>,
    weighting: Weighting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSummary {
    pub persons: usize,
    pub locations: usize,
    pub edges: usize,
    pub mean_person_degree: f64,
    pub mean_location_degree: f64,
}

impl fmt::Display for GraphSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} persons, {} locations, {} edges (mean degree: persons {:.2}, locations {:.2})",
            self.persons,
            self.locations,
            self.edges,
            self.mean_person_degree,
            self.mean_location_degree
        )
    }
}

fn sorted_tokens<'a>(it: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut tokens: Vec<&str> = it.collect();
    tokens.sort_unstable();
    tokens.dedup();
    tokens.into_iter().map(String::from).collect()
}

impl BipartiteGraph {
    /// Builds the network: one edge per distinct (person, location) pair seen
    /// in `dataset`, weighted 1 or by the number of visits.
    pub fn build(dataset: &MobilityDataset, weighting: Weighting) -> Result<Self, GraphError> {
        if dataset.visits.is_empty() {
            return Err(GraphError::EmptyDataset);
        }
        let persons = sorted_tokens(dataset.visits.iter().map(|v| v.person.as_str()));
        let locations = sorted_tokens(dataset.visits.iter().map(|v| v.location.as_str()));
        let person_index: HashMap<String, usize> = persons
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        let location_index: HashMap<String, usize> = locations
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();

        let mut pairs: Vec<(usize, usize)> = dataset
            .visits
            .iter()
            .map(|v| (person_index[&v.person], location_index[&v.location]))
            .collect();
        pairs.sort_unstable();

        // (person, location, visit count), sorted by person then location
        let mut edges: Vec<(usize, usize, u64)> = Vec::new();
        for (p, l) in pairs {
            match edges.last_mut() {
                Some(last) if last.0 == p && last.1 == l => last.2 += 1,
                _ => edges.push((p, l, 1)),
            }
        }
        if weighting == Weighting::Binary {
            edges.iter_mut().for_each(|e| e.2 = 1);
        }

        let n_p = persons.len();
        let n = n_p + locations.len();
        let mut degree = vec![0usize; n];
        for &(p, l, _) in &edges {
            degree[p] += 1;
            degree[n_p + l] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n].to_vec();
        let mut targets = vec![0usize; offsets[n]];
        let mut weights = vec![0u64; offsets[n]];
        // edges are sorted by (person, location), so both row kinds come out sorted
        for &(p, l, w) in &edges {
            let lp = n_p + l;
            targets[cursor[p]] = lp;
            weights[cursor[p]] = w;
            cursor[p] += 1;
            targets[cursor[lp]] = p;
            weights[cursor[lp]] = w;
            cursor[lp] += 1;
        }

        Ok(Self {
            persons,
            locations,
            person_index,
            location_index,
            offsets,
            targets,
            weights,
            weighting,
        })
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn node_count(&self) -> usize {
        self.persons.len() + self.locations.len()
    }

    pub fn person_count(&self) -> usize {
        self.persons.len()
    }

    pub fn location_count(&self) -> usize {
        self.locations.len()
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn persons(&self) -> &[String] {
        &self.persons
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn index_of(&self, node: &NodeRef) -> Option<usize> {
        match node.class {
            NodeClass::Person => self.person_index.get(&node.id).copied(),
            NodeClass::Location => self
                .location_index
                .get(&node.id)
                .map(|i| i + self.persons.len()),
        }
    }

    pub fn contains(&self, node: &NodeRef) -> bool {
        self.index_of(node).is_some()
    }

    fn require(&self, node: &NodeRef) -> Result<usize, GraphError> {
        self.index_of(node)
            .ok_or_else(|| GraphError::UnknownNode(node.clone()))
    }

    pub fn node_at(&self, index: usize) -> NodeRef {
        if index < self.persons.len() {
            NodeRef::person(self.persons[index].clone())
        } else {
            NodeRef::location(self.locations[index - self.persons.len()].clone())
        }
    }

    pub fn class_at(&self, index: usize) -> NodeClass {
        if index < self.persons.len() {
            NodeClass::Person
        } else {
            NodeClass::Location
        }
    }

    /// All nodes in index order.
    pub fn nodes(&self) -> Vec<NodeRef> {
        (0..self.node_count()).map(|i| self.node_at(i)).collect()
    }

    /// Adjacency row of `index` as parallel slices of neighbor indices and weights.
    pub fn row(&self, index: usize) -> (&[usize], &[u64]) {
        let span = self.offsets[index]..self.offsets[index + 1];
        (&self.targets[span.clone()], &self.weights[span])
    }

    pub fn degree_at(&self, index: usize) -> usize {
        self.offsets[index + 1] - self.offsets[index]
    }

    pub fn weighted_degree_at(&self, index: usize) -> u64 {
        self.row(index).1.iter().sum()
    }

    /// Number of incident edges, ignoring weights.
    pub fn degree(&self, node: &NodeRef) -> Result<usize, GraphError> {
        Ok(self.degree_at(self.require(node)?))
    }

    /// Neighbors in index order, which is token order within the opposite class.
    pub fn neighbors(&self, node: &NodeRef) -> Result<Vec<(NodeRef, u64)>, GraphError> {
        let (targets, weights) = self.row(self.require(node)?);
        Ok(targets
            .iter()
            .zip(weights)
            .map(|(&t, &w)| (self.node_at(t), w))
            .collect())
    }

    /// Edges as `(person index, location index, weight)` with location
    /// indices relative to the location block.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        let n_p = self.persons.len();
        (0..n_p).flat_map(move |p| {
            let (t, w) = self.row(p);
            t.iter().zip(w).map(move |(&l, &w)| (p, l - n_p, w))
        })
    }

    pub fn summary(&self) -> GraphSummary {
        let edges = self.edge_count() as f64;
        GraphSummary {
            persons: self.person_count(),
            locations: self.location_count(),
            edges: self.edge_count(),
            mean_person_degree: edges / self.person_count() as f64,
            mean_location_degree: edges / self.location_count() as f64,
        }
    }

    /// Writes the edge list as CSV `class_u,u,class_v,v,weight`.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "class_u,u,class_v,v,weight")?;
        for (p, l, w) in self.edges() {
            writeln!(
                out,
                "person,{},location,{},{}",
                self.persons[p], self.locations[l], w
            )?;
        }
        Ok(())
    }
}
