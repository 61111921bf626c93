//! Testing priority orders for the five tracing strategies.
//!
//! Every strategy returns a permutation of all persons in the network,
//! highest priority first. Geometric strategies place a person at the
//! nearest of the locations they visited.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{BipartiteGraph, NodeClass, NodeRef};
use crate::ingest::MetaTable;
use crate::rank::{self, capacity_count, RankConfig, RankError, ScoreVector};

#[derive(Debug, Error, PartialEq)]
pub enum StrategyError {
    #[error("{strategy} strategy needs {missing}")]
    Missing {
        strategy: StrategyKind,
        missing: String,
    },
    #[error("unknown strategy `{0}`: expected base, location, route, pr or ppr")]
    Unknown(String),
    #[error("capacity must lie in (0, 1], got {0}")]
    Capacity(f64),
    #[error(transparent)]
    Rank(#[from] RankError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    Base,
    LocationBased,
    RouteBased,
    PrBased,
    PprBased,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Base,
        StrategyKind::LocationBased,
        StrategyKind::RouteBased,
        StrategyKind::PrBased,
        StrategyKind::PprBased,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Base => "base",
            StrategyKind::LocationBased => "location",
            StrategyKind::RouteBased => "route",
            StrategyKind::PrBased => "pr",
            StrategyKind::PprBased => "ppr",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| StrategyError::Unknown(s.to_string()))
    }
}

/// What produced a priority list: one of the strategies, or the oracle that
/// knows the infected set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Strategy(StrategyKind),
    AllKnowing,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Strategy(k) => k.fmt(f),
            Label::AllKnowing => f.write_str("all-knowing"),
        }
    }
}

pub struct StrategyContext<'a> {
    pub graph: &'a BipartiteGraph,
    pub meta: &'a MetaTable,
    pub source: Option<NodeRef>,
    pub route: Option<String>,
    /// Damping and convergence settings; sources are taken from `source`.
    pub rank_config: RankConfig,
    pub seed: u64,
}

impl<'a> StrategyContext<'a> {
    pub fn new(graph: &'a BipartiteGraph, meta: &'a MetaTable) -> Self {
        Self {
            graph,
            meta,
            source: None,
            route: None,
            rank_config: RankConfig::default(),
            seed: 0,
        }
    }

    fn missing(kind: StrategyKind, what: impl Into<String>) -> StrategyError {
        StrategyError::Missing {
            strategy: kind,
            missing: what.into(),
        }
    }

    fn source(&self, kind: StrategyKind) -> Result<&NodeRef, StrategyError> {
        let source = self
            .source
            .as_ref()
            .ok_or_else(|| Self::missing(kind, "a source node"))?;
        if !self.graph.contains(source) {
            return Err(RankError::UnknownSource(source.clone()).into());
        }
        Ok(source)
    }

    fn coord(&self, kind: StrategyKind, location: &str) -> Result<(f64, f64), StrategyError> {
        self.meta
            .get(location)
            .and_then(|m| m.coord)
            .ok_or_else(|| Self::missing(kind, format!("coordinates for location `{location}`")))
    }

    /// Coordinates of every graph location, in location index order.
    fn location_coords(&self, kind: StrategyKind) -> Result<Vec<(f64, f64)>, StrategyError> {
        self.graph
            .locations()
            .iter()
            .map(|l| self.coord(kind, l))
            .collect()
    }

    /// Points the outbreak is anchored at: the source location, or every
    /// location the source person visited.
    fn anchors(&self, kind: StrategyKind) -> Result<Vec<(f64, f64)>, StrategyError> {
        let source = self.source(kind)?;
        match source.class {
            NodeClass::Location => Ok(vec![self.coord(kind, &source.id)?]),
            NodeClass::Person => self
                .graph
                .neighbors(source)
                .expect("source checked above")
                .iter()
                .map(|(loc, _)| self.coord(kind, &loc.id))
                .collect(),
        }
    }

    fn route_points(&self, kind: StrategyKind) -> Result<Vec<(f64, f64)>, StrategyError> {
        let route = self
            .route
            .as_ref()
            .ok_or_else(|| Self::missing(kind, "a route id"))?;
        let members: Vec<&str> = self
            .meta
            .values()
            .filter(|m| m.routes.contains(route))
            .map(|m| m.location.as_str())
            .collect();
        if members.is_empty() {
            return Err(Self::missing(
                kind,
                format!("route metadata listing locations on route `{route}`"),
            ));
        }
        members.into_iter().map(|l| self.coord(kind, l)).collect()
    }

    fn ranked(&self, kind: StrategyKind) -> Result<ScoreVector, StrategyError> {
        let mut config = self.rank_config.clone();
        match kind {
            StrategyKind::PprBased => {
                config.sources = vec![self.source(kind)?.clone()];
                Ok(rank::personalized_pagerank(self.graph, &config)?)
            }
            _ => {
                config.sources.clear();
                Ok(rank::pagerank(self.graph, &config)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorityList {
    pub persons: Vec<String>,
    pub label: Label,
}

impl PriorityList {
    pub fn len(&self) -> usize {
        self.persons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }

    /// Drops `excluded` persons, keeping the relative order of the rest.
    pub fn without(&self, excluded: &BTreeSet<String>) -> PriorityList {
        PriorityList {
            persons: self
                .persons
                .iter()
                .filter(|p| !excluded.contains(*p))
                .cloned()
                .collect(),
            label: self.label,
        }
    }

    /// Writes `rank,person,strategy`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "rank,person,strategy")?;
        for (i, p) in self.persons.iter().enumerate() {
            writeln!(out, "{},{},{}", i + 1, p, self.label)?;
        }
        Ok(())
    }
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn nearest(from: (f64, f64), targets: &[(f64, f64)]) -> f64 {
    targets
        .iter()
        .map(|&t| distance(from, t))
        .fold(f64::INFINITY, f64::min)
}

/// Per-location distance to the nearest of `targets`, in location index order.
fn location_distances(coords: &[(f64, f64)], targets: &[(f64, f64)]) -> Vec<f64> {
    coords.iter().map(|&c| nearest(c, targets)).collect()
}

/// Orders persons by `key` (ascending), ties by token.
fn order_persons(graph: &BipartiteGraph, key: impl Fn(usize) -> f64, label: Label) -> PriorityList {
    let mut order: Vec<(f64, &String)> = graph
        .persons()
        .iter()
        .enumerate()
        .map(|(i, p)| (key(i), p))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    PriorityList {
        persons: order.into_iter().map(|(_, p)| p.clone()).collect(),
        label,
    }
}

/// Smallest location distance over the locations person `p` visited.
fn person_distance(graph: &BipartiteGraph, loc_dist: &[f64], p: usize) -> f64 {
    let n_p = graph.person_count();
    graph
        .row(p)
        .0
        .iter()
        .map(|&l| loc_dist[l - n_p])
        .fold(f64::INFINITY, f64::min)
}

pub fn prioritize(kind: StrategyKind, ctx: &StrategyContext<'_>) -> Result<PriorityList, StrategyError> {
    let graph = ctx.graph;
    let label = Label::Strategy(kind);
    match kind {
        StrategyKind::Base => {
            let mut persons = graph.persons().to_vec();
            persons.shuffle(&mut ChaCha8Rng::seed_from_u64(ctx.seed));
            Ok(PriorityList { persons, label })
        }
        StrategyKind::LocationBased | StrategyKind::RouteBased => {
            let targets = if kind == StrategyKind::LocationBased {
                ctx.anchors(kind)?
            } else {
                ctx.route_points(kind)?
            };
            let loc_dist = location_distances(&ctx.location_coords(kind)?, &targets);
            Ok(order_persons(
                graph,
                |p| person_distance(graph, &loc_dist, p),
                label,
            ))
        }
        StrategyKind::PrBased | StrategyKind::PprBased => {
            let scores = ctx.ranked(kind)?;
            let values = scores.values();
            Ok(order_persons(graph, |p| -values[p], label))
        }
    }
}

/// Nonnegative per-location risk used for zone aggregation, in location
/// index order. Rank-based strategies use their scores; geometric ones use
/// `1 / (1 + distance)`; the base case draws uniform noise from its seed.
pub fn location_risk(kind: StrategyKind, ctx: &StrategyContext<'_>) -> Result<Vec<(String, f64)>, StrategyError> {
    let graph = ctx.graph;
    let values: Vec<f64> = match kind {
        StrategyKind::Base => {
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            rng.set_stream(1);
            (0..graph.location_count()).map(|_| rng.random::<f64>()).collect()
        }
        StrategyKind::LocationBased | StrategyKind::RouteBased => {
            let targets = if kind == StrategyKind::LocationBased {
                ctx.anchors(kind)?
            } else {
                ctx.route_points(kind)?
            };
            location_distances(&ctx.location_coords(kind)?, &targets)
                .into_iter()
                .map(|d| 1.0 / (1.0 + d))
                .collect()
        }
        StrategyKind::PrBased | StrategyKind::PprBased => {
            let scores = ctx.ranked(kind)?;
            scores.values()[graph.person_count()..].to_vec()
        }
    };
    Ok(graph.locations().iter().cloned().zip(values).collect())
}

/// The first `ceil(capacity * N)` persons of the list.
pub fn select_tested(priority: &PriorityList, capacity: f64) -> Result<BTreeSet<String>, StrategyError> {
    let k = capacity_count(capacity, priority.len()).map_err(|_| StrategyError::Capacity(capacity))?;
    Ok(priority.persons[..k].iter().cloned().collect())
}

/// Infected persons first, then everyone else, each group in token order.
pub fn all_knowing(infected: &BTreeSet<String>, population: &[String]) -> PriorityList {
    let mut sorted: Vec<&String> = population.iter().collect();
    sorted.sort();
    let (mut first, rest): (Vec<&String>, Vec<&String>) =
        sorted.into_iter().partition(|p| infected.contains(*p));
    first.extend(rest);
    PriorityList {
        persons: first.into_iter().cloned().collect(),
        label: Label::AllKnowing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Weighting;
    use crate::ingest::{builtin_synthetic, parse_location_meta, MobilityDataset, VisitRecord};

    fn synthetic() -> BipartiteGraph {
        BipartiteGraph::build(&builtin_synthetic(), Weighting::Binary).unwrap()
    }

    fn geo_fixture() -> (BipartiteGraph, MetaTable) {
        // S is the outbreak site; a visits S, b visits only the far Far,
        // c visits Mid which sits on route R2
        let ds = MobilityDataset::new(vec![
            VisitRecord::new("a", "S", 0),
            VisitRecord::new("b", "Far", 0),
            VisitRecord::new("c", "Mid", 0),
            VisitRecord::new("d", "Far", 0),
            VisitRecord::new("d", "Mid", 0),
        ]);
        let meta = parse_location_meta(
            "location,x,y,routes,zone\nS,0,0,R1,Z1\nMid,3,4,R2,Z1\nFar,30,40,,Z2\n".as_bytes(),
        )
        .unwrap();
        (BipartiteGraph::build(&ds, Weighting::Binary).unwrap(), meta)
    }

    fn is_permutation(list: &PriorityList, graph: &BipartiteGraph) -> bool {
        let mut a = list.persons.clone();
        a.sort();
        let mut b = graph.persons().to_vec();
        b.sort();
        a == b
    }

    #[test]
    fn base_is_seeded_permutation() {
        let g = synthetic();
        let meta = MetaTable::new();
        let mut ctx = StrategyContext::new(&g, &meta);
        ctx.seed = 11;
        let a = prioritize(StrategyKind::Base, &ctx).unwrap();
        let b = prioritize(StrategyKind::Base, &ctx).unwrap();
        assert_eq!(a, b);
        assert!(is_permutation(&a, &g));
        ctx.seed = 12;
        assert_ne!(prioritize(StrategyKind::Base, &ctx).unwrap(), a);
    }

    #[test]
    fn location_based_prefers_source_visitors() {
        let (g, meta) = geo_fixture();
        let mut ctx = StrategyContext::new(&g, &meta);
        ctx.source = Some(NodeRef::location("S"));
        let list = prioritize(StrategyKind::LocationBased, &ctx).unwrap();
        // a: 0, c and d: 5 (tie -> token order), b: 50
        assert_eq!(list.persons, vec!["a", "c", "d", "b"]);
        ctx.source = Some(NodeRef::person("b"));
        let list = prioritize(StrategyKind::LocationBased, &ctx).unwrap();
        assert_eq!(list.persons, vec!["b", "d", "c", "a"]);
    }

    #[test]
    fn route_based_measures_to_route_stations() {
        let (g, meta) = geo_fixture();
        let mut ctx = StrategyContext::new(&g, &meta);
        ctx.route = Some("R2".into());
        let list = prioritize(StrategyKind::RouteBased, &ctx).unwrap();
        assert_eq!(list.persons, vec!["c", "d", "a", "b"]);
    }

    #[test]
    fn missing_prerequisites_are_named() {
        let (g, meta) = geo_fixture();
        let ctx = StrategyContext::new(&g, &meta);
        let err = prioritize(StrategyKind::LocationBased, &ctx).unwrap_err();
        assert!(err.to_string().contains("source"), "{err}");
        let err = prioritize(StrategyKind::RouteBased, &ctx).unwrap_err();
        assert!(err.to_string().contains("route"), "{err}");
        assert!(prioritize(StrategyKind::PprBased, &ctx).is_err());

        let empty = MetaTable::new();
        let mut ctx = StrategyContext::new(&g, &empty);
        ctx.source = Some(NodeRef::location("S"));
        ctx.route = Some("R1".into());
        let err = prioritize(StrategyKind::LocationBased, &ctx).unwrap_err();
        assert!(err.to_string().contains("coordinates"), "{err}");
        let err = prioritize(StrategyKind::RouteBased, &ctx).unwrap_err();
        assert!(err.to_string().contains("route metadata"), "{err}");
    }

    #[test]
    fn ppr_puts_infector_contacts_first() {
        let g = synthetic();
        let meta = MetaTable::new();
        let mut ctx = StrategyContext::new(&g, &meta);
        ctx.source = Some(NodeRef::person("18"));
        let list = prioritize(StrategyKind::PprBased, &ctx).unwrap();
        assert!(is_permutation(&list, &g));
        assert_eq!(list.persons[0], "18");
        let contacts: BTreeSet<&str> =
            ["1", "2", "5", "9", "11", "12", "13", "14", "16", "17", "19", "20"].into();
        let head: BTreeSet<&str> = list.persons[1..13].iter().map(String::as_str).collect();
        assert_eq!(head, contacts);
    }

    #[test]
    fn pr_orders_by_score() {
        let g = synthetic();
        let meta = MetaTable::new();
        let ctx = StrategyContext::new(&g, &meta);
        let list = prioritize(StrategyKind::PrBased, &ctx).unwrap();
        assert!(is_permutation(&list, &g));
        // persons visiting all three locations tie at the top, in token order
        assert_eq!(&list.persons[..3], &["1", "11", "2"]);
    }

    #[test]
    fn location_risk_shapes() {
        let (g, meta) = geo_fixture();
        let mut ctx = StrategyContext::new(&g, &meta);
        ctx.source = Some(NodeRef::location("S"));
        let risk = location_risk(StrategyKind::LocationBased, &ctx).unwrap();
        assert_eq!(
            risk,
            vec![
                ("Far".to_string(), 1.0 / 51.0),
                ("Mid".to_string(), 1.0 / 6.0),
                ("S".to_string(), 1.0)
            ]
        );
        let base = location_risk(StrategyKind::Base, &ctx).unwrap();
        assert_eq!(base, location_risk(StrategyKind::Base, &ctx).unwrap());
        assert!(base.iter().all(|(_, v)| (0.0..1.0).contains(v)));
        let ppr = location_risk(StrategyKind::PprBased, &ctx).unwrap();
        assert_eq!(ppr.len(), 3);
    }

    #[test]
    fn capacity_selection() {
        let list = PriorityList {
            persons: (1..=20).map(|i| i.to_string()).collect(),
            label: Label::Strategy(StrategyKind::Base),
        };
        assert_eq!(select_tested(&list, 1.0).unwrap().len(), 20);
        assert_eq!(
            select_tested(&list, 0.1).unwrap(),
            BTreeSet::from(["1".to_string(), "2".to_string()])
        );
        assert_eq!(select_tested(&list, 0.33).unwrap().len(), 7);
        assert_eq!(select_tested(&list, 0.0), Err(StrategyError::Capacity(0.0)));
        assert!(select_tested(&list, 1.5).is_err());
    }

    #[test]
    fn all_knowing_orders_infected_first() {
        let population: Vec<String> = ["c", "a", "b", "d"].iter().map(|s| s.to_string()).collect();
        let none = all_knowing(&BTreeSet::new(), &population);
        assert_eq!(none.persons, vec!["a", "b", "c", "d"]);
        let some = all_knowing(&BTreeSet::from(["d".to_string(), "b".to_string()]), &population);
        assert_eq!(some.persons, vec!["b", "d", "a", "c"]);
        assert_eq!(some.label, Label::AllKnowing);
    }

    #[test]
    fn priority_csv_and_exclusion() {
        let list = PriorityList {
            persons: vec!["x".into(), "y".into(), "z".into()],
            label: Label::Strategy(StrategyKind::PprBased),
        };
        let trimmed = list.without(&BTreeSet::from(["y".to_string()]));
        assert_eq!(trimmed.persons, vec!["x", "z"]);
        let mut buf = Vec::new();
        trimmed.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "rank,person,strategy\n1,x,ppr\n2,z,ppr\n"
        );
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("random".parse::<StrategyKind>().is_err());
    }
}
