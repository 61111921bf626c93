//! Test-only reference implementations, independent of the crate's sparse
//! iteration: the fixed point is obtained by a direct dense linear solve.

#![allow(dead_code)]

use std::collections::BTreeMap;

use mobrisk::{MobilityDataset, NodeRef, VisitRecord};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Node scores from solving `(I - d M) x = b` where `M[p][q] = w(p, q) / C(q)`
/// is built straight from the visit records.
pub fn dense_scores(
    dataset: &MobilityDataset,
    weighted: bool,
    damping: f64,
    sources: &[NodeRef],
) -> BTreeMap<NodeRef, f64> {
    let mut weights: BTreeMap<(NodeRef, NodeRef), f64> = BTreeMap::new();
    for v in &dataset.visits {
        let p = NodeRef::person(v.person.clone());
        let l = NodeRef::location(v.location.clone());
        let w = weights.entry((p, l)).or_insert(0.0);
        *w = if weighted { *w + 1.0 } else { 1.0 };
    }
    let mut nodes: Vec<NodeRef> = weights
        .keys()
        .flat_map(|(p, l)| [p.clone(), l.clone()])
        .collect();
    nodes.sort();
    nodes.dedup();
    let index: BTreeMap<&NodeRef, usize> = nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();
    let n = nodes.len();

    let mut adj = DMatrix::<f64>::zeros(n, n);
    for ((p, l), w) in &weights {
        adj[(index[p], index[l])] = *w;
        adj[(index[l], index[p])] = *w;
    }
    let out_degree: Vec<f64> = (0..n).map(|j| adj.column(j).sum()).collect();
    let mut system = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            system[(i, j)] -= damping * adj[(i, j)] / out_degree[j];
        }
    }
    let rhs = if sources.is_empty() {
        DVector::from_element(n, (1.0 - damping) / n as f64)
    } else {
        let mut b = DVector::zeros(n);
        for s in sources {
            b[index[s]] = (1.0 - damping) / sources.len() as f64;
        }
        b
    };
    let x = system.lu().solve(&rhs).expect("nonsingular for d < 1");
    nodes.into_iter().zip(x.iter().copied()).collect()
}

/// Random visit list over at most `max_nodes` nodes in total.
pub fn random_small_dataset(rng: &mut ChaCha8Rng, max_nodes: usize) -> MobilityDataset {
    let persons = rng.random_range(1..max_nodes);
    let locations = rng.random_range(1..=(max_nodes - persons));
    let visits = rng.random_range(1..=persons * locations + 3);
    let records = (0..visits)
        .map(|_| {
            VisitRecord::new(
                format!("p{}", rng.random_range(0..persons)),
                format!("l{}", rng.random_range(0..locations)),
                rng.random_range(0..3),
            )
        })
        .collect();
    MobilityDataset::new(records)
}

pub fn small_corpus(count: usize, max_nodes: usize, seed: u64) -> Vec<MobilityDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| random_small_dataset(&mut rng, max_nodes))
        .collect()
}

pub fn travel_history() -> MobilityDataset {
    mobrisk::ingest::parse_visits(include_str!("../data/travel_history.csv").as_bytes()).unwrap()
}

/// Connected components count via union-find over visit records.
pub fn component_count(dataset: &MobilityDataset) -> usize {
    let mut ids: BTreeMap<NodeRef, usize> = BTreeMap::new();
    for v in &dataset.visits {
        let next = ids.len();
        ids.entry(NodeRef::person(v.person.clone())).or_insert(next);
        let next = ids.len();
        ids.entry(NodeRef::location(v.location.clone())).or_insert(next);
    }
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        parent[x] = r;
        r
    }
    for v in &dataset.visits {
        let a = ids[&NodeRef::person(v.person.clone())];
        let b = ids[&NodeRef::location(v.location.clone())];
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra] = rb;
    }
    (0..parent.len())
        .filter(|&i| find(&mut parent, i) == i)
        .count()
}
