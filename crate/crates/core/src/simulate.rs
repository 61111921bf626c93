//! First-generation transmission simulation over co-location contacts.
//!
//! A replication starts from one infectious source. At every step before
//! isolation, each of the `k` susceptible persons sharing a location with the
//! source at that step is infected independently with probability
//! `min(1, beta / k)`, so the expected number of new infections per step is
//! `beta`. Only the source transmits.
//!
//! Randomness is addressed rather than streamed: the uniform draw for person
//! `j` at step `t` of replication `r` always comes from the same position of
//! the ChaCha stream `r`, regardless of thread scheduling or of which other
//! persons are still susceptible. Comparing runs at different `beta` on the
//! same seed therefore uses common random numbers.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::MobilityDataset;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("unknown person `{0}`")]
    UnknownPerson(String),
    #[error("location `{0}` has no visitors to draw a source from")]
    NoVisitors(String),
    #[error("beta must be a non-negative finite number, got {0}")]
    Beta(f64),
    #[error("replications must be at least 1")]
    Replications,
    #[error("isolation step must be at least 1")]
    IsolationStep,
    #[error("threshold must lie in 1..={replications}, got {threshold}")]
    Threshold { threshold: u64, replications: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceSpec {
    FixedPerson(String),
    /// Draw the source uniformly from everyone who visited this location.
    RandomVisitorOf(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub beta: f64,
    pub source: SourceSpec,
    /// Number of infectious steps before the source is removed.
    pub isolation_step: u64,
    pub replications: u64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(source: SourceSpec) -> Self {
        Self {
            beta: 0.4,
            source,
            isolation_step: 1,
            replications: 1000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(SimError::Beta(self.beta));
        }
        if self.replications == 0 {
            return Err(SimError::Replications);
        }
        if self.isolation_step == 0 {
            return Err(SimError::IsolationStep);
        }
        Ok(())
    }
}

/// Who was where at each step, indexed for contact lookups.
#[derive(Debug, Clone)]
pub struct ContactIndex {
    persons: Vec<String>,
    person_index: HashMap<String, usize>,
    locations: Vec<String>,
    location_index: HashMap<String, usize>,
    /// Per person: sorted, deduplicated (time, location) pairs.
    presence: Vec<Vec<(u64, usize)>>,
    /// (time, location) -> sorted, deduplicated person indices.
    occupants: HashMap<(u64, usize), Vec<usize>>,
    /// Length of the time window: largest observed step + 1.
    window: u64,
}

impl ContactIndex {
    pub fn new(dataset: &MobilityDataset) -> Self {
        let persons: Vec<String> = dataset.persons().into_iter().map(String::from).collect();
        let locations: Vec<String> = dataset.locations().into_iter().map(String::from).collect();
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
        let mut presence = vec![Vec::new(); persons.len()];
        let mut occupants: HashMap<(u64, usize), Vec<usize>> = HashMap::new();
        let mut window = 0;
        for v in &dataset.visits {
            let p = person_index[&v.person];
            let l = location_index[&v.location];
            presence[p].push((v.time, l));
            occupants.entry((v.time, l)).or_default().push(p);
            window = window.max(v.time + 1);
        }
        for row in presence.iter_mut() {
            row.sort_unstable();
            row.dedup();
        }
        for row in occupants.values_mut() {
            row.sort_unstable();
            row.dedup();
        }
        Self {
            persons,
            person_index,
            locations,
            location_index,
            presence,
            occupants,
            window,
        }
    }

    pub fn persons(&self) -> &[String] {
        &self.persons
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn person_index(&self, person: &str) -> Option<usize> {
        self.person_index.get(person).copied()
    }

    /// Sorted indices of the other persons co-located with `person` at step `t`.
    fn contacts_at(&self, person: usize, t: u64) -> Vec<usize> {
        let visits = &self.presence[person];
        let start = visits.partition_point(|&(time, _)| time < t);
        let mut out: Vec<usize> = visits[start..]
            .iter()
            .take_while(|&&(time, _)| time == t)
            .flat_map(|&(time, l)| self.occupants[&(time, l)].iter().copied())
            .filter(|&q| q != person)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Persons sharing at least one location with `person` at exactly step `t`.
    pub fn close_contacts(&self, person: &str, t: u64) -> Result<BTreeSet<String>, SimError> {
        let p = self
            .person_index(person)
            .ok_or_else(|| SimError::UnknownPerson(person.to_string()))?;
        Ok(self
            .contacts_at(p, t)
            .into_iter()
            .map(|q| self.persons[q].clone())
            .collect())
    }

    /// Sorted indices of everyone who visited `location` at any step.
    fn visitors_of(&self, location: &str) -> Result<Vec<usize>, SimError> {
        let l = self
            .location_index
            .get(location)
            .copied()
            .ok_or_else(|| SimError::NoVisitors(location.to_string()))?;
        let mut out: Vec<usize> = self
            .occupants
            .iter()
            .filter(|((_, loc), _)| *loc == l)
            .flat_map(|(_, people)| people.iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }
}

/// Convenience wrapper building a throwaway [`ContactIndex`].
pub fn close_contacts(
    dataset: &MobilityDataset,
    person: &str,
    t: u64,
) -> Result<BTreeSet<String>, SimError> {
    ContactIndex::new(dataset).close_contacts(person, t)
}

/// Position-addressed uniform draws for one replication.
pub struct ReplicationStream {
    rng: ChaCha8Rng,
    persons: u128,
}

impl ReplicationStream {
    pub fn new(seed: u64, replication: u64, persons: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replication);
        Self {
            rng,
            persons: persons as u128,
        }
    }

    /// Uniform index in `0..n` used to pick a random source.
    fn pick(&mut self, n: usize) -> usize {
        self.rng.set_word_pos(0);
        self.rng.random_range(0..n)
    }

    /// Uniform in [0, 1) for `person` at `step`; each call at the same
    /// coordinates returns the same value.
    pub fn uniform(&mut self, step: u64, person: usize) -> f64 {
        // slot 0 holds the source pick; each slot is one 64-bit output (two words)
        let slot = 1 + step as u128 * self.persons + person as u128;
        self.rng.set_word_pos(slot * 2);
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicationOutcome {
    pub source: String,
    pub infected: BTreeSet<String>,
    pub steps_run: u64,
}

/// Candidate sources for a replication: a single fixed person, or the
/// visitor set of a location to draw from.
#[derive(Debug, Clone)]
enum SourcePool {
    Fixed(usize),
    Visitors(Vec<usize>),
}

impl SourcePool {
    fn resolve(index: &ContactIndex, spec: &SourceSpec) -> Result<Self, SimError> {
        match spec {
            SourceSpec::FixedPerson(p) => index
                .person_index(p)
                .map(SourcePool::Fixed)
                .ok_or_else(|| SimError::UnknownPerson(p.clone())),
            SourceSpec::RandomVisitorOf(l) => {
                let visitors = index.visitors_of(l)?;
                if visitors.is_empty() {
                    return Err(SimError::NoVisitors(l.clone()));
                }
                Ok(SourcePool::Visitors(visitors))
            }
        }
    }

    fn draw(&self, stream: &mut ReplicationStream) -> usize {
        match self {
            SourcePool::Fixed(p) => *p,
            SourcePool::Visitors(v) => v[stream.pick(v.len())],
        }
    }
}

/// Source and infected person indices of one replication.
fn replicate(
    index: &ContactIndex,
    config: &SimConfig,
    pool: &SourcePool,
    stream: &mut ReplicationStream,
) -> (usize, Vec<usize>) {
    let source = pool.draw(stream);
    let mut infected = vec![false; index.persons.len()];
    let mut newly = Vec::new();
    for step in 0..config.isolation_step {
        let t = step % index.window.max(1);
        let susceptible: Vec<usize> = index
            .contacts_at(source, t)
            .into_iter()
            .filter(|&q| !infected[q])
            .collect();
        let k = susceptible.len();
        if k == 0 {
            continue;
        }
        let p = (config.beta / k as f64).min(1.0);
        for q in susceptible {
            if stream.uniform(step, q) < p {
                infected[q] = true;
                newly.push(q);
            }
        }
    }
    (source, newly)
}

pub fn run_replication(
    index: &ContactIndex,
    config: &SimConfig,
    stream: &mut ReplicationStream,
) -> Result<ReplicationOutcome, SimError> {
    config.validate()?;
    let pool = SourcePool::resolve(index, &config.source)?;
    let (source, infected) = replicate(index, config, &pool, stream);
    Ok(ReplicationOutcome {
        source: index.persons[source].clone(),
        infected: infected
            .into_iter()
            .map(|q| index.persons[q].clone())
            .collect(),
        steps_run: config.isolation_step,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfectionTally {
    persons: Vec<String>,
    counts: Vec<u64>,
    /// Times each person was drawn as the source.
    source_counts: Vec<u64>,
    pub replications: u64,
}

impl InfectionTally {
    pub fn persons(&self) -> &[String] {
        &self.persons
    }

    pub fn count(&self, person: &str) -> Option<u64> {
        self.persons
            .iter()
            .position(|p| p == person)
            .map(|i| self.counts[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.persons
            .iter()
            .map(String::as_str)
            .zip(self.counts.iter().copied())
    }

    pub fn source_count(&self, person: &str) -> Option<u64> {
        self.persons
            .iter()
            .position(|p| p == person)
            .map(|i| self.source_counts[i])
    }

    pub fn total_infections(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn mean_infections(&self) -> f64 {
        self.total_infections() as f64 / self.replications as f64
    }

    /// Writes `person,infections,replications`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "person,infections,replications")?;
        for (p, c) in self.iter() {
            writeln!(out, "{p},{c},{}", self.replications)?;
        }
        Ok(())
    }
}

/// Runs `config.replications` independent replications in parallel.
pub fn run_simulation(
    dataset: &MobilityDataset,
    config: &SimConfig,
) -> Result<InfectionTally, SimError> {
    let index = ContactIndex::new(dataset);
    run_simulation_indexed(&index, config)
}

pub fn run_simulation_indexed(
    index: &ContactIndex,
    config: &SimConfig,
) -> Result<InfectionTally, SimError> {
    config.validate()?;
    let pool = SourcePool::resolve(index, &config.source)?;
    let n = index.persons.len();
    let zero = || (vec![0u64; n], vec![0u64; n]);
    let (counts, source_counts) = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let mut stream = ReplicationStream::new(config.seed, r, n);
            replicate(index, config, &pool, &mut stream)
        })
        .fold(zero, |(mut counts, mut sources), (source, infected)| {
            sources[source] += 1;
            for q in infected {
                counts[q] += 1;
            }
            (counts, sources)
        })
        .reduce(zero, |(mut a, mut sa), (b, sb)| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            sa.iter_mut().zip(sb).for_each(|(x, y)| *x += y);
            (a, sa)
        });
    Ok(InfectionTally {
        persons: index.persons.clone(),
        counts,
        source_counts,
        replications: config.replications,
    })
}

/// Persons infected in at least `threshold` replications.
pub fn infected_set(tally: &InfectionTally, threshold: u64) -> Result<BTreeSet<String>, SimError> {
    if threshold == 0 || threshold > tally.replications {
        return Err(SimError::Threshold {
            threshold,
            replications: tally.replications,
        });
    }
    Ok(tally
        .iter()
        .filter(|&(_, c)| c >= threshold)
        .map(|(p, _)| p.to_string())
        .collect())
}
