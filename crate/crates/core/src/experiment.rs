//! End-to-end pipeline: network, ground-truth simulation, strategy orders
//! and the evaluation report.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::evaluate::{self, EvalError, EvalReport, ReportInputs, StrategyRun};
use crate::graph::{BipartiteGraph, GraphError, GraphSummary, NodeClass, NodeRef, Weighting};
use crate::ingest::MobilityDataset;
use crate::rank::RankConfig;
use crate::simulate::{self, InfectionTally, SimConfig, SimError, SourceSpec};
use crate::strategy::{self, PriorityList, StrategyContext, StrategyError, StrategyKind};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub weighting: Weighting,
    /// Damping and convergence settings shared by the PR and PPR strategies.
    pub rank: RankConfig,
    /// Outbreak origin: a person is the fixed infector; a location means a
    /// random visitor of it starts each replication. Also the PPR seed.
    pub source: NodeRef,
    pub beta: f64,
    pub isolation_step: u64,
    pub replications: u64,
    pub seed: u64,
    pub strategies: Vec<StrategyKind>,
    pub capacities: Vec<f64>,
    /// Minimum number of replications in which a person must be infected to
    /// count as positive.
    pub threshold: u64,
    pub route: Option<String>,
    pub case_counts: Option<BTreeMap<String, u64>>,
}

impl Experiment {
    pub fn new(source: NodeRef) -> Self {
        Self {
            weighting: Weighting::Binary,
            rank: RankConfig::default(),
            source,
            beta: 0.4,
            isolation_step: 1,
            replications: 1000,
            seed: 0,
            strategies: vec![StrategyKind::Base, StrategyKind::PrBased, StrategyKind::PprBased],
            capacities: evaluate::default_capacities(),
            threshold: 1,
            route: None,
            case_counts: None,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            beta: self.beta,
            source: source_spec(&self.source),
            isolation_step: self.isolation_step,
            replications: self.replications,
            seed: self.seed,
        }
    }
}

pub fn source_spec(source: &NodeRef) -> SourceSpec {
    match source.class {
        NodeClass::Person => SourceSpec::FixedPerson(source.id.clone()),
        NodeClass::Location => SourceSpec::RandomVisitorOf(source.id.clone()),
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: GraphSummary,
    pub tally: InfectionTally,
    pub infected: BTreeSet<String>,
    /// Persons eligible for testing: everyone except a known fixed source.
    pub population: Vec<String>,
    pub priorities: Vec<PriorityList>,
    pub report: EvalReport,
}

pub fn run_experiment(
    dataset: &MobilityDataset,
    exp: &Experiment,
) -> Result<ExperimentOutcome, ExperimentError> {
    let graph = BipartiteGraph::build(dataset, exp.weighting)?;
    let tally = simulate::run_simulation(dataset, &exp.sim_config())?;
    let infected = simulate::infected_set(&tally, exp.threshold)?;

    let mut ctx = StrategyContext::new(&graph, &dataset.meta);
    ctx.source = Some(exp.source.clone());
    ctx.route = exp.route.clone();
    ctx.rank_config = exp.rank.clone();
    ctx.seed = exp.seed;

    let mut runs = Vec::with_capacity(exp.strategies.len());
    for &kind in &exp.strategies {
        let priority = strategy::prioritize(kind, &ctx)?;
        let location_risk = match exp.case_counts {
            Some(_) => Some(strategy::location_risk(kind, &ctx)?),
            None => None,
        };
        runs.push(StrategyRun {
            kind,
            priority,
            location_risk,
        });
    }

    let population: Vec<String> = graph
        .persons()
        .iter()
        .filter(|p| !(exp.source.class == NodeClass::Person && **p == exp.source.id))
        .cloned()
        .collect();

    let report = evaluate::build_report(&ReportInputs {
        runs: &runs,
        infected: &infected,
        population: &population,
        capacities: &exp.capacities,
        meta: &dataset.meta,
        case_counts: exp.case_counts.as_ref(),
    })?;

    Ok(ExperimentOutcome {
        summary: graph.summary(),
        tally,
        infected,
        population,
        priorities: runs.into_iter().map(|r| r.priority).collect(),
        report,
    })
}
