//! Command-line front end.
//!
//! Settings come from an optional TOML file (`--config`) whose keys mirror
//! the long flag names with `_` in place of `-`; flags given on the command
//! line override file values. Relative paths in the file are resolved
//! against the file's directory.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage or config error.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use thiserror::Error;

use crate::evaluate::{self, EvalReport};
use crate::experiment::{self, Experiment, ExperimentError};
use crate::graph::{BipartiteGraph, NodeRef, Weighting};
use crate::ingest::{self, MobilityDataset};
use crate::rank::{self, RankConfig};
use crate::simulate::{self, SimConfig};
use crate::strategy::{StrategyError, StrategyKind};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "mobrisk", version, about = "Transmission risk ranking on people-location networks")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the network and print its size; writes edges.csv with --out.
    Build(Common),
    /// Score every node with PageRank or Personalized PageRank.
    Rank(RankArgs),
    /// Run the transmission simulation and write per-person infection counts.
    Simulate(Common),
    /// Run the full pipeline and write the evaluation report.
    Evaluate(Common),
    /// Write a capacity-by-strategy recall table.
    Sweep(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Algo {
    Pr,
    Ppr,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[arg(long, value_enum, default_value = "pr")]
    algo: Algo,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum WeightingArg {
    Binary,
    Count,
}

impl From<WeightingArg> for Weighting {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::Binary => Weighting::Binary,
            WeightingArg::Count => Weighting::VisitCount,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
struct Common {
    /// TOML settings file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Visit log CSV (location,user,time).
    #[arg(long)]
    visits: Option<PathBuf>,
    /// Location metadata CSV (location,x,y,routes,zone).
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Zone case counts CSV (zone,cases).
    #[arg(long)]
    cases: Option<PathBuf>,
    /// Built-in dataset instead of --visits (paper-synthetic).
    #[arg(long)]
    builtin: Option<String>,
    /// Output directory; without it tables go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Divide rank scores by their sum.
    #[arg(long)]
    normalize: Option<bool>,
    #[arg(long)]
    beta: Option<f64>,
    /// Source node as person:<id> or location:<id>.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    isolation_step: Option<u64>,
    #[arg(long)]
    replications: Option<u64>,
    /// Replications a person must be infected in to count as positive.
    #[arg(long)]
    threshold: Option<u64>,
    /// Comma-separated strategies: base, location, route, pr, ppr.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    /// Comma-separated testing capacities in (0, 1].
    #[arg(long, value_delimiter = ',')]
    capacities: Option<Vec<f64>>,
    /// Route id for the route-based strategy.
    #[arg(long)]
    route: Option<String>,
    #[arg(long, value_enum)]
    weighting: Option<WeightingArg>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($field:ident),*) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field; } )*
    };
}

impl Common {
    /// File settings overlaid by flags.
    fn resolve(self) -> Result<Common, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = fs::read_to_string(&path)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let mut merged: Common =
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for p in [&mut merged.visits, &mut merged.meta, &mut merged.cases, &mut merged.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        let flags = self;
        overlay!(merged, flags; visits, meta, cases, builtin, out, seed, damping, tol, max_iter,
            normalize, beta, source, isolation_step, replications, threshold, strategies,
            capacities, route, weighting);
        Ok(merged)
    }

    fn weighting(&self) -> Weighting {
        self.weighting.map(Weighting::from).unwrap_or_default()
    }

    fn rank_config(&self) -> Result<RankConfig, CliError> {
        let d = RankConfig::default();
        let cfg = RankConfig {
            damping: self.damping.unwrap_or(d.damping),
            tol: self.tol.unwrap_or(d.tol),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            sources: Vec::new(),
            normalize: self.normalize.unwrap_or(false),
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }

    fn source(&self) -> Result<Option<NodeRef>, CliError> {
        self.source
            .as_deref()
            .map(|s| s.parse::<NodeRef>().map_err(usage))
            .transpose()
    }

    fn require_source(&self, what: &str) -> Result<NodeRef, CliError> {
        self.source()?
            .ok_or_else(|| usage(format!("{what} requires --source person:<id> or location:<id>")))
    }

    fn experiment(&self) -> Result<Experiment, CliError> {
        let mut exp = Experiment::new(self.require_source("this command")?);
        exp.weighting = self.weighting();
        exp.rank = self.rank_config()?;
        if let Some(b) = self.beta {
            exp.beta = b;
        }
        if let Some(s) = self.isolation_step {
            exp.isolation_step = s;
        }
        if let Some(r) = self.replications {
            exp.replications = r;
        }
        if let Some(s) = self.seed {
            exp.seed = s;
        }
        if let Some(t) = self.threshold {
            exp.threshold = t;
        }
        if let Some(names) = &self.strategies {
            exp.strategies = names
                .iter()
                .map(|n| n.trim().parse::<StrategyKind>().map_err(usage))
                .collect::<Result<_, _>>()?;
            if exp.strategies.is_empty() {
                return Err(usage("--strategies is empty"));
            }
        }
        if let Some(c) = &self.capacities {
            evaluate::check_capacities(c).map_err(usage)?;
            exp.capacities = c.clone();
        }
        exp.route = self.route.clone();
        exp.sim_config().validate().map_err(usage)?;
        if exp.threshold == 0 || exp.threshold > exp.replications {
            return Err(usage(format!(
                "--threshold must lie in 1..={}",
                exp.replications
            )));
        }
        Ok(exp)
    }

    fn load_dataset(&self) -> Result<MobilityDataset, CliError> {
        let mut dataset = match (&self.builtin, &self.visits) {
            (Some(_), Some(_)) => return Err(usage("give either --builtin or --visits, not both")),
            (None, None) => return Err(usage("no input: give --visits <csv> or --builtin <name>")),
            (Some(name), None) => ingest::builtin(name).ok_or_else(|| {
                usage(format!(
                    "unknown builtin dataset `{name}` (available: {})",
                    ingest::BUILTIN_NAMES.join(", ")
                ))
            })?,
            (None, Some(path)) => ingest::parse_visits(open(path)?).map_err(|e| at(path, e))?,
        };
        if let Some(path) = &self.meta {
            dataset.meta = ingest::parse_location_meta(open(path)?).map_err(|e| at(path, e))?;
        }
        Ok(dataset)
    }

    fn load_cases(&self) -> Result<Option<BTreeMap<String, u64>>, CliError> {
        self.cases
            .as_ref()
            .map(|path| ingest::parse_case_counts(open(path)?).map_err(|e| at(path, e)))
            .transpose()
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn at(path: &Path, e: impl std::fmt::Display) -> CliError {
    runtime(format!("{}: {e}", path.display()))
}

/// Writes `name` under `--out`, or to stdout when no directory was given.
fn emit(
    out: Option<&Path>,
    name: &str,
    write: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), CliError> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| at(dir, e))?;
            let path = dir.join(name);
            let file = File::create(&path).map_err(|e| at(&path, e))?;
            let mut w = BufWriter::new(file);
            write(&mut w).and_then(|_| w.flush()).map_err(|e| at(&path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write(&mut w).and_then(|_| w.flush()).map_err(runtime)
        }
    }
}

fn experiment_error(e: ExperimentError) -> CliError {
    match e {
        ExperimentError::Strategy(StrategyError::Missing { .. }) | ExperimentError::Strategy(StrategyError::Unknown(_)) => {
            usage(e)
        }
        other => runtime(other),
    }
}

fn cmd_build(c: &Common) -> Result<(), CliError> {
    let dataset = c.load_dataset()?;
    let graph = BipartiteGraph::build(&dataset, c.weighting()).map_err(runtime)?;
    println!("{}", graph.summary());
    if let Some(dir) = &c.out {
        emit(Some(dir), "edges.csv", |w| graph.write_edge_list(w))?;
    }
    Ok(())
}

fn cmd_rank(args: &RankArgs, c: &Common) -> Result<(), CliError> {
    let mut config = c.rank_config()?;
    let source = c.source()?;
    if let (Algo::Pr, Some(_)) = (args.algo, &source) {
        return Err(usage("--source is only used with --algo ppr"));
    }
    if let Algo::Ppr = args.algo {
        config.sources = vec![source.ok_or_else(|| usage("--algo ppr requires --source person:<id> or location:<id>"))?];
    }
    let dataset = c.load_dataset()?;
    let graph = BipartiteGraph::build(&dataset, c.weighting()).map_err(runtime)?;
    let scores = match args.algo {
        Algo::Pr => rank::pagerank(&graph, &config),
        Algo::Ppr => rank::personalized_pagerank(&graph, &config),
    }
    .map_err(runtime)?;
    eprintln!(
        "iterations: {}, converged: {}",
        scores.iterations, scores.converged
    );
    emit(c.out.as_deref(), "scores.csv", |w| scores.write_csv(w))
}

fn cmd_simulate(c: &Common) -> Result<(), CliError> {
    let exp = c.experiment()?;
    let dataset = c.load_dataset()?;
    let config: SimConfig = exp.sim_config();
    let tally = simulate::run_simulation(&dataset, &config).map_err(runtime)?;
    eprintln!(
        "replications: {}, mean infections per replication: {}",
        tally.replications,
        tally.mean_infections()
    );
    emit(c.out.as_deref(), "tally.csv", |w| tally.write_csv(w))
}

fn run_pipeline(c: &Common) -> Result<experiment::ExperimentOutcome, CliError> {
    let mut exp = c.experiment()?;
    let dataset = c.load_dataset()?;
    exp.case_counts = c.load_cases()?;
    let outcome = experiment::run_experiment(&dataset, &exp).map_err(experiment_error)?;
    eprintln!(
        "{}; infected: {} of {} eligible persons",
        outcome.summary,
        outcome.infected.len(),
        outcome.population.len()
    );
    Ok(outcome)
}

fn cmd_evaluate(c: &Common) -> Result<(), CliError> {
    let outcome = run_pipeline(c)?;
    let report = &outcome.report;
    match c.out.as_deref() {
        None => emit(None, "report.json", |w| w.write_all(report.to_json().as_bytes())),
        Some(dir) => {
            emit(Some(dir), "report.json", |w| w.write_all(report.to_json().as_bytes()))?;
            emit(Some(dir), "recall.csv", |w| report.write_recall_csv(w))?;
            emit(Some(dir), "accuracy.csv", |w| {
                EvalReport::write_metric_csv("accuracy", &report.accuracy, w)
            })?;
            emit(Some(dir), "spearman.csv", |w| {
                EvalReport::write_metric_csv("spearman", &report.spearman, w)
            })?;
            emit(Some(dir), "tally.csv", |w| outcome.tally.write_csv(w))?;
            emit(Some(dir), "priorities.csv", |w| {
                writeln!(w, "rank,person,strategy")?;
                for list in &outcome.priorities {
                    for (i, p) in list.persons.iter().enumerate() {
                        writeln!(w, "{},{},{}", i + 1, p, list.label)?;
                    }
                }
                Ok(())
            })
        }
    }
}

fn cmd_sweep(c: &Common) -> Result<(), CliError> {
    let outcome = run_pipeline(c)?;
    emit(c.out.as_deref(), "sweep.csv", |w| outcome.report.write_sweep_csv(w))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Build(c) => cmd_build(&c.resolve()?),
        Command::Rank(args) => {
            let common = args.common.clone().resolve()?;
            cmd_rank(&args, &common)
        }
        Command::Simulate(c) => cmd_simulate(&c.resolve()?),
        Command::Evaluate(c) => cmd_evaluate(&c.resolve()?),
        Command::Sweep(c) => cmd_sweep(&c.resolve()?),
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("mobrisk").chain(args.iter().copied())).unwrap()
    }

    fn common(cli: Cli) -> Common {
        match cli.command {
            Command::Evaluate(c) | Command::Simulate(c) | Command::Build(c) | Command::Sweep(c) => c,
            Command::Rank(r) => r.common,
        }
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("exp.toml");
        fs::write(
            &cfg,
            "builtin = \"paper-synthetic\"\nbeta = 0.8\nreplications = 50\nstrategies = [\"base\", \"ppr\"]\nout = \"results\"\n",
        )
        .unwrap();
        let c = common(parse(&["evaluate", "--config", cfg.to_str().unwrap(), "--beta", "0.2"]))
            .resolve()
            .unwrap();
        assert_eq!(c.beta, Some(0.2));
        assert_eq!(c.replications, Some(50));
        assert_eq!(c.out.as_deref(), Some(dir.path().join("results").as_path()));
        assert_eq!(c.strategies.unwrap(), vec!["base", "ppr"]);
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("exp.toml");
        fs::write(&cfg, "betta = 0.8\n").unwrap();
        let err = common(parse(&["simulate", "--config", cfg.to_str().unwrap()]))
            .resolve()
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn experiment_validation_is_usage_error() {
        let c = common(parse(&["evaluate", "--builtin", "paper-synthetic"]));
        assert_eq!(c.experiment().unwrap_err().exit_code(), 2);
        let c = common(parse(&["evaluate", "--source", "person:18", "--capacities", "0.5,0.2"]));
        assert_eq!(c.experiment().unwrap_err().exit_code(), 2);
        let c = common(parse(&["evaluate", "--source", "person:18", "--strategies", "psychic"]));
        assert_eq!(c.experiment().unwrap_err().exit_code(), 2);
        let c = common(parse(&["evaluate", "--source", "person:18", "--replications", "5", "--threshold", "6"]));
        assert_eq!(c.experiment().unwrap_err().exit_code(), 2);
        let c = common(parse(&["evaluate", "--source", "person:18", "--damping", "2"]));
        assert_eq!(c.experiment().unwrap_err().exit_code(), 2);
        let c = common(parse(&["evaluate", "--source", "person:18", "--strategies", "base,ppr"]));
        let exp = c.experiment().unwrap();
        assert_eq!(exp.strategies, vec![StrategyKind::Base, StrategyKind::PprBased]);
    }
}
