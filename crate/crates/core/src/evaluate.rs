//! Recall curves, zone-level accuracy and Spearman correlation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::graph::NodeClass;
use crate::ingest::MetaTable;
use crate::rank::ScoreVector;
use crate::strategy::{self, all_knowing, Label, PriorityList, StrategyError, StrategyKind};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no infected persons: recall is undefined")]
    NoInfected,
    #[error("capacity grid must be strictly increasing within (0, 1]")]
    CapacityGrid,
    #[error("no zones to classify")]
    NoZones,
    #[error("total case count is zero: accuracy is undefined")]
    NoCases,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("series contains a non-finite value")]
    NonFinite,
    #[error("ranks have zero variance: correlation is undefined")]
    ZeroVariance,
    #[error("tied values: rank-difference formula needs distinct values")]
    Ties,
    #[error("no strategies requested")]
    NoStrategies,
    #[error(transparent)]
    Strategy(#[from] StrategyError),
}

/// `|tested ∩ infected| / |infected|`.
pub fn recall(tested: &BTreeSet<String>, infected: &BTreeSet<String>) -> Result<f64, EvalError> {
    if infected.is_empty() {
        return Err(EvalError::NoInfected);
    }
    let caught = infected.iter().filter(|p| tested.contains(*p)).count();
    Ok(caught as f64 / infected.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub capacity: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallCurve {
    #[serde(serialize_with = "label_str")]
    pub strategy: Label,
    pub points: Vec<CurvePoint>,
}

fn label_str<S: serde::Serializer>(label: &Label, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(label)
}

impl RecallCurve {
    /// Smallest capacity on the curve at which every infected person is tested.
    pub fn full_recall_capacity(&self) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.recall >= 1.0)
            .map(|p| p.capacity)
    }
}

/// 0.05, 0.10, ..., 1.00.
pub fn default_capacities() -> Vec<f64> {
    (1..=20).map(|k| k as f64 / 20.0).collect()
}

pub fn check_capacities(capacities: &[f64]) -> Result<(), EvalError> {
    let in_range = capacities.iter().all(|&c| c > 0.0 && c <= 1.0);
    let increasing = capacities.windows(2).all(|w| w[0] < w[1]);
    if capacities.is_empty() || !in_range || !increasing {
        return Err(EvalError::CapacityGrid);
    }
    Ok(())
}

pub fn recall_curve(
    priority: &PriorityList,
    infected: &BTreeSet<String>,
    capacities: &[f64],
) -> Result<RecallCurve, EvalError> {
    check_capacities(capacities)?;
    if infected.is_empty() {
        return Err(EvalError::NoInfected);
    }
    let points = capacities
        .iter()
        .map(|&c| {
            let tested = strategy::select_tested(priority, c)?;
            Ok(CurvePoint {
                capacity: c,
                recall: recall(&tested, infected)?,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(RecallCurve {
        strategy: priority.label,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ZoneAggregation {
    pub scores: BTreeMap<String, f64>,
    /// Scored locations skipped because they have no zone.
    pub unzoned: usize,
}

/// Sums location scores into their zones.
pub fn aggregate_location_scores<'a>(
    location_scores: impl IntoIterator<Item = (&'a str, f64)>,
    meta: &MetaTable,
) -> ZoneAggregation {
    let mut agg = ZoneAggregation::default();
    for (location, score) in location_scores {
        match meta.get(location).and_then(|m| m.zone.as_ref()) {
            Some(zone) => *agg.scores.entry(zone.clone()).or_insert(0.0) += score,
            None => agg.unzoned += 1,
        }
    }
    agg
}

/// Zone scores from the location entries of a rank score vector.
pub fn aggregate_zone_scores(scores: &ScoreVector, meta: &MetaTable) -> ZoneAggregation {
    aggregate_location_scores(
        scores
            .iter()
            .filter(|(n, _)| n.class == NodeClass::Location)
            .map(|(n, s)| (n.id.as_str(), s)),
        meta,
    )
}

/// Percentile by linear interpolation between order statistics, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub const HIGH_RISK_PERCENTILE: f64 = 0.8;

/// Zones scoring strictly above the 80th percentile of all zone scores.
pub fn classify_high_risk(zone_scores: &BTreeMap<String, f64>) -> Result<BTreeSet<String>, EvalError> {
    let values: Vec<f64> = zone_scores.values().copied().collect();
    let cut = percentile(&values, HIGH_RISK_PERCENTILE).ok_or(EvalError::NoZones)?;
    Ok(zone_scores
        .iter()
        .filter(|(_, &s)| s > cut)
        .map(|(z, _)| z.clone())
        .collect())
}

/// Share of all cases that fall in high-risk zones.
pub fn accuracy(high_risk: &BTreeSet<String>, case_counts: &BTreeMap<String, u64>) -> Result<f64, EvalError> {
    let total: u64 = case_counts.values().sum();
    if total == 0 {
        return Err(EvalError::NoCases);
    }
    let hit: u64 = case_counts
        .iter()
        .filter(|(z, _)| high_risk.contains(*z))
        .map(|(_, c)| c)
        .sum();
    Ok(hit as f64 / total as f64)
}

/// 1-based ranks with tied values sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EvalError::TooFewObservations(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    Ok(())
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks. Equals the
/// rank-difference formula when there are no ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// `1 - 6 Σd² / (n(n² - 1))`, defined only for tie-free inputs.
pub fn spearman_rank_difference(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    check_pair(x, y)?;
    let has_ties = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s.windows(2).any(|w| w[0] == w[1])
    };
    if has_ties(x) || has_ties(y) {
        return Err(EvalError::Ties);
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    let n = x.len() as f64;
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneReport {
    pub zone_scores: BTreeMap<String, f64>,
    pub high_risk: BTreeSet<String>,
    pub case_counts: BTreeMap<String, u64>,
    pub unzoned_locations: usize,
}

/// Per-strategy inputs to a report.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub kind: StrategyKind,
    pub priority: PriorityList,
    /// Location-level risk, present when zone metrics are wanted.
    pub location_risk: Option<Vec<(String, f64)>>,
}

pub struct ReportInputs<'a> {
    pub runs: &'a [StrategyRun],
    pub infected: &'a BTreeSet<String>,
    /// Persons eligible for testing; priority lists are restricted to it.
    pub population: &'a [String],
    pub capacities: &'a [f64],
    pub meta: &'a MetaTable,
    pub case_counts: Option<&'a BTreeMap<String, u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub population: usize,
    pub infected: usize,
    pub all_knowing_full_recall_capacity: Option<f64>,
    pub curves: Vec<RecallCurve>,
    pub accuracy: BTreeMap<String, f64>,
    pub spearman: BTreeMap<String, f64>,
    pub zones: BTreeMap<String, ZoneReport>,
}

impl EvalReport {
    pub fn curve(&self, label: Label) -> Option<&RecallCurve> {
        self.curves.iter().find(|c| c.strategy == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// `strategy,capacity,recall`
    pub fn write_recall_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "strategy,capacity,recall")?;
        for c in &self.curves {
            for p in &c.points {
                writeln!(out, "{},{},{}", c.strategy, p.capacity, p.recall)?;
            }
        }
        Ok(())
    }

    /// `strategy,<metric>` rows for accuracy or spearman.
    pub fn write_metric_csv<W: Write>(metric: &str, values: &BTreeMap<String, f64>, mut out: W) -> io::Result<()> {
        writeln!(out, "strategy,{metric}")?;
        for (s, v) in values {
            writeln!(out, "{s},{v}")?;
        }
        Ok(())
    }

    /// Wide table: one row per capacity, one column per curve.
    pub fn write_sweep_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header: Vec<String> = self.curves.iter().map(|c| c.strategy.to_string()).collect();
        writeln!(out, "capacity,{}", header.join(","))?;
        let Some(first) = self.curves.first() else {
            return Ok(());
        };
        for (i, p) in first.points.iter().enumerate() {
            let row: Vec<String> = self
                .curves
                .iter()
                .map(|c| c.points[i].recall.to_string())
                .collect();
            writeln!(out, "{},{}", p.capacity, row.join(","))?;
        }
        Ok(())
    }
}

/// Assembles recall curves (plus the all-knowing bound) and, when case
/// counts are supplied, zone accuracy and Spearman correlation per strategy.
pub fn build_report(inputs: &ReportInputs<'_>) -> Result<EvalReport, EvalError> {
    if inputs.runs.is_empty() {
        return Err(EvalError::NoStrategies);
    }
    let eligible: BTreeSet<&String> = inputs.population.iter().collect();
    let restrict = |list: &PriorityList| PriorityList {
        persons: list
            .persons
            .iter()
            .filter(|p| eligible.contains(p))
            .cloned()
            .collect(),
        label: list.label,
    };

    let mut curves = Vec::with_capacity(inputs.runs.len() + 1);
    for run in inputs.runs {
        curves.push(recall_curve(&restrict(&run.priority), inputs.infected, inputs.capacities)?);
    }
    let oracle = all_knowing(inputs.infected, inputs.population);
    let oracle_curve = recall_curve(&oracle, inputs.infected, inputs.capacities)?;
    let all_knowing_full_recall_capacity = oracle_curve.full_recall_capacity();
    curves.push(oracle_curve);

    let mut accuracy_map = BTreeMap::new();
    let mut spearman_map = BTreeMap::new();
    let mut zones = BTreeMap::new();
    if let Some(cases) = inputs.case_counts {
        for run in inputs.runs {
            let Some(risk) = &run.location_risk else {
                continue;
            };
            let agg = aggregate_location_scores(
                risk.iter().map(|(l, s)| (l.as_str(), *s)),
                inputs.meta,
            );
            let high_risk = classify_high_risk(&agg.scores)?;
            let name = run.kind.to_string();
            accuracy_map.insert(name.clone(), accuracy(&high_risk, cases)?);
            let x: Vec<f64> = agg.scores.values().copied().collect();
            let y: Vec<f64> = agg
                .scores
                .keys()
                .map(|z| cases.get(z).copied().unwrap_or(0) as f64)
                .collect();
            spearman_map.insert(name.clone(), spearman(&x, &y)?);
            zones.insert(
                name,
                ZoneReport {
                    case_counts: agg
                        .scores
                        .keys()
                        .map(|z| (z.clone(), cases.get(z).copied().unwrap_or(0)))
                        .collect(),
                    zone_scores: agg.scores,
                    high_risk,
                    unzoned_locations: agg.unzoned,
                },
            );
        }
    }

    Ok(EvalReport {
        population: inputs.population.len(),
        infected: inputs.infected.len(),
        all_knowing_full_recall_capacity,
        curves,
        accuracy: accuracy_map,
        spearman: spearman_map,
        zones,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeRef;
    use crate::ingest::parse_location_meta;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn zones(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(z, s)| (z.to_string(), *s)).collect()
    }

    #[test]
    fn recall_arithmetic() {
        let infected = set(&["a", "b", "c", "d"]);
        assert_eq!(recall(&set(&["a", "b", "c", "d", "e"]), &infected), Ok(1.0));
        assert_eq!(recall(&set(&["e"]), &infected), Ok(0.0));
        assert_eq!(recall(&set(&["a", "b", "c", "x"]), &infected), Ok(0.75));
        assert_eq!(recall(&set(&["a"]), &BTreeSet::new()), Err(EvalError::NoInfected));
    }

    #[test]
    fn curve_ends_at_one_and_all_knowing_saturates() {
        let population: Vec<String> = (1..=20).map(|i| i.to_string()).collect();
        let infected = set(&["3", "7", "9", "12", "15", "20"]);
        let oracle = all_knowing(&infected, &population);
        let curve = recall_curve(&oracle, &infected, &default_capacities()).unwrap();
        assert_eq!(curve.points.last().unwrap().recall, 1.0);
        assert_eq!(curve.full_recall_capacity(), Some(0.3));
        for p in &curve.points {
            if p.capacity >= 0.3 {
                assert_eq!(p.recall, 1.0);
            }
        }
    }

    #[test]
    fn capacity_grid_validation() {
        let list = all_knowing(&set(&["a"]), &["a".to_string()]);
        for bad in [vec![], vec![0.0, 0.5], vec![0.5, 0.5], vec![0.6, 0.4], vec![1.2]] {
            assert_eq!(
                recall_curve(&list, &set(&["a"]), &bad),
                Err(EvalError::CapacityGrid)
            );
        }
    }

    #[test]
    fn zone_aggregation() {
        let meta = parse_location_meta(
            "location,x,y,routes,zone\nA,,,,z1\nB,,,,z1\nC,,,,z2\nD,,,,\n".as_bytes(),
        )
        .unwrap();
        let agg = aggregate_location_scores([("A", 0.3), ("B", 0.2), ("C", 0.1)], &meta);
        assert!((agg.scores["z1"] - 0.5).abs() < 1e-15);
        assert_eq!(agg.unzoned, 0);
        let agg = aggregate_location_scores([("A", 0.3), ("D", 0.2)], &meta);
        assert_eq!(agg.unzoned, 1);
        assert_eq!(agg.scores.len(), 1);
        // locations missing from the table entirely count as unzoned too
        let agg = aggregate_location_scores([("Q", 0.3)], &meta);
        assert_eq!(agg.unzoned, 1);

        let sv = ScoreVector::new(
            vec![NodeRef::person("A"), NodeRef::location("A"), NodeRef::location("C")],
            vec![9.0, 0.3, 0.1],
            1,
            true,
        );
        let agg = aggregate_zone_scores(&sv, &meta);
        assert_eq!(agg.scores, zones(&[("z1", 0.3), ("z2", 0.1)]));
    }

    #[test]
    fn percentile_interpolates() {
        let p = percentile(&[1.0, 2.0, 3.0, 4.0, 100.0], 0.8).unwrap();
        assert!((p - 23.2).abs() < 1e-9);
        assert_eq!(percentile(&[5.0], 0.8), Some(5.0));
        assert_eq!(percentile(&[], 0.8), None);
    }

    #[test]
    fn high_risk_classification() {
        let ten: BTreeMap<String, f64> = (0..10).map(|i| (format!("z{i}"), i as f64)).collect();
        assert_eq!(classify_high_risk(&ten).unwrap(), set(&["z8", "z9"]));
        let flat = zones(&[("a", 1.0), ("b", 1.0), ("c", 1.0)]);
        assert!(classify_high_risk(&flat).unwrap().is_empty());
        let five = zones(&[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0), ("e", 100.0)]);
        assert_eq!(classify_high_risk(&five).unwrap(), set(&["e"]));
        assert_eq!(classify_high_risk(&BTreeMap::new()), Err(EvalError::NoZones));
    }

    #[test]
    fn accuracy_arithmetic() {
        let cases: BTreeMap<String, u64> = [("z1".to_string(), 30), ("z2".to_string(), 70)].into();
        assert_eq!(accuracy(&set(&["z2"]), &cases), Ok(0.7));
        assert_eq!(accuracy(&set(&["z1", "z2"]), &cases), Ok(1.0));
        assert_eq!(accuracy(&set(&[]), &cases), Ok(0.0));
        let none: BTreeMap<String, u64> = [("z1".to_string(), 0)].into();
        assert_eq!(accuracy(&set(&["z1"]), &none), Err(EvalError::NoCases));
    }

    #[test]
    fn spearman_fixtures() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 1.0, 4.0, 3.0, 5.0];
        assert_eq!(spearman_rank_difference(&x, &y), Ok(0.8));
        assert!((spearman(&x, &y).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(spearman(&x, &[10.0, 20.0, 30.0, 40.0, 50.0]), Ok(1.0));
        assert_eq!(spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]), Ok(-1.0));
    }

    #[test]
    fn spearman_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 30.0]), vec![1.0, 2.5, 2.5, 4.0]);
        // ranks x: 1,2.5,2.5,4 ; y: 1,2,3,4 -> pearson = 4.5 / sqrt(4.5*5)
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-12);
        assert_eq!(
            spearman_rank_difference(&[1.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(EvalError::Ties)
        );
    }

    #[test]
    fn spearman_errors() {
        assert_eq!(spearman(&[1.0], &[1.0]), Err(EvalError::TooFewObservations(1)));
        assert_eq!(spearman(&[1.0, 2.0], &[1.0]), Err(EvalError::LengthMismatch(2, 1)));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(EvalError::ZeroVariance));
        assert_eq!(spearman(&[1.0, f64::NAN], &[1.0, 2.0]), Err(EvalError::NonFinite));
    }

    #[test]
    fn report_requires_strategies() {
        let meta = MetaTable::new();
        let inputs = ReportInputs {
            runs: &[],
            infected: &set(&["a"]),
            population: &["a".to_string()],
            capacities: &[1.0],
            meta: &meta,
            case_counts: None,
        };
        assert_eq!(build_report(&inputs), Err(EvalError::NoStrategies));
    }

    #[test]
    fn report_zone_metrics() {
        let meta = parse_location_meta(
            "location,x,y,routes,zone\nA,,,,z1\nB,,,,z2\nC,,,,z3\nD,,,,z4\nE,,,,z5\n".as_bytes(),
        )
        .unwrap();
        let population: Vec<String> = ["p", "q"].iter().map(|s| s.to_string()).collect();
        let run = StrategyRun {
            kind: StrategyKind::PrBased,
            priority: PriorityList {
                persons: population.clone(),
                label: Label::Strategy(StrategyKind::PrBased),
            },
            location_risk: Some(
                [("A", 1.0), ("B", 2.0), ("C", 3.0), ("D", 4.0), ("E", 100.0)]
                    .iter()
                    .map(|(l, s)| (l.to_string(), *s))
                    .collect(),
            ),
        };
        let cases: BTreeMap<String, u64> = [("z1", 1u64), ("z2", 2), ("z3", 3), ("z4", 4), ("z5", 10)]
            .iter()
            .map(|(z, c)| (z.to_string(), *c))
            .collect();
        let report = build_report(&ReportInputs {
            runs: &[run],
            infected: &set(&["q"]),
            population: &population,
            capacities: &[0.5, 1.0],
            meta: &meta,
            case_counts: Some(&cases),
        })
        .unwrap();
        assert_eq!(report.accuracy["pr"], 0.5);
        assert_eq!(report.spearman["pr"], 1.0);
        assert_eq!(report.zones["pr"].high_risk, set(&["z5"]));
        assert_eq!(report.curves.len(), 2);
        assert_eq!(report.curve(Label::AllKnowing).unwrap().points[0].recall, 1.0);
        assert_eq!(report.all_knowing_full_recall_capacity, Some(0.5));
        let json = report.to_json();
        assert!(json.contains("\"all-knowing\""));
        let mut buf = Vec::new();
        report.write_sweep_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "capacity,pr,all-knowing\n0.5,0,1\n1,1,1\n"
        );
    }
}
