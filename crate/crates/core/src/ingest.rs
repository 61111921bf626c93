//! Loading mobility visit logs, location metadata and zone case counts.
//!
//! All interchange files are plain comma-separated text with a fixed header.
//! Tokens (person, location, route and zone ids) follow the grammar
//! `[A-Za-z0-9_-]+`, so no quoting is ever needed.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const VISITS_HEADER: &str = "location,user,time";
pub const META_HEADER: &str = "location,x,y,routes,zone";
pub const CASES_HEADER: &str = "zone,cases";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing header: expected `{expected}`, found `{found}`")]
    MissingHeader { expected: &'static str, found: String },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate location `{id}`")]
    DuplicateLocation { line: usize, id: String },
    #[error("line {line}: duplicate zone `{id}`")]
    DuplicateZone { line: usize, id: String },
    #[error("invalid timestamp `{0}`")]
    Timestamp(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One observation of a person at a location during a discrete time step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VisitRecord {
    pub person: String,
    pub location: String,
    pub time: u64,
}

impl VisitRecord {
    pub fn new(person: impl Into<String>, location: impl Into<String>, time: u64) -> Self {
        Self {
            person: person.into(),
            location: location.into(),
            time,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationMeta {
    pub location: String,
    pub coord: Option<(f64, f64)>,
    pub routes: BTreeSet<String>,
    pub zone: Option<String>,
}

pub type MetaTable = BTreeMap<String, LocationMeta>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MobilityDataset {
    pub visits: Vec<VisitRecord>,
    pub meta: MetaTable,
}

impl MobilityDataset {
    pub fn new(visits: Vec<VisitRecord>) -> Self {
        Self {
            visits,
            meta: MetaTable::new(),
        }
    }

    pub fn with_meta(mut self, meta: MetaTable) -> Self {
        self.meta = meta;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }

    pub fn persons(&self) -> BTreeSet<&str> {
        self.visits.iter().map(|v| v.person.as_str()).collect()
    }

    pub fn locations(&self) -> BTreeSet<&str> {
        self.visits.iter().map(|v| v.location.as_str()).collect()
    }

    /// Persons that visited `location` at any time step.
    pub fn visitors_of(&self, location: &str) -> BTreeSet<&str> {
        self.visits
            .iter()
            .filter(|v| v.location == location)
            .map(|v| v.person.as_str())
            .collect()
    }
}

pub fn is_valid_token(token: &str) -> bool {
    !token.is_empty()
        && token
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

fn check_token(line: usize, field: &str, token: &str) -> Result<(), IngestError> {
    if token.is_empty() {
        return Err(IngestError::Malformed {
            line,
            reason: format!("empty {field}"),
        });
    }
    if !is_valid_token(token) {
        return Err(IngestError::Malformed {
            line,
            reason: format!("invalid {field} token `{token}`"),
        });
    }
    Ok(())
}

/// Iterates `(line_number, content)` over the data lines of a CSV stream after
/// checking its header. Line numbers are 1-based and count the header. Lines
/// that are empty after stripping `\r` are skipped.
fn data_lines<R: BufRead>(
    source: R,
    header: &'static str,
) -> Result<Vec<(usize, String)>, IngestError> {
    let mut lines = source.lines();
    let first = match lines.next() {
        Some(l) => l?,
        None => {
            return Err(IngestError::MissingHeader {
                expected: header,
                found: String::new(),
            })
        }
    };
    let first = first.trim_start_matches('\u{feff}').trim_end_matches('\r');
    if first.trim() != header {
        return Err(IngestError::MissingHeader {
            expected: header,
            found: first.to_string(),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 2, line.to_string()));
    }
    Ok(out)
}

fn split_fields(line_no: usize, line: &str, expected: usize) -> Result<Vec<&str>, IngestError> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != expected {
        return Err(IngestError::Malformed {
            line: line_no,
            reason: format!("expected {expected} fields, found {}", fields.len()),
        });
    }
    Ok(fields)
}

/// Parses a visit log with header `location,user,time`.
pub fn parse_visits<R: BufRead>(source: R) -> Result<MobilityDataset, IngestError> {
    let mut visits = Vec::new();
    for (line_no, line) in data_lines(source, VISITS_HEADER)? {
        let fields = split_fields(line_no, &line, 3)?;
        let (location, person, time) = (fields[0], fields[1], fields[2]);
        check_token(line_no, "location", location)?;
        check_token(line_no, "user", person)?;
        let time: u64 = time.parse().map_err(|_| IngestError::Malformed {
            line: line_no,
            reason: format!("time `{time}` is not a non-negative integer"),
        })?;
        visits.push(VisitRecord::new(person, location, time));
    }
    Ok(MobilityDataset::new(visits))
}

fn parse_coord(line_no: usize, axis: &str, raw: &str) -> Result<Option<f64>, IngestError> {
    if raw.is_empty() {
        return Ok(None);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(IngestError::Malformed {
            line: line_no,
            reason: format!("{axis} coordinate `{raw}` is not a finite number"),
        }),
    }
}

/// Parses location metadata with header `location,x,y,routes,zone`.
///
/// A coordinate is present only when both `x` and `y` are given.
pub fn parse_location_meta<R: BufRead>(source: R) -> Result<MetaTable, IngestError> {
    let mut table = MetaTable::new();
    for (line_no, line) in data_lines(source, META_HEADER)? {
        let fields = split_fields(line_no, &line, 5)?;
        let location = fields[0];
        check_token(line_no, "location", location)?;
        let x = parse_coord(line_no, "x", fields[1])?;
        let y = parse_coord(line_no, "y", fields[2])?;
        let coord = match (x, y) {
            (Some(x), Some(y)) => Some((x, y)),
            (None, None) => None,
            _ => {
                return Err(IngestError::Malformed {
                    line: line_no,
                    reason: "only one of x/y given".into(),
                })
            }
        };
        let mut routes = BTreeSet::new();
        if !fields[3].is_empty() {
            for route in fields[3].split('|') {
                check_token(line_no, "route", route)?;
                routes.insert(route.to_string());
            }
        }
        let zone = if fields[4].is_empty() {
            None
        } else {
            check_token(line_no, "zone", fields[4])?;
            Some(fields[4].to_string())
        };
        if table.contains_key(location) {
            return Err(IngestError::DuplicateLocation {
                line: line_no,
                id: location.to_string(),
            });
        }
        table.insert(
            location.to_string(),
            LocationMeta {
                location: location.to_string(),
                coord,
                routes,
                zone,
            },
        );
    }
    Ok(table)
}

/// Parses confirmed case counts per zone with header `zone,cases`.
pub fn parse_case_counts<R: BufRead>(source: R) -> Result<BTreeMap<String, u64>, IngestError> {
    let mut counts = BTreeMap::new();
    for (line_no, line) in data_lines(source, CASES_HEADER)? {
        let fields = split_fields(line_no, &line, 2)?;
        check_token(line_no, "zone", fields[0])?;
        let cases: u64 = fields[1].parse().map_err(|_| IngestError::Malformed {
            line: line_no,
            reason: format!("case count `{}` is not a non-negative integer", fields[1]),
        })?;
        if counts.insert(fields[0].to_string(), cases).is_some() {
            return Err(IngestError::DuplicateZone {
                line: line_no,
                id: fields[0].to_string(),
            });
        }
    }
    Ok(counts)
}

pub fn write_visits<W: Write>(dataset: &MobilityDataset, mut out: W) -> io::Result<()> {
    writeln!(out, "{VISITS_HEADER}")?;
    for v in &dataset.visits {
        writeln!(out, "{},{},{}", v.location, v.person, v.time)?;
    }
    Ok(())
}

pub fn write_location_meta<W: Write>(meta: &MetaTable, mut out: W) -> io::Result<()> {
    writeln!(out, "{META_HEADER}")?;
    for m in meta.values() {
        let (x, y) = match m.coord {
            Some((x, y)) => (x.to_string(), y.to_string()),
            None => (String::new(), String::new()),
        };
        let routes: Vec<&str> = m.routes.iter().map(String::as_str).collect();
        writeln!(
            out,
            "{},{},{},{},{}",
            m.location,
            x,
            y,
            routes.join("|"),
            m.zone.as_deref().unwrap_or("")
        )?;
    }
    Ok(())
}

const SYNTHETIC_VISITORS: [(&str, &[u32]); 3] = [
    ("A", &[1, 2, 3, 4, 5, 6, 7, 10, 11, 12, 14, 15, 16, 17, 20]),
    ("B", &[1, 2, 3, 4, 6, 7, 8, 11, 13, 15, 19]),
    ("C", &[1, 2, 5, 9, 11, 12, 13, 14, 16, 17, 18, 19, 20]),
];

/// The 20-person, 3-location synthetic network. Every visit happens at step 0.
pub fn builtin_synthetic() -> MobilityDataset {
    let visits = SYNTHETIC_VISITORS
        .iter()
        .flat_map(|(loc, people)| {
            people
                .iter()
                .map(move |p| VisitRecord::new(p.to_string(), *loc, 0))
        })
        .collect();
    MobilityDataset::new(visits)
}

/// Names accepted by `--builtin`.
pub const BUILTIN_NAMES: &[&str] = &["paper-synthetic"];

pub fn builtin(name: &str) -> Option<MobilityDataset> {
    match name {
        "paper-synthetic" => Some(builtin_synthetic()),
        _ => None,
    }
}

/// Draws `n_visits` records uniformly over persons `p0..`, locations `l0..`
/// and steps `0..n_timesteps`. Counts must be positive.
pub fn generate_random(
    n_people: usize,
    n_locations: usize,
    n_visits: usize,
    n_timesteps: u64,
    seed: u64,
) -> MobilityDataset {
    assert!(
        n_people > 0 && n_locations > 0 && n_visits > 0 && n_timesteps > 0,
        "generate_random requires positive counts"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let visits = (0..n_visits)
        .map(|_| {
            let p = rng.random_range(0..n_people);
            let l = rng.random_range(0..n_locations);
            let t = rng.random_range(0..n_timesteps);
            VisitRecord::new(format!("p{p}"), format!("l{l}"), t)
        })
        .collect();
    MobilityDataset::new(visits)
}

/// Converts an ISO-8601 local timestamp (`YYYY-MM-DDTHH:MM:SS`) to a step
/// index counted from `origin` in steps of `step_seconds`.
pub fn time_step(timestamp: &str, origin: &str, step_seconds: u64) -> Result<u64, IngestError> {
    let parse = |s: &str| {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
            .map_err(|_| IngestError::Timestamp(s.to_string()))
    };
    let ts = parse(timestamp)?;
    let origin_ts = parse(origin)?;
    let elapsed = (ts - origin_ts).num_seconds();
    if elapsed < 0 || step_seconds == 0 {
        return Err(IngestError::Timestamp(timestamp.to_string()));
    }
    Ok(elapsed as u64 / step_seconds)
}
