//! One-sided online bipartite input model.
//!
//! An instance has `n_offline` offline nodes, known up front, and a declared
//! maximum degree `delta`. Online nodes arrive one at a time, each revealing
//! its full neighbor list. The instance file is line-delimited JSON:
//!
//! ```text
//! {"n_offline":3,"delta":2}
//! {"neighbors":[0,2]}
//! {"neighbors":[1]}
//! ```
//!
//! Loading only checks record structure (ids in range, no duplicates).
//! Degree bounds are enforced by [`DegreeLedger`], which is fed one arrival
//! at a time so that adaptive adversaries can be validated as they go.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Offline node id, 0-based.
pub type NodeId = u32;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("instance header missing")]
    MissingHeader,
    #[error("invalid header: n_offline={n_offline}, delta={delta} (need 1 <= delta <= n_offline)")]
    InvalidHeader { n_offline: usize, delta: usize },
    #[error("arrival {t}: offline id {node} out of range")]
    IdOutOfRange { t: usize, node: NodeId },
    #[error("arrival {t}: duplicate neighbor {node}")]
    DuplicateNeighbor { t: usize, node: NodeId },
    #[error("arrival {t}: empty neighbor list")]
    EmptyArrival { t: usize },
    #[error("arrival {t}: {len} neighbors exceeds delta={delta}")]
    TooManyNeighbors { t: usize, len: usize, delta: usize },
    #[error("arrival {t}: offline node {node} would exceed delta")]
    DegreeExceeded { node: NodeId, t: usize },
    #[error("arrival {t}: arrival budget {budget} exhausted")]
    BudgetExhausted { t: usize, budget: usize },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<StreamError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceHeader {
    pub n_offline: usize,
    pub delta: usize,
}

impl InstanceHeader {
    pub fn new(n_offline: usize, delta: usize) -> Result<Self, StreamError> {
        let header = Self { n_offline, delta };
        header.check()?;
        Ok(header)
    }

    fn check(&self) -> Result<(), StreamError> {
        if self.n_offline == 0 || self.delta == 0 || self.delta > self.n_offline {
            return Err(StreamError::InvalidHeader {
                n_offline: self.n_offline,
                delta: self.delta,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineArrival {
    pub neighbors: Vec<NodeId>,
}

impl OnlineArrival {
    pub fn new(neighbors: Vec<NodeId>) -> Self {
        Self { neighbors }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

/// Range and duplicate checks; `t` is the 0-based arrival index.
fn check_structure(
    header: &InstanceHeader,
    t: usize,
    arrival: &OnlineArrival,
) -> Result<(), StreamError> {
    let mut seen = vec![false; header.n_offline];
    for &u in &arrival.neighbors {
        let idx = u as usize;
        if idx >= header.n_offline {
            return Err(StreamError::IdOutOfRange { t, node: u });
        }
        if seen[idx] {
            return Err(StreamError::DuplicateNeighbor { t, node: u });
        }
        seen[idx] = true;
    }
    Ok(())
}

/// A header plus arrivals in time order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub header: InstanceHeader,
    pub arrivals: Vec<OnlineArrival>,
}

impl Instance {
    pub fn new(header: InstanceHeader, arrivals: Vec<OnlineArrival>) -> Self {
        Self { header, arrivals }
    }

    pub fn empty(header: InstanceHeader) -> Self {
        Self::new(header, Vec::new())
    }

    pub fn edge_count(&self) -> usize {
        self.arrivals.iter().map(OnlineArrival::len).sum()
    }

    /// Parse an instance from line-delimited JSON records. Blank lines are
    /// skipped; line numbers in errors are 1-based.
    pub fn load<R: BufRead>(source: R) -> Result<Self, StreamError> {
        let mut header: Option<InstanceHeader> = None;
        let mut arrivals = Vec::new();
        for (idx, line) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            match header {
                None => {
                    let h: InstanceHeader =
                        serde_json::from_str(text).map_err(|e| StreamError::Malformed {
                            line: line_no,
                            msg: format!("expected header record: {e}"),
                        })?;
                    h.check().map_err(|e| StreamError::AtLine {
                        line: line_no,
                        source: Box::new(e),
                    })?;
                    header = Some(h);
                }
                Some(ref h) => {
                    let arrival: OnlineArrival =
                        serde_json::from_str(text).map_err(|e| StreamError::Malformed {
                            line: line_no,
                            msg: e.to_string(),
                        })?;
                    check_structure(h, arrivals.len(), &arrival).map_err(|e| {
                        StreamError::AtLine {
                            line: line_no,
                            source: Box::new(e),
                        }
                    })?;
                    arrivals.push(arrival);
                }
            }
        }
        let header = header.ok_or(StreamError::MissingHeader)?;
        Ok(Self { header, arrivals })
    }

    pub fn from_str(text: &str) -> Result<Self, StreamError> {
        Self::load(text.as_bytes())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), StreamError> {
        let header = serde_json::to_string(&self.header).expect("header serializes");
        writeln!(out, "{header}")?;
        for arrival in &self.arrivals {
            let rec = serde_json::to_string(arrival).expect("arrival serializes");
            writeln!(out, "{rec}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Feed every arrival through a fresh ledger. `budget` defaults to
    /// `n_offline` online nodes.
    pub fn validate(&self, budget: Option<usize>) -> Result<DegreeLedger, StreamError> {
        let mut ledger = match budget {
            Some(b) => DegreeLedger::with_budget(&self.header, b),
            None => DegreeLedger::new(&self.header),
        };
        for arrival in &self.arrivals {
            ledger.validate_arrival(&self.header, arrival)?;
        }
        Ok(ledger)
    }
}

/// Running offline degrees for a stream being admitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeLedger {
    offline_degree: Vec<usize>,
    arrivals_seen: usize,
    budget: usize,
}

impl DegreeLedger {
    pub fn new(header: &InstanceHeader) -> Self {
        Self::with_budget(header, header.n_offline)
    }

    pub fn with_budget(header: &InstanceHeader, budget: usize) -> Self {
        Self {
            offline_degree: vec![0; header.n_offline],
            arrivals_seen: 0,
            budget,
        }
    }

    pub fn arrivals_seen(&self) -> usize {
        self.arrivals_seen
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn budget_left(&self) -> usize {
        self.budget.saturating_sub(self.arrivals_seen)
    }

    pub fn degree(&self, u: NodeId) -> usize {
        self.offline_degree[u as usize]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.offline_degree
    }

    pub fn max_degree(&self) -> usize {
        self.offline_degree.iter().copied().max().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.offline_degree.iter().sum()
    }

    /// Strictly admit one arrival. On error the ledger is unchanged.
    pub fn validate_arrival(
        &mut self,
        header: &InstanceHeader,
        arrival: &OnlineArrival,
    ) -> Result<(), StreamError> {
        let t = self.arrivals_seen;
        if t >= self.budget {
            return Err(StreamError::BudgetExhausted {
                t,
                budget: self.budget,
            });
        }
        if arrival.is_empty() {
            return Err(StreamError::EmptyArrival { t });
        }
        if arrival.len() > header.delta {
            return Err(StreamError::TooManyNeighbors {
                t,
                len: arrival.len(),
                delta: header.delta,
            });
        }
        check_structure(header, t, arrival)?;
        if let Some(&u) = arrival
            .neighbors
            .iter()
            .find(|&&u| self.offline_degree[u as usize] >= header.delta)
        {
            return Err(StreamError::DegreeExceeded { node: u, t });
        }
        for &u in &arrival.neighbors {
            self.offline_degree[u as usize] += 1;
        }
        self.arrivals_seen += 1;
        Ok(())
    }

    /// Admit an arrival after dropping offending neighbors: out-of-range ids,
    /// repeats, nodes already at `delta`, and anything past the first `delta`
    /// survivors. Fails only if nothing survives or the budget is spent.
    pub fn admit_permissive(
        &mut self,
        header: &InstanceHeader,
        arrival: &OnlineArrival,
    ) -> Result<OnlineArrival, StreamError> {
        let t = self.arrivals_seen;
        if t >= self.budget {
            return Err(StreamError::BudgetExhausted {
                t,
                budget: self.budget,
            });
        }
        let mut seen = vec![false; header.n_offline];
        let mut kept = Vec::with_capacity(arrival.len().min(header.delta));
        for &u in &arrival.neighbors {
            let idx = u as usize;
            if idx >= header.n_offline || seen[idx] || self.offline_degree[idx] >= header.delta {
                continue;
            }
            seen[idx] = true;
            kept.push(u);
            if kept.len() == header.delta {
                break;
            }
        }
        if kept.is_empty() {
            return Err(StreamError::EmptyArrival { t });
        }
        if kept.len() < arrival.len() {
            log::warn!(
                "arrival {t}: dropped {} offending neighbors",
                arrival.len() - kept.len()
            );
        }
        let kept = OnlineArrival::new(kept);
        self.validate_arrival(header, &kept)?;
        Ok(kept)
    }

    /// Histogram degree -> number of offline nodes with that degree.
    pub fn degree_profile(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for &d in &self.offline_degree {
            *hist.entry(d).or_insert(0) += 1;
        }
        hist
    }
}

/// Degrees of the online nodes (one entry per arrival).
pub fn online_degree_profile(instance: &Instance) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for a in &instance.arrivals {
        *hist.entry(a.len()).or_insert(0) += 1;
    }
    hist
}
