//! Run transcripts and the independent properness validator.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph_stream::{Instance, InstanceHeader, NodeId, OnlineArrival};

/// Global color index. Levels and the greedy tail own disjoint ranges.
pub type Color = u32;

/// Which part of an algorithm produced an edge's final color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Level(u16),
    Tail,
    Uncolored,
}

/// Color picks made by one partial-coloring level for one arrival, in
/// processing order. `None` marks an edge whose palette was empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelPicks {
    pub level: u16,
    pub picks: Vec<(NodeId, Option<Color>)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrivalRecord {
    pub neighbors: Vec<NodeId>,
    pub colors: Vec<Option<Color>>,
    pub stages: Vec<Stage>,
    pub picks: Vec<LevelPicks>,
}

impl ArrivalRecord {
    pub fn uncolored(neighbors: Vec<NodeId>) -> Self {
        let k = neighbors.len();
        Self {
            neighbors,
            colors: vec![None; k],
            stages: vec![Stage::Uncolored; k],
            picks: Vec::new(),
        }
    }

    pub fn colored_count(&self) -> usize {
        self.colors.iter().filter(|c| c.is_some()).count()
    }
}

/// Append-only record of a run: arrivals, per-level picks and the final
/// edge colors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub header: InstanceHeader,
    pub arrivals: Vec<ArrivalRecord>,
}

impl Transcript {
    pub fn new(header: InstanceHeader) -> Self {
        Self {
            header,
            arrivals: Vec::new(),
        }
    }

    pub fn push(&mut self, record: ArrivalRecord) {
        debug_assert_eq!(record.neighbors.len(), record.colors.len());
        debug_assert_eq!(record.neighbors.len(), record.stages.len());
        self.arrivals.push(record);
    }

    /// `(t, u, color, stage)` for every edge in arrival order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, NodeId, Option<Color>, Stage)> + '_ {
        self.arrivals.iter().enumerate().flat_map(|(t, rec)| {
            rec.neighbors
                .iter()
                .zip(&rec.colors)
                .zip(&rec.stages)
                .map(move |((&u, &c), &s)| (t, u, c, s))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.arrivals.iter().map(|r| r.neighbors.len()).sum()
    }

    pub fn colored_count(&self) -> usize {
        self.arrivals.iter().map(ArrivalRecord::colored_count).sum()
    }

    pub fn colors_used(&self) -> usize {
        self.edges()
            .filter_map(|(_, _, c, _)| c)
            .collect::<HashSet<_>>()
            .len()
    }

    /// The input graph, as an instance with the run's header.
    pub fn instance(&self) -> Instance {
        Instance::new(
            self.header,
            self.arrivals
                .iter()
                .map(|r| OnlineArrival::new(r.neighbors.clone()))
                .collect(),
        )
    }

    /// Maximum degree over both sides of the realized graph.
    pub fn realized_delta(&self) -> usize {
        let mut deg = vec![0usize; self.header.n_offline];
        let mut best = 0;
        for rec in &self.arrivals {
            best = best.max(rec.neighbors.len());
            for &u in &rec.neighbors {
                deg[u as usize] += 1;
            }
        }
        best.max(deg.into_iter().max().unwrap_or(0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ColorConflict {
    #[error("offline node {node} has color {color} on arrivals {first} and {second}")]
    Offline {
        node: NodeId,
        color: Color,
        first: usize,
        second: usize,
    },
    #[error("online node {t} has color {color} twice")]
    Online { t: usize, color: Color },
}

/// Check that no node has two edges of the same color. Only reads the final
/// colors, never algorithm state.
pub fn check_proper(transcript: &Transcript) -> Result<(), ColorConflict> {
    let mut offline: HashMap<(NodeId, Color), usize> = HashMap::new();
    for (t, rec) in transcript.arrivals.iter().enumerate() {
        let mut online = HashSet::new();
        for (&u, c) in rec.neighbors.iter().zip(&rec.colors) {
            let Some(c) = *c else { continue };
            if !online.insert(c) {
                return Err(ColorConflict::Online { t, color: c });
            }
            if let Some(&first) = offline.get(&(u, c)) {
                return Err(ColorConflict::Offline {
                    node: u,
                    color: c,
                    first,
                    second: t,
                });
            }
            offline.insert((u, c), t);
        }
    }
    Ok(())
}

/// Every edge carries a color.
pub fn is_total(transcript: &Transcript) -> bool {
    transcript
        .arrivals
        .iter()
        .all(|r| r.colors.iter().all(Option::is_some))
}
