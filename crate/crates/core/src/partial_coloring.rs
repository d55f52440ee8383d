//! Palette-based partial edge coloring with per-color contention resolution.
//!
//! Every offline node starts a level with the same palette of
//! `ceil((1 + sqrt(eps)) * delta)` colors. When `v_t` arrives, each edge
//! `(u, v_t)` picks a color uniformly from `P(u)` and removes it from `P(u)`
//! whether or not it ends up assigned. For each color picked by at least one
//! edge, a contention resolution scheme chooses exactly one of those edges,
//! with marginals `x_uc = 1[c in P(u)] / |P(u)|` taken before any pick of
//! the step. Everything else stays uncolored at this level.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coloring::{ArrivalRecord, Color, LevelPicks, Stage, Transcript};
use crate::crs::CrsScheme;
use crate::graph_stream::{Instance, InstanceHeader, NodeId, OnlineArrival};
use crate::seed::Rng;

/// Slack used when ceiling real-valued sizes, so that e.g. `1.5 * 100`
/// computed as `150.00000000000003` still yields 150.
const CEIL_SLACK: f64 = 1e-9;

pub(crate) fn ceil_size(v: f64) -> usize {
    (v - CEIL_SLACK).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LevelError {
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("delta must be positive and finite, got {0}")]
    BadDelta(f64),
}

/// `2 * (ln n / delta)^(1/5)`.
pub fn epsilon_default(n: usize, delta: f64) -> f64 {
    2.0 * ((n as f64).ln() / delta).powf(0.2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    /// Assumed degree bound for this level; real-valued inside a cascade.
    pub delta: f64,
    pub epsilon: f64,
    /// First global color of this level's palette.
    pub color_base: Color,
}

impl LevelConfig {
    pub fn new(delta: f64, epsilon: f64, color_base: Color) -> Result<Self, LevelError> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(LevelError::BadDelta(delta));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(LevelError::BadEpsilon(epsilon));
        }
        Ok(Self {
            delta,
            epsilon,
            color_base,
        })
    }

    pub fn palette_size(&self) -> usize {
        ceil_size((1.0 + self.epsilon.sqrt()) * self.delta)
    }

    /// Size of the color side of a (U, C) pair: `ceil(eps * delta)`.
    pub fn pair_colors(&self) -> usize {
        ceil_size(self.epsilon * self.delta).max(1)
    }

    /// Largest possible martingale step on delta-respecting input.
    pub fn step_bound(&self) -> f64 {
        2.0 / (self.epsilon.sqrt() * self.delta)
    }
}

const ABSENT: u32 = u32::MAX;

/// Available level-local colors per offline node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaletteState {
    palette_size: usize,
    colors: Vec<Vec<u32>>,
    // position of color c inside colors[u], or ABSENT
    pos: Vec<Vec<u32>>,
}

impl PaletteState {
    /// Every node gets the full palette `0..palette_size`.
    pub fn new(n_offline: usize, palette_size: usize) -> Self {
        let full: Vec<u32> = (0..palette_size as u32).collect();
        Self {
            palette_size,
            colors: vec![full.clone(); n_offline],
            pos: vec![full; n_offline],
        }
    }

    pub fn n_offline(&self) -> usize {
        self.colors.len()
    }

    pub fn palette_size(&self) -> usize {
        self.palette_size
    }

    pub fn len(&self, u: NodeId) -> usize {
        self.colors[u as usize].len()
    }

    pub fn is_empty(&self, u: NodeId) -> bool {
        self.colors[u as usize].is_empty()
    }

    pub fn removed_count(&self, u: NodeId) -> usize {
        self.palette_size - self.len(u)
    }

    pub fn contains(&self, u: NodeId, c: u32) -> bool {
        (c as usize) < self.palette_size && self.pos[u as usize][c as usize] != ABSENT
    }

    /// Available colors of `u` in no particular order.
    pub fn available(&self, u: NodeId) -> &[u32] {
        &self.colors[u as usize]
    }

    /// `x_uc = 1[c in P(u)] / |P(u)|`.
    pub fn x(&self, u: NodeId, c: u32) -> f64 {
        if self.contains(u, c) {
            1.0 / self.len(u) as f64
        } else {
            0.0
        }
    }

    /// Remove `c` from `P(u)`; false if it was not there.
    pub fn remove(&mut self, u: NodeId, c: u32) -> bool {
        if !self.contains(u, c) {
            return false;
        }
        let ui = u as usize;
        let idx = self.pos[ui][c as usize] as usize;
        let last = *self.colors[ui].last().expect("nonempty");
        self.colors[ui].swap_remove(idx);
        if last != c {
            self.pos[ui][last as usize] = idx as u32;
        }
        self.pos[ui][c as usize] = ABSENT;
        true
    }

    /// Uniform pick from `P(u)`, removed before returning.
    pub fn pick_and_remove(&mut self, u: NodeId, rng: &mut Rng) -> Option<u32> {
        let len = self.len(u);
        if len == 0 {
            return None;
        }
        let c = self.colors[u as usize][rng.gen_range(0..len)];
        self.remove(u, c);
        Some(c)
    }
}

/// Everything one level did with one arrival. Colors are level-local.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub neighbors: Vec<NodeId>,
    /// `|P(u)|` per neighbor before any pick of this step.
    pub palette_sizes: Vec<usize>,
    /// `S_c = sum_{u in N} x_uc` per level-local color, from the snapshot.
    pub loads: Vec<f64>,
    /// Picked color per edge; `None` when the palette was empty.
    pub picks: Vec<Option<u32>>,
    /// Assigned color per edge (equal to its pick when present).
    pub assigned: Vec<Option<u32>>,
}

impl StepOutcome {
    /// `(color, edge index)` for each color assigned this step.
    pub fn assignments(&self) -> Vec<(u32, usize)> {
        let mut out: Vec<(u32, usize)> = self
            .assigned
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|c| (c, i)))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn uncolored(&self) -> Vec<usize> {
        (0..self.assigned.len())
            .filter(|&i| self.assigned[i].is_none())
            .collect()
    }

    pub fn skipped(&self) -> Vec<NodeId> {
        self.neighbors
            .iter()
            .zip(&self.picks)
            .filter(|(_, p)| p.is_none())
            .map(|(&u, _)| u)
            .collect()
    }

    /// Snapshot marginal of edge `i` for a color it could pick.
    pub fn x_of(&self, i: usize) -> f64 {
        match self.palette_sizes[i] {
            0 => 0.0,
            k => 1.0 / k as f64,
        }
    }
}

/// One running level: its palettes, CRS and random stream.
#[derive(Debug, Clone)]
pub struct PartialColoringLevel {
    cfg: LevelConfig,
    palettes: PaletteState,
    scheme: CrsScheme,
    rng: Rng,
    skipped_edges: usize,
}

impl PartialColoringLevel {
    pub fn new(n_offline: usize, cfg: LevelConfig, scheme: CrsScheme, rng: Rng) -> Self {
        Self {
            palettes: init_level(n_offline, &cfg),
            cfg,
            scheme,
            rng,
            skipped_edges: 0,
        }
    }

    /// Replace the palettes, e.g. to start from a reachable mid-run state.
    pub fn with_palettes(mut self, palettes: PaletteState) -> Self {
        assert_eq!(palettes.palette_size(), self.cfg.palette_size());
        self.palettes = palettes;
        self
    }

    pub fn config(&self) -> &LevelConfig {
        &self.cfg
    }

    pub fn palettes(&self) -> &PaletteState {
        &self.palettes
    }

    pub fn skipped_edges(&self) -> usize {
        self.skipped_edges
    }

    pub fn process_arrival(&mut self, neighbors: &[NodeId]) -> StepOutcome {
        let k = neighbors.len();
        let palette_sizes: Vec<usize> = neighbors.iter().map(|&u| self.palettes.len(u)).collect();

        let mut loads = vec![0.0; self.palettes.palette_size()];
        let mut live = 0usize;
        for (&u, &size) in neighbors.iter().zip(&palette_sizes) {
            if size == 0 {
                continue;
            }
            live += 1;
            let share = 1.0 / size as f64;
            for &c in self.palettes.available(u) {
                loads[c as usize] += share;
            }
        }
        debug_assert!((loads.iter().sum::<f64>() - live as f64).abs() < 1e-9);

        let mut picks = Vec::with_capacity(k);
        for &u in neighbors {
            let pick = self.palettes.pick_and_remove(u, &mut self.rng);
            if pick.is_none() {
                self.skipped_edges += 1;
                log::warn!(
                    "level at color base {}: empty palette at offline node {u}; edge left uncolored",
                    self.cfg.color_base
                );
            }
            picks.push(pick);
        }

        // contention per color, colors in increasing order
        let mut by_color: Vec<(u32, usize)> = picks
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|c| (c, i)))
            .collect();
        by_color.sort_unstable();
        let mut assigned = vec![None; k];
        let mut active_x = Vec::with_capacity(k);
        let mut start = 0;
        while start < by_color.len() {
            let c = by_color[start].0;
            let end = start
                + by_color[start..]
                    .iter()
                    .take_while(|(cc, _)| *cc == c)
                    .count();
            let group = &by_color[start..end];
            active_x.clear();
            active_x.extend(group.iter().map(|&(_, i)| 1.0 / palette_sizes[i] as f64));
            if let Some(pos) = self.scheme.select_among(&active_x, &mut self.rng) {
                assigned[group[pos].1] = Some(c);
            }
            start = end;
        }

        StepOutcome {
            neighbors: neighbors.to_vec(),
            palette_sizes,
            loads,
            picks,
            assigned,
        }
    }
}

/// Fresh palettes for a level.
pub fn init_level(n_offline: usize, cfg: &LevelConfig) -> PaletteState {
    PaletteState::new(n_offline, cfg.palette_size())
}

/// Uncolored edges of a run, in arrival order, as an instance whose delta is
/// the observed residual maximum degree (at least 1). Online nodes with no
/// uncolored edge are dropped.
pub fn residual_subgraph(transcript: &Transcript) -> Instance {
    let n = transcript.header.n_offline;
    let mut deg = vec![0usize; n];
    let mut arrivals = Vec::new();
    let mut max_deg = 0;
    for rec in &transcript.arrivals {
        let left: Vec<NodeId> = rec
            .neighbors
            .iter()
            .zip(&rec.colors)
            .filter(|(_, c)| c.is_none())
            .map(|(&u, _)| u)
            .collect();
        if left.is_empty() {
            continue;
        }
        max_deg = max_deg.max(left.len());
        for &u in &left {
            deg[u as usize] += 1;
            max_deg = max_deg.max(deg[u as usize]);
        }
        arrivals.push(OnlineArrival::new(left));
    }
    let header = InstanceHeader {
        n_offline: n,
        delta: max_deg.max(1),
    };
    Instance::new(header, arrivals)
}

/// A single level used as a whole (partial) algorithm, colors from 0.
#[derive(Debug, Clone)]
pub struct PartialColoring {
    level: PartialColoringLevel,
}

impl PartialColoring {
    pub fn new(n_offline: usize, cfg: LevelConfig, scheme: CrsScheme, rng: Rng) -> Self {
        Self {
            level: PartialColoringLevel::new(n_offline, cfg, scheme, rng),
        }
    }

    pub fn level(&self) -> &PartialColoringLevel {
        &self.level
    }

    /// Process one arrival, returning the transcript record and the raw step.
    pub fn color_arrival(&mut self, neighbors: &[NodeId]) -> (ArrivalRecord, StepOutcome) {
        let base = self.level.cfg.color_base;
        let step = self.level.process_arrival(neighbors);
        let colors: Vec<Option<Color>> = step.assigned.iter().map(|c| c.map(|c| c + base)).collect();
        let stages = colors
            .iter()
            .map(|c| if c.is_some() { Stage::Level(0) } else { Stage::Uncolored })
            .collect();
        let picks = LevelPicks {
            level: 0,
            picks: neighbors
                .iter()
                .zip(&step.picks)
                .map(|(&u, p)| (u, p.map(|c| c + base)))
                .collect(),
        };
        let record = ArrivalRecord {
            neighbors: neighbors.to_vec(),
            colors,
            stages,
            picks: vec![picks],
        };
        (record, step)
    }
}
