//! Cascade of partial-coloring levels with a first-fit greedy tail.
//!
//! Level `i` assumes degree bound `delta_i = q^i * delta` and owns a fresh
//! palette. On each arrival the edges pass through the levels in order; each
//! level sees only the edges the previous levels left uncolored. Whatever is
//! left after the last level is colored first-fit from a palette that starts
//! after all level palettes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coloring::{check_proper, ArrivalRecord, Color, ColorConflict, LevelPicks, Stage, Transcript};
use crate::crs::CrsScheme;
use crate::graph_stream::{Instance, NodeId};
use crate::partial_coloring::{
    ceil_size, epsilon_default, LevelConfig, PaletteState, PartialColoring, PartialColoringLevel,
    StepOutcome,
};
use crate::seed::derive_rng;

/// Exponent splitting the work between the cascade and the greedy tail.
pub const ALPHA: f64 = 10.0 / 11.0;

const MAX_LEVELS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("need at least 3 offline nodes to plan from ln n, got {0}")]
    TooFewNodes(usize),
    #[error("delta must be at least 1")]
    ZeroDelta,
    #[error("planned palettes exceed the color index space")]
    ColorSpaceExceeded,
    #[error("default parameters infeasible: lambda = {lambda:.5} gives q = {q:.5} >= 1 (override q or epsilon)")]
    Infeasible { lambda: f64, q: f64 },
    #[error("invalid override: {0}")]
    BadOverride(String),
}

/// Optional replacements for the default plan constants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanOverrides {
    pub epsilon: Option<f64>,
    pub q: Option<f64>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedLevel {
    pub delta: f64,
    pub epsilon: f64,
    pub palette: usize,
    pub color_base: Color,
}

impl PlannedLevel {
    pub fn config(&self) -> LevelConfig {
        LevelConfig {
            delta: self.delta,
            epsilon: self.epsilon,
            color_base: self.color_base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPlan {
    pub n: usize,
    pub delta: usize,
    pub lambda: f64,
    pub q: f64,
    pub alpha: f64,
    pub threshold: f64,
    pub levels: Vec<PlannedLevel>,
    pub greedy_base: Color,
}

impl LevelPlan {
    pub fn total_palette(&self) -> usize {
        self.levels.iter().map(|l| l.palette).sum()
    }
}

/// `3 sqrt(2) (ln n / delta)^(alpha / 10)`.
pub fn default_lambda(n: usize, delta: f64) -> f64 {
    3.0 * 2f64.sqrt() * ((n as f64).ln() / delta).powf(ALPHA / 10.0)
}

/// `delta^alpha (ln n)^(1 - alpha)`.
pub fn default_threshold(n: usize, delta: f64) -> f64 {
    delta.powf(ALPHA) * (n as f64).ln().powf(1.0 - ALPHA)
}

/// Levels are every `i` with `q^i * delta >= threshold`.
/// `delta, q delta, q^2 delta, ..` while at least `threshold`.
pub fn level_degrees(delta: f64, q: f64, threshold: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut di = delta;
    while di >= threshold && out.len() < MAX_LEVELS {
        out.push(di);
        di *= q;
    }
    out
}

pub fn plan_levels(n: usize, delta: usize, overrides: &PlanOverrides) -> Result<LevelPlan, PlanError> {
    if n < 3 {
        return Err(PlanError::TooFewNodes(n));
    }
    if delta == 0 {
        return Err(PlanError::ZeroDelta);
    }
    let d = delta as f64;
    let lambda = default_lambda(n, d);
    let q = match overrides.q {
        Some(q) if q > 0.0 && q < 1.0 => q,
        Some(q) => return Err(PlanError::BadOverride(format!("q = {q} not in (0, 1)"))),
        None => {
            let q = (-1f64).exp() + lambda;
            if q >= 1.0 {
                return Err(PlanError::Infeasible { lambda, q });
            }
            q
        }
    };
    let threshold = match overrides.threshold {
        Some(t) if t > 0.0 && t.is_finite() => t,
        Some(t) => return Err(PlanError::BadOverride(format!("threshold = {t} must be positive"))),
        None => default_threshold(n, d),
    };
    if let Some(e) = overrides.epsilon {
        if !(e > 0.0 && e.is_finite()) {
            return Err(PlanError::BadOverride(format!("epsilon = {e} must be positive")));
        }
    }

    let mut levels = Vec::new();
    let mut base: u64 = 0;
    for di in level_degrees(d, q, threshold) {
        let epsilon = overrides.epsilon.unwrap_or_else(|| epsilon_default(n, di));
        let palette = ceil_size((1.0 + epsilon.sqrt()) * di);
        levels.push(PlannedLevel {
            delta: di,
            epsilon,
            palette,
            color_base: base as Color,
        });
        base += palette as u64;
        if base > u64::from(Color::MAX) / 2 {
            return Err(PlanError::ColorSpaceExceeded);
        }
    }
    let base = base as Color;
    Ok(LevelPlan {
        n,
        delta,
        lambda,
        q,
        alpha: ALPHA,
        threshold,
        levels,
        greedy_base: base,
    })
}

/// Growable bitset of used colors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ColorSet {
    words: Vec<u64>,
}

impl ColorSet {
    fn contains(&self, c: Color) -> bool {
        let (w, b) = ((c / 64) as usize, c % 64);
        self.words.get(w).is_some_and(|x| x >> b & 1 == 1)
    }

    fn insert(&mut self, c: Color) {
        let (w, b) = ((c / 64) as usize, c % 64);
        if self.words.len() <= w {
            self.words.resize(w + 1, 0);
        }
        self.words[w] |= 1 << b;
    }

    fn word(&self, w: usize) -> u64 {
        self.words.get(w).copied().unwrap_or(0)
    }
}

/// Lowest color `>= base` in neither set.
fn first_free(a: &ColorSet, b: &ColorSet, base: Color) -> Color {
    let mut w = (base / 64) as usize;
    let mut mask = !0u64 << (base % 64);
    loop {
        let free = !(a.word(w) | b.word(w)) & mask;
        if free != 0 {
            return w as Color * 64 + free.trailing_zeros();
        }
        w += 1;
        mask = !0;
    }
}

/// First-fit greedy: each edge, in neighbor order, takes the lowest color
/// `>= base` unused at both endpoints.
#[derive(Debug, Clone)]
pub struct FirstFit {
    base: Color,
    offline: Vec<ColorSet>,
}

impl FirstFit {
    pub fn new(n_offline: usize, base: Color) -> Self {
        Self {
            base,
            offline: vec![ColorSet::default(); n_offline],
        }
    }

    pub fn base(&self) -> Color {
        self.base
    }

    pub fn color_edges(&mut self, neighbors: &[NodeId]) -> Vec<Color> {
        let mut online = ColorSet::default();
        neighbors
            .iter()
            .map(|&u| {
                let set = &mut self.offline[u as usize];
                let c = first_free(set, &online, self.base);
                set.insert(c);
                online.insert(c);
                c
            })
            .collect()
    }

    pub fn uses(&self, u: NodeId, c: Color) -> bool {
        self.offline[u as usize].contains(c)
    }
}

/// First-fit over a whole stream.
pub fn greedy_color(stream: &Instance, color_base: Color) -> Transcript {
    let mut ff = FirstFit::new(stream.header.n_offline, color_base);
    let mut tr = Transcript::new(stream.header);
    for a in &stream.arrivals {
        let colors = ff.color_edges(&a.neighbors);
        tr.push(ArrivalRecord {
            neighbors: a.neighbors.clone(),
            colors: colors.into_iter().map(Some).collect(),
            stages: vec![Stage::Tail; a.len()],
            picks: Vec::new(),
        });
    }
    tr
}

/// Result of feeding one arrival to an online algorithm.
#[derive(Debug, Clone)]
pub struct ArrivalOutput {
    pub record: ArrivalRecord,
    /// Raw level steps, for instrumentation.
    pub steps: Vec<(u16, StepOutcome)>,
}

/// An online edge-coloring algorithm driven one arrival at a time.
pub trait OnlineColorer {
    fn name(&self) -> &'static str;

    fn color_arrival(&mut self, neighbors: &[NodeId]) -> ArrivalOutput;

    /// Palettes of the partial-coloring levels, level 0 first. Empty for
    /// algorithms without palettes.
    fn level_palettes(&self) -> Vec<&PaletteState>;

    /// Level configurations, parallel to [`OnlineColorer::level_palettes`].
    fn level_configs(&self) -> Vec<LevelConfig>;
}

#[derive(Debug, Clone)]
pub struct Greedy {
    ff: FirstFit,
}

impl Greedy {
    pub fn new(n_offline: usize) -> Self {
        Self {
            ff: FirstFit::new(n_offline, 0),
        }
    }
}

impl OnlineColorer for Greedy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn color_arrival(&mut self, neighbors: &[NodeId]) -> ArrivalOutput {
        let colors = self.ff.color_edges(neighbors);
        ArrivalOutput {
            record: ArrivalRecord {
                neighbors: neighbors.to_vec(),
                colors: colors.into_iter().map(Some).collect(),
                stages: vec![Stage::Tail; neighbors.len()],
                picks: Vec::new(),
            },
            steps: Vec::new(),
        }
    }

    fn level_palettes(&self) -> Vec<&PaletteState> {
        Vec::new()
    }

    fn level_configs(&self) -> Vec<LevelConfig> {
        Vec::new()
    }
}

impl OnlineColorer for PartialColoring {
    fn name(&self) -> &'static str {
        "partial"
    }

    fn color_arrival(&mut self, neighbors: &[NodeId]) -> ArrivalOutput {
        let (record, step) = PartialColoring::color_arrival(self, neighbors);
        ArrivalOutput {
            record,
            steps: vec![(0, step)],
        }
    }

    fn level_palettes(&self) -> Vec<&PaletteState> {
        vec![self.level().palettes()]
    }

    fn level_configs(&self) -> Vec<LevelConfig> {
        vec![*self.level().config()]
    }
}

/// The full cascade.
#[derive(Debug, Clone)]
pub struct Pipeline {
    plan: LevelPlan,
    levels: Vec<PartialColoringLevel>,
    tail: FirstFit,
}

impl Pipeline {
    /// Level `i` draws from the stream labelled `level:i` under `master_seed`.
    pub fn new(n_offline: usize, plan: LevelPlan, scheme: CrsScheme, master_seed: u64) -> Self {
        let levels = plan
            .levels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                PartialColoringLevel::new(
                    n_offline,
                    l.config(),
                    scheme,
                    derive_rng(master_seed, &format!("level:{i}")),
                )
            })
            .collect();
        let tail = FirstFit::new(n_offline, plan.greedy_base);
        Self { plan, levels, tail }
    }

    pub fn plan(&self) -> &LevelPlan {
        &self.plan
    }
}

impl OnlineColorer for Pipeline {
    fn name(&self) -> &'static str {
        "pipeline"
    }

    fn color_arrival(&mut self, neighbors: &[NodeId]) -> ArrivalOutput {
        let k = neighbors.len();
        let mut colors: Vec<Option<Color>> = vec![None; k];
        let mut stages = vec![Stage::Uncolored; k];
        let mut picks = Vec::new();
        let mut steps = Vec::new();
        // indices into `neighbors` still uncolored
        let mut remaining: Vec<usize> = (0..k).collect();
        for (i, level) in self.levels.iter_mut().enumerate() {
            if remaining.is_empty() {
                break;
            }
            let nodes: Vec<NodeId> = remaining.iter().map(|&j| neighbors[j]).collect();
            let base = level.config().color_base;
            let step = level.process_arrival(&nodes);
            let mut next = Vec::with_capacity(remaining.len());
            for (pos, &j) in remaining.iter().enumerate() {
                match step.assigned[pos] {
                    Some(c) => {
                        colors[j] = Some(c + base);
                        stages[j] = Stage::Level(i as u16);
                    }
                    None => next.push(j),
                }
            }
            picks.push(LevelPicks {
                level: i as u16,
                picks: nodes
                    .iter()
                    .zip(&step.picks)
                    .map(|(&u, p)| (u, p.map(|c| c + base)))
                    .collect(),
            });
            steps.push((i as u16, step));
            remaining = next;
        }
        if !remaining.is_empty() {
            let nodes: Vec<NodeId> = remaining.iter().map(|&j| neighbors[j]).collect();
            for (&j, c) in remaining.iter().zip(self.tail.color_edges(&nodes)) {
                colors[j] = Some(c);
                stages[j] = Stage::Tail;
            }
        }
        ArrivalOutput {
            record: ArrivalRecord {
                neighbors: neighbors.to_vec(),
                colors,
                stages,
                picks,
            },
            steps,
        }
    }

    fn level_palettes(&self) -> Vec<&PaletteState> {
        self.levels.iter().map(|l| l.palettes()).collect()
    }

    fn level_configs(&self) -> Vec<LevelConfig> {
        self.levels.iter().map(|l| *l.config()).collect()
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("coloring is not proper: {0}")]
    Improper(#[from] ColorConflict),
    #[error("edge ({t}, {u}) left uncolored")]
    Incomplete { t: usize, u: NodeId },
    #[error("{used} colors exceed the bound {bound}")]
    ColorBound { used: usize, bound: usize },
}

/// Maximum degree (both sides) of the edges handed to the greedy tail.
pub fn tail_max_degree(transcript: &Transcript) -> usize {
    let mut deg = vec![0usize; transcript.header.n_offline];
    let mut best = 0;
    for rec in &transcript.arrivals {
        let mut online = 0;
        for (&u, s) in rec.neighbors.iter().zip(&rec.stages) {
            if *s == Stage::Tail {
                online += 1;
                deg[u as usize] += 1;
                best = best.max(deg[u as usize]);
            }
        }
        best = best.max(online);
    }
    best
}

/// `sum_i palette_i + (2 * tail degree - 1)`, or just the palettes when the
/// tail received nothing.
pub fn color_bound(plan: &LevelPlan, transcript: &Transcript) -> usize {
    let tail = tail_max_degree(transcript);
    plan.total_palette() + if tail > 0 { 2 * tail - 1 } else { 0 }
}

/// Validate a finished cascade run: proper, total and within the bound.
pub fn check_pipeline_run(plan: &LevelPlan, transcript: &Transcript) -> Result<(), PipelineError> {
    check_proper(transcript)?;
    if let Some((t, u, _, _)) = transcript.edges().find(|(_, _, c, _)| c.is_none()) {
        return Err(PipelineError::Incomplete { t, u });
    }
    let used = transcript.colors_used();
    let bound = color_bound(plan, transcript);
    if used > bound {
        return Err(PipelineError::ColorBound { used, bound });
    }
    Ok(())
}

/// Replay an instance through the cascade and validate the result.
pub fn run_pipeline(
    instance: &Instance,
    plan: &LevelPlan,
    scheme: CrsScheme,
    master_seed: u64,
) -> Result<Transcript, PipelineError> {
    let mut alg = Pipeline::new(instance.header.n_offline, plan.clone(), scheme, master_seed);
    let mut tr = Transcript::new(instance.header);
    for a in &instance.arrivals {
        tr.push(alg.color_arrival(&a.neighbors).record);
    }
    check_pipeline_run(plan, &tr)?;
    Ok(tr)
}
