//! Arrival sources: oblivious replay and adaptive strategies that read the
//! full run state (palettes, picks, assignments, degrees) before choosing
//! each arrival.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coloring::{Color, Transcript};
use crate::graph_stream::{DegreeLedger, Instance, InstanceHeader, NodeId, OnlineArrival, StreamError};
use crate::partial_coloring::{ceil_size, LevelConfig, PaletteState};
use crate::pipeline::{ArrivalOutput, OnlineColorer};

/// Read-only state handed to an adversary before each arrival.
pub struct AdversaryView<'a> {
    pub header: &'a InstanceHeader,
    pub ledger: &'a DegreeLedger,
    pub transcript: &'a Transcript,
    /// Colors assigned at each offline node, in assignment order.
    pub offline_colors: &'a [Vec<Color>],
    /// Level palettes, level 0 first; empty for palette-free algorithms.
    pub palettes: Vec<&'a PaletteState>,
    pub level_configs: Vec<LevelConfig>,
}

impl AdversaryView<'_> {
    /// Offline nodes with degree below the header bound, ascending.
    pub fn eligible(&self) -> Vec<NodeId> {
        (0..self.header.n_offline as NodeId)
            .filter(|&u| self.ledger.degree(u) < self.header.delta)
            .collect()
    }
}

pub trait Adversary {
    fn name(&self) -> &'static str;

    /// Next arrival, or `None` to end the run.
    fn next_arrival(&mut self, view: &AdversaryView) -> Option<OnlineArrival>;

    /// Pairs attacked so far, for strategies that attack pairs.
    fn attack_history(&self) -> &[AttackRecord] {
        &[]
    }
}

/// Emits a fixed instance verbatim.
#[derive(Debug, Clone)]
pub struct Replay {
    arrivals: Vec<OnlineArrival>,
    next: usize,
}

impl Replay {
    pub fn new(instance: &Instance) -> Self {
        Self {
            arrivals: instance.arrivals.clone(),
            next: 0,
        }
    }
}

impl Adversary for Replay {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn next_arrival(&mut self, _view: &AdversaryView) -> Option<OnlineArrival> {
        let a = self.arrivals.get(self.next).cloned();
        self.next += 1;
        a
    }
}

/// A node set `U` and color set `C` with `sum_{u in U} sum_{c in C} x_uc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairChoice {
    pub nodes: Vec<NodeId>,
    pub colors: Vec<u32>,
    pub value: f64,
}

/// `sum_{u in nodes} |colors ∩ P(u)| / |P(u)|`.
pub fn pair_value(palettes: &PaletteState, nodes: &[NodeId], colors: &[u32]) -> f64 {
    nodes
        .iter()
        .map(|&u| {
            let len = palettes.len(u);
            if len == 0 {
                return 0.0;
            }
            let hit = colors.iter().filter(|&&c| palettes.contains(u, c)).count();
            hit as f64 / len as f64
        })
        .sum()
}

// Scores are compared on a 1e-9 grid so that sums which agree up to rounding
// tie, and the lowest id wins.
fn top_k(scores: &[(u32, f64)], k: usize) -> Vec<u32> {
    let mut keyed: Vec<(i64, u32)> = scores
        .iter()
        .map(|&(id, s)| (-(s * 1e9).round() as i64, id))
        .collect();
    keyed.sort_unstable();
    let mut out: Vec<u32> = keyed.into_iter().take(k).map(|(_, id)| id).collect();
    out.sort_unstable();
    out
}

fn color_scores(palettes: &PaletteState, nodes: &[NodeId]) -> Vec<(u32, f64)> {
    let mut col = vec![0.0; palettes.palette_size()];
    for &u in nodes {
        let avail = palettes.available(u);
        if avail.is_empty() {
            continue;
        }
        let x = 1.0 / avail.len() as f64;
        for &c in avail {
            col[c as usize] += x;
        }
    }
    col.into_iter().enumerate().map(|(c, s)| (c as u32, s)).collect()
}

fn node_scores(palettes: &PaletteState, nodes: &[NodeId], colors: &[u32]) -> Vec<(u32, f64)> {
    nodes
        .iter()
        .map(|&u| (u, pair_value(palettes, &[u], colors)))
        .collect()
}

/// Greedy `(U, C)` choice: the `c_size` heaviest colors over `eligible`, then
/// the `u_size` nodes heaviest on those colors, then up to `refine_rounds`
/// alternating re-optimizations kept only while the value strictly grows.
pub fn choose_pair(
    palettes: &PaletteState,
    eligible: &[NodeId],
    u_size: usize,
    c_size: usize,
    refine_rounds: usize,
) -> PairChoice {
    let u_size = u_size.min(eligible.len());
    let c_size = c_size.min(palettes.palette_size());
    let colors = top_k(&color_scores(palettes, eligible), c_size);
    let nodes = top_k(&node_scores(palettes, eligible, &colors), u_size);
    let mut best = PairChoice {
        value: pair_value(palettes, &nodes, &colors),
        nodes,
        colors,
    };
    for _ in 0..refine_rounds {
        let colors = top_k(&color_scores(palettes, &best.nodes), c_size);
        let nodes = top_k(&node_scores(palettes, eligible, &colors), u_size);
        let value = pair_value(palettes, &nodes, &colors);
        if value <= best.value + 1e-12 {
            break;
        }
        best = PairChoice { nodes, colors, value };
    }
    best
}

/// One attacked pair, scored when it was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub t: usize,
    pub pair: PairChoice,
    /// `(1 + eps) |C|`.
    pub bound: f64,
}

impl AttackRecord {
    pub fn is_bad(&self) -> bool {
        self.pair.value > self.bound
    }
}

/// Presents the heaviest `(U, C)` pair of level 0 as the next neighborhood.
#[derive(Debug, Clone)]
pub struct LoadAttacker {
    /// `eps'` for `|C| = ceil(eps' delta)`; the level's own epsilon if unset.
    pub color_frac: Option<f64>,
    pub refine_rounds: usize,
    history: Vec<AttackRecord>,
}

impl Default for LoadAttacker {
    fn default() -> Self {
        Self::new(None)
    }
}

impl LoadAttacker {
    pub fn new(color_frac: Option<f64>) -> Self {
        Self {
            color_frac,
            refine_rounds: 4,
            history: Vec::new(),
        }
    }

    pub fn history(&self) -> &[AttackRecord] {
        &self.history
    }

    pub fn into_history(self) -> Vec<AttackRecord> {
        self.history
    }
}

impl Adversary for LoadAttacker {
    fn name(&self) -> &'static str {
        "load-attacker"
    }

    fn attack_history(&self) -> &[AttackRecord] {
        &self.history
    }

    fn next_arrival(&mut self, view: &AdversaryView) -> Option<OnlineArrival> {
        if view.ledger.budget_left() == 0 {
            return None;
        }
        let eligible = view.eligible();
        if eligible.is_empty() {
            return None;
        }
        let delta = view.header.delta;
        let (Some(palettes), Some(cfg)) = (view.palettes.first(), view.level_configs.first())
        else {
            let nodes: Vec<NodeId> = eligible.into_iter().take(delta).collect();
            return Some(OnlineArrival::new(nodes));
        };
        let eps = self.color_frac.unwrap_or(cfg.epsilon);
        let c_size = ceil_size(eps * delta as f64).max(1);
        let pair = choose_pair(palettes, &eligible, delta, c_size, self.refine_rounds);
        let bound = (1.0 + eps) * pair.colors.len() as f64;
        let arrival = OnlineArrival::new(pair.nodes.clone());
        self.history.push(AttackRecord {
            t: view.transcript.arrivals.len(),
            pair,
            bound,
        });
        Some(arrival)
    }
}

/// Adaptive strategy forcing first-fit to `2 delta - 1` colors.
///
/// A staircase arrival `[w_0, w_1, .., w_k]` with `w_0` fresh and `w_i`
/// holding colors `{0..i-1}` lifts every `w_i` to `{0..i}`. Staircases run up
/// to length `delta - 1`; once `delta` nodes hold the same `delta - 1` colors
/// they are presented together and must take `delta` colors outside that set.
#[derive(Debug, Clone)]
pub struct GreedyKiller {
    delta: usize,
    done: bool,
}

impl GreedyKiller {
    pub fn new(delta: usize) -> Self {
        Self { delta, done: false }
    }
}

impl Adversary for GreedyKiller {
    fn name(&self) -> &'static str {
        "greedy-killer"
    }

    fn next_arrival(&mut self, view: &AdversaryView) -> Option<OnlineArrival> {
        if self.done || self.delta == 0 || view.ledger.budget_left() == 0 {
            return None;
        }
        let delta = self.delta.min(view.header.delta);
        let mut groups: BTreeMap<Vec<Color>, Vec<NodeId>> = BTreeMap::new();
        for u in view.eligible() {
            let mut set = view.offline_colors[u as usize].clone();
            set.sort_unstable();
            groups.entry(set).or_default().push(u);
        }
        if let Some(nodes) = groups
            .iter()
            .find(|(set, nodes)| set.len() == delta - 1 && nodes.len() >= delta)
            .map(|(_, nodes)| nodes[..delta].to_vec())
        {
            self.done = true;
            return Some(OnlineArrival::new(nodes));
        }
        let mut chain = Vec::with_capacity(delta - 1);
        for i in 0..delta - 1 {
            let prefix: Vec<Color> = (0..i as Color).collect();
            match groups.get(&prefix) {
                Some(nodes) => chain.push(nodes[0]),
                None => break,
            }
        }
        if chain.is_empty() {
            self.done = true;
            return None;
        }
        Some(OnlineArrival::new(chain))
    }
}

/// Drives `alg` with arrivals from `adversary`, validating each against the
/// degree ledger, and calls `observe` after every arrival.
pub fn run_online<A, D, F>(
    alg: &mut A,
    adversary: &mut D,
    header: InstanceHeader,
    budget: usize,
    mut observe: F,
) -> Result<Transcript, StreamError>
where
    A: OnlineColorer + ?Sized,
    D: Adversary + ?Sized,
    F: FnMut(usize, &ArrivalOutput, &A),
{
    let mut ledger = DegreeLedger::with_budget(&header, budget);
    let mut transcript = Transcript::new(header);
    let mut offline_colors: Vec<Vec<Color>> = vec![Vec::new(); header.n_offline];
    loop {
        let view = AdversaryView {
            header: &header,
            ledger: &ledger,
            transcript: &transcript,
            offline_colors: &offline_colors,
            palettes: alg.level_palettes(),
            level_configs: alg.level_configs(),
        };
        let Some(arrival) = adversary.next_arrival(&view) else {
            break;
        };
        let t = transcript.arrivals.len();
        ledger.validate_arrival(&header, &arrival)?;
        let out = alg.color_arrival(&arrival.neighbors);
        for (&u, c) in out.record.neighbors.iter().zip(&out.record.colors) {
            offline_colors[u as usize].extend(*c);
        }
        observe(t, &out, alg);
        transcript.push(out.record);
    }
    Ok(transcript)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crs::CrsScheme;
    use crate::generators::gen_random_regular;
    use crate::partial_coloring::PartialColoring;
    use crate::pipeline::Greedy;
    use crate::seed::rng_from_seed;

    fn combinations(n: usize, k: usize) -> Vec<Vec<u32>> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if cur.len() == k {
                out.push(cur.clone());
                return;
            }
            for i in start..n {
                cur.push(i as u32);
                rec(i + 1, n, k, cur, out);
                cur.pop();
            }
        }
        rec(0, n, k, &mut cur, &mut out);
        out
    }

    fn brute_force_best(p: &PaletteState, u_size: usize, c_size: usize) -> f64 {
        let mut best = f64::MIN;
        for u in combinations(p.n_offline(), u_size) {
            for c in combinations(p.palette_size(), c_size) {
                best = best.max(pair_value(p, &u, &c));
            }
        }
        best
    }

    #[test]
    fn fresh_palettes_pick_lowest_ids() {
        let p = PaletteState::new(10, 5);
        let eligible: Vec<NodeId> = (0..10).collect();
        let pair = choose_pair(&p, &eligible, 3, 2, 4);
        assert_eq!(pair.nodes, vec![0, 1, 2]);
        assert_eq!(pair.colors, vec![0, 1]);
        assert!((pair.value - 3.0 * 2.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn attacker_is_optimal_after_one_distinct_removal() {
        for n in 3..=8usize {
            for delta in 1..=3usize.min(n) {
                for eps in [0.25, 0.5, 1.0] {
                    let palette = ceil_size((1.0 + f64::sqrt(eps)) * delta as f64);
                    let c_size = ceil_size(eps * delta as f64).max(1).min(palette);
                    let mut p = PaletteState::new(n, palette);
                    for u in 0..delta {
                        p.remove(u as NodeId, (u % palette) as u32);
                    }
                    let eligible: Vec<NodeId> = (0..n as NodeId).collect();
                    let pair = choose_pair(&p, &eligible, delta, c_size, 4);
                    let best = brute_force_best(&p, delta, c_size);
                    assert!(
                        (pair.value - best).abs() < 1e-12,
                        "n={n} delta={delta} eps={eps}: {} vs {best}",
                        pair.value
                    );
                }
            }
        }
    }

    #[test]
    fn attacker_is_deterministic_given_the_view() {
        let header = InstanceHeader::new(60, 8).unwrap();
        let run = || {
            let cfg = LevelConfig::new(8.0, 0.25, 0).unwrap();
            let mut alg = PartialColoring::new(60, cfg, CrsScheme::ExpClock, rng_from_seed(3));
            let mut adv = LoadAttacker::new(None);
            let tr = run_online(&mut alg, &mut adv, header, 60, |_, _, _| {}).unwrap();
            (tr, adv.into_history())
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(a.arrivals.len(), 60);
        assert_eq!(a.arrivals[0].neighbors, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn replay_preserves_order_and_count() {
        let inst = gen_random_regular(30, 4, 1).unwrap();
        let mut alg = Greedy::new(30);
        let tr = run_online(&mut alg, &mut Replay::new(&inst), inst.header, 30, |_, _, _| {})
            .unwrap();
        assert_eq!(tr.instance(), inst);
    }

    fn killer_colors(delta: usize, n_off: usize) -> usize {
        let header = InstanceHeader::new(n_off, delta).unwrap();
        let mut alg = Greedy::new(n_off);
        let mut adv = GreedyKiller::new(delta);
        let tr = run_online(&mut alg, &mut adv, header, n_off, |_, _, _| {}).unwrap();
        tr.colors_used()
    }

    #[test]
    fn killer_forces_two_delta_minus_one() {
        assert_eq!(killer_colors(1, 1), 1);
        assert_eq!(killer_colors(1, 5), 1);
        assert_eq!(killer_colors(2, 6), 3);
        assert_eq!(killer_colors(3, 8), 5);
        assert_eq!(killer_colors(5, 9), 9);
    }

    #[test]
    fn killer_stops_when_starved() {
        // Two fresh nodes and delta 3 cannot reach the final arrival.
        assert!(killer_colors(3, 3) < 5);
    }
}
