//! Exact solver for the online coloring game at toy scale.
//!
//! The adversary presents neighborhoods of offline nodes (degree at most
//! `delta`, at most `arrivals` of them) and may stop at any point; the
//! algorithm colors each edge properly from `color_cap` colors. The payoff is
//! the number of distinct colors used. A node is described by the set of
//! colors at it (a bitmask); its degree is the set's size since every edge is
//! colored. States are multisets of node masks, so node identities are
//! factored out.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_N_OFF: usize = 8;
pub const MAX_DELTA: usize = 3;
pub const MAX_CAP: usize = 8;

const DIST_TOL: f64 = 1e-9;
const INFEASIBLE: u8 = u8::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExpectimaxError {
    #[error("limits exceeded: {0}")]
    LimitExceeded(String),
    #[error("policy distribution sums to {0}, not 1")]
    BadDistribution(f64),
    #[error("policy has no color for an edge")]
    PolicyStuck,
    #[error("color cap {cap} is below 2 delta - 1 = {need}")]
    CapTooSmall { cap: usize, need: usize },
}

fn check_limits(n_off: usize, delta: usize, cap: usize) -> Result<(), ExpectimaxError> {
    if n_off == 0 || n_off > MAX_N_OFF || delta == 0 || delta > MAX_DELTA || cap > MAX_CAP {
        return Err(ExpectimaxError::LimitExceeded(format!(
            "need 1 <= n_off <= {MAX_N_OFF}, 1 <= delta <= {MAX_DELTA}, cap <= {MAX_CAP}; \
             got n_off={n_off}, delta={delta}, cap={cap}"
        )));
    }
    Ok(())
}

/// Canonical game position: sorted node masks and arrivals left.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameState {
    pub masks: Vec<u8>,
    pub arrivals_left: u8,
}

impl GameState {
    pub fn initial(n_off: usize, arrivals: usize) -> Self {
        Self {
            masks: vec![0; n_off],
            arrivals_left: arrivals.min(u8::MAX as usize) as u8,
        }
    }

    pub fn canonical(mut self) -> Self {
        self.masks.sort_unstable();
        self
    }

    pub fn colors_used(&self) -> u8 {
        self.masks.iter().fold(0u8, |a, &m| a | m).count_ones() as u8
    }

    fn eligible(&self, delta: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.masks.len()).filter(move |&i| (self.masks[i].count_ones() as usize) < delta)
    }
}

/// One adversary move and the reply along the principal line of play.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub state: GameState,
    /// Masks of the presented nodes, in presentation order.
    pub presented: Vec<u8>,
    /// Colors given to those edges (most likely outcome for random play).
    pub colors: Vec<u8>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// `None` when the adversary can force more than `color_cap` colors.
    pub value: Option<usize>,
    pub states_visited: usize,
    pub trace: Vec<TraceStep>,
}

/// Nodes grouped by identical masks: `(first index, run length)` of the
/// eligible ones in a sorted state.
fn classes(state: &GameState, delta: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for i in state.eligible(delta) {
        match out.last_mut() {
            Some((start, len)) if state.masks[*start] == state.masks[i] => *len += 1,
            _ => out.push((i, 1)),
        }
    }
    out
}

/// Unordered choices: nondecreasing index lists, one node per class slot.
fn multiset_moves(classes: &[(usize, usize)], delta: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, classes: &[(usize, usize)], left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == classes.len() {
            if !cur.is_empty() {
                out.push(cur.clone());
            }
            return;
        }
        let (start, len) = classes[k];
        for m in 0..=len.min(left) {
            cur.extend(start..start + m);
            rec(k + 1, classes, left - m, cur, out);
            cur.truncate(cur.len() - m);
        }
    }
    let mut out = Vec::new();
    rec(0, classes, delta, &mut Vec::new(), &mut out);
    out
}

/// Ordered choices: sequences of classes, the j-th use of a class taking its
/// j-th node.
fn sequence_moves(classes: &[(usize, usize)], delta: usize) -> Vec<Vec<usize>> {
    fn rec(classes: &[(usize, usize)], used: &mut Vec<usize>, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if left == 0 {
            return;
        }
        for k in 0..classes.len() {
            let (start, len) = classes[k];
            if used[k] < len {
                cur.push(start + used[k]);
                used[k] += 1;
                rec(classes, used, left - 1, cur, out);
                used[k] -= 1;
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(classes, &mut vec![0; classes.len()], delta, &mut Vec::new(), &mut out);
    out
}

fn apply(state: &GameState, nodes: &[usize], colors: &[u8]) -> GameState {
    let mut next = state.clone();
    for (&i, &c) in nodes.iter().zip(colors) {
        next.masks[i] |= 1 << c;
    }
    next.arrivals_left -= 1;
    next.canonical()
}

/// Minimax over deterministic algorithms, memoized on canonical states.
pub struct DeterministicSolver {
    delta: usize,
    cap: usize,
    memo: HashMap<GameState, u8>,
}

impl DeterministicSolver {
    pub fn new(delta: usize, cap: usize) -> Self {
        Self {
            delta,
            cap,
            memo: HashMap::new(),
        }
    }

    pub fn states_visited(&self) -> usize {
        self.memo.len()
    }

    /// Colors the adversary forces from `state`; `None` if above the cap.
    pub fn value(&mut self, state: &GameState) -> Option<usize> {
        let v = self.solve(&state.clone().canonical());
        (v != INFEASIBLE).then_some(v as usize)
    }

    // Proper colorings of `nodes`, reusing colors already in play or taking
    // the lowest unused one (unused colors are interchangeable).
    fn assignments(&self, state: &GameState, nodes: &[usize]) -> Vec<Vec<u8>> {
        let used = state.masks.iter().fold(0u8, |a, &m| a | m);
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(nodes.len());
        self.assign_rec(state, nodes, used, 0, &mut cur, &mut out);
        out
    }

    fn assign_rec(&self, state: &GameState, nodes: &[usize], used: u8, taken: u8, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        let Some(&i) = nodes.get(cur.len()) else {
            out.push(cur.clone());
            return;
        };
        let blocked = state.masks[i] | taken;
        let fresh = (0..self.cap as u8).find(|&c| (used | taken) & (1 << c) == 0);
        for c in 0..self.cap as u8 {
            let bit = 1u8 << c;
            let reuse = used & bit != 0 && blocked & bit == 0;
            if reuse || Some(c) == fresh {
                cur.push(c);
                self.assign_rec(state, nodes, used, taken | bit, cur, out);
                cur.pop();
            }
        }
    }

    fn solve(&mut self, state: &GameState) -> u8 {
        if let Some(&v) = self.memo.get(state) {
            return v;
        }
        let mut best = state.colors_used();
        if state.arrivals_left > 0 {
            for nodes in multiset_moves(&classes(state, self.delta), self.delta) {
                let reply = self.best_reply(state, &nodes).1;
                best = best.max(reply);
                if best == INFEASIBLE {
                    break;
                }
            }
        }
        self.memo.insert(state.clone(), best);
        best
    }

    fn best_reply(&mut self, state: &GameState, nodes: &[usize]) -> (Vec<u8>, u8) {
        let mut best = (Vec::new(), INFEASIBLE);
        for colors in self.assignments(state, nodes) {
            let v = self.solve(&apply(state, nodes, &colors));
            if v < best.1 {
                best = (colors, v);
            }
        }
        best
    }

    /// Adversary's best move and the algorithm's reply, repeated while the
    /// adversary still gains.
    pub fn principal_line(&mut self, start: &GameState) -> Vec<TraceStep> {
        let mut trace = Vec::new();
        let mut state = start.clone().canonical();
        loop {
            let value = self.solve(&state);
            if value == INFEASIBLE || value == state.colors_used() || state.arrivals_left == 0 {
                break;
            }
            let Some((nodes, colors)) = multiset_moves(&classes(&state, self.delta), self.delta)
                .into_iter()
                .map(|nodes| {
                    let (colors, v) = self.best_reply(&state, &nodes);
                    (nodes, colors, v)
                })
                .find(|(_, _, v)| *v == value)
                .map(|(n, c, _)| (n, c))
            else {
                break;
            };
            trace.push(TraceStep {
                state: state.clone(),
                presented: nodes.iter().map(|&i| state.masks[i]).collect(),
                colors: colors.clone(),
                value: f64::from(value),
            });
            state = apply(&state, &nodes, &colors);
        }
        trace
    }
}

/// Fewest colors a deterministic online algorithm can guarantee against an
/// adaptive adversary with `n_off` offline nodes and `arrivals` arrivals.
pub fn solve_deterministic(
    n_off: usize,
    delta: usize,
    arrivals: usize,
    color_cap: usize,
) -> Result<Solution, ExpectimaxError> {
    check_limits(n_off, delta, color_cap)?;
    let mut solver = DeterministicSolver::new(delta, color_cap);
    let start = GameState::initial(n_off, arrivals);
    let value = solver.value(&start);
    let trace = solver.principal_line(&start);
    Ok(Solution {
        value,
        states_visited: solver.states_visited(),
        trace,
    })
}

/// Same game, solved by plain recursion over node ids and every color below
/// the cap, with no memo and no symmetry reduction.
pub fn solve_uncached(masks: &[u8], arrivals_left: usize, delta: usize, cap: usize) -> Option<usize> {
    let v = raw_value(&mut masks.to_vec(), arrivals_left, delta, cap);
    (v != INFEASIBLE).then_some(v as usize)
}

fn raw_value(masks: &mut Vec<u8>, arrivals_left: usize, delta: usize, cap: usize) -> u8 {
    let used = masks.iter().fold(0u8, |a, &m| a | m).count_ones() as u8;
    if arrivals_left == 0 {
        return used;
    }
    let eligible: Vec<usize> = (0..masks.len())
        .filter(|&i| (masks[i].count_ones() as usize) < delta)
        .collect();
    let mut best = used;
    for bits in 1u32..(1 << eligible.len()) {
        if bits.count_ones() as usize > delta {
            continue;
        }
        let nodes: Vec<usize> = (0..eligible.len())
            .filter(|&k| bits & (1 << k) != 0)
            .map(|k| eligible[k])
            .collect();
        let reply = raw_min(masks, &nodes, 0, 0, arrivals_left, delta, cap);
        best = best.max(reply);
        if best == INFEASIBLE {
            break;
        }
    }
    best
}

fn raw_min(masks: &mut Vec<u8>, nodes: &[usize], pos: usize, taken: u8, arrivals_left: usize, delta: usize, cap: usize) -> u8 {
    let Some(&i) = nodes.get(pos) else {
        return raw_value(masks, arrivals_left - 1, delta, cap);
    };
    let mut best = INFEASIBLE;
    for c in 0..cap as u8 {
        let bit = 1u8 << c;
        if (masks[i] | taken) & bit != 0 {
            continue;
        }
        masks[i] |= bit;
        best = best.min(raw_min(masks, nodes, pos + 1, taken | bit, arrivals_left, delta, cap));
        masks[i] &= !bit;
    }
    best
}

/// A randomized online algorithm given by its per-edge color distribution.
pub trait Policy {
    fn name(&self) -> &'static str;

    /// Distribution of the color for an edge at a node holding `node_mask`
    /// when this arrival already used `taken`.
    fn distribution(&self, node_mask: u8, taken: u8, cap: usize) -> Vec<(u8, f64)>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FirstFitPolicy;

impl Policy for FirstFitPolicy {
    fn name(&self) -> &'static str {
        "first-fit"
    }

    fn distribution(&self, node_mask: u8, taken: u8, cap: usize) -> Vec<(u8, f64)> {
        (0..cap as u8)
            .find(|&c| (node_mask | taken) & (1 << c) == 0)
            .map(|c| vec![(c, 1.0)])
            .unwrap_or_default()
    }
}

/// Uniform over every color below the cap that is free at both endpoints.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn distribution(&self, node_mask: u8, taken: u8, cap: usize) -> Vec<(u8, f64)> {
        let free: Vec<u8> = (0..cap as u8)
            .filter(|&c| (node_mask | taken) & (1 << c) == 0)
            .collect();
        let p = 1.0 / free.len() as f64;
        free.into_iter().map(|c| (c, p)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    FirstFit,
    Uniform,
}

impl PolicyKind {
    pub fn policy(self) -> Box<dyn Policy + Sync> {
        match self {
            PolicyKind::FirstFit => Box::new(FirstFitPolicy),
            PolicyKind::Uniform => Box::new(UniformPolicy),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::FirstFit => "first-fit",
            PolicyKind::Uniform => "uniform",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first-fit" => Ok(PolicyKind::FirstFit),
            "uniform" => Ok(PolicyKind::Uniform),
            other => Err(format!("unknown policy {other:?} (expected first-fit or uniform)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizedSolution {
    pub value: f64,
    pub states_visited: usize,
    pub trace: Vec<TraceStep>,
}

struct Expectimax<'p> {
    policy: &'p dyn Policy,
    delta: usize,
    cap: usize,
    memo: HashMap<GameState, f64>,
}

impl Expectimax<'_> {
    fn value(&mut self, state: &GameState) -> Result<f64, ExpectimaxError> {
        if let Some(&v) = self.memo.get(state) {
            return Ok(v);
        }
        let mut best = f64::from(state.colors_used());
        if state.arrivals_left > 0 {
            for seq in sequence_moves(&classes(state, self.delta), self.delta) {
                best = best.max(self.chance(state, &seq, &mut Vec::new(), 0)?);
            }
        }
        self.memo.insert(state.clone(), best);
        Ok(best)
    }

    fn checked_distribution(&self, mask: u8, taken: u8) -> Result<Vec<(u8, f64)>, ExpectimaxError> {
        let dist = self.policy.distribution(mask, taken, self.cap);
        if dist.is_empty() {
            return Err(ExpectimaxError::PolicyStuck);
        }
        let sum: f64 = dist.iter().map(|d| d.1).sum();
        if (sum - 1.0).abs() > DIST_TOL {
            return Err(ExpectimaxError::BadDistribution(sum));
        }
        if dist.iter().any(|&(c, _)| (mask | taken) & (1 << c) != 0 || c as usize >= self.cap) {
            return Err(ExpectimaxError::PolicyStuck);
        }
        Ok(dist)
    }

    fn chance(&mut self, state: &GameState, seq: &[usize], colors: &mut Vec<u8>, taken: u8) -> Result<f64, ExpectimaxError> {
        let Some(&i) = seq.get(colors.len()) else {
            return self.value(&apply(state, seq, colors));
        };
        let mut total = 0.0;
        for (c, p) in self.checked_distribution(state.masks[i], taken)? {
            colors.push(c);
            total += p * self.chance(state, seq, colors, taken | (1 << c))?;
            colors.pop();
        }
        Ok(total)
    }

    fn most_likely(&self, state: &GameState, seq: &[usize]) -> Result<Vec<u8>, ExpectimaxError> {
        let mut taken = 0u8;
        let mut out = Vec::new();
        for &i in seq {
            let dist = self.checked_distribution(state.masks[i], taken)?;
            let (c, _) = dist
                .into_iter()
                .fold((0u8, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
            taken |= 1 << c;
            out.push(c);
        }
        Ok(out)
    }
}

/// Worst-case expected colors of `policy` against an adaptive adversary
/// that orders each neighborhood as it likes.
pub fn evaluate_randomized(
    policy: &dyn Policy,
    n_off: usize,
    delta: usize,
    arrivals: usize,
    color_cap: usize,
) -> Result<RandomizedSolution, ExpectimaxError> {
    check_limits(n_off, delta, color_cap)?;
    let need = 2 * delta - 1;
    if color_cap < need {
        return Err(ExpectimaxError::CapTooSmall { cap: color_cap, need });
    }
    let mut ex = Expectimax {
        policy,
        delta,
        cap: color_cap,
        memo: HashMap::new(),
    };
    let start = GameState::initial(n_off, arrivals);
    let value = ex.value(&start)?;

    let mut trace = Vec::new();
    let mut state = start;
    loop {
        let v = ex.value(&state)?;
        if state.arrivals_left == 0 || (v - f64::from(state.colors_used())).abs() < DIST_TOL {
            break;
        }
        let mut chosen = None;
        for seq in sequence_moves(&classes(&state, delta), delta) {
            if (ex.chance(&state, &seq, &mut Vec::new(), 0)? - v).abs() < DIST_TOL {
                chosen = Some(seq);
                break;
            }
        }
        let Some(seq) = chosen else { break };
        let colors = ex.most_likely(&state, &seq)?;
        trace.push(TraceStep {
            state: state.clone(),
            presented: seq.iter().map(|&i| state.masks[i]).collect(),
            colors: colors.clone(),
            value: v,
        });
        state = apply(&state, &seq, &colors);
    }
    Ok(RandomizedSolution {
        value,
        states_visited: ex.memo.len(),
        trace,
    })
}
