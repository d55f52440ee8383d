//! Benchmark instance generators. All are pure functions of their arguments
//! and seed.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{Adversary, AdversaryView, GreedyKiller};
use crate::coloring::Transcript;
use crate::graph_stream::{DegreeLedger, Instance, InstanceHeader, NodeId, OnlineArrival};
use crate::pipeline::{Greedy, OnlineColorer};
use crate::seed::{rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("collision repair did not converge after {0} swaps")]
    RepairCapExceeded(usize),
    #[error("budget too small: need {required} offline nodes")]
    BudgetTooSmall { required: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenKind {
    Regular,
    Binomial,
    GreedyHard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub kind: GenKind,
    pub n_offline: usize,
    /// Online side size for `binomial`; ignored otherwise.
    pub n_online: usize,
    pub delta: usize,
    pub edge_prob: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn generate(&self) -> Result<Instance, GenError> {
        match self.kind {
            GenKind::Regular => gen_random_regular(self.n_offline, self.delta, self.seed),
            GenKind::Binomial => gen_binomial(
                self.n_offline,
                self.n_online,
                self.edge_prob,
                self.delta,
                self.seed,
            ),
            GenKind::GreedyHard => gen_greedy_hard(self.delta, self.n_offline, self.seed),
        }
    }
}

const CLEAN_SWAP_ATTEMPTS: usize = 64;

/// Union of `delta` random perfect matchings between `n` online and `n`
/// offline nodes. A matching edge that duplicates an earlier one is swapped
/// with another edge of the same matching until the graph is simple.
pub fn gen_random_regular(n: usize, delta: usize, seed: u64) -> Result<Instance, GenError> {
    if n == 0 || delta == 0 || delta > n {
        return Err(GenError::InvalidParams(format!(
            "need 1 <= delta <= n, got n={n}, delta={delta}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut adj: Vec<Vec<NodeId>> = vec![Vec::with_capacity(delta); n];
    let cap = 1000 * n * delta + 10_000;
    let mut swaps = 0usize;
    for _ in 0..delta {
        let mut perm: Vec<NodeId> = (0..n as NodeId).collect();
        perm.shuffle(&mut rng);
        loop {
            let bad: Vec<usize> = (0..n).filter(|&v| adj[v].contains(&perm[v])).collect();
            if bad.is_empty() {
                break;
            }
            for v in bad {
                if !adj[v].contains(&perm[v]) {
                    continue;
                }
                swaps += 1;
                if swaps > cap {
                    return Err(GenError::RepairCapExceeded(cap));
                }
                if n == 1 {
                    continue;
                }
                let clean = (0..CLEAN_SWAP_ATTEMPTS).find_map(|_| {
                    let w = rng.gen_range(0..n);
                    (w != v && !adj[v].contains(&perm[w]) && !adj[w].contains(&perm[v]))
                        .then_some(w)
                });
                let w = clean.unwrap_or_else(|| random_other(&mut rng, n, v));
                perm.swap(v, w);
            }
        }
        for (v, &u) in perm.iter().enumerate() {
            adj[v].push(u);
        }
    }
    let header = InstanceHeader::new(n, delta).expect("checked above");
    let arrivals = adj
        .into_iter()
        .map(|mut nb| {
            nb.sort_unstable();
            OnlineArrival::new(nb)
        })
        .collect();
    Ok(Instance::new(header, arrivals))
}

fn random_other(rng: &mut Rng, n: usize, v: usize) -> usize {
    let w = rng.gen_range(0..n - 1);
    if w >= v {
        w + 1
    } else {
        w
    }
}

/// Each pair present independently with probability `p`; an edge is dropped
/// if either endpoint already has `min(delta_cap, n_off)` edges. Online
/// nodes left without edges are omitted.
pub fn gen_binomial(
    n_off: usize,
    n_on: usize,
    p: f64,
    delta_cap: usize,
    seed: u64,
) -> Result<Instance, GenError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(GenError::InvalidParams(format!("edge probability {p} not in [0, 1]")));
    }
    if n_off == 0 || delta_cap == 0 {
        return Err(GenError::InvalidParams("need n_off >= 1 and delta_cap >= 1".into()));
    }
    let cap = delta_cap.min(n_off);
    let mut rng = rng_from_seed(seed);
    let mut deg = vec![0usize; n_off];
    let mut arrivals = Vec::new();
    for _ in 0..n_on {
        let mut nb = Vec::new();
        for u in 0..n_off {
            let present = rng.gen::<f64>() < p;
            if present && deg[u] < cap && nb.len() < cap {
                deg[u] += 1;
                nb.push(u as NodeId);
            }
        }
        if !nb.is_empty() {
            arrivals.push(OnlineArrival::new(nb));
        }
    }
    let header = InstanceHeader::new(n_off, cap).expect("cap within n_off");
    Ok(Instance::new(header, arrivals))
}

/// Offline nodes needed by [`gen_greedy_hard`].
pub fn greedy_hard_required(delta: usize) -> usize {
    if delta <= 1 {
        1
    } else {
        2 * delta - 1
    }
}

/// An instance on which first-fit uses exactly `max(1, 2 delta - 1)` colors.
///
/// Built by running [`GreedyKiller`] against first-fit: staircase arrivals
/// lift offline nodes to used-color sets `{0..i-1}` until `delta` of them
/// share `{0..delta-2}`, then one arrival spans those `delta` nodes. Offline
/// ids are relabelled by a seeded permutation; neighbor order is kept since
/// first-fit depends on it.
pub fn gen_greedy_hard(delta: usize, n_budget: usize, seed: u64) -> Result<Instance, GenError> {
    if delta == 0 {
        return Err(GenError::InvalidParams("delta must be at least 1".into()));
    }
    let required = greedy_hard_required(delta);
    if n_budget < required {
        return Err(GenError::BudgetTooSmall { required });
    }
    let header = InstanceHeader::new(required, delta).expect("2 delta - 1 >= delta");
    let transcript = run_greedy_killer(header, header.n_offline);

    let mut labels: Vec<NodeId> = (0..n_budget as NodeId).collect();
    labels.shuffle(&mut rng_from_seed(seed));
    let arrivals = transcript
        .arrivals
        .iter()
        .map(|r| OnlineArrival::new(r.neighbors.iter().map(|&u| labels[u as usize]).collect()))
        .collect();
    let header = InstanceHeader::new(n_budget, delta).expect("n_budget >= required");
    Ok(Instance::new(header, arrivals))
}

/// Greedy killer against first-fit on a fresh instance.
pub(crate) fn run_greedy_killer(header: InstanceHeader, budget: usize) -> Transcript {
    let mut alg = Greedy::new(header.n_offline);
    let mut killer = GreedyKiller::new(header.delta);
    let mut ledger = DegreeLedger::with_budget(&header, budget);
    let mut transcript = Transcript::new(header);
    let mut offline_colors = vec![Vec::new(); header.n_offline];
    loop {
        let view = AdversaryView {
            header: &header,
            ledger: &ledger,
            transcript: &transcript,
            offline_colors: &offline_colors,
            palettes: alg.level_palettes(),
            level_configs: alg.level_configs(),
        };
        let Some(arrival) = killer.next_arrival(&view) else {
            break;
        };
        ledger
            .validate_arrival(&header, &arrival)
            .expect("killer respects budgets");
        let out = alg.color_arrival(&arrival.neighbors);
        for (&u, c) in out.record.neighbors.iter().zip(&out.record.colors) {
            offline_colors[u as usize].extend(*c);
        }
        transcript.push(out.record);
    }
    transcript
}
