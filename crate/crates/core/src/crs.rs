//! Single-item contention resolution.
//!
//! Elements `0..n` are independently active with marginals `x_i`. A scheme
//! looks at the active set `R` and returns one winner whenever `R` is
//! nonempty. The target guarantee is the fair bound
//! `Pr[i wins] >= x_i * (1 - prod_j (1 - x_j)) / sum_j x_j`.
//!
//! The default scheme races exponential clocks: element `i` is given rate
//! `l_i = -ln(1 - x_i)` and, when active, a clock drawn from the exponential
//! distribution truncated to `[0, 1]`; the smallest clock wins. Activation
//! and clock together are exactly "exponential clock fired before time 1",
//! so the unconditional win probability has the closed form
//! `(l_i / L) * (1 - e^{-L})` with `L = sum_j l_j`. It matches the fair bound
//! when all marginals are equal and is never below `(1 - max_j x_j)` times
//! the fair bound.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Open01};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{rng_from_seed, Rng};

/// Tolerance used for floating-point identities in this module.
pub const IDENTITY_TOL: f64 = 1e-12;

/// Largest vector accepted by [`uniform_selection_prob_exact`].
pub const MAX_ENUMERATION_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrsError {
    #[error("marginal {index} = {value} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("active element {index} outside 0..{len}")]
    ActiveOutOfRange { index: usize, len: usize },
    #[error("exhaustive enumeration limited to {MAX_ENUMERATION_LEN} elements, got {0}")]
    TooLarge(usize),
    #[error("unknown scheme {0:?} (expected exp-clock, uniform or never)")]
    UnknownScheme(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalVector {
    x: Vec<f64>,
}

/// `-ln(1 - x)`, infinite at `x = 1`.
#[inline]
pub fn clock_rate(x: f64) -> f64 {
    if x >= 1.0 {
        f64::INFINITY
    } else {
        -(-x).ln_1p()
    }
}

impl MarginalVector {
    pub fn new(x: Vec<f64>) -> Result<Self, CrsError> {
        for (index, &value) in x.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(CrsError::OutOfRange { index, value });
            }
        }
        Ok(Self { x })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.x.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.x.iter().copied().fold(0.0, f64::max)
    }

    pub fn ell(&self) -> Vec<f64> {
        self.x.iter().map(|&x| clock_rate(x)).collect()
    }

    pub fn total_ell(&self) -> f64 {
        self.x.iter().map(|&x| clock_rate(x)).sum()
    }

    /// `prod_j (1 - x_j)`, the probability that nobody is active.
    pub fn empty_prob(&self) -> f64 {
        self.x.iter().map(|&x| 1.0 - x).product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActiveSet {
    members: Vec<usize>,
}

impl ActiveSet {
    pub fn new(members: Vec<usize>) -> Self {
        Self { members }
    }

    /// Members must index into `x`.
    pub fn checked(members: Vec<usize>, x: &MarginalVector) -> Result<Self, CrsError> {
        if let Some(&index) = members.iter().find(|&&i| i >= x.len()) {
            return Err(CrsError::ActiveOutOfRange {
                index,
                len: x.len(),
            });
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub winner: Option<usize>,
}

/// `x_i (1 - prod_j (1 - x_j)) / sum_j x_j`; all zeros when the sum is zero.
pub fn fair_bound(x: &MarginalVector) -> Vec<f64> {
    let s = x.sum();
    if s <= 0.0 {
        return vec![0.0; x.len()];
    }
    let scale = (1.0 - x.empty_prob()) / s;
    x.as_slice().iter().map(|&xi| xi * scale).collect()
}

/// Exact unconditional win probabilities of the exponential-clock race.
pub fn selection_prob_exact(x: &MarginalVector) -> Vec<f64> {
    let certain: Vec<usize> = (0..x.len()).filter(|&i| x.as_slice()[i] >= 1.0).collect();
    if !certain.is_empty() {
        // zero clocks always win, ties split evenly
        let share = 1.0 / certain.len() as f64;
        let mut out = vec![0.0; x.len()];
        for i in certain {
            out[i] = share;
        }
        return out;
    }
    let ell = x.ell();
    let total: f64 = ell.iter().sum();
    if total <= 0.0 {
        return vec![0.0; x.len()];
    }
    let fired = -(-total).exp_m1();
    ell.iter().map(|&l| l / total * fired).collect()
}

/// Win probabilities of [`uniform_select`] by enumerating all `2^n`
/// activation outcomes.
pub fn uniform_selection_prob_exact(x: &MarginalVector) -> Result<Vec<f64>, CrsError> {
    let n = x.len();
    if n > MAX_ENUMERATION_LEN {
        return Err(CrsError::TooLarge(n));
    }
    let xs = x.as_slice();
    let mut out = vec![0.0; n];
    for mask in 1u32..(1u32 << n) {
        let mut p = 1.0;
        for (i, &xi) in xs.iter().enumerate() {
            p *= if mask >> i & 1 == 1 { xi } else { 1.0 - xi };
        }
        if p == 0.0 {
            continue;
        }
        let share = p / mask.count_ones() as f64;
        for (i, o) in out.iter_mut().enumerate() {
            if mask >> i & 1 == 1 {
                *o += share;
            }
        }
    }
    Ok(out)
}

/// Truncated-exponential clock for an active element with marginal `x`.
#[inline]
fn draw_clock(x: f64, rng: &mut Rng) -> f64 {
    let u: f64 = Open01.sample(rng);
    if x >= 1.0 {
        return 0.0;
    }
    let rate = clock_rate(x);
    if rate <= 0.0 {
        // x -> 0 limit of the truncated exponential is uniform
        return u;
    }
    // inverse CDF of Exp(rate) conditioned on [0, 1]; 1 - e^{-rate} = x
    -(-u * x).ln_1p() / rate
}

/// Race over active elements given only their marginals. Returns the
/// position of the winner within `active_x`.
pub(crate) fn exp_clock_among(active_x: &[f64], rng: &mut Rng) -> Option<usize> {
    match active_x.len() {
        0 => return None,
        1 => return Some(0),
        _ => {}
    }
    let certain = active_x.iter().filter(|&&x| x >= 1.0).count();
    if certain > 0 {
        let pick = rng.gen_range(0..certain);
        return active_x
            .iter()
            .enumerate()
            .filter(|(_, &x)| x >= 1.0)
            .nth(pick)
            .map(|(i, _)| i);
    }
    let mut best = 0;
    let mut best_t = f64::INFINITY;
    for (i, &x) in active_x.iter().enumerate() {
        let t = draw_clock(x, rng);
        if t < best_t {
            best_t = t;
            best = i;
        }
    }
    Some(best)
}

pub fn exp_clock_select(r: &ActiveSet, x: &MarginalVector, rng: &mut Rng) -> Selection {
    let active_x: Vec<f64> = r.members().iter().map(|&i| x.as_slice()[i]).collect();
    let winner = exp_clock_among(&active_x, rng).map(|pos| r.members()[pos]);
    debug_assert_eq!(winner.is_some(), !r.is_empty());
    Selection { winner }
}

pub fn uniform_select(r: &ActiveSet, rng: &mut Rng) -> Selection {
    let winner = if r.is_empty() {
        None
    } else {
        Some(r.members()[rng.gen_range(0..r.members().len())])
    };
    Selection { winner }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrsScheme {
    #[default]
    ExpClock,
    Uniform,
    /// Degenerate stub that never selects anybody. Violates the one-winner
    /// contract on purpose; used to check fallbacks.
    Never,
}

impl CrsScheme {
    pub fn select(&self, r: &ActiveSet, x: &MarginalVector, rng: &mut Rng) -> Selection {
        match self {
            CrsScheme::ExpClock => exp_clock_select(r, x, rng),
            CrsScheme::Uniform => uniform_select(r, rng),
            CrsScheme::Never => Selection { winner: None },
        }
    }

    pub(crate) fn select_among(&self, active_x: &[f64], rng: &mut Rng) -> Option<usize> {
        match self {
            CrsScheme::ExpClock => exp_clock_among(active_x, rng),
            CrsScheme::Uniform if active_x.is_empty() => None,
            CrsScheme::Uniform => Some(rng.gen_range(0..active_x.len())),
            CrsScheme::Never => None,
        }
    }
}

impl fmt::Display for CrsScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CrsScheme::ExpClock => "exp-clock",
            CrsScheme::Uniform => "uniform",
            CrsScheme::Never => "never",
        })
    }
}

impl FromStr for CrsScheme {
    type Err = CrsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp-clock" => Ok(CrsScheme::ExpClock),
            "uniform" => Ok(CrsScheme::Uniform),
            "never" => Ok(CrsScheme::Never),
            other => Err(CrsError::UnknownScheme(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloEstimate {
    pub trials: u64,
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
}

/// Empirical `Pr[i wins]` under independent Bernoulli(`x_i`) activation
/// followed by `scheme`.
pub fn monte_carlo_marginals(
    x: &MarginalVector,
    scheme: CrsScheme,
    trials: u64,
    seed: u64,
) -> MonteCarloEstimate {
    let n = x.len();
    let mut rng = rng_from_seed(seed);
    let mut wins = vec![0u64; n];
    let mut active = Vec::with_capacity(n);
    let mut active_x = Vec::with_capacity(n);
    for _ in 0..trials {
        active.clear();
        active_x.clear();
        for (i, &xi) in x.as_slice().iter().enumerate() {
            if rng.gen::<f64>() < xi {
                active.push(i);
                active_x.push(xi);
            }
        }
        let winner = scheme.select_among(&active_x, &mut rng);
        debug_assert!(scheme == CrsScheme::Never || winner.is_some() == !active.is_empty());
        if let Some(pos) = winner {
            wins[active[pos]] += 1;
        }
    }
    let t = trials.max(1) as f64;
    let mean: Vec<f64> = wins.iter().map(|&w| w as f64 / t).collect();
    let std_err = mean.iter().map(|&p| (p * (1.0 - p) / t).sqrt()).collect();
    MonteCarloEstimate {
        trials,
        mean,
        std_err,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mv(x: &[f64]) -> MarginalVector {
        MarginalVector::new(x.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn fair_bound_examples() {
        close(&fair_bound(&mv(&[0.5, 0.5])), &[0.375, 0.375], 1e-15);
        close(&fair_bound(&mv(&[1.0])), &[1.0], 1e-15);
        let b = fair_bound(&mv(&[0.2, 0.5, 0.8]));
        // 0.92 / 1.5 = 0.61333...
        close(&b, &[0.2 * 0.92 / 1.5, 0.5 * 0.92 / 1.5, 0.8 * 0.92 / 1.5], 1e-15);
        close(&b, &[0.122667, 0.306667, 0.490667], 5e-7);
        assert!((b.iter().sum::<f64>() - 0.92).abs() < 1e-15);
        close(&fair_bound(&mv(&[0.0, 0.0])), &[0.0, 0.0], 0.0);
    }

    #[test]
    fn exact_selection_examples() {
        close(&selection_prob_exact(&mv(&[0.3])), &[0.3], 1e-15);
        close(&selection_prob_exact(&mv(&[0.5, 0.5])), &[0.375, 0.375], 1e-15);
        close(&selection_prob_exact(&mv(&[1.0, 0.5])), &[1.0, 0.0], 0.0);
        close(&selection_prob_exact(&mv(&[1.0, 1.0, 0.2])), &[0.5, 0.5, 0.0], 0.0);
        // ell = (0.2231435513, 0.6931471806, 1.6094379124), L = 2.5257286443,
        // 1 - e^{-L} = 0.92
        let p = selection_prob_exact(&mv(&[0.2, 0.5, 0.8]));
        close(&p, &[0.0812803, 0.2524798, 0.5862399], 5e-7);
    }

    #[test]
    fn derived_quantities() {
        let x = mv(&[0.2, 0.5, 0.8]);
        close(&x.ell(), &[0.2231435513, 0.6931471806, 1.6094379124], 1e-9);
        assert!((x.total_ell() - 2.5257286443).abs() < 1e-9);
        assert!((x.empty_prob() - (-x.total_ell()).exp()).abs() < IDENTITY_TOL);
        assert!(mv(&[1.0]).ell()[0].is_infinite());
        assert!(MarginalVector::new(vec![1.2]).is_err());
        assert!(MarginalVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn uniform_enumeration_matches_hand_count() {
        // x=(0.2,0.5,0.8): element i wins x_i * E[1/(1+|R\i|)]
        let x = [0.2, 0.5, 0.8];
        let mut hand = [0.0; 3];
        for i in 0..3 {
            let others: Vec<f64> = (0..3).filter(|&j| j != i).map(|j| x[j]).collect();
            let mut e = 0.0;
            for mask in 0..4u32 {
                let mut p = 1.0;
                for (k, &xo) in others.iter().enumerate() {
                    p *= if mask >> k & 1 == 1 { xo } else { 1.0 - xo };
                }
                e += p / (1 + mask.count_ones()) as f64;
            }
            hand[i] = x[i] * e;
        }
        close(&uniform_selection_prob_exact(&mv(&x)).unwrap(), &hand, 1e-15);
        assert!(uniform_selection_prob_exact(&mv(&[0.1; 21])).is_err());
    }

    #[test]
    fn singleton_always_wins() {
        let mut rng = rng_from_seed(1);
        let x = mv(&[0.1, 0.9, 0.4]);
        for _ in 0..100 {
            let sel = exp_clock_select(&ActiveSet::new(vec![0]), &x, &mut rng);
            assert_eq!(sel.winner, Some(0));
            assert_eq!(uniform_select(&ActiveSet::new(vec![2]), &mut rng).winner, Some(2));
        }
        assert_eq!(exp_clock_select(&ActiveSet::default(), &x, &mut rng).winner, None);
        assert_eq!(uniform_select(&ActiveSet::default(), &mut rng).winner, None);
    }

    #[test]
    fn certain_elements_tie_break() {
        let mut rng = rng_from_seed(5);
        let x = mv(&[1.0, 0.3, 1.0]);
        let r = ActiveSet::new(vec![0, 1, 2]);
        let mut counts = [0usize; 3];
        for _ in 0..20_000 {
            counts[exp_clock_select(&r, &x, &mut rng).winner.unwrap()] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 / 20_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn monte_carlo_half_half() {
        let est = monte_carlo_marginals(&mv(&[0.5, 0.5]), CrsScheme::ExpClock, 1_000_000, 11);
        for &m in &est.mean {
            assert!((m - 0.375).abs() < 0.002, "{m}");
        }
        let zero = monte_carlo_marginals(&mv(&[0.0, 0.0, 0.0]), CrsScheme::ExpClock, 1000, 1);
        assert_eq!(zero.mean, vec![0.0; 3]);
    }

    #[test]
    fn monte_carlo_reproducible() {
        let x = mv(&[0.2, 0.5, 0.8]);
        let a = monte_carlo_marginals(&x, CrsScheme::Uniform, 10_000, 9);
        let b = monte_carlo_marginals(&x, CrsScheme::Uniform, 10_000, 9);
        assert_eq!(a, b);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [CrsScheme::ExpClock, CrsScheme::Uniform, CrsScheme::Never] {
            assert_eq!(s.to_string().parse::<CrsScheme>().unwrap(), s);
        }
        assert!("fifo".parse::<CrsScheme>().is_err());
    }

    fn marginals() -> impl Strategy<Value = Vec<f64>> {
        prop_oneof![
            prop::collection::vec(0.0f64..0.999, 1..12),
            // one large element among many tiny ones
            (0.9f64..0.9999, prop::collection::vec(0.0f64..0.01, 1..11)).prop_map(|(big, mut v)| {
                v.insert(0, big);
                v
            }),
        ]
    }

    proptest! {
        #[test]
        fn certified_bound(x in marginals()) {
            let x = mv(&x);
            let exact = selection_prob_exact(&x);
            let fair = fair_bound(&x);
            let slack = 1.0 - x.max();
            for (p, b) in exact.iter().zip(&fair) {
                prop_assert!(*p >= slack * b - IDENTITY_TOL);
            }
        }

        #[test]
        fn normalization(x in marginals()) {
            let x = mv(&x);
            let total: f64 = selection_prob_exact(&x).iter().sum();
            prop_assert!((total - (1.0 - x.empty_prob())).abs() < IDENTITY_TOL);
        }

        #[test]
        fn equal_marginals_are_fair(v in 0.0f64..0.999, n in 1usize..12) {
            let x = mv(&vec![v; n]);
            let exact = selection_prob_exact(&x);
            let fair = fair_bound(&x);
            for (p, b) in exact.iter().zip(&fair) {
                prop_assert!((p - b).abs() < IDENTITY_TOL);
            }
        }

        #[test]
        fn winner_is_active(x in marginals(), seed in any::<u64>()) {
            let x = mv(&x);
            let mut rng = rng_from_seed(seed);
            let members: Vec<usize> = (0..x.len()).filter(|_| rng.gen_bool(0.5)).collect();
            let r = ActiveSet::checked(members.clone(), &x).unwrap();
            for scheme in [CrsScheme::ExpClock, CrsScheme::Uniform] {
                let sel = scheme.select(&r, &x, &mut rng);
                prop_assert_eq!(sel.winner.is_some(), !members.is_empty());
                if let Some(w) = sel.winner {
                    prop_assert!(members.contains(&w));
                }
            }
        }
    }
}
