//! Analysis quantities of a run: per-color loads and goodness, `(U, C)`
//! pair probes, martingale traces, concentration utilities, run summaries
//! and their CSV forms.

use std::io::{Read, Write};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coloring::{check_proper, Color, ColorConflict, Stage, Transcript};
use crate::graph_stream::NodeId;
use crate::partial_coloring::{ceil_size, LevelConfig, PaletteState, StepOutcome};
use crate::seed::Rng;

/// Slack on exact identities evaluated in floating point.
pub const METRIC_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("expected |U| = {expected_u} and |C| = {expected_c}, got {got_u} and {got_c}")]
    SizeMismatch {
        expected_u: usize,
        expected_c: usize,
        got_u: usize,
        got_c: usize,
    },
    #[error("node or color out of range, or repeated, in probe set")]
    BadSet,
    #[error("trace start Z_0 = {got} differs from |U||C|/palette = {expected}")]
    InitialValue { got: f64, expected: f64 },
    #[error("trace step {i} moved by {step}, above the bound {bound}")]
    StepBound { i: usize, step: f64, bound: f64 },
    #[error(transparent)]
    Improper(#[from] ColorConflict),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Loads `S_c` of one step and the colors above `1 + eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLoadReport {
    pub loads: Vec<f64>,
    pub good: Vec<bool>,
    pub count_not_good: usize,
}

pub fn classify_colors(step: &StepOutcome, epsilon: f64) -> StepLoadReport {
    let live = step.palette_sizes.iter().filter(|&&s| s > 0).count();
    let total: f64 = step.loads.iter().sum();
    debug_assert!((total - live as f64).abs() <= METRIC_TOL * (1.0 + live as f64));
    let good: Vec<bool> = step.loads.iter().map(|&s| s <= 1.0 + epsilon).collect();
    let count_not_good = good.iter().filter(|g| !**g).count();
    StepLoadReport {
        loads: step.loads.clone(),
        good,
        count_not_good,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub value: f64,
    pub is_bad: bool,
}

/// `|U|` for a level: its degree bound, rounded up.
pub fn probe_node_count(cfg: &LevelConfig) -> usize {
    ceil_size(cfg.delta)
}

fn check_set(ids: &[u32], limit: usize) -> Result<(), MetricsError> {
    let mut seen = vec![false; limit];
    for &i in ids {
        let slot = seen.get_mut(i as usize).ok_or(MetricsError::BadSet)?;
        if std::mem::replace(slot, true) {
            return Err(MetricsError::BadSet);
        }
    }
    Ok(())
}

/// `sum_{u in U} sum_{c in C} x_uc`, flagged bad above `(1 + eps) |C|`.
pub fn bad_pair_probe(
    state: &PaletteState,
    nodes: &[NodeId],
    colors: &[u32],
    cfg: &LevelConfig,
) -> Result<Probe, MetricsError> {
    let (expected_u, expected_c) = (probe_node_count(cfg), cfg.pair_colors());
    if nodes.len() != expected_u || colors.len() != expected_c {
        return Err(MetricsError::SizeMismatch {
            expected_u,
            expected_c,
            got_u: nodes.len(),
            got_c: colors.len(),
        });
    }
    check_set(nodes, state.n_offline())?;
    check_set(colors, state.palette_size())?;
    let value: f64 = nodes
        .iter()
        .map(|&u| colors.iter().map(|&c| state.x(u, c)).sum::<f64>())
        .sum();
    Ok(Probe {
        value,
        is_bad: value > (1.0 + cfg.epsilon) * colors.len() as f64,
    })
}

/// Number of `(U, C)` pairs: `C(n, |U|) * C(palette, |C|)`.
pub fn probe_space_size(n: usize, u_size: usize, palette: usize, c_size: usize) -> f64 {
    binomial(n, u_size) * binomial(palette, c_size)
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `Z_i = sum_{u in U} |C ∩ P(u)| / |P(u)|` after each processed edge of one
/// level. `touched[i]` says whether edge `i` hit `U`; index 0 is the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTrace {
    pub nodes: Vec<NodeId>,
    pub colors: Vec<u32>,
    pub palette_size: usize,
    pub z: Vec<f64>,
    pub touched: Vec<bool>,
}

impl MartingaleTrace {
    pub fn z0(&self) -> f64 {
        self.z[0]
    }

    pub fn last(&self) -> f64 {
        *self.z.last().expect("trace holds Z_0")
    }

    pub fn max_z(&self) -> f64 {
        self.z.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn drift(&self) -> f64 {
        self.last() - self.z0()
    }

    pub fn increments(&self) -> impl Iterator<Item = f64> + '_ {
        self.z.windows(2).map(|w| w[1] - w[0])
    }

    pub fn max_step(&self) -> f64 {
        self.increments().map(f64::abs).fold(0.0, f64::max)
    }

    pub fn sum_sq_increments(&self) -> f64 {
        self.increments().map(|d| d * d).sum()
    }

    pub fn rows(&self) -> Vec<TraceRow> {
        self.z
            .iter()
            .zip(&self.touched)
            .enumerate()
            .map(|(i, (&z, &t))| TraceRow {
                i,
                z,
                touched: u8::from(t),
            })
            .collect()
    }
}

/// Replay the picks of `level` from a transcript and follow `Z_i` for the
/// pair `(U, C)` of level-local colors. Checks the start value and the step
/// bound `2 / (sqrt(eps) delta)`.
pub fn martingale_trace(
    transcript: &Transcript,
    level: u16,
    nodes: &[NodeId],
    colors: &[u32],
    cfg: &LevelConfig,
) -> Result<MartingaleTrace, MetricsError> {
    let palette = cfg.palette_size();
    check_set(nodes, transcript.header.n_offline)?;
    check_set(colors, palette)?;
    let mut in_u = vec![usize::MAX; transcript.header.n_offline];
    for (j, &u) in nodes.iter().enumerate() {
        in_u[u as usize] = j;
    }
    let mut in_c = vec![false; palette];
    for &c in colors {
        in_c[c as usize] = true;
    }
    let mut len = vec![palette; nodes.len()];
    let mut hit = vec![colors.len(); nodes.len()];
    let value = |len: &[usize], hit: &[usize]| -> f64 {
        len.iter()
            .zip(hit)
            .map(|(&l, &k)| if l == 0 { 0.0 } else { k as f64 / l as f64 })
            .sum()
    };

    let z0 = value(&len, &hit);
    let expected = (nodes.len() * colors.len()) as f64 / palette as f64;
    if (z0 - expected).abs() > METRIC_TOL {
        return Err(MetricsError::InitialValue { got: z0, expected });
    }
    let bound = cfg.step_bound();
    let mut z = vec![z0];
    let mut touched = vec![false];
    for rec in &transcript.arrivals {
        let Some(lp) = rec.picks.iter().find(|p| p.level == level) else {
            continue;
        };
        for &(u, c) in &lp.picks {
            let Some(c) = c else { continue };
            let local = (c - cfg.color_base) as usize;
            let prev = *z.last().expect("nonempty");
            let j = in_u[u as usize];
            let next = if j == usize::MAX {
                prev
            } else {
                len[j] -= 1;
                if in_c[local] {
                    hit[j] -= 1;
                }
                value(&len, &hit)
            };
            let i = z.len();
            if (next - prev).abs() > bound + 1e-12 {
                return Err(MetricsError::StepBound {
                    i,
                    step: (next - prev).abs(),
                    bound,
                });
            }
            z.push(next);
            touched.push(j != usize::MAX);
        }
    }
    Ok(MartingaleTrace {
        nodes: nodes.to_vec(),
        colors: colors.to_vec(),
        palette_size: palette,
        z,
        touched,
    })
}

/// `k` uniformly random `(U, C)` pairs of the level's probe sizes.
pub fn sample_pairs(n_offline: usize, cfg: &LevelConfig, k: usize, rng: &mut Rng) -> Vec<(Vec<NodeId>, Vec<u32>)> {
    let u_size = probe_node_count(cfg).min(n_offline);
    let c_size = cfg.pair_colors().min(cfg.palette_size());
    (0..k)
        .map(|_| {
            let mut u: Vec<NodeId> = sample(rng, n_offline, u_size).into_iter().map(|i| i as NodeId).collect();
            let mut c: Vec<u32> = sample(rng, cfg.palette_size(), c_size).into_iter().map(|i| i as u32).collect();
            u.sort_unstable();
            c.sort_unstable();
            (u, c)
        })
        .collect()
}

/// Freedman tail `exp(-lambda^2 / (2 (sigma2 + a lambda / 3)))`.
pub fn freedman_bound(sigma2: f64, step_a: f64, lambda: f64) -> f64 {
    debug_assert!(sigma2 >= 0.0 && step_a >= 0.0 && lambda >= 0.0);
    if lambda == 0.0 {
        return 1.0;
    }
    (-lambda * lambda / (2.0 * (sigma2 + step_a * lambda / 3.0))).exp()
}

/// `(1 - e^{-1-x}) / (1 + x) - (1 - e^{-1} - x)`, nonnegative on `[0, 1]`.
pub fn fact_gap(x: f64) -> f64 {
    -(-1.0 - x).exp_m1() / (1.0 + x) - (1.0 - (-1f64).exp() - x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub delta_i: f64,
    pub epsilon_i: f64,
    pub palette: usize,
    /// Edges that entered this level.
    pub input_edges: usize,
    pub colored: usize,
    pub colored_fraction: f64,
    /// Maximum degree (both sides) of the edges this level left uncolored.
    pub residual_max_degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub edges: usize,
    pub colored_edges: usize,
    pub colors_used: usize,
    pub realized_delta: usize,
    pub ratio: f64,
    pub per_level: Vec<LevelSummary>,
    pub tail_edges: usize,
    /// Colored edges per online node.
    pub per_online_colored: Vec<usize>,
}

fn max_degree_where(transcript: &Transcript, keep: impl Fn(Stage) -> bool) -> usize {
    let mut deg = vec![0usize; transcript.header.n_offline];
    let mut best = 0;
    for rec in &transcript.arrivals {
        let mut online = 0;
        for (&u, &s) in rec.neighbors.iter().zip(&rec.stages) {
            if keep(s) {
                online += 1;
                deg[u as usize] += 1;
                best = best.max(deg[u as usize]);
            }
        }
        best = best.max(online);
    }
    best
}

/// Totals and per-level figures of a finished run; fails if the coloring is
/// not proper. `configs` lists the levels the algorithm ran, level 0 first.
pub fn run_summary(transcript: &Transcript, configs: &[LevelConfig]) -> Result<RunMetrics, MetricsError> {
    check_proper(transcript)?;
    let colors_used = transcript.colors_used();
    let realized_delta = transcript.realized_delta();
    let per_level = configs
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let level = i as u16;
            let input_edges: usize = transcript
                .arrivals
                .iter()
                .flat_map(|r| r.picks.iter().filter(|p| p.level == level))
                .map(|p| p.picks.len())
                .sum();
            let colored = transcript
                .edges()
                .filter(|e| e.3 == Stage::Level(level))
                .count();
            let residual_max_degree = max_degree_where(transcript, |s| match s {
                Stage::Level(j) => j > level,
                _ => true,
            });
            LevelSummary {
                delta_i: cfg.delta,
                epsilon_i: cfg.epsilon,
                palette: cfg.palette_size(),
                input_edges,
                colored,
                colored_fraction: if input_edges == 0 {
                    0.0
                } else {
                    colored as f64 / input_edges as f64
                },
                residual_max_degree,
            }
        })
        .collect();
    Ok(RunMetrics {
        edges: transcript.edge_count(),
        colored_edges: transcript.colored_count(),
        colors_used,
        realized_delta,
        ratio: if realized_delta == 0 {
            0.0
        } else {
            colors_used as f64 / realized_delta as f64
        },
        per_level,
        tail_edges: transcript.edges().filter(|e| e.3 == Stage::Tail).count(),
        per_online_colored: transcript.arrivals.iter().map(|r| r.colored_count()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRow {
    pub t: usize,
    pub color: Color,
    pub load: f64,
    pub good: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub i: usize,
    #[serde(rename = "Z")]
    pub z: f64,
    pub touched: u8,
}

/// Final color of one edge; empty color for an uncolored edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColoringRow {
    pub t: usize,
    pub u: NodeId,
    pub color: Option<Color>,
}

/// Rows for the colors with positive load, global color indices.
pub fn load_rows(t: usize, report: &StepLoadReport, color_base: Color) -> Vec<LoadRow> {
    report
        .loads
        .iter()
        .zip(&report.good)
        .enumerate()
        .filter(|(_, (&s, _))| s > 0.0)
        .map(|(c, (&load, &good))| LoadRow {
            t,
            color: color_base + c as Color,
            load,
            good: u8::from(good),
        })
        .collect()
}

pub fn coloring_rows(transcript: &Transcript) -> Vec<ColoringRow> {
    transcript
        .edges()
        .map(|(t, u, color, _)| ColoringRow { t, u, color })
        .collect()
}

const LOAD_HEADER: [&str; 4] = ["t", "color", "load", "good"];
const TRACE_HEADER: [&str; 3] = ["i", "Z", "touched"];
const COLORING_HEADER: [&str; 3] = ["t", "u", "color"];

fn write_csv<W: Write, T: Serialize>(out: W, header: &[&str], rows: &[T]) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn read_csv<R: Read, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<T>, MetricsError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(MetricsError::from)).collect()
}

pub fn write_loads<W: Write>(out: W, rows: &[LoadRow]) -> Result<(), MetricsError> {
    write_csv(out, &LOAD_HEADER, rows)
}

pub fn read_loads<R: Read>(input: R) -> Result<Vec<LoadRow>, MetricsError> {
    read_csv(input)
}

pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<(), MetricsError> {
    write_csv(out, &TRACE_HEADER, rows)
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>, MetricsError> {
    read_csv(input)
}

pub fn write_coloring<W: Write>(out: W, rows: &[ColoringRow]) -> Result<(), MetricsError> {
    write_csv(out, &COLORING_HEADER, rows)
}

pub fn read_coloring<R: Read>(input: R) -> Result<Vec<ColoringRow>, MetricsError> {
    read_csv(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coloring::ArrivalRecord;
    use crate::crs::CrsScheme;
    use crate::generators::gen_random_regular;
    use crate::graph_stream::InstanceHeader;
    use crate::partial_coloring::{PartialColoring, PartialColoringLevel};
    use crate::pipeline::greedy_color;
    use crate::seed::rng_from_seed;

    fn cfg(delta: f64, eps: f64) -> LevelConfig {
        LevelConfig::new(delta, eps, 0).unwrap()
    }

    #[test]
    fn first_arrival_has_no_bad_color() {
        let c = cfg(8.0, 0.25);
        let mut level = PartialColoringLevel::new(8, c, CrsScheme::ExpClock, rng_from_seed(1));
        let step = level.process_arrival(&(0..8).collect::<Vec<_>>());
        let rep = classify_colors(&step, 0.25);
        assert_eq!(rep.count_not_good, 0);
        for &s in &rep.loads {
            assert!((s - 8.0 / c.palette_size() as f64).abs() < 1e-12);
        }
        let one = level.process_arrival(&[3]);
        assert_eq!(classify_colors(&one, 0.25).count_not_good, 0);
    }

    #[test]
    fn shrunken_palettes_make_one_bad_color() {
        let c = cfg(2.0, 0.25); // palette 3
        let mut level = PartialColoringLevel::new(2, c, CrsScheme::ExpClock, rng_from_seed(1));
        let mut p = level.palettes().clone();
        for u in 0..2 {
            p.remove(u, 1);
            p.remove(u, 2);
        }
        level = level.with_palettes(p);
        let step = level.process_arrival(&[0, 1]);
        let rep = classify_colors(&step, 0.25);
        assert_eq!(rep.loads, vec![2.0, 0.0, 0.0]);
        assert_eq!(rep.count_not_good, 1);
    }

    #[test]
    fn probe_examples() {
        let c = cfg(4.0, 0.5); // palette ceil(4 (1 + 0.707)) = 7, |C| = 2
        let mut p = PaletteState::new(6, c.palette_size());
        let fresh = bad_pair_probe(&p, &[0, 1, 2, 3], &[0, 1], &c).unwrap();
        assert!((fresh.value - 4.0 * 2.0 / 7.0).abs() < 1e-12);
        assert!(!fresh.is_bad);
        for u in 0..4 {
            for col in 2..7 {
                p.remove(u, col);
            }
        }
        let bad = bad_pair_probe(&p, &[0, 1, 2, 3], &[0, 1], &c).unwrap();
        assert!((bad.value - 4.0).abs() < 1e-12);
        assert!(bad.is_bad);
        assert!(matches!(
            bad_pair_probe(&p, &[0, 1], &[0, 1], &c),
            Err(MetricsError::SizeMismatch { .. })
        ));
        assert!(matches!(bad_pair_probe(&p, &[0, 0, 1, 2], &[0, 1], &c), Err(MetricsError::BadSet)));
    }

    #[test]
    fn probe_space_within_counting_bound() {
        for n in 4..=8usize {
            for delta in 1..=3usize.min(n) {
                for eps in [0.25, 0.5, 1.0] {
                    let c = cfg(delta as f64, eps);
                    let size = probe_space_size(n, delta, c.palette_size(), c.pair_colors());
                    assert!(size <= (n as f64).powi(2 * delta as i32));
                }
            }
        }
        assert_eq!(probe_space_size(6, 2, 4, 2), 15.0 * 6.0);
    }

    #[test]
    fn trace_start_value_example() {
        // delta 100, eps 1/16: palette 125 and |C| = 25 give Z_0 = 20
        let c = cfg(100.0, 0.0625);
        assert_eq!(c.palette_size(), 125);
        let h = InstanceHeader::new(200, 100).unwrap();
        let tr = Transcript::new(h);
        let nodes: Vec<NodeId> = (0..100).collect();
        let colors: Vec<u32> = (0..25).collect();
        let trace = martingale_trace(&tr, 0, &nodes, &colors, &c).unwrap();
        assert!((trace.z0() - 20.0).abs() < 1e-12);
        assert_eq!(trace.z.len(), 1);
    }

    #[test]
    fn trace_of_untouched_pair_is_flat() {
        let inst = gen_random_regular(20, 4, 2).unwrap();
        let c = cfg(4.0, 0.5);
        let mut alg = PartialColoring::new(40, c, CrsScheme::ExpClock, rng_from_seed(9));
        let mut tr = Transcript::new(InstanceHeader::new(40, 4).unwrap());
        for a in &inst.arrivals {
            tr.push(alg.color_arrival(&a.neighbors).0);
        }
        let trace = martingale_trace(&tr, 0, &[30, 31, 32, 33], &[0, 1], &c).unwrap();
        assert!(trace.z.iter().all(|&z| z == trace.z0()));
        assert_eq!(trace.z.len(), inst.edge_count() + 1);
        assert!(trace.touched.iter().all(|t| !t));
    }

    #[test]
    fn traced_runs_respect_step_bound() {
        let inst = gen_random_regular(100, 16, 5).unwrap();
        let c = cfg(16.0, 0.25);
        for s in 0..5 {
            let mut alg = PartialColoring::new(100, c, CrsScheme::ExpClock, rng_from_seed(s));
            let mut tr = Transcript::new(inst.header);
            for a in &inst.arrivals {
                tr.push(alg.color_arrival(&a.neighbors).0);
            }
            for (u, col) in sample_pairs(100, &c, 10, &mut rng_from_seed(100 + s)) {
                let trace = martingale_trace(&tr, 0, &u, &col, &c).unwrap();
                assert!(trace.max_step() <= c.step_bound() + 1e-12);
                assert!(trace.z0() <= col.len() as f64);
            }
        }
    }

    #[test]
    fn freedman_examples() {
        assert_eq!(freedman_bound(3.0, 1.0, 0.0), 1.0);
        assert!((freedman_bound(1.0, 0.0, 2.0) - (-2f64).exp()).abs() < 1e-15);
        for eps in [0.25f64, 0.5, 1.0] {
            for delta in [32.0f64, 64.0] {
                let b = freedman_bound(2.0 / eps, 2.0 / (eps.sqrt() * delta), eps * eps * delta);
                assert!(b <= (-eps.powi(5) * delta * delta / 6.0).exp() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn fact_gap_nonnegative_on_grid() {
        for i in 0..10_000 {
            let x = i as f64 / 9_999.0;
            assert!(fact_gap(x) >= 0.0, "x = {x}");
        }
    }

    #[test]
    fn star_summary() {
        let h = InstanceHeader::new(5, 5).unwrap();
        let inst = crate::graph_stream::Instance::new(
            h,
            vec![crate::graph_stream::OnlineArrival::new(vec![0, 1, 2, 3, 4])],
        );
        let tr = greedy_color(&inst, 0);
        let m = run_summary(&tr, &[]).unwrap();
        assert_eq!(m.ratio, 1.0);
        assert_eq!(m.tail_edges, 5);
        assert_eq!(m.per_online_colored, vec![5]);
    }

    #[test]
    fn summary_rejects_improper() {
        let h = InstanceHeader::new(2, 2).unwrap();
        let mut tr = Transcript::new(h);
        let mut rec = ArrivalRecord::uncolored(vec![0, 1]);
        rec.colors = vec![Some(0), Some(0)];
        tr.push(rec);
        assert!(matches!(run_summary(&tr, &[]), Err(MetricsError::Improper(_))));
    }

    #[test]
    fn csv_round_trips() {
        let inst = gen_random_regular(10, 3, 1).unwrap();
        let tr = greedy_color(&inst, 0);
        let rows = coloring_rows(&tr);
        let mut buf = Vec::new();
        write_coloring(&mut buf, &rows).unwrap();
        assert_eq!(read_coloring(buf.as_slice()).unwrap(), rows);

        let mut empty = Vec::new();
        write_loads(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty.clone()).unwrap(), "t,color,load,good\n");
        assert!(read_loads(empty.as_slice()).unwrap().is_empty());

        let trace = vec![TraceRow { i: 0, z: 1.5, touched: 0 }, TraceRow { i: 1, z: 1.25, touched: 1 }];
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("i,Z,touched\n"));
        assert_eq!(read_trace(buf.as_slice()).unwrap(), trace);
    }
}
