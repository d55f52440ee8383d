//! Run configuration, single runs with validation and instrumentation,
//! artifact export, and parallel sweeps.

use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adversary::{run_online, Adversary, AttackRecord, GreedyKiller, LoadAttacker, Replay};
use crate::coloring::{check_proper, is_total, Transcript};
use crate::crs::CrsScheme;
use crate::generators::{GenKind, GenSpec};
use crate::graph_stream::{Instance, InstanceHeader};
use crate::metrics::{
    classify_colors, coloring_rows, load_rows, martingale_trace, run_summary, sample_pairs, write_coloring,
    write_loads, write_trace, LevelSummary, LoadRow, MartingaleTrace, MetricsError,
};
use crate::partial_coloring::{epsilon_default, LevelConfig, PartialColoring};
use crate::pipeline::{check_pipeline_run, plan_levels, Greedy, LevelPlan, OnlineColorer, Pipeline, PlanOverrides};
use crate::seed::{derive_rng, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Greedy,
    Partial,
    Pipeline,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Greedy => "greedy",
            Algo::Partial => "partial",
            Algo::Pipeline => "pipeline",
        })
    }
}

impl FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Algo::Greedy),
            "partial" => Ok(Algo::Partial),
            "pipeline" => Ok(Algo::Pipeline),
            other => Err(format!("unknown algorithm {other:?} (expected greedy, partial or pipeline)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptiveKind {
    LoadAttacker,
    GreedyKiller,
}

impl FromStr for AdaptiveKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "load-attacker" => Ok(AdaptiveKind::LoadAttacker),
            "greedy-killer" => Ok(AdaptiveKind::GreedyKiller),
            other => Err(format!("unknown adversary {other:?}")),
        }
    }
}

/// Where arrivals come from. Files and generated instances are replayed
/// obliviously; adaptive sources read the run state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum InputSpec {
    File {
        path: PathBuf,
    },
    Generator {
        kind: GenKind,
        n_offline: usize,
        n_online: usize,
        delta: usize,
        edge_prob: f64,
        /// Defaults to the `gen` stream of the master seed.
        seed: Option<u64>,
    },
    Adaptive {
        kind: AdaptiveKind,
        n_offline: usize,
        delta: usize,
        /// Arrival budget; defaults to `n_offline`.
        arrivals: Option<usize>,
        /// `eps'` of the load attacker; the level's epsilon if unset.
        color_frac: Option<f64>,
    },
}

impl InputSpec {
    fn with_delta(&self, d: usize) -> Result<Self, RunError> {
        let mut out = self.clone();
        match &mut out {
            InputSpec::File { .. } => {
                return Err(RunError::Config("a file input has a fixed delta".into()));
            }
            InputSpec::Generator { delta, .. } | InputSpec::Adaptive { delta, .. } => *delta = d,
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    /// Directory for the manifest, loads, coloring and trace files.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algo: Algo,
    pub input: InputSpec,
    pub epsilon: Option<f64>,
    pub q: Option<f64>,
    pub threshold: Option<f64>,
    pub crs: CrsScheme,
    pub master_seed: u64,
    /// Uniformly sampled `(U, C)` pairs traced at level 0; when non-zero the
    /// load attacker's final pair is traced as well.
    pub trace_pairs: usize,
    pub outputs: Outputs,
}

impl RunConfig {
    pub fn new(algo: Algo, input: InputSpec, master_seed: u64) -> Self {
        Self {
            algo,
            input,
            epsilon: None,
            q: None,
            threshold: None,
            crs: CrsScheme::default(),
            master_seed,
            trace_pairs: 0,
            outputs: Outputs::default(),
        }
    }

    pub fn overrides(&self) -> PlanOverrides {
        PlanOverrides {
            epsilon: self.epsilon,
            q: self.q,
            threshold: self.threshold,
        }
    }

    /// JSON of the config without seed and output locations.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.master_seed = 0;
        c.outputs = Outputs::default();
        serde_json::to_string(&c).expect("config serializes")
    }

    /// SHA-256 of [`RunConfig::canonical_json`], lowercase hex.
    pub fn config_hash(&self) -> String {
        Sha256::digest(self.canonical_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("run error: {0}")]
    Run(String),
}

impl RunError {
    /// Process exit code: 2 config, 3 validation, 4 run.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Validation(_) => 3,
            RunError::Run(_) => 4,
        }
    }
}

impl From<MetricsError> for RunError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Csv(e) => RunError::Run(e.to_string()),
            other => RunError::Validation(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanInfo {
    pub lambda: f64,
    pub q: f64,
    pub threshold: f64,
    pub greedy_base: u32,
}

/// Per-run record written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub gen_seed: Option<u64>,
    pub algo: Algo,
    pub n_offline: usize,
    pub header_delta: usize,
    pub arrivals: usize,
    pub edges: usize,
    pub colors_used: usize,
    pub realized_delta: usize,
    pub ratio: f64,
    pub per_level: Vec<LevelSummary>,
    pub tail_edges: usize,
    pub plan: Option<PlanInfo>,
    /// Steps at level 0 and the largest number of colors above `1 + eps`.
    pub load_steps: usize,
    pub max_not_good: usize,
    pub traces: usize,
    pub attacked_bad: usize,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: Manifest,
    pub transcript: Transcript,
    pub loads: Vec<LoadRow>,
    /// Colors above `1 + eps` per level-0 step.
    pub not_good: Vec<usize>,
    pub traces: Vec<MartingaleTrace>,
    pub attacks: Vec<AttackRecord>,
}

enum Alg {
    Greedy(Greedy),
    Partial(PartialColoring),
    Pipeline(Pipeline),
}

impl Alg {
    fn as_colorer(&mut self) -> &mut dyn OnlineColorer {
        match self {
            Alg::Greedy(a) => a,
            Alg::Partial(a) => a,
            Alg::Pipeline(a) => a,
        }
    }
}

fn build_algorithm(cfg: &RunConfig, header: InstanceHeader) -> Result<(Alg, Option<LevelPlan>), RunError> {
    let n = header.n_offline;
    match cfg.algo {
        Algo::Greedy => Ok((Alg::Greedy(Greedy::new(n)), None)),
        Algo::Partial => {
            let epsilon = match cfg.epsilon {
                Some(e) => e,
                None if n >= 2 => epsilon_default(n, header.delta as f64),
                None => return Err(RunError::Config("default epsilon needs n_offline >= 2".into())),
            };
            let level = LevelConfig::new(header.delta as f64, epsilon, 0)
                .map_err(|e| RunError::Config(e.to_string()))?;
            let rng = derive_rng(cfg.master_seed, "level:0");
            Ok((Alg::Partial(PartialColoring::new(n, level, cfg.crs, rng)), None))
        }
        Algo::Pipeline => {
            let plan = plan_levels(n, header.delta, &cfg.overrides()).map_err(|e| RunError::Config(e.to_string()))?;
            let alg = Pipeline::new(n, plan.clone(), cfg.crs, cfg.master_seed);
            Ok((Alg::Pipeline(alg), Some(plan)))
        }
    }
}

fn load_instance(path: &Path) -> Result<Instance, RunError> {
    let file = fs::File::open(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    Instance::load(BufReader::new(file)).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
}

fn validate(cfg: &RunConfig, plan: Option<&LevelPlan>, level: Option<&LevelConfig>, tr: &Transcript) -> Result<(), RunError> {
    let fail = |m: String| Err(RunError::Validation(m));
    check_proper(tr).map_err(|e| RunError::Validation(e.to_string()))?;
    match cfg.algo {
        Algo::Greedy => {
            if !is_total(tr) {
                return fail("greedy left an edge uncolored".into());
            }
            let d = tr.realized_delta();
            if d > 0 && tr.colors_used() > 2 * d - 1 {
                return fail(format!("greedy used {} colors, above 2 delta - 1", tr.colors_used()));
            }
        }
        Algo::Partial => {
            let palette = level.expect("partial has a level").palette_size();
            if tr.colors_used() > palette {
                return fail(format!("{} colors exceed the palette {palette}", tr.colors_used()));
            }
        }
        Algo::Pipeline => {
            check_pipeline_run(plan.expect("pipeline has a plan"), tr).map_err(|e| RunError::Validation(e.to_string()))?;
        }
    }
    Ok(())
}

/// One run: build the input and algorithm from the config, drive it,
/// validate the coloring and collect metrics.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let mut gen_seed = None;
    let (header, mut adversary, budget): (InstanceHeader, Box<dyn Adversary>, usize) = match &cfg.input {
        InputSpec::File { path } => {
            let inst = load_instance(path)?;
            let n = inst.arrivals.len();
            (inst.header, Box::new(Replay::new(&inst)), n)
        }
        InputSpec::Generator {
            kind,
            n_offline,
            n_online,
            delta,
            edge_prob,
            seed,
        } => {
            let seed = seed.unwrap_or_else(|| derive_seed(cfg.master_seed, "gen"));
            gen_seed = Some(seed);
            let spec = GenSpec {
                kind: *kind,
                n_offline: *n_offline,
                n_online: *n_online,
                delta: *delta,
                edge_prob: *edge_prob,
                seed,
            };
            let inst = spec.generate().map_err(|e| RunError::Config(e.to_string()))?;
            let n = inst.arrivals.len();
            (inst.header, Box::new(Replay::new(&inst)), n)
        }
        InputSpec::Adaptive {
            kind,
            n_offline,
            delta,
            arrivals,
            color_frac,
        } => {
            let header = InstanceHeader::new(*n_offline, *delta).map_err(|e| RunError::Config(e.to_string()))?;
            let adv: Box<dyn Adversary> = match kind {
                AdaptiveKind::LoadAttacker => Box::new(LoadAttacker::new(*color_frac)),
                AdaptiveKind::GreedyKiller => Box::new(GreedyKiller::new(*delta)),
            };
            (header, adv, arrivals.unwrap_or(*n_offline))
        }
    };

    let (mut alg, plan) = build_algorithm(cfg, header)?;
    let level0 = alg.as_colorer().level_configs().first().copied();
    let mut loads = Vec::new();
    let mut not_good = Vec::new();
    let transcript = run_online(alg.as_colorer(), adversary.as_mut(), header, budget, |t, out, _| {
        if let (Some(lc), Some((0, step))) = (level0, out.steps.first()) {
            let report = classify_colors(step, lc.epsilon);
            not_good.push(report.count_not_good);
            loads.extend(load_rows(t, &report, lc.color_base));
        }
    })
    .map_err(|e| RunError::Run(format!("adversary produced an invalid arrival: {e}")))?;

    validate(cfg, plan.as_ref(), level0.as_ref(), &transcript)?;
    let configs = alg.as_colorer().level_configs();
    let metrics = run_summary(&transcript, &configs)?;

    let attacks = adversary.attack_history().to_vec();

    let mut traces = Vec::new();
    if let Some(lc) = level0 {
        let mut rng = derive_rng(cfg.master_seed, "trace");
        for (u, c) in sample_pairs(header.n_offline, &lc, cfg.trace_pairs, &mut rng) {
            traces.push(martingale_trace(&transcript, 0, &u, &c, &lc)?);
        }
        // the attacker's pair at the end of the run is traced last
        if let (true, Some(last)) = (cfg.trace_pairs > 0, attacks.last()) {
            traces.push(martingale_trace(&transcript, 0, &last.pair.nodes, &last.pair.colors, &lc)?);
        }
    }

    let manifest = Manifest {
        config: cfg.clone(),
        config_hash: cfg.config_hash(),
        seed: cfg.master_seed,
        gen_seed,
        algo: cfg.algo,
        n_offline: header.n_offline,
        header_delta: header.delta,
        arrivals: transcript.arrivals.len(),
        edges: metrics.edges,
        colors_used: metrics.colors_used,
        realized_delta: metrics.realized_delta,
        ratio: metrics.ratio,
        per_level: metrics.per_level,
        tail_edges: metrics.tail_edges,
        plan: plan.as_ref().map(|p| PlanInfo {
            lambda: p.lambda,
            q: p.q,
            threshold: p.threshold,
            greedy_base: p.greedy_base,
        }),
        load_steps: not_good.len(),
        max_not_good: not_good.iter().copied().max().unwrap_or(0),
        traces: traces.len(),
        attacked_bad: attacks.iter().filter(|a| a.is_bad()).count(),
    };
    Ok(RunOutput {
        manifest,
        transcript,
        loads,
        not_good,
        traces,
        attacks,
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOADS_FILE: &str = "loads.csv";
pub const COLORING_FILE: &str = "coloring.csv";

pub fn trace_file(j: usize) -> String {
    format!("trace_{j}.csv")
}

fn io_err(path: &Path, e: impl fmt::Display) -> RunError {
    RunError::Run(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>, RunError> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| io_err(path, e))
}

/// Write manifest, loads, coloring and one file per trace into `dir`.
pub fn export(out: &RunOutput, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&out.manifest).map_err(|e| io_err(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    write_loads(create(&dir.join(LOADS_FILE))?, &out.loads)?;
    write_coloring(create(&dir.join(COLORING_FILE))?, &coloring_rows(&out.transcript))?;
    for (j, trace) in out.traces.iter().enumerate() {
        write_trace(create(&dir.join(trace_file(j)))?, &trace.rows())?;
    }
    Ok(())
}

/// Outcome of one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub delta: usize,
    pub seed_index: usize,
    pub master_seed: u64,
    pub outcome: Result<CellSummary, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub colors_used: usize,
    pub realized_delta: usize,
    pub ratio: f64,
    pub level0_colored_fraction: Option<f64>,
    pub level0_residual_max_degree: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub delta: usize,
    pub runs: usize,
    pub failures: usize,
    pub ratio_mean: f64,
    pub ratio_std: f64,
    pub colored_fraction_mean: f64,
    /// Mean level-0 residual maximum degree over delta.
    pub residual_decay_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    pub aggregate: Vec<AggregateRow>,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }
}

/// Master seed of sweep cell `s`; shared across deltas.
pub fn cell_seed(master: u64, s: usize) -> u64 {
    derive_seed(master, &format!("sweep:{s}"))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Run the template for every delta and `seeds` derived seeds on up to
/// `jobs` threads. Failed cells are recorded and the sweep continues. With
/// an output directory each cell exports to `delta_<d>/seed_<s>/`.
pub fn sweep(template: &RunConfig, deltas: &[usize], seeds: usize, jobs: usize) -> Result<SweepResult, RunError> {
    let mut cells_cfg = Vec::new();
    for &d in deltas {
        for s in 0..seeds {
            let mut cfg = template.clone();
            cfg.input = template.input.with_delta(d)?;
            cfg.master_seed = cell_seed(template.master_seed, s);
            if let Some(dir) = &template.outputs.dir {
                cfg.outputs.dir = Some(dir.join(format!("delta_{d}")).join(format!("seed_{s}")));
            }
            cells_cfg.push((d, s, cfg));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| RunError::Run(e.to_string()))?;
    let cells: Vec<CellResult> = pool.install(|| {
        cells_cfg
            .par_iter()
            .map(|(d, s, cfg)| {
                let outcome = execute(cfg)
                    .and_then(|out| {
                        if let Some(dir) = &cfg.outputs.dir {
                            export(&out, dir)?;
                        }
                        Ok(out)
                    })
                    .map(|out| {
                        let l0 = out.manifest.per_level.first();
                        CellSummary {
                            colors_used: out.manifest.colors_used,
                            realized_delta: out.manifest.realized_delta,
                            ratio: out.manifest.ratio,
                            level0_colored_fraction: l0.map(|l| l.colored_fraction),
                            level0_residual_max_degree: l0.map(|l| l.residual_max_degree),
                        }
                    })
                    .map_err(|e| e.to_string());
                if let Err(e) = &outcome {
                    log::warn!("sweep cell delta={d} seed={s} failed: {e}");
                }
                CellResult {
                    delta: *d,
                    seed_index: *s,
                    master_seed: cfg.master_seed,
                    outcome,
                }
            })
            .collect()
    });

    let aggregate = deltas
        .iter()
        .map(|&d| {
            let ok: Vec<&CellSummary> = cells
                .iter()
                .filter(|c| c.delta == d)
                .filter_map(|c| c.outcome.as_ref().ok())
                .collect();
            let ratios: Vec<f64> = ok.iter().map(|c| c.ratio).collect();
            let fracs: Vec<f64> = ok.iter().filter_map(|c| c.level0_colored_fraction).collect();
            let decay: Vec<f64> = ok
                .iter()
                .filter_map(|c| c.level0_residual_max_degree)
                .map(|r| r as f64 / d as f64)
                .collect();
            let (ratio_mean, ratio_std) = mean_std(&ratios);
            AggregateRow {
                delta: d,
                runs: ok.len(),
                failures: seeds - ok.len(),
                ratio_mean,
                ratio_std,
                colored_fraction_mean: mean_std(&fracs).0,
                residual_decay_mean: mean_std(&decay).0,
            }
        })
        .collect();
    Ok(SweepResult { cells, aggregate })
}

pub fn write_aggregate<W: std::io::Write>(out: W, rows: &[AggregateRow]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| RunError::Run(e.to_string()))?;
    }
    w.flush().map_err(|e| RunError::Run(e.to_string()))
}
