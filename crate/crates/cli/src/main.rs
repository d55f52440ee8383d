//! `oec`: generate instances, run and sweep online edge coloring
//! experiments, check contention resolution and solve micro games.
//!
//! Any subcommand accepts `--config <file>` with `key=value` lines whose keys
//! are long flag names; flags on the command line win. The master seed comes
//! from `--seed`, then the config file, then `OEC_SEED`, then 0.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oec_core::coloring::{check_proper, ArrivalRecord, Stage, Transcript};
use oec_core::crs::{fair_bound, monte_carlo_marginals, selection_prob_exact, uniform_selection_prob_exact, CrsScheme, MarginalVector};
use oec_core::expectimax::{evaluate_randomized, solve_deterministic, PolicyKind, TraceStep};
use oec_core::experiment::{
    execute, export, sweep, write_aggregate, AdaptiveKind, Algo, InputSpec, RunConfig, RunError,
};
use oec_core::generators::{GenKind, GenSpec};
use oec_core::graph_stream::Instance;
use oec_core::metrics::read_coloring;
use oec_core::seed::derive_seed;

/// `println!` that exits quietly once stdout is closed (e.g. piped to `head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        if let Err(e) = writeln!(std::io::stdout().lock(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            panic!("writing to stdout: {e}");
        }
    }};
}

#[derive(Parser, Debug)]
#[command(name = "oec", version, about = "Online bipartite edge coloring experiments")]
#[command(args_override_self = true)]
struct Cli {
    /// key=value file with defaults for any long flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a generated instance as JSON lines.
    Gen(GenArgs),
    /// Run one algorithm on one input.
    Run(RunArgs),
    /// Run a template over several deltas and seeds.
    Sweep(SweepArgs),
    /// Compare closed-form, certified and sampled CRS marginals.
    CrsCheck(CrsArgs),
    /// Solve the online coloring game at micro scale.
    Expectimax(ExpectimaxArgs),
    /// Check an instance file, and optionally a coloring of it.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_parser = parse_gen_kind)]
    kind: GenKind,
    #[arg(long = "n-off")]
    n_off: usize,
    /// Online nodes (binomial only).
    #[arg(long = "n-on")]
    n_on: Option<usize>,
    #[arg(long)]
    delta: usize,
    /// Edge probability (binomial only).
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// greedy, partial or pipeline.
    #[arg(long)]
    algo: Algo,
    /// Instance file to replay.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Generate the input: regular, binomial or greedy-hard.
    #[arg(long, value_parser = parse_gen_kind)]
    gen: Option<GenKind>,
    /// replay:<file>, load-attacker or greedy-killer.
    #[arg(long)]
    adversary: Option<String>,
    #[arg(long = "n-off")]
    n_off: Option<usize>,
    #[arg(long = "n-on")]
    n_on: Option<usize>,
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    /// Generator seed; derived from the master seed if absent.
    #[arg(long = "gen-seed")]
    gen_seed: Option<u64>,
    /// Arrival budget of an adaptive adversary.
    #[arg(long)]
    arrivals: Option<usize>,
    /// Color fraction of the load attacker.
    #[arg(long = "color-frac")]
    color_frac: Option<f64>,
    /// Level epsilon; derived from n and delta if absent.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Degree shrink factor between pipeline levels.
    #[arg(long)]
    q: Option<f64>,
    /// Smallest level degree before the greedy tail.
    #[arg(long)]
    threshold: Option<f64>,
    /// exp-clock, uniform or never.
    #[arg(long)]
    crs: Option<CrsScheme>,
    /// Master seed (else OEC_SEED, else 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Random (U, C) pairs to trace at level 0.
    #[arg(long = "trace-pairs")]
    trace_pairs: Option<usize>,
    /// Directory for manifest, loads, coloring and traces.
    #[arg(long = "metrics", alias = "out-dir")]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated deltas.
    #[arg(long, value_delimiter = ',', required = true)]
    deltas: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct CrsArgs {
    /// Comma-separated marginals.
    #[arg(long, value_delimiter = ',', required = true)]
    x: Vec<f64>,
    #[arg(long, default_value = "exp-clock")]
    scheme: CrsScheme,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ExpectimaxArgs {
    #[arg(long = "n-off")]
    n_off: usize,
    #[arg(long)]
    delta: usize,
    #[arg(long)]
    arrivals: usize,
    #[arg(long = "color-cap")]
    color_cap: usize,
    /// Evaluate this randomized policy instead of the deterministic minimax.
    #[arg(long)]
    policy: Option<PolicyKind>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    instance: PathBuf,
    /// Coloring CSV (t,u,color) to check for properness and totality.
    #[arg(long)]
    coloring: Option<PathBuf>,
}

fn parse_gen_kind(s: &str) -> Result<GenKind, String> {
    match s {
        "regular" => Ok(GenKind::Regular),
        "binomial" => Ok(GenKind::Binomial),
        "greedy-hard" => Ok(GenKind::GreedyHard),
        other => Err(format!("unknown generator {other:?} (expected regular, binomial or greedy-hard)")),
    }
}

/// Flags from a `key=value` file, placed before the real arguments so the
/// latter override them.
fn config_args(path: &Path) -> Result<Vec<String>, RunError> {
    let text = fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(RunError::Config(format!("{}:{}: expected key=value", path.display(), i + 1)));
        };
        out.push(format!("--{}", k.trim()));
        out.push(v.trim().to_string());
    }
    Ok(out)
}

fn find_config(args: &[String]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn env_seed() -> Result<Option<u64>, RunError> {
    match std::env::var("OEC_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| RunError::Config(format!("OEC_SEED={s:?} is not a 64-bit integer"))),
        Err(_) => Ok(None),
    }
}

fn master_seed(flag: Option<u64>) -> Result<u64, RunError> {
    Ok(flag.or(env_seed()?).unwrap_or(0))
}

fn need<T>(v: Option<T>, name: &str) -> Result<T, RunError> {
    v.ok_or_else(|| RunError::Config(format!("--{name} is required for this input")))
}

fn run_config(a: &RunArgs) -> Result<RunConfig, RunError> {
    let sources = [a.input.is_some(), a.gen.is_some(), a.adversary.is_some()];
    if sources.iter().filter(|s| **s).count() != 1 {
        return Err(RunError::Config("give exactly one of --input, --gen, --adversary".into()));
    }
    let input = if let Some(path) = &a.input {
        InputSpec::File { path: path.clone() }
    } else if let Some(kind) = a.gen {
        let n_offline = need(a.n_off, "n-off")?;
        InputSpec::Generator {
            kind,
            n_offline,
            n_online: a.n_on.unwrap_or(n_offline),
            delta: need(a.delta, "delta")?,
            edge_prob: a.p.unwrap_or(0.0),
            seed: a.gen_seed,
        }
    } else {
        let spec = a.adversary.as_deref().unwrap_or_default();
        if let Some(path) = spec.strip_prefix("replay:") {
            InputSpec::File { path: PathBuf::from(path) }
        } else {
            let kind: AdaptiveKind = spec.parse().map_err(RunError::Config)?;
            InputSpec::Adaptive {
                kind,
                n_offline: need(a.n_off, "n-off")?,
                delta: need(a.delta, "delta")?,
                arrivals: a.arrivals,
                color_frac: a.color_frac,
            }
        }
    };
    let mut cfg = RunConfig::new(a.algo, input, master_seed(a.seed)?);
    cfg.epsilon = a.epsilon;
    cfg.q = a.q;
    cfg.threshold = a.threshold;
    cfg.crs = a.crs.unwrap_or_default();
    cfg.trace_pairs = a.trace_pairs.unwrap_or(0);
    cfg.outputs.dir = a.metrics.clone();
    Ok(cfg)
}

fn cmd_gen(a: &GenArgs) -> Result<(), RunError> {
    let spec = GenSpec {
        kind: a.kind,
        n_offline: a.n_off,
        n_online: a.n_on.unwrap_or(a.n_off),
        delta: a.delta,
        edge_prob: a.p.unwrap_or(0.0),
        seed: a.seed.unwrap_or(derive_seed(master_seed(None)?, "gen")),
    };
    let inst = spec.generate().map_err(|e| RunError::Config(e.to_string()))?;
    let text = inst.to_text();
    match &a.out {
        Some(p) => fs::write(p, text).map_err(|e| RunError::Run(format!("{}: {e}", p.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| RunError::Run(e.to_string())),
    }
}

fn cmd_run(a: &RunArgs) -> Result<(), RunError> {
    let cfg = run_config(a)?;
    let out = execute(&cfg)?;
    if let Some(dir) = &cfg.outputs.dir {
        export(&out, dir)?;
    }
    let m = &out.manifest;
    out!(
        "algo={} seed={} arrivals={} edges={} colors_used={} realized_delta={} ratio={:.6}",
        m.algo, m.seed, m.arrivals, m.edges, m.colors_used, m.realized_delta, m.ratio
    );
    for (i, l) in m.per_level.iter().enumerate() {
        out!(
            "level={i} delta_i={:.3} epsilon_i={:.4} palette={} colored={} colored_fraction={:.6} residual_max_degree={}",
            l.delta_i, l.epsilon_i, l.palette, l.colored, l.colored_fraction, l.residual_max_degree
        );
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<bool, RunError> {
    let mut run = a.run.clone();
    run.delta = run.delta.or(a.deltas.first().copied());
    let template = run_config(&run)?;
    let res = sweep(&template, &a.deltas, a.seeds, a.jobs)?;
    let mut buf = Vec::new();
    write_aggregate(&mut buf, &res.aggregate)?;
    if let Some(dir) = &template.outputs.dir {
        fs::create_dir_all(dir).map_err(|e| RunError::Run(e.to_string()))?;
        fs::write(dir.join("aggregate.csv"), &buf).map_err(|e| RunError::Run(e.to_string()))?;
    }
    io::stdout().write_all(&buf).map_err(|e| RunError::Run(e.to_string()))?;
    for c in &res.cells {
        if let Err(e) = &c.outcome {
            eprintln!("delta={} seed={} failed: {e}", c.delta, c.seed_index);
        }
    }
    Ok(res.failures() == 0)
}

fn cmd_crs(a: &CrsArgs) -> Result<(), RunError> {
    let x = MarginalVector::new(a.x.clone()).map_err(|e| RunError::Config(e.to_string()))?;
    let exact = match a.scheme {
        CrsScheme::ExpClock => selection_prob_exact(&x),
        CrsScheme::Uniform => uniform_selection_prob_exact(&x).map_err(|e| RunError::Config(e.to_string()))?,
        CrsScheme::Never => vec![0.0; x.len()],
    };
    let bound = fair_bound(&x);
    let seed = a.seed.unwrap_or(derive_seed(master_seed(None)?, "mc:0"));
    let mc = monte_carlo_marginals(&x, a.scheme, a.trials, seed);
    out!("i,x,exact,fair_bound,certified,empirical,std_err");
    let certified = 1.0 - x.max();
    for i in 0..x.len() {
        out!(
            "{i},{},{:.9},{:.9},{:.9},{:.9},{:.9}",
            x.as_slice()[i],
            exact[i],
            bound[i],
            certified * bound[i],
            mc.mean[i],
            mc.std_err[i]
        );
    }
    Ok(())
}

fn print_trace(trace: &[TraceStep]) {
    for (k, s) in trace.iter().enumerate() {
        let fmt_masks = |m: &[u8]| m.iter().map(|b| format!("{b:#010b}")).collect::<Vec<_>>().join(" ");
        out!(
            "step={k} arrivals_left={} state=[{}] present=[{}] colors={:?} value={}",
            s.state.arrivals_left,
            fmt_masks(&s.state.masks),
            fmt_masks(&s.presented),
            s.colors,
            s.value
        );
    }
}

fn cmd_expectimax(a: &ExpectimaxArgs) -> Result<(), RunError> {
    let cfg_err = |e: oec_core::expectimax::ExpectimaxError| RunError::Config(e.to_string());
    match a.policy {
        None => {
            let s = solve_deterministic(a.n_off, a.delta, a.arrivals, a.color_cap).map_err(cfg_err)?;
            match s.value {
                Some(v) => out!("value={v} states={}", s.states_visited),
                None => out!("value=infeasible states={}", s.states_visited),
            }
            print_trace(&s.trace);
        }
        Some(p) => {
            let s = evaluate_randomized(p.policy().as_ref(), a.n_off, a.delta, a.arrivals, a.color_cap)
                .map_err(cfg_err)?;
            out!("policy={p} value={:.9} states={}", s.value, s.states_visited);
            print_trace(&s.trace);
        }
    }
    Ok(())
}

fn cmd_validate(a: &ValidateArgs) -> Result<(), RunError> {
    let file = fs::File::open(&a.instance).map_err(|e| RunError::Config(format!("{}: {e}", a.instance.display())))?;
    let inst = Instance::load(BufReader::new(file)).map_err(|e| RunError::Validation(e.to_string()))?;
    let ledger = inst.validate(None).map_err(|e| RunError::Validation(e.to_string()))?;
    out!(
        "instance ok: n_offline={} delta={} arrivals={} edges={} max_offline_degree={}",
        inst.header.n_offline,
        inst.header.delta,
        inst.arrivals.len(),
        inst.edge_count(),
        ledger.max_degree()
    );
    if let Some(path) = &a.coloring {
        let file = fs::File::open(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        let rows = read_coloring(file).map_err(|e| RunError::Validation(e.to_string()))?;
        let mut tr = Transcript::new(inst.header);
        let mut rows = rows.into_iter();
        for (t, arr) in inst.arrivals.iter().enumerate() {
            let mut rec = ArrivalRecord::uncolored(arr.neighbors.clone());
            for (j, &u) in arr.neighbors.iter().enumerate() {
                let row = rows
                    .next()
                    .ok_or_else(|| RunError::Validation(format!("coloring ends before arrival {t}")))?;
                if row.t != t || row.u != u {
                    return Err(RunError::Validation(format!(
                        "coloring row ({}, {}) does not match edge ({t}, {u})",
                        row.t, row.u
                    )));
                }
                rec.colors[j] = row.color;
                rec.stages[j] = if row.color.is_some() { Stage::Tail } else { Stage::Uncolored };
            }
            tr.push(rec);
        }
        if rows.next().is_some() {
            return Err(RunError::Validation("coloring has rows beyond the instance".into()));
        }
        check_proper(&tr).map_err(|e| RunError::Validation(e.to_string()))?;
        let uncolored = tr.edge_count() - tr.colored_count();
        out!(
            "coloring ok: colors_used={} uncolored_edges={uncolored} ratio={:.6}",
            tr.colors_used(),
            if tr.realized_delta() == 0 { 0.0 } else { tr.colors_used() as f64 / tr.realized_delta() as f64 }
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut argv: Vec<String> = std::env::args().collect();
    if let Some(path) = find_config(&argv) {
        match config_args(&path) {
            Ok(extra) if argv.len() >= 2 => {
                // defaults go right after the subcommand name
                let tail = argv.split_off(2);
                argv.extend(extra);
                argv.extend(tail);
            }
            Ok(_) => {}
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(e.exit_code() as u8);
            }
        }
    }
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| true),
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a),
        Command::CrsCheck(a) => cmd_crs(a).map(|_| true),
        Command::Expectimax(a) => cmd_expectimax(a).map(|_| true),
        Command::Validate(a) => cmd_validate(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
