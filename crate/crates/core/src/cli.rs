//! The `cpsu` command line front end.
//!
//! Settings resolve in three layers: command-line flags override the JSON
//! run config given by `--config`, which overrides built-in defaults.
//! Exit codes are 0 on success, 1 for user or configuration errors and 2 for
//! internal failures.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::distill::{self, DistillConfig, DistillError, DistillOutcome, IterationRecord};
use crate::evalstats::{self, Binning, EvalError, EvalSummary, ReportGroup, Spread};
use crate::opct::{ObliqueTree, TreeError};
use crate::oracle::{EnergyOracle, EnergyOracleParams, MlpPolicy, NoOpPolicy, Policy, PolicyError};
use crate::seeding;
use crate::sim::{self, CartPoleSwingUp, SimConfig, SimError, TrajectoryRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

const TAG_REPORT: u64 = 0x4E90;

#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => EXIT_USER,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::User(m) | CliError::Internal(m) => m,
        }
    }
}

fn user(e: impl std::fmt::Display) -> CliError {
    CliError::User(e.to_string())
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_) | SimError::ConfigFile { .. } => user(e),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        user(e)
    }
}

impl From<TreeError> for CliError {
    fn from(e: TreeError) -> Self {
        user(e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Sim(s) => s.into(),
            EvalError::Policy(p) => p.into(),
            EvalError::NoEpisodes | EvalError::BadBinning(_) | EvalError::EmptyReport(_) => user(e),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<DistillError> for CliError {
    fn from(e: DistillError) -> Self {
        match e {
            DistillError::InvalidConfig(_) | DistillError::EmptyDataset { .. } | DistillError::Policy(_) => user(e),
            DistillError::Eval(e) => e.into(),
            DistillError::Sim(e) => e.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

/// Contents of the `--config` file. Every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub distill: DistillConfig,
    /// `energy` or `mlp:<path>`.
    pub oracle: Option<String>,
    pub energy: EnergyOracleParams,
    pub output_dir: Option<PathBuf>,
    pub master_seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| user(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "cpsu", version, about = "Cart-pole swing-up simulation and oblique-tree policy distillation")]
pub struct Cli {
    /// JSON run config (sim, distill, oracle, energy, output_dir, master_seed)
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config file
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Output directory [default: cpsu-out]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker thread cap [default: all cores]
    #[arg(long, global = true, value_name = "INT", value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes with a policy and print a per-episode return table
    Simulate(SimulateArgs),
    /// Run iterative distillation of the oracle into oblique trees
    Distill(DistillArgs),
    /// Evaluate a policy or tree and write summary.json
    Evaluate(EvaluateArgs),
    /// Losslessly prune a tree and report node and parameter counts
    Prune(PruneArgs),
    /// Re-evaluate a distillation run and export report tables
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// energy | noop | mlp:<path> | tree:<path>
    #[arg(long, default_value = "energy")]
    pub policy: String,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub episodes: u64,
    /// Write trajectory_<episode>.csv files to the output directory
    #[arg(long)]
    pub dump_trajectories: bool,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// energy | mlp:<path> [default: config value, else energy]
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub iterations: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_trees: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub depth: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub eval_episodes: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub base_episodes: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub cutoff: Option<u64>,
    /// Desk-scale preset: 20 base episodes, 5 trees of depth 8, 8 iterations
    #[arg(long)]
    pub desk: bool,
    /// Episodes per group in the exported report
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub report_episodes: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// energy | noop | mlp:<path> | tree:<path>
    #[arg(long)]
    pub policy: String,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub episodes: u64,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    /// Tree JSON to prune
    #[arg(long)]
    pub tree: PathBuf,
    /// Destination [default: <out>/<tree stem>.pruned.json]
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Parameter count to compare against
    #[arg(long, default_value_t = 4675)]
    pub baseline_params: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding manifest.json [default: the output directory]
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub episodes: u64,
    /// Fixed histogram bin count instead of Freedman-Diaconis
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub bins: Option<u64>,
}

/// Resolved global settings.
pub struct Context {
    pub run: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let run = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        run.sim.validate()?;
        run.energy.validate()?;
        let seed = cli.seed.or(run.master_seed).unwrap_or(run.distill.master_seed);
        let out = cli.out.clone().or_else(|| run.output_dir.clone()).unwrap_or_else(|| PathBuf::from("cpsu-out"));
        Ok(Self { run, seed, out })
    }

    fn ensure_out(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.out).map_err(|e| user(format!("{}: {e}", self.out.display())))?;
        Ok(&self.out)
    }

    pub fn energy(&self) -> Result<EnergyOracle, CliError> {
        Ok(EnergyOracle::new(self.run.energy.clone(), &self.run.sim)?)
    }

    /// Resolves a policy reference.
    pub fn policy(&self, reference: &str) -> Result<Box<dyn Policy>, CliError> {
        match reference.split_once(':') {
            None if reference == "energy" => Ok(Box::new(self.energy()?)),
            None if reference == "noop" => Ok(Box::new(NoOpPolicy)),
            Some(("mlp", path)) => Ok(Box::new(MlpPolicy::load(Path::new(path))?)),
            Some(("tree", path)) => Ok(Box::new(load_tree(Path::new(path))?)),
            _ => Err(user(format!(
                "unknown policy {reference:?}; expected energy, noop, mlp:<path> or tree:<path>"
            ))),
        }
    }
}

pub fn load_tree(path: &Path) -> Result<ObliqueTree, CliError> {
    let text = fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    ObliqueTree::from_json(&text).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout();
    match execute(&cli, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn execute(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n as usize);
    }
    let pool = builder.build().map_err(|e| CliError::Internal(e.to_string()))?;
    let ctx = Context::new(cli)?;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(&ctx, a, out),
        Command::Distill(a) => cmd_distill(&ctx, a, out),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a, out),
        Command::Prune(a) => cmd_prune(&ctx, a, out),
        Command::Report(a) => cmd_report(&ctx, a, out),
    })
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(|e| CliError::Internal(format!("stdout: {e}")))?
    };
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map_or_else(|| "-".into(), |s| s.to_string())
}

fn trajectory(policy: &dyn Policy, sim: &SimConfig, seed: u64) -> Result<Vec<TrajectoryRow>, CliError> {
    let mut env = CartPoleSwingUp::new(sim.clone())?;
    let mut obs = env.reset(seed);
    let mut rows = vec![TrajectoryRow {
        step: 0,
        state: *env.state(),
        action: sim::Action::NoOp,
        reward: 0.0,
        terminated: false,
        truncated: false,
        in_zenith: false,
    }];
    loop {
        let action = policy.act(&obs)?;
        let r = env.step(action)?;
        rows.push(TrajectoryRow {
            step: env.steps(),
            state: *env.state(),
            action,
            reward: r.reward,
            terminated: r.terminated,
            truncated: r.truncated,
            in_zenith: r.in_zenith,
        });
        obs = r.observation;
        if r.done() {
            return Ok(rows);
        }
    }
}

fn print_summary(out: &mut dyn Write, label: &str, s: &EvalSummary) -> Result<(), CliError> {
    say!(
        out,
        "{label}: n={} mean={:.2} std={:.2} median={:.2} q1={:.2} q3={:.2} min={:.2} max={:.2}",
        s.n,
        s.mean,
        s.std,
        s.median,
        s.q1,
        s.q3,
        s.min,
        s.max
    );
    say!(
        out,
        "  zenith episodes={}/{} median first zenith step={} mean zenith steps={:.1} mean return without bonus={:.2}",
        s.zenith_episodes,
        s.n,
        s.median_first_zenith_step.map_or_else(|| "-".into(), |v| format!("{v}")),
        s.mean_zenith_step_count,
        s.mean_return_without_bonus
    );
    Ok(())
}

pub fn cmd_simulate(ctx: &Context, a: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let policy = ctx.policy(&a.policy)?;
    let logs = evalstats::evaluate_policy(policy.as_ref(), &ctx.run.sim, a.episodes as usize, ctx.seed)?;
    say!(out, "policy {}", policy.name());
    say!(out, "{:>7} {:>20} {:>5} {:>12} {:>12} {:>12} {:>10}", "episode", "seed", "steps", "return", "first_zenith", "zenith_steps", "end");
    for (i, l) in logs.iter().enumerate() {
        let end = if l.terminated { "terminated" } else { "truncated" };
        say!(
            out,
            "{i:>7} {:>20} {:>5} {:>12.4} {:>12} {:>12} {end:>10}",
            l.seed,
            l.len(),
            l.total_return,
            fmt_opt(l.first_zenith_step),
            l.zenith_step_count
        );
    }
    print_summary(out, "summary", &evalstats::summarize(&logs).expect("at least one episode"))?;
    if a.dump_trajectories {
        let dir = ctx.ensure_out()?;
        for (i, l) in logs.iter().enumerate() {
            let rows = trajectory(policy.as_ref(), &ctx.run.sim, l.seed)?;
            let path = dir.join(format!("trajectory_{i:03}.csv"));
            let file = fs::File::create(&path).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
            sim::write_trajectory_csv(file, &rows).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
            say!(out, "wrote {}", path.display());
        }
    }
    Ok(())
}

fn distill_config(ctx: &Context, a: &DistillArgs) -> DistillConfig {
    let mut c = if a.desk {
        DistillConfig { split: ctx.run.distill.split.clone(), ..DistillConfig::desk(ctx.seed) }
    } else {
        ctx.run.distill.clone()
    };
    c.master_seed = ctx.seed;
    let set = |field: &mut usize, v: Option<u64>| {
        if let Some(v) = v {
            *field = v as usize;
        }
    };
    set(&mut c.iterations, a.iterations);
    set(&mut c.n_trees, a.n_trees);
    set(&mut c.depth, a.depth);
    set(&mut c.eval_episodes, a.eval_episodes);
    set(&mut c.base_episodes, a.base_episodes);
    set(&mut c.cutoff, a.cutoff);
    c
}

fn oracle_policy(ctx: &Context, reference: &str) -> Result<Box<dyn Policy>, CliError> {
    match reference {
        "energy" => ctx.policy(reference),
        r if r.starts_with("mlp:") => ctx.policy(reference),
        _ => Err(user(format!("oracle must be energy or mlp:<path>, got {reference:?}"))),
    }
}

pub fn cmd_distill(ctx: &Context, a: &DistillArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = distill_config(ctx, a);
    cfg.validate(&ctx.run.sim)?;
    let oracle_ref = a.oracle.clone().or_else(|| ctx.run.oracle.clone()).unwrap_or_else(|| "energy".into());
    let oracle = oracle_policy(ctx, &oracle_ref)?;
    let dir = ctx.ensure_out()?.to_path_buf();

    say!(out, "{:>4} {:>8} {:>10} {:>10} {:>10} {:>5} {:>7}", "iter", "samples", "min", "median", "max", "best", "params");
    let mut lines = Vec::new();
    let outcome = distill::run_distillation_with(&cfg, oracle.as_ref(), &ctx.run.sim, |r| {
        let means: Vec<f64> = r.trees.iter().map(|t| t.mean_return).collect();
        let s = Spread::of(&means).expect("at least one tree");
        lines.push(format!(
            "{:>4} {:>8} {:>10.2} {:>10.2} {:>10.2} {:>5} {:>7}",
            r.iteration,
            r.dataset_size_before,
            s.min,
            s.median,
            s.max,
            r.best_tree_id,
            r.best().params
        ));
    })?;
    for l in &lines {
        say!(out, "{l}");
    }
    say!(
        out,
        "base: {} episodes, {} without zenith, {} outliers, {} kept, {} samples",
        outcome.base.episodes,
        outcome.base.rejected_no_zenith,
        outcome.base.rejected_outlier,
        outcome.base.kept,
        outcome.base.samples
    );
    let best = outcome.best_eval();
    say!(
        out,
        "best: iteration {} tree {} mean return {:.2} ({} params after pruning)",
        outcome.best_iteration,
        outcome.best_tree_id,
        best.mean_return,
        best.params
    );
    let manifest = outcome.write(&dir, &ctx.run.sim, &oracle_ref)?;
    say!(out, "wrote {}", manifest.display());
    let pruned = dir.join("best_tree.pruned.json");
    write_file(&pruned, &(outcome.best_tree().prune_argmax().to_json() + "\n"))?;
    say!(out, "wrote {}", pruned.display());

    let groups = report_groups(oracle.as_ref(), &outcome, &ctx.run.sim, a.report_episodes as usize, ctx.seed)?;
    write_report(&outcome.records, &groups, Binning::FreedmanDiaconis, &dir.join("report"), out)
}

fn report_groups(
    oracle: &dyn Policy,
    outcome: &DistillOutcome,
    sim: &SimConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<ReportGroup>, CliError> {
    let seed = seeding::derive(seed, &[TAG_REPORT]);
    let eval = |p: &dyn Policy| evalstats::evaluate_policy(p, sim, episodes, seed);
    Ok(vec![
        ReportGroup { name: "oracle".into(), logs: eval(oracle)? },
        ReportGroup { name: "iteration-0 best".into(), logs: eval(outcome.iteration0_best_tree())? },
        ReportGroup { name: "final best".into(), logs: eval(outcome.best_tree())? },
    ])
}

fn write_report(
    records: &[IterationRecord],
    groups: &[ReportGroup],
    binning: Binning,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    for g in groups {
        print_summary(out, &g.name, &evalstats::summarize(&g.logs).expect("non-empty group"))?;
    }
    for p in evalstats::export_report(records, groups, binning, dir)? {
        say!(out, "wrote {}", p.display());
    }
    Ok(())
}

pub fn cmd_evaluate(ctx: &Context, a: &EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let policy = ctx.policy(&a.policy)?;
    let logs = evalstats::evaluate_policy(policy.as_ref(), &ctx.run.sim, a.episodes as usize, ctx.seed)?;
    let summary = evalstats::summarize(&logs).expect("at least one episode");
    print_summary(out, &policy.name(), &summary)?;
    let path = ctx.ensure_out()?.join("summary.json");
    write_file(&path, &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"))?;
    say!(out, "wrote {}", path.display());
    Ok(())
}

/// Percent reduction of `params` against `baseline`.
pub fn reduction_percent(params: usize, baseline: usize) -> f64 {
    100.0 * (1.0 - params as f64 / baseline as f64)
}

pub fn cmd_prune(ctx: &Context, a: &PruneArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.baseline_params == 0 {
        return Err(user("--baseline-params must be positive"));
    }
    let tree = load_tree(&a.tree)?;
    let pruned = tree.prune_argmax();
    let dest = match &a.output {
        Some(p) => p.clone(),
        None => {
            let stem = a.tree.file_stem().and_then(|s| s.to_str()).unwrap_or("tree");
            ctx.ensure_out()?.join(format!("{stem}.pruned.json"))
        }
    };
    let (d0, l0) = tree.count_nodes();
    let (d1, l1) = pruned.count_nodes();
    let baseline = a.baseline_params as usize;
    say!(out, "before: {d0} decision nodes, {l0} leaves, {} params", tree.count_params());
    say!(out, "after:  {d1} decision nodes, {l1} leaves, {} params", pruned.count_params());
    say!(
        out,
        "reduction vs {baseline} baseline params: {:.1}%",
        reduction_percent(pruned.count_params(), baseline)
    );
    write_file(&dest, &(pruned.to_json() + "\n"))?;
    say!(out, "wrote {}", dest.display());
    Ok(())
}

/// Pieces of a finished run, reloaded from its manifest.
struct LoadedRun {
    sim: SimConfig,
    oracle: String,
    records: Vec<IterationRecord>,
    iteration0_best: ObliqueTree,
    best: ObliqueTree,
}

fn load_run(dir: &Path) -> Result<LoadedRun, CliError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    let bad = |what: &str| user(format!("{}: {what}", path.display()));
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(&e.to_string()))?;
    let sim: SimConfig = serde_json::from_value(v["sim"].clone()).map_err(|e| bad(&format!("sim: {e}")))?;
    let oracle = v["oracle"].as_str().ok_or_else(|| bad("missing oracle"))?.to_string();
    let iterations = v["iterations"].as_array().ok_or_else(|| bad("missing iterations"))?;
    let mut records = Vec::new();
    for it in iterations {
        let mut it = it.clone();
        if let Some(o) = it.as_object_mut() {
            o.remove("tree_files");
        }
        records.push(serde_json::from_value::<IterationRecord>(it).map_err(|e| bad(&format!("iterations: {e}")))?);
    }
    if records.is_empty() {
        return Err(bad("no iterations recorded"));
    }
    let best_file = v["best"]["tree_file"].as_str().ok_or_else(|| bad("missing best.tree_file"))?;
    let first = DistillOutcome::tree_file(0, records[0].best_tree_id);
    Ok(LoadedRun {
        sim,
        oracle,
        iteration0_best: load_tree(&dir.join(first))?,
        best: load_tree(&dir.join(best_file))?,
        records,
    })
}

pub fn cmd_report(ctx: &Context, a: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = a.run.clone().unwrap_or_else(|| ctx.out.clone());
    let run = load_run(&dir)?;
    let run_ctx = Context { run: RunConfig { sim: run.sim.clone(), ..ctx.run.clone() }, seed: ctx.seed, out: ctx.out.clone() };
    let oracle = oracle_policy(&run_ctx, &run.oracle)?;
    let n = a.episodes as usize;
    let seed = seeding::derive(ctx.seed, &[TAG_REPORT]);
    let eval = |p: &dyn Policy| evalstats::evaluate_policy(p, &run.sim, n, seed);
    let groups = vec![
        ReportGroup { name: "oracle".into(), logs: eval(oracle.as_ref())? },
        ReportGroup { name: "iteration-0 best".into(), logs: eval(&run.iteration0_best)? },
        ReportGroup { name: "final best".into(), logs: eval(&run.best)? },
    ];
    let binning = a.bins.map_or(Binning::FreedmanDiaconis, |b| Binning::Count(b as usize));
    let target = ctx.ensure_out()?.join("report");
    write_report(&run.records, &groups, binning, &target, out)
}
