//! Command-line front end: `gen`, `train`, `plan` and `eval`.

use std::ffi::OsString;
use std::fs;
use std::path::{Component, Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::coverage::{coverage_stats, rsrp_grid, write_grid, GridSpec, RadioConfig};
use crate::error::Error;
use crate::eval::{compare_runs, export_geojson, overlap, plan_greedy, plan_kmeans, plan_random, CompareSettings, RunInput};
use crate::geo::Point;
use crate::policy::{decode_greedy, load_checkpoint, rollout, save_checkpoint, Mlp, FEATURE_DIM};
use crate::reward::{RewardBreakdown, Stage};
use crate::scenario::{generate_scenario, load_scenario, save_scenario, ColumnMapping, Profile, Scenario};
use crate::train::{
    sft_pretrain, train_grpo, train_ppo, train_vanilla_grpo, write_history, Algorithm, Problem, RunMetadata, TrainConfig,
    TrainHistory,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Errors caused by bad inputs are usage errors.
fn input<T>(r: crate::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Debug, Parser)]
#[command(name = "teleplan", version, about = "Base-station site selection with staged GRPO")]
pub struct Cli {
    /// Seed for generation, initialization, rollouts and baselines
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory all outputs are written to
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// More log output (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario
    Gen(GenArgs),
    /// Train a policy (behavior-cloned first when ground truth exists)
    Train(TrainArgs),
    /// Decode a plan from a checkpoint
    Plan(PlanArgs),
    /// Evaluate a plan: overlap, baselines, coverage grid, run comparison
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of candidate sites
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Number of sites to select
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = Profile::UrbanCluster)]
    pub profile: Profile,
    /// Output file under --out (.csv or .json)
    #[arg(short, long, default_value = "scenario.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file (.csv or .json)
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// JSON object mapping canonical column names to file column names
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Override the number of sites to select
    #[arg(long)]
    pub k: Option<usize>,
    /// Run configuration JSON; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Algorithm::Grpo)]
    pub algo: Algorithm,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Skip behavior-cloning pretraining
    #[arg(long)]
    pub no_sft: bool,
    /// Scenarios to behavior-clone instead of the training scenario
    #[arg(long = "sft-scenario")]
    pub sft_scenarios: Vec<PathBuf>,
    /// Semantic scorer
    #[arg(long, value_enum)]
    pub scorer: Option<crate::train::ScorerChoice>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Sample actions instead of taking the most probable one
    #[arg(long)]
    pub sample: bool,
    /// Output stem under --out
    #[arg(short, long, default_value = "plan")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to decode a plan from
    #[arg(long, conflicts_with = "plan")]
    pub checkpoint: Option<PathBuf>,
    /// Plan file written by `plan`
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// History CSVs to compare (sidecar metadata is used when present)
    #[arg(long = "history")]
    pub histories: Vec<PathBuf>,
    /// Coverage grid cell size, metres
    #[arg(long)]
    pub cell_size: Option<f64>,
    /// Output stem under --out
    #[arg(short, long, default_value = "report")]
    pub output: PathBuf,
}

/// Everything a run needs besides the subcommand flags. Every key is
/// optional in the JSON file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub radio: RadioConfig,
    pub eval: EvalConfig,
    pub scenario: Option<PathBuf>,
    pub mapping: Option<PathBuf>,
    pub sft_scenarios: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub cell_size: f64,
    pub margin: f64,
    /// Final-window length for reward summaries.
    pub window: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cell_size: 20.0,
            margin: 200.0,
            window: 50,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

struct Ctx {
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    /// Output path under `--out`; refuses to escape it.
    fn output(&self, rel: &Path) -> CliResult<PathBuf> {
        if rel.is_absolute() || rel.components().any(|c| matches!(c, Component::ParentDir)) {
            return Err(CliError::Usage(format!(
                "output path '{}' must be relative to --out and stay inside it",
                rel.display()
            )));
        }
        let p = self.out.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(p)
    }

    fn write(&self, rel: &str, text: &str) -> CliResult<PathBuf> {
        let p = self.output(Path::new(rel))?;
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}

fn load_config(args: &ScenarioArgs, seed: u64) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => input(RunConfig::load(p))?,
        None => RunConfig::default(),
    };
    cfg.train.seed = seed;
    if args.scenario.is_some() {
        cfg.scenario = args.scenario.clone();
    }
    if args.mapping.is_some() {
        cfg.mapping = args.mapping.clone();
    }
    input(cfg.train.validate())?;
    Ok(cfg)
}

fn load_scenario_from(cfg: &RunConfig, k: Option<usize>) -> CliResult<Scenario> {
    let path = cfg
        .scenario
        .as_ref()
        .ok_or_else(|| CliError::Usage("a scenario file is required (--scenario)".into()))?;
    let mapping = match &cfg.mapping {
        Some(m) => input(ColumnMapping::from_file(m))?,
        None => ColumnMapping::identity(),
    };
    input(load_scenario(path, &mapping, k))
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} '{}' does not exist", path.display())))
    }
}

fn cmd_gen(ctx: &Ctx, args: &GenArgs) -> CliResult<()> {
    let scenario = input(generate_scenario(ctx.seed, args.n, args.k, args.profile))?;
    let path = ctx.output(&args.output)?;
    save_scenario(&scenario, &path)?;
    println!("wrote {} ({} sites, select {})", path.display(), scenario.len(), scenario.select_count);
    Ok(())
}

/// Behavior-cloned reference, or `None` when pretraining is skipped or no
/// ground truth is available.
fn pretrain(
    ctx: &Ctx,
    cfg: &RunConfig,
    scenario: &Scenario,
    problem: &Problem,
    init: &Mlp,
    no_sft: bool,
) -> CliResult<Option<Mlp>> {
    if no_sft {
        return Ok(None);
    }
    let sources: Vec<Scenario> = if cfg.sft_scenarios.is_empty() {
        vec![scenario.clone()]
    } else {
        let mapping = match &cfg.mapping {
            Some(m) => input(ColumnMapping::from_file(m))?,
            None => ColumnMapping::identity(),
        };
        cfg.sft_scenarios
            .iter()
            .map(|p| input(load_scenario(p, &mapping, None)))
            .collect::<CliResult<_>>()?
    };
    if sources.iter().all(|s| s.ground_truth().is_none()) {
        log::warn!("no ground-truth selection found; training without a behavior-cloned reference");
        return Ok(None);
    }
    let out = sft_pretrain(
        &sources,
        init,
        &cfg.train.sft,
        &cfg.train.weights,
        problem.scorer.as_ref(),
    )?;
    log::info!(
        "behavior cloning on {} scenario(s): loss {:.4} -> {:.4}",
        out.scenarios_used,
        out.losses.first().copied().unwrap_or(f64::NAN),
        out.losses.last().copied().unwrap_or(f64::NAN)
    );
    save_checkpoint(&out.params, &ctx.output(Path::new("reference.json"))?)?;
    Ok(Some(out.params))
}

fn cmd_train(ctx: &Ctx, args: &TrainArgs) -> CliResult<()> {
    let mut cfg = load_config(&args.scenario, ctx.seed)?;
    if !args.sft_scenarios.is_empty() {
        cfg.sft_scenarios = args.sft_scenarios.clone();
    }
    if let Some(s) = args.scorer {
        cfg.train.scorer = s;
    }
    let scenario = load_scenario_from(&cfg, args.scenario.k)?;
    let problem = Problem::from_config(&scenario, &cfg.train);
    let init = Mlp::new(FEATURE_DIM, ctx.seed);
    let reference = pretrain(ctx, &cfg, &scenario, &problem, &init, args.no_sft)?;
    let start = reference.clone().unwrap_or_else(|| init.clone());
    // without a cloned reference the KL term anchors to the initial policy
    let anchor = reference.as_ref().unwrap_or(&init);
    let outcome = match args.algo {
        Algorithm::Grpo => train_grpo(&problem, &start, Some(anchor), &cfg.train)?,
        Algorithm::GrpoVanilla => train_vanilla_grpo(&problem, &start, Some(anchor), &cfg.train)?,
        Algorithm::Ppo => train_ppo(&problem, &start, &cfg.train)?,
    };
    let name = args.algo.name();
    for (stage, params) in &outcome.stage_checkpoints {
        let p = ctx.output(Path::new(&format!("checkpoint-{name}-stage{}.json", stage.number())))?;
        save_checkpoint(params, &p)?;
    }
    save_checkpoint(&outcome.params, &ctx.output(Path::new(&format!("checkpoint-{name}.json")))?)?;
    let meta = RunMetadata {
        algorithm: args.algo,
        config: cfg.train.clone(),
        seed: ctx.seed,
        init_seed: ctx.seed,
        used_sft: reference.is_some(),
        iterations: outcome.history.records.len(),
        transitions: outcome.history.transitions.clone(),
        scorer_fallbacks: outcome.history.fallbacks(),
        parameter_count: outcome.parameter_count,
    };
    ctx.output(Path::new("."))?;
    write_history(&ctx.out, &format!("history-{name}"), &outcome.history, &meta)?;
    ctx.write("run_config.json", &serde_json::to_string_pretty(&cfg).map_err(Error::from)?)?;
    let w = cfg.train.window;
    println!(
        "{name}: {} iterations, final mean reward {:.4} (last {w}), stage transitions at {:?}",
        outcome.history.records.len(),
        outcome.history.final_window_mean(w).unwrap_or(f64::NAN),
        outcome.history.transitions.iter().map(|t| t.iter).collect::<Vec<_>>()
    );
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanFile {
    pub sites: Vec<String>,
    pub indices: Vec<usize>,
    pub decoding: String,
    pub checkpoint: Option<String>,
    pub reward: Option<RewardBreakdown>,
    pub random_baseline: Option<BaselinePlan>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaselinePlan {
    pub sites: Vec<String>,
    pub reward: RewardBreakdown,
}

fn cmd_plan(ctx: &Ctx, args: &PlanArgs) -> CliResult<()> {
    require_file(&args.checkpoint, "checkpoint")?;
    let cfg = load_config(&args.scenario, ctx.seed)?;
    let scenario = load_scenario_from(&cfg, args.scenario.k)?;
    let params = input(load_checkpoint(&args.checkpoint))?;
    let problem = Problem::from_config(&scenario, &cfg.train);
    let indices = if args.sample {
        let mut rng = crate::train::rollout_stream(ctx.seed, 0);
        rollout(&params, &problem.env, &mut rng).actions
    } else {
        decode_greedy(&params, &problem.env)
    };
    let reward = problem.rewards.evaluate(&indices, Stage::Three)?;
    let random = plan_random(scenario.len(), scenario.select_count, ctx.seed)?;
    let random_reward = problem.rewards.evaluate(&random, Stage::Three)?;
    let plan = PlanFile {
        sites: indices.iter().map(|&i| scenario.sites[i].id.clone()).collect(),
        indices: indices.clone(),
        decoding: if args.sample { "sample" } else { "argmax" }.into(),
        checkpoint: Some(args.checkpoint.display().to_string()),
        reward: Some(reward.clone()),
        random_baseline: Some(BaselinePlan {
            sites: random.iter().map(|&i| scenario.sites[i].id.clone()).collect(),
            reward: random_reward.clone(),
        }),
    };
    let stem = args.output.display().to_string();
    ctx.write(&format!("{stem}.json"), &serde_json::to_string_pretty(&plan).map_err(Error::from)?)?;
    let ids = scenario.ids_of(&indices);
    let geo = export_geojson(&ids, &scenario, scenario.ground_truth());
    ctx.write(&format!("{stem}.geojson"), &serde_json::to_string_pretty(&geo).map_err(Error::from)?)?;
    println!(
        "plan of {} sites: stage-3 reward {:.4} (random baseline {:.4})",
        indices.len(),
        reward.combined,
        random_reward.combined
    );
    Ok(())
}

fn read_plan(path: &Path, scenario: &Scenario) -> CliResult<Vec<usize>> {
    require_file(path, "plan")?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let plan: PlanFile = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    input(scenario.indices_of(plan.sites.iter().map(String::as_str)))
}

fn read_history(path: &Path) -> CliResult<RunInput> {
    require_file(path, "history")?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut history = input(TrainHistory::from_csv(&text))?;
    let meta_path = path.with_extension("meta.json");
    let (algorithm, seed) = match fs::read_to_string(&meta_path) {
        Ok(m) => {
            let meta: RunMetadata = input(serde_json::from_str(&m).map_err(Error::from))?;
            history.transitions = meta.transitions.clone();
            (meta.algorithm.name().to_string(), meta.seed)
        }
        Err(_) => (
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            0,
        ),
    };
    Ok(RunInput {
        algorithm,
        seed,
        source: Some(path.display().to_string()),
        history,
        plan: None,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub plan: Vec<String>,
    pub reward: RewardBreakdown,
    pub overlap: Option<f64>,
    pub kmeans_overlap: Option<f64>,
    pub greedy_overlap: Option<f64>,
    pub coverage: crate::coverage::CoverageStats,
    pub grid: GridSpec,
    pub comparison: Option<crate::eval::ComparisonReport>,
}

fn cmd_eval(ctx: &Ctx, args: &EvalArgs) -> CliResult<()> {
    if let Some(c) = &args.checkpoint {
        require_file(c, "checkpoint")?;
    }
    let mut cfg = load_config(&args.scenario, ctx.seed)?;
    if let Some(c) = args.cell_size {
        if !(c > 0.0) {
            return Err(CliError::Usage("--cell-size must be positive".into()));
        }
        cfg.eval.cell_size = c;
    }
    let scenario = load_scenario_from(&cfg, args.scenario.k)?;
    let problem = Problem::from_config(&scenario, &cfg.train);
    let indices = match (&args.checkpoint, &args.plan) {
        (Some(c), _) => decode_greedy(&input(load_checkpoint(c))?, &problem.env),
        (None, Some(p)) => read_plan(p, &scenario)?,
        (None, None) => return Err(CliError::Usage("eval needs --checkpoint or --plan".into())),
    };
    if indices.len() != scenario.select_count {
        return Err(CliError::Usage(format!(
            "plan has {} sites, scenario selects {}",
            indices.len(),
            scenario.select_count
        )));
    }
    let reward = problem.rewards.evaluate(&indices, Stage::Three)?;
    let planned = scenario.ids_of(&indices);
    let reference = scenario.ground_truth();
    let overlap_with = |plan: &[usize]| -> CliResult<Option<f64>> {
        match reference {
            Some(r) if r.len() == plan.len() => Ok(Some(overlap(&scenario.ids_of(plan), r)?)),
            _ => Ok(None),
        }
    };
    let kmeans = plan_kmeans(problem.env.normalized(), scenario.select_count, ctx.seed)?;
    let greedy = plan_greedy(&problem.rewards)?;

    let all: Vec<Point> = scenario.sites.iter().map(|s| s.position).collect();
    let spec = GridSpec::covering(&all, cfg.eval.margin, cfg.eval.cell_size)?;
    let sites: Vec<Point> = indices.iter().map(|&i| scenario.sites[i].position).collect();
    let grid = rsrp_grid(&sites, &spec, &cfg.radio)?;
    let stem = args.output.display().to_string();
    ctx.output(Path::new(&stem))?;
    write_grid(&grid, &ctx.out, &format!("{stem}-grid"))?;
    let coverage = coverage_stats(&grid.values)?;

    let comparison = if args.histories.len() >= 2 {
        let runs: Vec<RunInput> = args.histories.iter().map(|p| read_history(p)).collect::<CliResult<_>>()?;
        let settings = CompareSettings {
            window: cfg.eval.window,
            radio: cfg.radio.clone(),
            cell_size: cfg.eval.cell_size,
            margin: cfg.eval.margin,
        };
        let report = compare_runs(&runs, Some(&scenario), &settings)?;
        ctx.write(&format!("{stem}-runs.csv"), &report.runs_csv())?;
        ctx.write(&format!("{stem}-panel.csv"), &report.panel_csv())?;
        Some(report)
    } else {
        if args.histories.len() == 1 {
            log::warn!("a single history was given; run comparison needs at least two");
        }
        None
    };
    let report = EvalReport {
        plan: planned.iter().cloned().collect(),
        reward,
        overlap: overlap_with(&indices)?,
        kmeans_overlap: overlap_with(&kmeans)?,
        greedy_overlap: overlap_with(&greedy)?,
        coverage,
        grid: spec,
        comparison,
    };
    ctx.write(&format!("{stem}.json"), &serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    let mut csv = String::from("metric,value\n");
    csv.push_str(&format!("stage3_reward,{}\n", report.reward.combined));
    for (name, v) in [
        ("overlap", report.overlap),
        ("kmeans_overlap", report.kmeans_overlap),
        ("greedy_overlap", report.greedy_overlap),
    ] {
        csv.push_str(&format!("{name},{}\n", v.map(|x| x.to_string()).unwrap_or_default()));
    }
    csv.push_str(&format!("frac_above_80,{}\n", coverage.frac_above_80));
    csv.push_str(&format!("frac_above_60,{}\n", coverage.frac_above_60));
    csv.push_str(&format!("min_dbm,{}\n", coverage.min_dbm));
    csv.push_str(&format!("mean_dbm,{}\n", coverage.mean_dbm));
    ctx.write(&format!("{stem}.csv"), &csv)?;
    match report.overlap {
        Some(o) => println!("overlap with reference: {o:.4}"),
        None => println!("overlap with reference: n/a (no ground truth)"),
    }
    println!(
        "coverage: {:.4} of cells above -80 dBm, {:.4} above -60 dBm",
        coverage.frac_above_80, coverage.frac_above_60
    );
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let ctx = Ctx {
        seed: cli.seed,
        out: cli.out.clone(),
    };
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Plan(a) => cmd_plan(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn run_config_defaults_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = serde_json::from_str(r#"{"train": {"window": 7}}"#).unwrap();
        assert_eq!(partial.train.window, 7);
        assert_eq!(partial.radio, RadioConfig::default());
    }

    #[test]
    fn outputs_cannot_escape_out_dir() {
        let ctx = Ctx {
            seed: 0,
            out: std::env::temp_dir(),
        };
        assert!(matches!(ctx.output(Path::new("../x.csv")), Err(CliError::Usage(_))));
        assert!(matches!(ctx.output(Path::new("/tmp/x.csv")), Err(CliError::Usage(_))));
    }
}
