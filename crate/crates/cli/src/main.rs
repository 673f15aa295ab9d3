use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gamefam::analysis::{
    evaluate_mae, push_mae_rows, robustness_map, robustness_table, sensitivity_table, sensitivity_trace,
    MAE_REPORT_HEADER,
};
use gamefam::baggfn::BaggfnFamily;
use gamefam::experiment::{self, ExperimentConfig, ExperimentKind, ExperimentResult};
use gamefam::nash::{attach_true_regret, find_nash_family, write_candidates, DeviationPayoffSource, ExactOracle};
use gamefam::pipeline::{
    init_samples_stratified, run_algorithm_one, simulate_round, RunOptions, SamplingConfig, TrainingDataset,
};
use gamefam::report::{config_hash, Provenance, Table};
use gamefam::surrogate::{init_model, load_model, save_model, NetworkSpec, SurrogateModel, TrainSettings};
use gamefam::{seeding, Error};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const DEFAULT_GRID_POINTS: usize = 11;
const DEFAULT_BUDGET: usize = 5000;

#[derive(Parser, Serialize)]
#[command(name = "gamefam", version, about = "Learn and analyze parameterized families of symmetric games")]
struct Cli {
    /// Master seed; overrides the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root directory.
    #[arg(long, global = true, env = "GAMEFAM_OUT", default_value = "out")]
    #[serde(skip)]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    #[serde(skip)]
    threads: Option<usize>,
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Generate a game family from the config's `[game]` section.
    Generate {
        /// Replication index; each index gets its own seed.
        #[arg(long, default_value_t = 0)]
        game: usize,
        /// Output file (defaults to `<out>/generate/<seed>/game_<game>.json`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Sample, simulate and fit a surrogate, then save it.
    Train {
        #[command(flatten)]
        family: FamilyArgs,
        /// Initial simulator budget when the config has no `[sampling]` section.
        #[arg(long)]
        budget: Option<usize>,
        /// Train a fixed-parameter model on this instance only.
        #[arg(long)]
        fpl_at: Option<f64>,
        /// Output file (defaults to `<out>/train/<seed>/model.gfsm`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Find candidate equilibria on every grid instance.
    Nash {
        #[command(flatten)]
        family: FamilyArgs,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Lattice MAE of a saved model against the exact oracle.
    Evaluate {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        resolution: Option<u32>,
    },
    /// Robustness map and sensitivity trace (both unless one is selected).
    Analyze {
        #[command(flatten)]
        family: FamilyArgs,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        robustness: bool,
        #[arg(long)]
        sensitivity: bool,
        /// Regret threshold for the robustness frequency.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        resolution: Option<u32>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Run a declarative experiment from `--config`.
    Experiment {
        /// fpl_vs_vpl | refinement | scalability_er | scalability_players | robustness | sensitivity
        kind: String,
    },
}

#[derive(Args, Serialize)]
struct FamilyArgs {
    /// Family file; defaults to game 0 of the config.
    #[arg(long)]
    game_file: Option<PathBuf>,
    /// Instance grid points for continuous parameters.
    #[arg(long)]
    grid_points: Option<usize>,
}

#[derive(Args, Serialize)]
struct SourceArgs {
    #[arg(long, conflicts_with = "use_oracle")]
    model: Option<PathBuf>,
    /// Use exact deviation payoffs instead of a model.
    #[arg(long)]
    use_oracle: bool,
}

/// An invocation that cannot succeed as written.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.chain().any(|e| {
        e.downcast_ref::<UsageError>().is_some() || e.downcast_ref::<Error>().is_some_and(Error::is_config_error)
    });
    if config {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

struct RunContext {
    config: Option<ExperimentConfig>,
    seed: u64,
    prov: Provenance,
}

fn load_context(cli: &Cli) -> anyhow::Result<RunContext> {
    let mut config = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
    if let (Some(cfg), Some(seed)) = (config.as_mut(), cli.seed) {
        cfg.seed = seed;
    }
    let seed = cli.seed.or(config.as_ref().map(|c| c.seed)).unwrap_or(0);
    let hash = config_hash(&(&config, cli));
    Ok(RunContext { config, seed, prov: Provenance::new(seed, hash) })
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let ctx = load_context(cli)?;
    match &cli.command {
        Command::Generate { game, output } => cmd_generate(cli, &ctx, *game, output.as_deref()),
        Command::Train { family, budget, fpl_at, output } => {
            cmd_train(cli, &ctx, family, *budget, *fpl_at, output.as_deref())
        }
        Command::Nash { family, source, restarts, iterations } => {
            cmd_nash(cli, &ctx, family, source, *restarts, *iterations)
        }
        Command::Evaluate { family, model, resolution } => cmd_evaluate(cli, &ctx, family, model, *resolution),
        Command::Analyze { family, source, robustness, sensitivity, epsilon, resolution, iterations } => {
            let both = !robustness && !sensitivity;
            let opts = AnalyzeOptions {
                robustness: *robustness || both,
                sensitivity: *sensitivity || both,
                epsilon: *epsilon,
                resolution: *resolution,
                iterations: *iterations,
            };
            cmd_analyze(cli, &ctx, family, source, &opts)
        }
        Command::Experiment { kind } => cmd_experiment(cli, &ctx, kind),
    }
}

fn run_dir(cli: &Cli, ctx: &RunContext, command: &str) -> PathBuf {
    cli.out.join(command).join(ctx.seed.to_string())
}

fn require_config<'a>(ctx: &'a RunContext, what: &str) -> anyhow::Result<&'a ExperimentConfig> {
    ctx.config.as_ref().ok_or_else(|| usage(format!("{what} needs --config")))
}

fn load_family(ctx: &RunContext, args: &FamilyArgs) -> anyhow::Result<BaggfnFamily> {
    match (&args.game_file, &ctx.config) {
        (Some(path), _) => BaggfnFamily::load(path).with_context(|| format!("loading family {}", path.display())),
        (None, Some(cfg)) => Ok(experiment::game_family(cfg, 0)?),
        (None, None) => Err(usage("pass --game-file or --config")),
    }
}

fn grid(ctx: &RunContext, args: &FamilyArgs, family: &BaggfnFamily) -> Vec<f64> {
    let points =
        args.grid_points.or(ctx.config.as_ref().map(|c| c.evaluation.grid_points)).unwrap_or(DEFAULT_GRID_POINTS);
    family.parameter.grid(points)
}

fn train_settings(ctx: &RunContext, fpl: bool) -> TrainSettings {
    match &ctx.config {
        Some(c) if fpl => c.fpl_train(),
        Some(c) => c.train.clone(),
        None => TrainSettings::default(),
    }
}

fn network_spec(ctx: &RunContext, n: usize, fpl: bool) -> NetworkSpec {
    match &ctx.config {
        Some(c) if fpl => c.fpl_spec(),
        Some(c) => c.vpl_spec(),
        None if fpl => NetworkSpec::fpl(n),
        None => NetworkSpec::vpl(n),
    }
}

fn check_dims(family: &BaggfnFamily, spec: &NetworkSpec) -> anyhow::Result<()> {
    if spec.num_heads != family.num_strategies {
        return Err(Error::SpecMismatch(format!(
            "model has {} heads but the family has {} strategies",
            spec.num_heads, family.num_strategies
        ))
        .into());
    }
    Ok(())
}

fn cmd_generate(cli: &Cli, ctx: &RunContext, game: usize, output: Option<&Path>) -> anyhow::Result<()> {
    let cfg = require_config(ctx, "generate")?;
    let family = experiment::game_family(cfg, game)?;
    let path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run_dir(cli, ctx, "generate").join(format!("game_{game}.json")));
    create_parent(&path)?;
    family.save(&path)?;
    println!(
        "{}: {} strategies, {} functions, parameter {:?}, payoff scale [{}, {}]",
        path.display(),
        family.num_strategies,
        family.num_functions,
        family.parameter,
        family.payoff_scale.0,
        family.payoff_scale.1
    );
    Ok(())
}

fn cmd_train(
    cli: &Cli,
    ctx: &RunContext,
    args: &FamilyArgs,
    budget: Option<usize>,
    fpl_at: Option<f64>,
    output: Option<&Path>,
) -> anyhow::Result<()> {
    let family = load_family(ctx, args)?;
    let n = family.num_strategies;
    let grid_points = args.grid_points.or(ctx.config.as_ref().map(|c| c.evaluation.grid_points));
    let mut sampling = match &ctx.config {
        Some(c) => c.sampling(),
        None => SamplingConfig::new(DEFAULT_BUDGET),
    };
    if let Some(b) = budget {
        sampling.init_queries = b;
    }
    if let Some(p) = grid_points {
        sampling.instance_grid_points = p;
    }
    let fpl = fpl_at.is_some();
    let spec = network_spec(ctx, n, fpl);
    check_dims(&family, &spec)?;
    let train = train_settings(ctx, fpl);
    let (model, rows) = match fpl_at {
        Some(v) => train_fixed(&family, &spec, &train, &sampling, v, ctx.seed)?,
        None => {
            let options = RunOptions { true_regret: false, skip_final_nash: true };
            let out = run_algorithm_one(&family, &spec, &train, &sampling, ctx.seed, options)?;
            let rows = out.dataset.len();
            (out.model, rows)
        }
    };
    let path = output.map(Path::to_path_buf).unwrap_or_else(|| run_dir(cli, ctx, "train").join("model.gfsm"));
    create_parent(&path)?;
    save_model(&model, &path)?;
    let loss = model.meta.loss_history.last().copied().unwrap_or(f64::NAN);
    println!("{}: {} rows, {} epochs, final loss {loss:.6e}", path.display(), rows, model.meta.epochs_trained);
    Ok(())
}

fn train_fixed(
    family: &BaggfnFamily,
    spec: &NetworkSpec,
    train: &TrainSettings,
    sampling: &SamplingConfig,
    v: f64,
    seed: u64,
) -> anyhow::Result<(SurrogateModel, usize)> {
    family.parameter.check(v)?;
    let mut rng = seeding::rng(seeding::derive(seed, seeding::stream::INIT_SAMPLES));
    let samples = init_samples_stratified(family, &[v], sampling.init_queries, sampling.dirichlet_alpha, &mut rng);
    let mut data = TrainingDataset::default();
    simulate_round(family, &samples, 0, seeding::derive(seed, seeding::stream::SIMULATOR), &mut data)?;
    let mut model = init_model(spec, (v, v), family.payoff_scale, seeding::derive(seed, seeding::stream::MODEL_INIT))?;
    let settings = TrainSettings { seed: seeding::derive(seed, seeding::stream::TRAIN), ..train.clone() };
    model.train(&data.encode(&model)?, &settings)?;
    Ok((model, data.len()))
}

enum Source<'a> {
    Oracle(ExactOracle<'a>),
    Model(SurrogateModel),
}

impl Source<'_> {
    fn get(&self) -> &dyn DeviationPayoffSource {
        match self {
            Source::Oracle(o) => o,
            Source::Model(m) => m,
        }
    }
}

fn load_source<'a>(family: &'a BaggfnFamily, args: &SourceArgs) -> anyhow::Result<Source<'a>> {
    if args.use_oracle {
        return Ok(Source::Oracle(ExactOracle(family)));
    }
    let path = args.model.as_ref().ok_or_else(|| usage("pass --model or --use-oracle"))?;
    let model = load_model_file(path)?;
    check_dims(family, &model.spec)?;
    Ok(Source::Model(model))
}

fn load_model_file(path: &Path) -> anyhow::Result<SurrogateModel> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn cmd_nash(
    cli: &Cli,
    ctx: &RunContext,
    args: &FamilyArgs,
    source: &SourceArgs,
    restarts: Option<usize>,
    iterations: Option<usize>,
) -> anyhow::Result<()> {
    let family = load_family(ctx, args)?;
    let grid = grid(ctx, args, &family);
    let src = load_source(&family, source)?;
    let mut settings = ctx.config.as_ref().map(|c| c.nash()).unwrap_or_default();
    if let Some(r) = restarts {
        settings.restarts_per_instance = r;
    }
    if let Some(i) = iterations {
        settings.iterations = i;
    }
    let seed = seeding::derive(ctx.seed, seeding::stream::NASH);
    let mut cands = find_nash_family(src.get(), &family.parameter, &grid, &settings, seed)?;
    attach_true_regret(&mut cands, &family)?;
    let path = run_dir(cli, ctx, "nash").join("candidates.csv");
    write_candidates(&path, &cands, family.num_strategies, &ctx.prov)?;
    println!("{}: {} candidates over {} instances", path.display(), cands.len(), grid.len());
    Ok(())
}

fn cmd_evaluate(
    cli: &Cli,
    ctx: &RunContext,
    args: &FamilyArgs,
    model_path: &Path,
    resolution: Option<u32>,
) -> anyhow::Result<()> {
    let family = load_family(ctx, args)?;
    let grid = grid(ctx, args, &family);
    let model = load_model_file(model_path)?;
    check_dims(&family, &model.spec)?;
    let resolution = resolution.or(ctx.config.as_ref().map(|c| c.evaluation.lattice_resolution)).unwrap_or(8);
    let label = if model.spec.includes_parameter_input { "vpl" } else { "fpl" };
    let report = evaluate_mae(&model, &family, &grid, resolution)?;
    let mut table = Table::new(MAE_REPORT_HEADER);
    push_mae_rows(&mut table, 0, label, &report)?;
    let path = run_dir(cli, ctx, "evaluate").join("mae_report.csv");
    table.write(&path, &ctx.prov)?;
    println!("{}: overall MAE {:.6} over {} mixtures", path.display(), report.overall_mae, report.n_mixtures);
    Ok(())
}

struct AnalyzeOptions {
    robustness: bool,
    sensitivity: bool,
    epsilon: Option<f64>,
    resolution: Option<u32>,
    iterations: Option<usize>,
}

fn cmd_analyze(
    cli: &Cli,
    ctx: &RunContext,
    args: &FamilyArgs,
    source: &SourceArgs,
    opts: &AnalyzeOptions,
) -> anyhow::Result<()> {
    let family = load_family(ctx, args)?;
    let grid = grid(ctx, args, &family);
    let src = load_source(&family, source)?;
    let defaults = ctx.config.as_ref().map(|c| c.analysis.clone()).unwrap_or_default();
    let delta = ctx.config.as_ref().map(|c| c.nash()).unwrap_or_default().delta;
    let dir = run_dir(cli, ctx, "analyze");
    if opts.robustness {
        let eps = opts.epsilon.unwrap_or(defaults.epsilon);
        let res = opts.resolution.unwrap_or(defaults.lattice_resolution);
        let map = robustness_map(src.get(), &grid, res, eps)?;
        let path = dir.join("robustness.csv");
        robustness_table(&map)?.write(&path, &ctx.prov)?;
        println!("{}: {} mixtures over {} instances", path.display(), map.mixtures.len(), grid.len());
    }
    if opts.sensitivity {
        let iterations = opts.iterations.unwrap_or(defaults.iterations);
        let trace = sensitivity_trace(src.get(), &grid, iterations, delta)?;
        let path = dir.join("sensitivity.csv");
        sensitivity_table(&trace)?.write(&path, &ctx.prov)?;
        println!("{}: {} instances", path.display(), trace.points.len());
    }
    Ok(())
}

fn cmd_experiment(cli: &Cli, ctx: &RunContext, kind: &str) -> anyhow::Result<()> {
    let kind = ExperimentKind::parse(kind)?;
    let cfg = require_config(ctx, "experiment")?;
    if cfg.kind != kind {
        return Err(usage(format!("config is for {}, not {}", cfg.kind.name(), kind.name())));
    }
    let output = experiment::run(cfg)?;
    let dir = output.run_dir(&cli.out);
    let files = output.write(&dir)?;
    for l in output.ledgers.iter().filter(|l| !l.ok()) {
        log::error!("{}: configured {} queries, recorded {}", l.label, l.configured, l.recorded);
    }
    if output.ledgers.iter().any(|l| !l.ok()) {
        anyhow::bail!("simulator budget accounting failed");
    }
    println!("{}: {} files", dir.display(), files.len());
    print_summary(&output.result);
    Ok(())
}

fn print_summary(result: &ExperimentResult) {
    match result {
        ExperimentResult::FplVsVpl(games) => {
            for g in games {
                println!("game {}: vpl {:.5} fpl {:.5}", g.game_id, g.vpl.overall_mae, g.fpl.overall_mae);
            }
        }
        ExperimentResult::Refinement(games) => {
            for g in games {
                let errs: Vec<String> =
                    g.variants.iter().map(|r| format!("{} {:.5}", r.variant.name(), r.final_error())).collect();
                println!("game {}: {}", g.game_id, errs.join(", "));
            }
        }
        ExperimentResult::ScalabilityPlayers(games) => {
            for g in games {
                let maes: Vec<String> =
                    g.widths.iter().map(|w| format!("width {} {:.5}", w.width, w.mean_mae)).collect();
                println!("game {}: {}", g.game_id, maes.join(", "));
            }
        }
        ExperimentResult::Robustness(map) => println!("{} mixtures", map.mixtures.len()),
        ExperimentResult::Sensitivity(trace) => println!("{} instances", trace.points.len()),
    }
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}
