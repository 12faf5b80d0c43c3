use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use srl_core::env::EnvConfig;
use srl_core::metrics::{self, MetricsError};
use srl_core::rl::{self, evaluate_policy, Agent, PolicyInput, PpoConfig, RlError};
use srl_core::srl::{self, Architecture, Backbone, Model, ModelKind, SrlError, TrainConfig};
use srlbench::checkpoint::{self, CheckpointError};
use srlbench::dataset::{self, Dataset, DatasetError};
use srlbench::envfile::{self, ConfigError};
use srlbench::pool::ThreadPool;
use srlbench::server::{self, AppState, LiveOptions, Session, SessionError};
use srlbench::{bench, report};

#[derive(Parser)]
#[command(name = "srlbench", version, about = "State representation learning benchmark toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record a dataset of random-policy steps.
    Generate(GenerateArgs),
    /// Train a state representation model on a dataset.
    TrainSrl(TrainSrlArgs),
    /// Print KNN-MSE and GTC of a state set as JSON.
    Eval(EvalArgs),
    /// Train a PPO policy and write its reward curve.
    TrainRl(TrainRlArgs),
    /// Measure environment stepping throughput.
    Benchmark(BenchmarkArgs),
    /// Serve the explorer API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct EnvArgs {
    /// Preset name.
    #[arg(long, default_value = "mobile-random")]
    env: String,
    /// Key=value config file; replaces --env.
    #[arg(long)]
    env_config: Option<PathBuf>,
    /// Overrides the rendered image side length.
    #[arg(long)]
    image_size: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing dataset in --out.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackboneArg {
    Small,
    Deep,
}

#[derive(Args)]
struct TrainSrlArgs {
    /// ae, vae, forward, inverse, fwd+inv, priors, supervised or random.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 4)]
    state_dim: usize,
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Defaults to 128 for transition models, 256 for priors, 32 otherwise.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = BackboneArg::Small)]
    backbone: BackboneArg,
    /// Hidden width of forward/inverse heads; 0 makes them linear.
    #[arg(long, default_value_t = 0)]
    head_hidden: usize,
    /// Caps minibatches per epoch.
    #[arg(long)]
    max_batches: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint path, `ground-truth` or `random`.
    #[arg(long)]
    model: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = metrics::DEFAULT_K)]
    k: usize,
    /// State dimension of `random` features.
    #[arg(long, default_value_t = 4)]
    state_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum InputArg {
    /// Ground-truth state.
    Gt,
    /// States from --encoder.
    Learned,
    /// Raw pixels.
    Raw,
    /// An untrained random encoder.
    Random,
}

#[derive(Args)]
struct TrainRlArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long, value_enum, default_value_t = InputArg::Gt)]
    input: InputArg,
    /// SRL checkpoint for `--input learned`.
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// State dimension of `--input random`.
    #[arg(long, default_value_t = 4)]
    state_dim: usize,
    /// Environment steps.
    #[arg(long, default_value_t = 100_000)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Policy checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reward-curve CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Greedy evaluation episodes after training; 0 skips evaluation.
    #[arg(long, default_value_t = 20)]
    eval_episodes: usize,
    #[arg(long, default_value_t = 2.5e-4)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    n_envs: usize,
    #[arg(long, default_value_t = 128)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long, default_value_t = 8)]
    workers: usize,
    #[arg(long, default_value_t = 10.0)]
    seconds: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    /// Dataset to explore.
    #[arg(long)]
    data: PathBuf,
    /// SRL checkpoint; ground-truth states are shown without one.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Policy checkpoint offered to the live stream.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Default live-stream rate.
    #[arg(long, default_value_t = 10.0)]
    fps: f64,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Config(_) | DatasetError::Invariant(_) => CliError::Config(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SrlError> for CliError {
    fn from(e: SrlError) -> Self {
        match e {
            SrlError::DivergedLoss { .. } => CliError::Other(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<RlError> for CliError {
    fn from(e: RlError) -> Self {
        match e {
            RlError::Srl(e) => e.into(),
            RlError::DivergedLoss { .. } | RlError::Env(_) => CliError::Other(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn load_env(args: &EnvArgs) -> Result<(EnvConfig, Option<String>), CliError> {
    let (mut cfg, name) = match &args.env_config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_error(path))?;
            (envfile::parse(&text)?, None)
        }
        None => (envfile::preset(&args.env)?, Some(args.env.clone())),
    };
    if let Some(side) = args.image_size {
        if side == 0 {
            return Err(CliError::Config("--image-size must be positive".into()));
        }
        let mut image = cfg.image();
        image.width = side;
        image.height = side;
        cfg.set_image(image);
    }
    Ok((cfg, name))
}

fn print_json(value: &serde_json::Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("json value");
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let (env, name) = load_env(&args.env)?;
    let start = std::time::Instant::now();
    let manifest = dataset::generate(&env, name.as_deref(), args.samples, args.workers, args.seed, &args.out, args.force)?;
    print_json(&json!({
        "out": args.out,
        "samples": manifest.samples,
        "shards": manifest.shards.len(),
        "seconds": start.elapsed().as_secs_f64(),
    }));
    Ok(())
}

fn train_srl(args: TrainSrlArgs) -> Result<(), CliError> {
    let kind = ModelKind::parse(&args.model).ok_or_else(|| {
        let names: Vec<_> = ModelKind::ALL.iter().map(|k| k.name()).collect();
        CliError::Config(format!("unknown model `{}`; expected one of {}", args.model, names.join(", ")))
    })?;
    let data = Dataset::open(&args.data)?;
    let samples = data.load()?;
    if samples.width != samples.height {
        return Err(CliError::Config("models need square images".into()));
    }
    let backbone = match args.backbone {
        BackboneArg::Small => Backbone::Small,
        BackboneArg::Deep => Backbone::Deep,
    };
    let arch = Architecture::new(kind, args.state_dim, samples.width, samples.n_actions, backbone, args.head_hidden);
    let mut cfg = TrainConfig::for_kind(kind);
    cfg.epochs = args.epochs;
    cfg.seed = args.seed;
    cfg.adam.lr = args.lr;
    cfg.max_batches_per_epoch = args.max_batches;
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    let pool = ThreadPool::new(args.threads);
    let (model, log) = srl::train_with(&pool, &samples, arch, &cfg, &mut |epoch, loss| {
        eprintln!("epoch {epoch}: loss {loss:.6}");
    })?;
    checkpoint::save_model(&args.out, &model)?;
    if let Some(path) = &args.log {
        report::write(path, &report::training_log_csv(&log)).map_err(io_error(path))?;
    }
    print_json(&json!({
        "model": kind.name(),
        "out": args.out,
        "params": model.params.len(),
        "final_loss": log.series("total").last(),
        "flags": log.flags,
    }));
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let data = Dataset::open(&args.data)?;
    let samples = data.load()?;
    let pool = ThreadPool::new(args.threads);
    let gt = samples.ground_truth_matrix();
    let states = match args.model.as_str() {
        "ground-truth" => gt.clone(),
        "random" => {
            let arch = Architecture::new(
                ModelKind::RandomFeatures,
                args.state_dim,
                samples.width,
                samples.n_actions,
                Backbone::Small,
                0,
            );
            Model::initialized(arch, args.seed).encode_samples(&pool, &samples)?
        }
        path => checkpoint::load_model(Path::new(path))?.encode_samples(&pool, &samples)?,
    };
    let labels: Vec<&str> = data.manifest.ground_truth_layout.iter().map(String::as_str).collect();
    let r = metrics::evaluate(&pool, &states, &gt, &labels, args.k)?;
    print_json(&json!({
        "model": args.model,
        "samples": samples.len(),
        "state_dim": states.cols,
        "k": r.k,
        "knn_mse": r.knn_mse,
        "gtc": r.gtc,
        "gtc_mean": r.gtc_mean,
        "gt_labels": labels,
        "correlation": (0..r.correlation.entries.rows).map(|i| r.correlation.entries.row(i)).collect::<Vec<_>>(),
        "flags": r.flags,
    }));
    Ok(())
}

fn train_rl(args: TrainRlArgs) -> Result<(), CliError> {
    if args.budget == 0 {
        return Err(CliError::Config("--budget must be positive".into()));
    }
    let (env, _) = load_env(&args.env)?;
    if args.encoder.is_some() && args.input != InputArg::Learned {
        return Err(CliError::Config("--encoder is only used with --input learned".into()));
    }
    let input = match args.input {
        InputArg::Gt => PolicyInput::GroundTruth,
        InputArg::Raw => PolicyInput::RawPixels,
        InputArg::Learned => {
            let path = args.encoder.as_ref().ok_or_else(|| CliError::Config("--input learned needs --encoder".into()))?;
            PolicyInput::LearnedStates(checkpoint::load_model(path)?)
        }
        InputArg::Random => {
            let n_actions = env.action_space().n().ok_or(RlError::ContinuousActions)?;
            let arch = Architecture::new(
                ModelKind::RandomFeatures,
                args.state_dim,
                env.image().width,
                n_actions,
                Backbone::Small,
                0,
            );
            PolicyInput::LearnedStates(Model::initialized(arch, args.seed))
        }
    };
    let cfg = PpoConfig { lr: args.lr, n_envs: args.n_envs, horizon: args.horizon, ..PpoConfig::default() };
    let pool = ThreadPool::new(args.threads);
    let (policy, curve) = rl::train_policy_with(&pool, &env, input, &cfg, args.budget, args.seed, &mut |p| {
        eprintln!("{} steps: mean reward {:.2} over {} episodes", p.timesteps, p.mean, p.episodes);
    })?;
    if let Some(path) = &args.out {
        checkpoint::save_policy(path, &policy)?;
    }
    if let Some(path) = &args.curve {
        report::write(path, &report::reward_curve_csv(&curve)).map_err(io_error(path))?;
    }
    let eval = if args.eval_episodes > 0 {
        Some(evaluate_policy(&pool, Agent::Greedy(&policy), &env, args.eval_episodes, &[args.seed])?)
    } else {
        None
    };
    print_json(&json!({
        "input": policy.input.name(),
        "timesteps": policy.timesteps,
        "final_curve_point": curve.points.last(),
        "flags": curve.flags,
        "eval": eval.map(|e| json!({"mean": e.mean, "stderr": e.stderr, "episodes": e.n_episodes})),
    }));
    Ok(())
}

fn benchmark(args: BenchmarkArgs) -> Result<(), CliError> {
    let (env, name) = load_env(&args.env)?;
    if args.workers == 0 || !(args.seconds > 0.0) {
        return Err(CliError::Config("--workers and --seconds must be positive".into()));
    }
    let name = name.unwrap_or_else(|| "custom".into());
    let r = bench::run(&env, &name, args.workers, Duration::from_secs_f64(args.seconds), args.seed);
    print_json(&serde_json::to_value(r).expect("report serializes"));
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    let data = Dataset::open(&args.data)?;
    let samples = data.load()?;
    let model = args.model.as_deref().map(checkpoint::load_model).transpose()?;
    let policy = args.policy.as_deref().map(checkpoint::load_policy).transpose()?;
    let pool = ThreadPool::new(args.threads);
    let session = Session::new(&pool, samples, model, data.manifest.env.clone(), policy)?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::Config(format!("bad address: {e}")))?;
    let state = AppState::new(Some(session), LiveOptions { fps: args.fps, ..LiveOptions::default() });
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Other(e.to_string()))?;
    eprintln!("listening on http://{addr}");
    runtime.block_on(server::serve(addr, state)).map_err(|e| CliError::Io(format!("{addr}: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::TrainSrl(a) => train_srl(a),
        Command::Eval(a) => eval(a),
        Command::TrainRl(a) => train_rl(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
