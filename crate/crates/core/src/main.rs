use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use reward_discovery::envs::{MetaTask, TaskId};
use reward_discovery::eval::{evaluate_fitness, workers_from_env, FitnessReport, Profile};
use reward_discovery::evolution::{
    adapt_reward, evaluation_seed, make_provider, Discovery, EvolutionError, GenerationSummary, OperatorTag, ProviderSpec, RunConfig,
};
use reward_discovery::llm::{ChatProvider, LlmClient, LlmError};
use reward_discovery::problems::make_suite;
use reward_discovery::report::{self, ReportError};
use reward_discovery::rsl::{self, RewardProgram};

#[derive(Parser)]
#[command(name = "reward-discovery", version, about = "Evolve reward programs for meta-black-box optimization tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Search,
    Final,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Search => Profile::Search,
            ProfileArg::Final => Profile::Final,
        }
    }
}

#[derive(clap::Args)]
struct ProviderArgs {
    /// Answer prompts from a recorded exchange log instead of the configured provider.
    #[arg(long, conflicts_with = "synthetic")]
    replay: Option<PathBuf>,
    /// Answer prompts with the built-in offline generator seeded with this value.
    #[arg(long)]
    synthetic: Option<u64>,
}

impl ProviderArgs {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(p) = &self.replay {
            config.provider = ProviderSpec::Replay { path: p.clone() };
        } else if let Some(s) = self.synthetic {
            config.provider = ProviderSpec::Synthetic { seed: s };
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a reward search, or resume one.
    Discover {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        provider: ProviderArgs,
        /// Continue the run stored in this directory.
        #[arg(long, conflicts_with_all = ["config", "out"])]
        resume: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "search")]
        profile: ProfileArg,
        #[arg(long, env = "REWARD_DISCOVERY_WORKERS")]
        workers: Option<usize>,
        /// Ablation: `<op>=m0` replaces a reproduction operator by the simple mutation.
        #[arg(long = "replace-op", value_name = "OP=m0")]
        replace_op: Vec<String>,
        #[arg(long)]
        disable_kt: bool,
        /// Number of generations.
        #[arg(long)]
        gmax: Option<usize>,
        /// Comma-separated task ids.
        #[arg(long, value_delimiter = ',')]
        tasks: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure the fitness of one reward file.
    EvalReward {
        reward: PathBuf,
        /// Defaults to the task declared in the file header.
        #[arg(long)]
        task: Option<String>,
        #[arg(long, value_enum, default_value = "search")]
        profile: ProfileArg,
        /// Run seed; a reward scores as it did in a run with the same seed and config.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Suite and budget settings are read from this run config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "REWARD_DISCOVERY_WORKERS")]
        workers: Option<usize>,
    },
    /// Adapt a reward to another task with one transfer prompt and compare it with that task's own reward.
    Transfer {
        reward: PathBuf,
        /// Defaults to the task declared in the file header.
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "search")]
        profile: ProfileArg,
        /// Adapted reward file; defaults to `<reward>.<to>.rsl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write trajectory, operator and SNE tables for a run directory.
    Report {
        run: PathBuf,
        /// Ablation runs to compare against; adds sne.csv.
        #[arg(long)]
        compare: Vec<PathBuf>,
        /// Defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Provider(String),
    Eval(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Provider(_) => 3,
            Failure::Eval(_) => 4,
        }
    }

    fn message(&self) -> (&'static str, &str) {
        match self {
            Failure::Config(m) => ("config", m),
            Failure::Provider(m) => ("provider", m),
            Failure::Eval(m) => ("evaluation", m),
        }
    }
}

impl From<EvolutionError> for Failure {
    fn from(e: EvolutionError) -> Self {
        match e {
            EvolutionError::Provider(e) => Failure::Provider(e.to_string()),
            EvolutionError::Eval(e) => Failure::Eval(e.to_string()),
            e => Failure::Config(e.to_string()),
        }
    }
}

impl From<LlmError> for Failure {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Config(_) | LlmError::Replay { .. } | LlmError::Log(_) => Failure::Config(e.to_string()),
            e => Failure::Provider(e.to_string()),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        Failure::Config(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn parse_task(s: &str) -> Result<TaskId, Failure> {
    TaskId::lookup(s).ok_or_else(|| Failure::Config(format!("unknown task `{s}`")))
}

fn load_reward(path: &Path, task: Option<&str>) -> Result<(RewardProgram, TaskId), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let program = rsl::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let task = match task.or(program.declared_task()) {
        Some(t) => parse_task(t)?,
        None => return Err(Failure::Config(format!("{}: no task given and none declared in the file", path.display()))),
    };
    program
        .validate(&task.schema())
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok((program, task))
}

fn print_generation(s: &GenerationSummary) {
    for r in &s.rows {
        println!(
            "gen {:>2}  {:<24} best {:>10.6}  mean {:>10.6}  invalid {:>2}  kt {}",
            r.generation, r.task, r.best_fitness, r.mean_fitness, r.invalid_count, r.kt_count
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn discover(
    config: Option<PathBuf>,
    seed: Option<u64>,
    provider: ProviderArgs,
    resume: Option<PathBuf>,
    profile: ProfileArg,
    workers: Option<usize>,
    replace_op: Vec<String>,
    disable_kt: bool,
    gmax: Option<usize>,
    tasks: Vec<String>,
    out: Option<PathBuf>,
) -> Outcome {
    let workers = workers.unwrap_or_else(|| workers_from_env(std::thread::available_parallelism().map_or(1, |n| n.get())));
    let discovery = if let Some(dir) = resume {
        let mut config = Discovery::load_config(&dir)?;
        provider.apply(&mut config);
        let p: Arc<dyn ChatProvider> = make_provider(&config.provider)?;
        Discovery::resume(&dir, p)?
    } else {
        let mut config = load_config(config.as_deref())?;
        if let Some(s) = seed {
            config.seed = s;
        }
        provider.apply(&mut config);
        for spec in &replace_op {
            let (from, to) = spec
                .split_once('=')
                .ok_or_else(|| Failure::Config(format!("--replace-op expects <op>=m0, got `{spec}`")))?;
            let from: OperatorTag = from.parse()?;
            let to: OperatorTag = to.parse()?;
            config.replace_ops.insert(from, to);
        }
        if disable_kt {
            config.disable_kt = true;
        }
        if let Some(g) = gmax {
            config.generations = g;
        }
        if !tasks.is_empty() {
            config.tasks = tasks.iter().map(|t| parse_task(t)).collect::<Result<_, _>>()?;
        }
        config.validate()?;
        let out = out.ok_or_else(|| Failure::Config("--out is required for a new run".into()))?;
        let p = make_provider(&config.provider)?;
        Discovery::create(config, p, &out)?
    };
    let result = discovery
        .with_evaluation(profile.into(), workers)?
        .on_generation(print_generation)
        .run()?;
    for (task, best) in &result.best {
        println!("best {task}: {} fitness {:.6}", best.id, best.fitness);
    }
    println!("run directory: {}", result.out.display());
    Ok(())
}

fn suite_and_budget(config: &RunConfig, profile: ProfileArg) -> Result<(reward_discovery::problems::ProblemSuite, reward_discovery::eval::RunBudget), Failure> {
    config.validate()?;
    let suite = make_suite(config.dimension, config.suite_seed).map_err(|e| Failure::Config(e.to_string()))?;
    Ok((suite, config.budget.resolve(profile.into())))
}

fn measure(reward: &RewardProgram, task: TaskId, config: &RunConfig, profile: ProfileArg, seed: u64) -> Result<FitnessReport, Failure> {
    let (suite, budget) = suite_and_budget(config, profile)?;
    evaluate_fitness(reward, &MetaTask::new(task), &suite, budget, evaluation_seed(seed)).map_err(|e| Failure::Eval(e.to_string()))
}

fn eval_reward(path: PathBuf, task: Option<String>, profile: ProfileArg, seed: u64, config: Option<PathBuf>, workers: Option<usize>) -> Outcome {
    let config = load_config(config.as_deref())?;
    let (reward, task) = load_reward(&path, task.as_deref())?;
    if let Some(w) = workers {
        rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global().ok();
    }
    let report = measure(&reward, task, &config, profile, seed)?;
    eprintln!(
        "{task}: fitness {} over {} test instances x {} runs",
        report.fitness,
        report.per_instance_medians.len(),
        report.score_matrix.first().map_or(0, Vec::len)
    );
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    match &report.invalid {
        Some(reason) => Err(Failure::Eval(format!("reward failed during evaluation: {reason}"))),
        None => Ok(()),
    }
}

#[allow(clippy::too_many_arguments)]
fn transfer(
    path: PathBuf,
    from: Option<String>,
    to: String,
    config: Option<PathBuf>,
    provider: ProviderArgs,
    seed: u64,
    profile: ProfileArg,
    out: Option<PathBuf>,
) -> Outcome {
    let mut config = load_config(config.as_deref())?;
    provider.apply(&mut config);
    let (source, from) = load_reward(&path, from.as_deref())?;
    let to = parse_task(&to)?;
    if from == to {
        return Err(Failure::Config("source and target task must differ".into()));
    }
    let llm = LlmClient::new(make_provider(&config.provider)?).with_max_attempts(config.max_attempts);
    let thought = format!("The reward used for {} ({}).", from, from.method_name());
    let adapted = adapt_reward(&llm, &thought, &source, from, to)?;
    let anchor = measure(&to.handcrafted_reward(), to, &config, profile, seed)?;
    let report = measure(&adapted.value, to, &config, profile, seed)?;
    let out = out.unwrap_or_else(|| path.with_extension(format!("{to}.rsl")));
    fs::write(&out, adapted.value.source()).map_err(|e| Failure::Config(format!("{}: {e}", out.display())))?;
    let summary = serde_json::json!({
        "source_task": from,
        "target_task": to,
        "adapted_file": out,
        "thought": adapted.thought,
        "anchor_fitness": anchor.fitness,
        "adapted_fitness": if report.is_valid() { serde_json::json!(report.fitness) } else { serde_json::Value::Null },
        "adapted_invalid": report.invalid,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    eprintln!("{to}: anchor {:.6}  adapted {}", anchor.fitness, report.fitness);
    match report.invalid {
        Some(reason) => Err(Failure::Eval(format!("adapted reward failed during evaluation: {reason}"))),
        None => Ok(()),
    }
}

fn run_report(run: PathBuf, compare: Vec<PathBuf>, out: Option<PathBuf>) -> Outcome {
    if !run.is_dir() {
        return Err(Failure::Config(format!("{}: no such run directory", run.display())));
    }
    let out = out.unwrap_or_else(|| run.clone());
    for p in report::write_reports(&run, &compare, &out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Discover {
            config,
            seed,
            provider,
            resume,
            profile,
            workers,
            replace_op,
            disable_kt,
            gmax,
            tasks,
            out,
        } => discover(config, seed, provider, resume, profile, workers, replace_op, disable_kt, gmax, tasks, out),
        Command::EvalReward {
            reward,
            task,
            profile,
            seed,
            config,
            workers,
        } => eval_reward(reward, task, profile, seed, config, workers),
        Command::Transfer {
            reward,
            from,
            to,
            config,
            provider,
            seed,
            profile,
            out,
        } => transfer(reward, from, to, config, provider, seed, profile, out),
        Command::Report { run, compare, out } => run_report(run, compare, out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, message) = f.message();
            eprintln!("error ({kind}): {message}");
            ExitCode::from(f.code())
        }
    }
}
