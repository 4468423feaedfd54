//! `impirl`: demo generation, training, transfer sweeps, gain estimation and
//! evaluation driven by one experiment config.

pub mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use impedance_irl::action::ActionSpace;
use impedance_irl::airl::{self, AirlState, TrainOutput};
use impedance_irl::approx::{Checkpoint, GaussianPolicy};
use impedance_irl::bc::{action_error, bc_fit, constant_gain_policy};
use impedance_irl::envsim::{EnvSpec, ScenarioPerturbation};
use impedance_irl::evalharness::transfer::{
    evaluate_policy, expert_reference, find_scenario, render_table, run_transfer_suite, save_reports_csv,
    sweep_scenarios, write_deviations_csv, write_trajectory_csv, Artifact, Family, Method, SuiteContext, TableValue,
};
use impedance_irl::experts::{collect_demos, Expert, NoisePolicy};
use impedance_irl::impedance::GainBounds;
use impedance_irl::rng::{self, child_seed};
use impedance_irl::sysid::{estimate_trajectory, recovery_check, save_estimates_csv, smooth, RecoveryCheck};
use impedance_irl::trajectory::DemoSet;

use config::{parse_override, set_path, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "impirl", version, about = "Variable impedance skill learning on simulated contact tasks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment config (TOML); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; every random stream derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Arbitrary config override, `section.key=value` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Task: peg-in-hole | cup-on-plate | point-reach.
    #[arg(long, global = true)]
    pub task: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out the task expert and write a demo file.
    GenDemos {
        #[arg(long)]
        count: Option<usize>,
        /// Log-normal stiffness noise (0 for noiseless).
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train one method on the demo file.
    Train {
        /// Method label, e.g. gain-airl, force-bc-his, constant-gain.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate trained methods across perturbed scenarios.
    Transfer {
        /// tilt | mesh | start.
        #[arg(long)]
        sweep: Option<String>,
        /// Scenario label (repeatable); replaces the sweep.
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        /// Method label (repeatable).
        #[arg(long = "method")]
        methods: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Directory with one trained run per method label.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Sliding-window gain estimation on a demo file.
    Estimate {
        /// Demo file (default: the configured one).
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Evaluate one trained policy, without re-optimization, next to the expert.
    Eval {
        #[arg(long)]
        method: Option<String>,
        /// Scenario label (repeatable; default: training scenario).
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
    },
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config: exit 1.
    Usage(String),
    /// Anything that fails while running: exit 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<impedance_irl::Error> for CliError {
    fn from(e: impedance_irl::Error) -> Self {
        match e {
            impedance_irl::Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

/// Merge config file, global flags and command flags into a resolved config.
pub fn resolve_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let g = &cli.global;
    let mut table = match &g.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    let mut set = |k: &str, v: toml::Value| set_path(&mut table, k, v);
    for o in &g.overrides {
        let (k, v) = parse_override(o).map_err(usage)?;
        set(&k, v);
    }
    let int = |v: usize| toml::Value::Integer(v as i64);
    let path = |p: &Path| toml::Value::String(p.display().to_string());
    if let Some(t) = &g.task {
        set("task", toml::Value::String(t.clone()));
    }
    if let Some(s) = g.seed {
        let s = i64::try_from(s).map_err(|_| usage("seed must fit in 63 bits"))?;
        set("seed", toml::Value::Integer(s));
    }
    if let Some(o) = &g.out {
        set("out", path(o));
    }
    let method_keys = |set: &mut dyn FnMut(&str, toml::Value), label: &str| -> CliResult<()> {
        let m: Method = label.parse()?;
        set("method", toml::Value::try_from(m.family).expect("enum serializes"));
        set("action_space", toml::Value::String(m.action.label().into()));
        set("observation", toml::Value::String(m.obs.label().into()));
        Ok(())
    };
    match &cli.command {
        Command::GenDemos { count, noise } => {
            if let Some(n) = count {
                set("demos.count", int(*n));
            }
            if let Some(s) = noise {
                set("demos.noise_sigma", toml::Value::Float(*s));
            }
        }
        Command::Train { method, iterations } => {
            if let Some(m) = method {
                method_keys(&mut set, m)?;
            }
            if let Some(n) = iterations {
                set("airl.iterations", int(*n));
            }
        }
        Command::Transfer {
            sweep,
            scenarios,
            methods,
            episodes,
            artifacts,
        } => {
            if let Some(s) = sweep {
                set("transfer.sweep", toml::Value::String(s.clone()));
            }
            if !scenarios.is_empty() {
                set("transfer.scenarios", toml::Value::try_from(scenarios).expect("strings"));
            }
            if !methods.is_empty() {
                set("transfer.methods", toml::Value::try_from(methods).expect("strings"));
            }
            if let Some(n) = episodes {
                set("transfer.episodes", int(*n));
            }
            if let Some(a) = artifacts {
                set("transfer.artifacts", path(a));
            }
        }
        Command::Estimate { demos, window, stride } => {
            if let Some(d) = demos {
                set("demos.path", path(d));
            }
            if let Some(w) = window {
                set("estimate.window", int(*w));
            }
            if let Some(s) = stride {
                set("estimate.stride", int(*s));
            }
        }
        Command::Eval {
            method,
            scenarios,
            episodes,
        } => {
            if let Some(m) = method {
                method_keys(&mut set, m)?;
            }
            if !scenarios.is_empty() {
                set("transfer.scenarios", toml::Value::try_from(scenarios).expect("strings"));
            }
            if let Some(n) = episodes {
                set("transfer.episodes", int(*n));
            }
        }
    }
    ExperimentConfig::resolve(table).map_err(usage)
}

/// Parse `args` and run; returns the process exit code. Progress goes to
/// stderr, results to stdout.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve_config(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(usage("--jobs must be positive"));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Runtime(e.to_string()))?;
    let force = cli.global.force;
    pool.install(|| match &cli.command {
        Command::GenDemos { .. } => gen_demos(&cfg, force),
        Command::Train { .. } => train(&cfg, force),
        Command::Transfer { .. } => transfer(&cfg, force),
        Command::Estimate { .. } => estimate(&cfg, force),
        Command::Eval { .. } => eval(&cfg, force),
    })
}

fn refuse_existing(path: &Path, force: bool) -> CliResult<()> {
    if path.exists() && !force {
        return Err(usage(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn env_spec(cfg: &ExperimentConfig) -> CliResult<EnvSpec> {
    Ok(EnvSpec::from_config(&cfg.env)?)
}

/// The task's training scenario.
fn training_scenario(cfg: &ExperimentConfig) -> CliResult<ScenarioPerturbation> {
    use impedance_irl::envsim::TaskKind;
    let sweep = match cfg.task {
        TaskKind::PegInHole => impedance_irl::evalharness::transfer::Sweep::Tilt,
        TaskKind::CupOnPlate => impedance_irl::evalharness::transfer::Sweep::Start,
        TaskKind::PointReach => return Ok(ScenarioPerturbation::none()),
    };
    Ok(sweep_scenarios(&cfg.env, sweep)?
        .into_iter()
        .find(|s| s.training)
        .unwrap_or_else(ScenarioPerturbation::none))
}

/// Env the learners train in.
fn training_env(cfg: &ExperimentConfig) -> CliResult<EnvSpec> {
    Ok(env_spec(cfg)?.perturbed(&training_scenario(cfg)?)?)
}

fn load_demos(cfg: &ExperimentConfig) -> CliResult<DemoSet> {
    let path = cfg.demo_path();
    let demos = DemoSet::read(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    if demos.task != cfg.task {
        return Err(CliError::Runtime(format!(
            "{} holds {} demos, config task is {}",
            path.display(),
            demos.task,
            cfg.task
        )));
    }
    Ok(demos)
}

fn method_of(cfg: &ExperimentConfig) -> CliResult<Method> {
    Ok(Method::new(cfg.method, cfg.action_space, cfg.observation)?)
}

fn gen_demos(cfg: &ExperimentConfig, force: bool) -> CliResult<()> {
    let path = cfg.demo_path();
    refuse_existing(&path, force)?;
    let spec = training_env(cfg)?;
    let expert = Expert::for_env(&spec);
    let noise = (cfg.demos.noise_sigma > 0.0).then_some(NoisePolicy {
        sigma: cfg.demos.noise_sigma,
    });
    let mut demos = collect_demos(&spec, &expert, cfg.demos.count, noise, child_seed(cfg.seed, "gen-demos", 0))?;
    demos.config_hash = cfg.hash();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    demos.write(&path)?;
    cfg.record(&cfg.out)?;
    let ok = demos.trajectories.iter().filter(|t| t.success).count();
    println!(
        "wrote {} {} demos from the {} expert to {} ({ok}/{} successful)",
        demos.count(),
        cfg.task,
        expert.name(),
        path.display(),
        demos.count()
    );
    Ok(())
}

fn checkpoint_meta(ck: Checkpoint, cfg: &ExperimentConfig, method: &Method) -> Checkpoint {
    ck.with_meta("task", cfg.task)
        .with_meta("method", method)
        .with_meta("action_space", cfg.action_space)
        .with_meta("observation", cfg.observation.label())
}

fn train(cfg: &ExperimentConfig, force: bool) -> CliResult<()> {
    let method = method_of(cfg)?;
    let demos = load_demos(cfg)?;
    let spec = training_env(cfg)?;
    let space = ActionSpace::standard(cfg.action_space, &spec, demos.with_factor);
    let obs_dim = cfg.observation.obs_dim(spec.dof);
    if demos.dof() != spec.dof {
        return Err(CliError::Runtime(format!(
            "demo dimension {} does not match the {}-DOF env",
            demos.dof(),
            spec.dof
        )));
    }
    let dir = cfg.out.join(method.label());
    let done = dir.join("policy-final.json");
    refuse_existing(&done, force)?;
    if dir.exists() {
        // stale logs would otherwise be appended to
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    cfg.record(&dir)?;
    let seed = child_seed(cfg.seed, &format!("train {}", method.label()), 0);
    match cfg.method {
        Family::Airl => {
            let mut state = AirlState::new(&demos, space, cfg.observation, &cfg.airl, &cfg.trpo, seed)?;
            let out = TrainOutput { dir: Some(dir.clone()) };
            let total = cfg.airl.iterations;
            let log = airl::train(&mut state, &spec, &cfg.airl, &cfg.trpo, &cfg.score, seed, &out, |_, row| {
                eprintln!(
                    "[{}/{total}] success {:.3} score {:.4} disc-loss {:.4} kl {:.5}",
                    row.iteration + 1,
                    row.success_rate,
                    row.mean_score,
                    row.disc_loss.unwrap_or(f64::NAN),
                    row.kl
                );
                true
            })?;
            if let Some(last) = log.last() {
                println!(
                    "{}: {} iterations, final batch success {:.3}, score {:.4}; checkpoints in {}",
                    method,
                    log.len(),
                    last.success_rate,
                    last.mean_score,
                    dir.display()
                );
            }
        }
        Family::Bc => {
            let mut r = rng::stream(seed, "bc", 0);
            let init = GaussianPolicy::init(obs_dim, &cfg.bc.hidden, space.raw_dim(), &mut r)?;
            let (policy, report) = bc_fit(&demos, &space, cfg.observation, &init, &cfg.bc, &mut r)?;
            write_bc_log(&dir.join("bc_log.csv"), &report.train_nll, &report.val_nll)?;
            checkpoint_meta(Checkpoint::from_policy(&policy), cfg, &method).save(&done)?;
            let pairs = demos.pairs(&space, cfg.observation.is_history())?;
            println!(
                "{}: {} epochs (best {:?}), demo action error {:.4}; policy in {}",
                method,
                report.train_nll.len(),
                report.best_epoch,
                action_error(&policy, &space, &pairs)?,
                done.display()
            );
        }
        Family::ConstantGain => {
            let policy = constant_gain_policy(&demos, &space, cfg.observation)?;
            checkpoint_meta(Checkpoint::from_policy(&policy), cfg, &method).save(&done)?;
            println!("{method}: mean demo gains fitted; policy in {}", done.display());
        }
    }
    Ok(())
}

fn write_bc_log(path: &Path, train: &[f64], val: &[f64]) -> CliResult<()> {
    let mut s = String::from("epoch,train_nll,val_nll\n");
    for (i, (t, v)) in train.iter().zip(val).enumerate() {
        s += &format!("{i},{t},{v}\n");
    }
    fs::write(path, s)?;
    Ok(())
}

/// Load the artifact of `method` from `root/<label>/`, `None` when absent.
fn load_artifact(root: &Path, method: &Method) -> CliResult<Option<Artifact>> {
    let dir = root.join(method.label());
    let (file, reward) = match method.family {
        Family::Airl => ("reward-final.json", true),
        _ => ("policy-final.json", false),
    };
    let path = dir.join(file);
    if !path.exists() {
        return Ok(None);
    }
    let ck = Checkpoint::load(&path)?;
    Ok(Some(if reward {
        Artifact::Reward(ck.reward()?)
    } else {
        Artifact::Policy(ck.policy()?)
    }))
}

fn scenarios_of(cfg: &ExperimentConfig) -> CliResult<Vec<ScenarioPerturbation>> {
    if cfg.transfer.scenarios.is_empty() {
        Ok(sweep_scenarios(&cfg.env, cfg.transfer.sweep)?)
    } else {
        let train = training_scenario(cfg)?;
        cfg.transfer
            .scenarios
            .iter()
            .map(|l| {
                let s = find_scenario(&cfg.env, l)?;
                let same = s.tilt_deg == train.tilt_deg && s.initial_position == train.initial_position;
                Ok(if same && s.mesh_scale.is_none() { s.marked_training() } else { s })
            })
            .collect()
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii())
        .map(|c| if c.is_ascii_alphanumeric() || "+-.".contains(c) { c } else { '_' })
        .collect()
}

fn transfer(cfg: &ExperimentConfig, force: bool) -> CliResult<()> {
    let methods: Vec<Method> = cfg
        .transfer
        .methods
        .iter()
        .map(|m| m.parse::<Method>().map_err(CliError::from))
        .collect::<CliResult<_>>()?;
    let scenarios = scenarios_of(cfg)?;
    let dir = cfg.out.join("transfer");
    let csv_path = dir.join("transfer.csv");
    refuse_existing(&csv_path, force)?;
    let root = cfg.artifacts_dir();
    let mut artifacts = Vec::new();
    let mut missing = Vec::new();
    for m in &methods {
        let a = load_artifact(&root, m)?;
        if a.is_none() {
            missing.push(m.label());
        }
        artifacts.push((*m, a));
    }
    let base = env_spec(cfg)?;
    let expert = Expert::for_env(&base);
    let suite = cfg.transfer.suite();
    let ctx = SuiteContext {
        env: &cfg.env,
        expert: &expert,
        weights: &cfg.score,
        trpo: &cfg.trpo,
        suite: &suite,
        seed: child_seed(cfg.seed, "transfer", 0),
    };
    let (reports, cells) = run_transfer_suite(&ctx, &artifacts, &scenarios, |r| {
        eprintln!(
            "{} @ {}: success {:.3} rpd {:.3}",
            r.method, r.scenario, r.success_rate, r.relative_perf_diff
        )
    })?;
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    let traj_dir = dir.join("trajectories");
    fs::create_dir_all(&traj_dir)?;
    cfg.record(&dir)?;
    save_reports_csv(&csv_path, &reports)?;
    write_deviations_csv(fs::File::create(dir.join("deviations.csv"))?, &cells)?;
    for c in &cells {
        for (i, ep) in c.episodes.iter().enumerate() {
            let name = format!("{}__{}__{i}.csv", slug(&c.method), slug(&c.scenario));
            write_trajectory_csv(fs::File::create(traj_dir.join(name))?, ep)?;
        }
    }
    let table = render_table(&reports, TableValue::for_task(cfg.task));
    fs::write(dir.join("table.txt"), &table)?;
    print!("{table}");
    if !missing.is_empty() {
        return Err(CliError::Runtime(format!(
            "no trained artifacts under {} for: {}",
            root.display(),
            missing.join(", ")
        )));
    }
    Ok(())
}

fn estimate(cfg: &ExperimentConfig, force: bool) -> CliResult<()> {
    let out = cfg.out.join("estimates.csv");
    refuse_existing(&out, force)?;
    let demos = load_demos(cfg)?;
    if demos.trajectories.is_empty() {
        return Err(CliError::Runtime("demo file holds no trajectories".into()));
    }
    let spec = training_env(cfg)?;
    let bounds = GainBounds::standard(&spec.rotational, false);
    let est = &cfg.estimate;
    let mut per_episode = Vec::with_capacity(demos.count());
    let mut check = RecoveryCheck::default();
    let mut flagged = 0usize;
    for traj in &demos.trajectories {
        let e = estimate_trajectory(traj, est.window, est.stride, Some(&bounds))?;
        check = check.merge(recovery_check(&spec, traj, &e, est.window, est.stride, demos.with_factor)?);
        flagged += e.iter().filter(|w| w.flags.iter().any(|f| f.code() != "ok")).count();
        per_episode.push(if est.smooth > 1 { smooth(&e, est.smooth) } else { e });
    }
    fs::create_dir_all(&cfg.out)?;
    save_estimates_csv(&out, &per_episode)?;
    cfg.record(&cfg.out)?;
    let windows: usize = per_episode.iter().map(Vec::len).sum();
    println!("{windows} windows over {} trajectories -> {}", demos.count(), out.display());
    println!("windows with a carried parameter: {flagged}");
    if demos.action_dim() > 0 {
        println!(
            "vs recorded gains: {} windows compared ({} spanning gain changes or clamped force skipped), \
             max relative error k {:.3e}, b {:.3e}",
            check.windows_compared, check.windows_skipped, check.max_rel_err_k, check.max_rel_err_b
        );
    }
    Ok(())
}

fn eval(cfg: &ExperimentConfig, force: bool) -> CliResult<()> {
    let method = method_of(cfg)?;
    let dir = cfg.artifacts_dir().join(method.label());
    let out = dir.join("eval.csv");
    refuse_existing(&out, force)?;
    let ck = Checkpoint::load(&dir.join("policy-final.json"))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let policy = ck.policy()?;
    let scenarios = if cfg.transfer.scenarios.is_empty() {
        vec![training_scenario(cfg)?]
    } else {
        scenarios_of(cfg)?
    };
    let base = env_spec(cfg)?;
    let expert = Expert::for_env(&base);
    // demos, and so the gain layout, come from this expert
    let with_factor = expert.with_factor();
    let mut rows = String::from("method,scenario,episodes,success_rate,mean_score,expert_success_rate,expert_score\n");
    for s in &scenarios {
        let spec = base.perturbed(s)?;
        let space = ActionSpace::standard(cfg.action_space, &spec, with_factor);
        let seed = child_seed(child_seed(cfg.seed, "eval", 0), &s.label, 0);
        let (sum, _) = evaluate_policy(&spec, &policy, &space, cfg.observation, &cfg.score, cfg.transfer.episodes, seed)?;
        let exp = expert_reference(&spec, &expert, &cfg.score, cfg.transfer.episodes, seed)?;
        println!(
            "{method} @ {}: success {:.3} score {:.5} | expert success {:.3} score {:.5}",
            s.column_label(),
            sum.success_rate,
            sum.mean_score,
            exp.success_rate,
            exp.mean_score
        );
        rows += &format!(
            "{method},{},{},{},{},{},{}\n",
            s.column_label(),
            sum.episodes,
            sum.success_rate,
            sum.mean_score,
            exp.success_rate,
            exp.mean_score
        );
    }
    fs::write(&out, rows)?;
    Ok(())
}
