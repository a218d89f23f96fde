mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ilcl::automaton::to_dfa;
use ilcl::crl::{
    evaluate_policy, load_policy, metrics_from, read_jsonl_file, save_policy, train_policy, write_jsonl_file, CrlError,
    Trajectory,
};
use ilcl::envs::{gen_expert_demos, nav_features, randomize, EnvError, EnvSpec, NavEnv, NavTask, Split};
use ilcl::ilcl::{run, IlclError};
use ilcl::mining::{mine_with_report, Dataset, MiningError};
use ilcl::tl::{format_formula, parse_formula, parse_formula_with, robustness, FeatureNames, Formula, Trace};
use serde::Serialize;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("partial result: {0}")]
    Partial(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Partial(_) => 5,
        }
    }
}

impl From<CrlError> for CliError {
    fn from(e: CrlError) -> Self {
        match e {
            CrlError::Divergence { .. } => CliError::Divergence(e.to_string()),
            CrlError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MiningError> for CliError {
    fn from(e: MiningError) -> Self {
        match e {
            MiningError::Config(_) | MiningError::ZeroBudget => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match &e {
            EnvError::Crl(m) if m.contains("diverged") => CliError::Divergence(e.to_string()),
            EnvError::UnknownTask(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<IlclError> for CliError {
    fn from(e: IlclError) -> Self {
        match e {
            IlclError::Crl(c) => c.into(),
            IlclError::Mining(m) => m.into(),
            IlclError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Parser)]
#[command(name = "ilcl", version, about = "Learn temporal-logic constraints from demonstrations")]
struct Cli {
    /// Rollout workers. Runs are single-worker; larger values are accepted
    /// and ignored with a warning.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an expert on a ground-truth constraint and write demonstrations.
    GenDemos {
        #[arg(long)]
        task: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Layout to use instead of a randomized training layout.
        #[arg(long)]
        env: Option<PathBuf>,
    },
    /// Mine a constraint separating demonstrations from negatives.
    Mine {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        negatives: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a constrained policy on a layout.
    Train {
        #[arg(long)]
        env: PathBuf,
        /// File holding the constraint formula.
        #[arg(long)]
        constraint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Trajectories to seed the replay buffer with.
        #[arg(long)]
        warm_start: Option<PathBuf>,
    },
    /// Run the full constraint-learning game.
    Ilcl {
        #[arg(long)]
        task: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Demonstrations to learn from; generated when absent.
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Layout the demonstrations were recorded on.
        #[arg(long)]
        env: Option<PathBuf>,
    },
    /// Print VR, REW and TR as JSON for a policy or a trajectory file.
    Eval {
        /// Ground-truth formula, or a task name (nav1, nav2).
        #[arg(long)]
        gt: String,
        #[arg(long, required_unless_present = "trajs")]
        policy: Option<PathBuf>,
        #[arg(long, requires = "policy")]
        env: Option<PathBuf>,
        #[arg(long, conflicts_with = "policy")]
        trajs: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the robustness of each trajectory in a file.
    Robustness {
        #[arg(long)]
        formula: String,
        /// JSON lines: trajectories or bare arrays of states.
        #[arg(long)]
        traj: PathBuf,
    },
    /// Print the automaton of a formula as graph text.
    Dfa {
        #[arg(long)]
        formula: String,
    },
}

/// Parses `text` with `sN` names, falling back to navigation feature names.
fn parse_any(text: &str) -> Result<Formula, CliError> {
    parse_formula(text).or_else(|first| {
        parse_formula_with(text, &nav_features())
            .map_err(|_| CliError::Data(format!("cannot parse formula '{text}': {first}")))
    })
}

fn gt_formula(text: &str) -> Result<Formula, CliError> {
    match NavTask::parse(text) {
        Ok(task) => Ok(task.gt()),
        Err(_) => parse_any(text),
    }
}

fn task(name: &str) -> Result<NavTask, CliError> {
    NavTask::parse(name).map_err(|e| CliError::Config(e.to_string()))
}

fn read_spec(path: &Path) -> Result<EnvSpec, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let spec: EnvSpec = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(data)?;
    fs::write(path, text + "\n").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_trajs(path: &Path) -> Result<Vec<Trajectory>, CliError> {
    read_jsonl_file(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn traces(ts: &[Trajectory]) -> Result<Vec<Trace>, CliError> {
    ts.iter().map(|t| t.trace().map_err(CliError::from)).collect()
}

fn check_dims(f: &Formula, dim: usize) -> Result<(), CliError> {
    match f.max_dim() {
        Some(d) if d >= dim => Err(CliError::Data(format!(
            "formula refers to state dimension {d}, trajectories have {dim}"
        ))),
        _ => Ok(()),
    }
}

fn layout(cfg: &RunConfig, env: Option<&Path>) -> Result<EnvSpec, CliError> {
    match env {
        Some(p) => read_spec(p),
        None => Ok(randomize(cfg.layout_seed.unwrap_or(0), Split::Train)),
    }
}

fn gen_demos(task_name: &str, n: usize, out: &Path, cfg: Option<&Path>, env: Option<&Path>) -> Result<(), CliError> {
    let task = task(task_name)?;
    if n == 0 {
        return Err(CliError::Config("--n must be positive".into()));
    }
    let rc = RunConfig::load(cfg)?;
    let spec = layout(&rc, env)?;
    let demo_cfg = ilcl::envs::DemoConfig { n, ..rc.demo_config() };
    let set = gen_expert_demos(&spec, &task.gt(), task, &demo_cfg)?;
    create_dir(out)?;
    write_json(&out.join("env.json"), &spec)?;
    write_jsonl_file(&out.join("demos.jsonl"), &set.demos)?;
    write_json(
        &out.join("demos_meta.json"),
        &serde_json::json!({
            "task": task.name(),
            "requested": n,
            "collected": set.demos.len(),
            "partial": set.partial,
            "reward_threshold": set.reward_threshold,
            "quantile": demo_cfg.quantile,
            "pool_rewards": set.pool_rewards,
            "spec_hash": spec.hash(),
            "config": rc,
        }),
    )?;
    println!("{} demonstrations written to {}", set.demos.len(), out.join("demos.jsonl").display());
    if set.partial {
        return Err(CliError::Partial(format!("collected {} of {n} demonstrations", set.demos.len())));
    }
    Ok(())
}

fn mine(demos: &Path, negatives: &Path, cfg: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let rc = RunConfig::load(cfg)?;
    let experts = read_trajs(demos)?;
    let negs = read_trajs(negatives)?;
    let dataset = Dataset::new(traces(&experts)?, traces(&negs)?)?;
    let (best, report) = mine_with_report(&dataset, &rc.mining, &[])?;
    let text = format_formula(&best.formula());
    create_dir(out)?;
    fs::write(out.join("formula.txt"), format!("{text}\n")).map_err(data)?;
    let log = fs::File::create(out.join("generations.jsonl")).map_err(data)?;
    report.write_jsonl(std::io::BufWriter::new(log)).map_err(data)?;
    write_json(
        &out.join("report.json"),
        &serde_json::json!({
            "formula": text,
            "fitness": best.fitness,
            "reg_fitness": best.reg_fitness,
            "node_count": best.node_count,
            "selected_dims": report.selected_dims,
            "generations": report.generations.len(),
            "repairs": report.repairs,
            "rejected": report.rejected,
            "config": rc.mining,
        }),
    )?;
    println!("{text}");
    println!("fitness {}", best.fitness);
    Ok(())
}

fn train(env: &Path, constraint: &Path, cfg: Option<&Path>, out: &Path, warm: Option<&Path>) -> Result<(), CliError> {
    let rc = RunConfig::load(cfg)?;
    let spec = read_spec(env)?;
    let text = fs::read_to_string(constraint).map_err(|e| CliError::Data(format!("{}: {e}", constraint.display())))?;
    let phi = parse_any(text.trim())?;
    check_dims(&phi, 10)?;
    let warm = match warm {
        Some(p) => read_trajs(p)?,
        None => Vec::new(),
    };
    let mut nav = NavEnv::new(spec)?;
    let crl = ilcl::crl::CrlConfig { seed: rc.crl.seed ^ rc.seed(), ..rc.crl.clone() };
    let (policy, report) = train_policy(&mut nav, &phi, &warm, &crl)?;
    create_dir(out)?;
    save_policy(&policy, &crl, &out.join("policy.ckpt"))?;
    let mut summary = serde_json::to_value(&report).map_err(data)?;
    if let Some(obj) = summary.as_object_mut() {
        obj.remove("lambda_history");
        obj.insert("constraint".into(), format_formula(&phi).into());
    }
    write_json(&out.join("train.json"), &summary)?;
    println!("policy written to {}", out.join("policy.ckpt").display());
    Ok(())
}

fn ilcl_cmd(task_name: &str, out: &Path, cfg: Option<&Path>, demos: Option<&Path>, env: Option<&Path>) -> Result<(), CliError> {
    let task = task(task_name)?;
    let rc = RunConfig::load(cfg)?;
    let spec = layout(&rc, env)?;
    create_dir(out)?;
    let experts = match demos {
        Some(p) => read_trajs(p)?,
        None => {
            let set = gen_expert_demos(&spec, &task.gt(), task, &rc.demo_config())?;
            if set.partial {
                log::warn!("continuing with {} demonstrations", set.demos.len());
            }
            set.demos
        }
    };
    write_json(&out.join("env.json"), &spec)?;
    let mut nav = NavEnv::new(spec)?;
    let outcome = run(&mut nav, &experts, &rc.ilcl_config(), Some(out))?;
    let gt = task.gt();
    let metrics = evaluate_policy(&outcome.policy, std::slice::from_mut(&mut nav), &gt, 100, rc.seed())?;
    let accepted = experts
        .iter()
        .map(|e| robustness(&e.trace()?, &outcome.best, 0).map_err(CrlError::from))
        .collect::<Result<Vec<_>, _>>()?
        .iter()
        .filter(|r| **r > 0.0)
        .count();
    let summary = serde_json::json!({
        "best_constraint": format_formula(&outcome.best),
        "best_iteration": outcome.best_index + 1,
        "experts_accepted": accepted,
        "experts": experts.len(),
        "gt_metrics": metrics,
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).map_err(data)?);
    Ok(())
}

fn eval(gt: &str, policy: Option<&Path>, env: Option<&Path>, trajs: Option<&Path>, episodes: usize, seed: u64) -> Result<(), CliError> {
    let gt = gt_formula(gt)?;
    let metrics = match (policy, trajs) {
        (_, Some(t)) => {
            let ts = read_trajs(t)?;
            let mut rhos = Vec::with_capacity(ts.len());
            for tr in &ts {
                check_dims(&gt, tr.state_dim())?;
                rhos.push(robustness(&tr.trace()?, &gt, 0).map_err(CrlError::from)?);
            }
            metrics_from(&rhos, &ts.iter().map(Trajectory::total_reward).collect::<Vec<_>>())
        }
        (Some(p), None) => {
            let (policy, _) = load_policy(p)?;
            let spec = match env {
                Some(e) => read_spec(e)?,
                None => return Err(CliError::Config("--env is required with --policy".into())),
            };
            check_dims(&gt, policy.state_dim())?;
            let mut nav = NavEnv::new(spec)?;
            evaluate_policy(&policy, std::slice::from_mut(&mut nav), &gt, episodes, seed)?
        }
        (None, None) => return Err(CliError::Config("one of --policy or --trajs is required".into())),
    };
    println!("{}", serde_json::to_string(&metrics).map_err(data)?);
    Ok(())
}

fn robustness_cmd(formula: &str, traj: &Path) -> Result<(), CliError> {
    let phi = parse_any(formula)?;
    let text = fs::read_to_string(traj).map_err(|e| CliError::Data(format!("{}: {e}", traj.display())))?;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| CliError::Data(format!("line {}: {m}", i + 1));
        let states: Vec<Vec<f64>> = match serde_json::from_str::<Trajectory>(line) {
            Ok(t) => t.states,
            Err(_) => serde_json::from_str(line).map_err(|e| err(e.to_string()))?,
        };
        let trace = Trace::new(states).map_err(|e| err(e.to_string()))?;
        check_dims(&phi, trace.dim())?;
        let rho = robustness(&trace, &phi, 0).map_err(|e| err(e.to_string()))?;
        println!("{rho}");
    }
    Ok(())
}

fn dfa_cmd(formula: &str) -> Result<(), CliError> {
    let (phi, names) = match parse_formula(formula) {
        Ok(f) => (f, FeatureNames::indexed()),
        Err(_) => (parse_any(formula)?, nav_features()),
    };
    let dfa = to_dfa(&phi).map_err(data)?;
    print!("{}", dfa.dump(&names));
    println!("// {} states", dfa.n_states());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if cli.workers > 1 {
        log::warn!("rollouts run on a single worker; --workers {} ignored", cli.workers);
    }
    match cli.command {
        Command::GenDemos { task, n, out, config, env } => gen_demos(&task, n, &out, config.as_deref(), env.as_deref()),
        Command::Mine { demos, negatives, config, out } => mine(&demos, &negatives, config.as_deref(), &out),
        Command::Train { env, constraint, config, out, warm_start } => {
            train(&env, &constraint, config.as_deref(), &out, warm_start.as_deref())
        }
        Command::Ilcl { task, out, config, demos, env } => {
            ilcl_cmd(&task, &out, config.as_deref(), demos.as_deref(), env.as_deref())
        }
        Command::Eval { gt, policy, env, trajs, episodes, seed } => {
            eval(&gt, policy.as_deref(), env.as_deref(), trajs.as_deref(), episodes, seed)
        }
        Command::Robustness { formula, traj } => robustness_cmd(&formula, &traj),
        Command::Dfa { formula } => dfa_cmd(&formula),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
