//! The constraint-learning game: alternate temporal-logic mining against the
//! current trajectory pool with constrained policy training under the mined
//! constraint, then keep the constraint whose policy best imitates the
//! experts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crl::{
    read_jsonl_file, sample_zero_violation, save_policy, train_policy, write_jsonl_file, CrlConfig, CrlError,
    LagrangianPolicy, Trajectory,
};
use crate::envs::Env;
use crate::mining::{fitness, mine_with_report, Dataset, MiningConfig, MiningError};
use crate::tl::{format_formula, parse_formula, robustness, Formula, ParamVector, Trace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IlclError {
    #[error("no expert demonstrations")]
    NoExperts,
    #[error("invalid ILCL config: {0}")]
    Config(String),
    #[error("mining found no constraint separating experts from the first negatives (fitness 0)")]
    NoSeparation,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("audit log line {line}: {message}")]
    Audit { line: usize, message: String },
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error(transparent)]
    Crl(#[from] CrlError),
}

fn io(e: impl std::fmt::Display) -> IlclError {
    IlclError::Io(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlclConfig {
    /// Game iterations N.
    pub iterations: usize,
    /// Rollouts of the unconstrained policy used as iteration-0 negatives.
    pub bootstrap_rollouts: usize,
    /// Zero-violation trajectories sampled per iteration.
    pub samples_per_iteration: usize,
    /// Rollout cap per sampling call.
    pub sample_attempts: usize,
    /// Action samples per expert state when scoring candidates.
    pub select_samples: usize,
    pub seed: u64,
    pub mining: MiningConfig,
    pub crl: CrlConfig,
    /// Overrides `crl` for the unconstrained bootstrap policy.
    pub bootstrap_crl: Option<CrlConfig>,
}

impl Default for IlclConfig {
    fn default() -> Self {
        IlclConfig {
            iterations: 3,
            bootstrap_rollouts: 20,
            samples_per_iteration: 20,
            sample_attempts: 500,
            select_samples: 8,
            seed: 0,
            mining: MiningConfig::default(),
            crl: CrlConfig::default(),
            bootstrap_crl: None,
        }
    }
}

impl IlclConfig {
    pub fn validate(&self) -> Result<(), IlclError> {
        if self.iterations == 0 || self.bootstrap_rollouts == 0 || self.select_samples == 0 {
            return Err(IlclError::Config("iterations, bootstrap_rollouts and select_samples must be positive".into()));
        }
        self.mining.validate()?;
        self.crl.validate()?;
        if let Some(c) = &self.bootstrap_crl {
            c.validate()?;
        }
        Ok(())
    }
}

/// What happened in one game iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub constraint: String,
    pub fitness: f64,
    pub reg_fitness: f64,
    pub node_count: usize,
    pub mining_generations: usize,
    /// Fraction of expert demonstrations with ρ > 0 under the constraint.
    pub expert_acceptance: f64,
    pub negatives: usize,
    pub final_lambda: f64,
    pub train_episodes: usize,
    pub train_violation_rate: f64,
    pub sampled: usize,
    pub sample_attempts: usize,
    pub sample_partial: bool,
    pub wall_time_s: f64,
}

/// State of the game after k iterations.
#[derive(Debug, Clone)]
pub struct GameState {
    pub k: usize,
    pub constraints: Vec<Formula>,
    pub policies: Vec<LagrangianPolicy>,
    /// Ξ_0 (bootstrap negatives), then Ξ_1..Ξ_k.
    pub pool: Vec<Vec<Trajectory>>,
    pub experts: Vec<Trajectory>,
    pub records: Vec<IterationRecord>,
}

impl GameState {
    pub fn pool_size(&self) -> usize {
        self.pool.iter().map(Vec::len).sum()
    }

    pub fn negatives(&self) -> impl Iterator<Item = &Trajectory> {
        self.pool.iter().flatten()
    }
}

#[derive(Debug, Clone)]
pub struct IlclOutcome {
    pub best_index: usize,
    pub best: Formula,
    pub policy: LagrangianPolicy,
    /// Imitation error of every candidate policy.
    pub selection_errors: Vec<f64>,
    pub state: GameState,
}

/// One replayable audit entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    Bootstrap { rollouts: usize, file: String },
    Mine { k: usize, constraint: String, fitness: f64, experts: String, negatives: Vec<String> },
    Train { k: usize, final_lambda: f64, episodes: usize, checkpoint: Option<String> },
    Sample { k: usize, sampled: usize, attempts: usize, partial: bool, file: String, min_rho: Option<f64> },
    Select { errors: Vec<f64>, best: usize, constraint: String },
}

struct RunDir {
    root: PathBuf,
    audit: BufWriter<fs::File>,
}

impl RunDir {
    fn create(root: &Path, cfg: &IlclConfig) -> Result<Self, IlclError> {
        for sub in ["constraints", "policies", "trajs"] {
            fs::create_dir_all(root.join(sub)).map_err(io)?;
        }
        let run = serde_json::json!({ "config": cfg, "config_hash_crl": cfg.crl.hash() });
        fs::write(root.join("run.json"), serde_json::to_string_pretty(&run).map_err(io)?).map_err(io)?;
        let audit = BufWriter::new(fs::File::create(root.join("audit.jsonl")).map_err(io)?);
        Ok(RunDir { root: root.to_path_buf(), audit })
    }

    fn log(&mut self, e: &AuditEvent) -> Result<(), IlclError> {
        serde_json::to_writer(&mut self.audit, e).map_err(io)?;
        self.audit.write_all(b"\n").map_err(io)?;
        self.audit.flush().map_err(io)
    }

    fn trajs(&self, name: &str, t: &[Trajectory]) -> Result<String, IlclError> {
        let rel = format!("trajs/{name}.jsonl");
        write_jsonl_file(&self.root.join(&rel), t)?;
        Ok(rel)
    }
}

fn traces(ts: &[Trajectory]) -> Result<Vec<Trace>, IlclError> {
    ts.iter().map(|t| t.trace().map_err(IlclError::from)).collect()
}

fn rho(t: &Trajectory, f: &Formula) -> Result<f64, IlclError> {
    Ok(robustness(&t.trace()?, f, 0).map_err(CrlError::from)?)
}

/// Trains a reward-only policy (φ = ⊤) and returns `m` of its rollouts.
pub fn bootstrap_negatives<E: Env + ?Sized>(
    env: &mut E,
    m: usize,
    crl: &CrlConfig,
    seed: u64,
) -> Result<(Vec<Trajectory>, LagrangianPolicy), IlclError> {
    let top = Formula::True;
    let (policy, _) = train_policy(env, &top, &[], crl)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampled = sample_zero_violation(&policy, env, &top, m, m, &mut rng)?;
    let mut out = sampled.trajectories;
    for t in &mut out {
        t.meta.insert("source".into(), "bootstrap".into());
    }
    Ok((out, policy))
}

/// Mean over expert (s, a) pairs of the Monte Carlo estimate of
/// E_{a'∼π(·|s)} ‖a − a'‖₂. The policy observes each expert state together
/// with its own automaton state along the expert trace.
pub fn imitation_error<R: Rng + ?Sized>(
    policy: &LagrangianPolicy,
    experts: &[Trajectory],
    samples: usize,
    rng: &mut R,
) -> Result<f64, IlclError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for e in experts {
        let qs = policy.dfa().run(&e.trace()?).map_err(CrlError::from)?;
        for (t, a) in e.actions.iter().enumerate() {
            let obs = policy.observation(&e.states[t], qs[t]);
            let mut acc = 0.0;
            for _ in 0..samples {
                let a2 = policy.act(&obs, false, rng);
                acc += a.iter().zip(&a2).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            }
            total += acc / samples as f64;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Index of the candidate policy with the lowest imitation error, and all
/// errors. Ties keep the earliest candidate.
pub fn select_best(
    policies: &[LagrangianPolicy],
    experts: &[Trajectory],
    samples: usize,
    seed: u64,
) -> Result<(usize, Vec<f64>), IlclError> {
    if policies.is_empty() {
        return Err(IlclError::Config("no candidate policies".into()));
    }
    let mut errors = Vec::with_capacity(policies.len());
    for (i, p) in policies.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        errors.push(imitation_error(p, experts, samples, &mut rng)?);
    }
    let best = (0..errors.len()).fold(0, |b, i| if errors[i] < errors[b] { i } else { b });
    Ok((best, errors))
}

/// Plays `cfg.iterations` rounds of mining against constrained policy
/// training. When `run_dir` is given, constraints, checkpoints, trajectory
/// sets, metrics and a replayable audit log are written there.
pub fn run<E: Env + ?Sized>(
    env: &mut E,
    experts: &[Trajectory],
    cfg: &IlclConfig,
    run_dir: Option<&Path>,
) -> Result<IlclOutcome, IlclError> {
    cfg.validate()?;
    if experts.is_empty() {
        return Err(IlclError::NoExperts);
    }
    let mut dir = run_dir.map(|p| RunDir::create(p, cfg)).transpose()?;
    let expert_file = match &dir {
        Some(d) => d.trajs("experts", experts)?,
        None => String::new(),
    };

    let boot_cfg = cfg.bootstrap_crl.clone().unwrap_or_else(|| cfg.crl.clone());
    let (xi0, _) = bootstrap_negatives(env, cfg.bootstrap_rollouts, &boot_cfg, cfg.seed)?;
    log::info!("ilcl: bootstrap produced {} negatives", xi0.len());
    let mut files = Vec::new();
    if let Some(d) = &mut dir {
        let f = d.trajs("0", &xi0)?;
        d.log(&AuditEvent::Bootstrap { rollouts: xi0.len(), file: f.clone() })?;
        files.push(f);
    }

    let mut state = GameState {
        k: 0,
        constraints: Vec::new(),
        policies: Vec::new(),
        pool: vec![xi0],
        experts: experts.to_vec(),
        records: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    for k in 1..=cfg.iterations {
        let started = Instant::now();
        let negatives: Vec<Trajectory> = state.negatives().cloned().collect();
        let data = Dataset::new(traces(experts)?, traces(&negatives)?)?;
        let mining_cfg = MiningConfig {
            max_generations: cfg.mining.max_generations.min(cfg.mining.mining_step_cap),
            seed: cfg.mining.seed.wrapping_add(k as u64),
            ..cfg.mining.clone()
        };
        let (best, report) = mine_with_report(&data, &mining_cfg, &state.constraints)?;
        if k == 1 && best.fitness == 0.0 {
            return Err(IlclError::NoSeparation);
        }
        let phi = best.formula();
        let text = format_formula(&phi);
        let accepted = experts.iter().map(|e| rho(e, &phi)).collect::<Result<Vec<_>, _>>()?;
        let expert_acceptance = accepted.iter().filter(|r| **r > 0.0).count() as f64 / experts.len() as f64;
        log::info!("ilcl: k={k} mined {text} (fitness {:.3}, expert acceptance {:.2})", best.fitness, expert_acceptance);
        if let Some(d) = &mut dir {
            fs::write(d.root.join(format!("constraints/{k}.txt")), format!("{text}\n")).map_err(io)?;
            d.log(&AuditEvent::Mine {
                k,
                constraint: text.clone(),
                fitness: best.fitness,
                experts: expert_file.clone(),
                negatives: files.clone(),
            })?;
        }

        let mut warm = experts.to_vec();
        warm.extend(state.pool[1..].iter().flatten().cloned());
        let crl_cfg = CrlConfig { seed: cfg.crl.seed.wrapping_add(k as u64), ..cfg.crl.clone() };
        let (policy, train) = train_policy(env, &phi, &warm, &crl_cfg)?;
        let checkpoint = match &dir {
            Some(d) => {
                let rel = format!("policies/{k}.ckpt");
                save_policy(&policy, &crl_cfg, &d.root.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        if let Some(d) = &mut dir {
            d.log(&AuditEvent::Train { k, final_lambda: train.final_lambda, episodes: train.episodes, checkpoint })?;
        }

        let sampled = sample_zero_violation(&policy, env, &phi, cfg.samples_per_iteration, cfg.sample_attempts, &mut rng)?;
        let mut xi_k = sampled.trajectories;
        for t in &mut xi_k {
            t.meta.insert("source".into(), format!("iteration-{k}"));
        }
        let min_rho = xi_k.iter().filter_map(|t| t.rho).min_by(f64::total_cmp);
        if let Some(d) = &mut dir {
            let f = d.trajs(&k.to_string(), &xi_k)?;
            d.log(&AuditEvent::Sample {
                k,
                sampled: xi_k.len(),
                attempts: sampled.attempts,
                partial: sampled.partial,
                file: f.clone(),
                min_rho,
            })?;
            files.push(f);
        }
        let tail = train.episode_violations.len().min(200);
        let viol = train.episode_violations[train.episode_violations.len() - tail..].iter().filter(|v| **v).count();
        state.records.push(IterationRecord {
            k,
            constraint: text,
            fitness: best.fitness,
            reg_fitness: best.reg_fitness,
            node_count: best.node_count,
            mining_generations: report.generations.len(),
            expert_acceptance,
            negatives: negatives.len(),
            final_lambda: train.final_lambda,
            train_episodes: train.episodes,
            train_violation_rate: if tail == 0 { 0.0 } else { viol as f64 / tail as f64 },
            sampled: xi_k.len(),
            sample_attempts: sampled.attempts,
            sample_partial: sampled.partial,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        state.pool.push(xi_k);
        state.constraints.push(phi);
        state.policies.push(policy);
        state.k = k;
    }

    let (best_index, selection_errors) = select_best(&state.policies, experts, cfg.select_samples, cfg.seed)?;
    let best = state.constraints[best_index].clone();
    if let Some(d) = &mut dir {
        d.log(&AuditEvent::Select { errors: selection_errors.clone(), best: best_index, constraint: format_formula(&best) })?;
        let metrics = serde_json::json!({
            "iterations": state.records,
            "selection_errors": selection_errors,
            "best_iteration": best_index + 1,
            "best_constraint": format_formula(&best),
        });
        fs::write(d.root.join("metrics.json"), serde_json::to_string_pretty(&metrics).map_err(io)?).map_err(io)?;
    }
    let policy = state.policies[best_index].clone();
    Ok(IlclOutcome { best_index, best, policy, selection_errors, state })
}

/// A recorded fitness and its recomputation from the logged files.
#[derive(Debug, Clone, PartialEq)]
pub struct Replayed {
    pub k: usize,
    pub recorded: f64,
    pub recomputed: f64,
    /// True when every trajectory logged for iteration k satisfies its
    /// constraint (ρ ≥ 0).
    pub pool_sound: bool,
}

/// Recomputes every mining fitness and re-audits pool soundness from a run
/// directory's audit log and trajectory files.
pub fn replay_audit(run_dir: &Path) -> Result<Vec<Replayed>, IlclError> {
    let text = fs::read_to_string(run_dir.join("audit.jsonl")).map_err(io)?;
    let mut out: Vec<Replayed> = Vec::new();
    let mut constraints = std::collections::BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let ev: AuditEvent =
            serde_json::from_str(line).map_err(|e| IlclError::Audit { line: i + 1, message: e.to_string() })?;
        match ev {
            AuditEvent::Mine { k, constraint, fitness: recorded, experts, negatives } => {
                let phi = parse_formula(&constraint).map_err(CrlError::from)?;
                let exp = read_jsonl_file(&run_dir.join(experts))?;
                let mut neg = Vec::new();
                for f in negatives {
                    neg.extend(read_jsonl_file(&run_dir.join(f))?);
                }
                let data = Dataset::new(traces(&exp)?, traces(&neg)?)?;
                let recomputed = fitness(&phi, &ParamVector::default(), &data)?;
                constraints.insert(k, phi);
                out.push(Replayed { k, recorded, recomputed, pool_sound: true });
            }
            AuditEvent::Sample { k, file, .. } => {
                let phi = constraints
                    .get(&k)
                    .ok_or_else(|| IlclError::Audit { line: i + 1, message: format!("sample before mine for k={k}") })?;
                let ts = read_jsonl_file(&run_dir.join(file))?;
                let sound = ts.iter().map(|t| rho(t, phi)).collect::<Result<Vec<_>, _>>()?.iter().all(|r| *r >= 0.0);
                if let Some(r) = out.iter_mut().find(|r| r.k == k) {
                    r.pool_sound = sound;
                }
            }
            _ => {}
        }
    }
    Ok(out)
}
