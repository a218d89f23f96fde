use std::collections::VecDeque;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::policy::Batch;
use super::{cost_from_rho, CrlConfig, CrlError, LagrangianPolicy, ReplayBuffer, Trajectory};
use crate::automaton::Dfa;
use crate::envs::Env;
use crate::tl::{robustness, Formula};

/// How a policy picks actions during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

/// Summary of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub env_steps: usize,
    pub episodes: usize,
    pub updates: usize,
    pub warm_start_inserted: usize,
    pub warm_start_rejected: usize,
    /// λ after every gradient update.
    pub lambda_history: Vec<f64>,
    pub episode_rewards: Vec<f64>,
    pub episode_violations: Vec<bool>,
    pub final_lambda: f64,
    pub final_entropy_coef: f64,
    pub wall_time_s: f64,
}

/// Evaluation metrics over a set of rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    /// Percentage of rollouts with ρ < 0.
    pub vr: f64,
    /// Mean total episode reward.
    pub rew: f64,
    /// Mean violation magnitude max(−ρ, 0).
    pub tr: f64,
}

/// Zero-violation samples and how many rollouts it took to find them.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub trajectories: Vec<Trajectory>,
    pub attempts: usize,
    /// True when the attempt cap was hit before `n` samples were found.
    pub partial: bool,
}

/// Sets ρ, violation, cost and, when `dfa` is given, the automaton run.
pub fn score_trajectory(
    traj: &mut Trajectory,
    formula: &Formula,
    dfa: Option<&Dfa>,
    alpha: f64,
    upsilon: f64,
) -> Result<(), CrlError> {
    traj.validate()?;
    let trace = traj.trace()?;
    let rho = robustness(&trace, formula, 0)?;
    traj.rho = Some(rho);
    traj.violation = rho < 0.0;
    traj.traj_cost = cost_from_rho(rho, alpha, upsilon);
    if let Some(dfa) = dfa {
        traj.dfa_states = Some(dfa.run(&trace)?);
    }
    Ok(())
}

/// One episode in the product of `env` and the policy's automaton. The
/// result carries the automaton run, ρ and the violation flag under the
/// policy's constraint; its cost is left at zero.
pub fn rollout<E: Env + ?Sized, R: Rng + ?Sized>(
    policy: &LagrangianPolicy,
    env: &mut E,
    mode: ActionMode,
    rng: &mut R,
) -> Result<Trajectory, CrlError> {
    let s0 = env.reset(&mut &mut *rng);
    let dfa = policy.dfa();
    let mut q = dfa.reset(&s0)?;
    let mut states = vec![s0];
    let mut qs = vec![q];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    loop {
        let obs = policy.observation(states.last().expect("non-empty"), q);
        let a = policy.act(&obs, mode == ActionMode::Deterministic, rng);
        let step = env.step(&a);
        q = dfa.product_step(q, &step.state)?;
        actions.push(a);
        rewards.push(step.reward);
        states.push(step.state);
        qs.push(q);
        if step.done || actions.len() >= env.horizon() {
            break;
        }
    }
    let mut t = Trajectory::new(states, actions, rewards);
    let rho = robustness(&t.trace()?, &policy.constraint, 0)?;
    t.rho = Some(rho);
    t.violation = rho < 0.0;
    t.dfa_states = Some(qs);
    Ok(t)
}

/// Unit-box exploratory heading: a uniform direction scaled so its largest
/// component has magnitude in [0.5, 1].
fn random_heading<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    let speed = rng.random_range(0.5..=1.0);
    v.iter().map(|x| x / m * speed).collect()
}

fn normalization(buffer: &ReplayBuffer, dim: usize) -> (Vec<f32>, Vec<f32>) {
    let mut n = 0.0f64;
    let mut sum = vec![0.0f64; dim];
    let mut sq = vec![0.0f64; dim];
    for (_, t) in buffer.iter() {
        for s in &t.states {
            n += 1.0;
            for i in 0..dim {
                sum[i] += s[i];
                sq[i] += s[i] * s[i];
            }
        }
    }
    if n == 0.0 {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = (0..dim)
        .map(|i| {
            let var = (sq[i] / n - mean[i] * mean[i]).max(0.0);
            let sd = var.sqrt();
            if sd < 1e-6 { 1.0 } else { sd as f32 }
        })
        .collect();
    (mean.iter().map(|m| *m as f32).collect(), std)
}

fn make_batch<R: Rng + ?Sized>(
    policy: &LagrangianPolicy,
    buffer: &ReplayBuffer,
    size: usize,
    rng: &mut R,
) -> Result<Batch, CrlError> {
    let od = policy.obs_dim();
    let ad = policy.action_dim();
    let b = policy.action_bound();
    let mut obs = Array2::zeros((size, od));
    let mut next_obs = Array2::zeros((size, od));
    let mut act = Array2::zeros((size, ad));
    let mut reward = Vec::with_capacity(size);
    let mut cost = Vec::with_capacity(size);
    for i in 0..size {
        let r = buffer.sample(rng).expect("non-empty buffer");
        let traj = buffer.get(r.traj_id).expect("sampled id is live");
        let qs = traj.dfa_states.as_ref().expect("buffered trajectories carry automaton runs");
        let o = policy.observation(&traj.states[r.t], qs[r.t]);
        let o2 = policy.observation(&traj.states[r.t + 1], qs[r.t + 1]);
        for j in 0..od {
            obs[[i, j]] = o[j];
            next_obs[[i, j]] = o2[j];
        }
        for j in 0..ad {
            act[[i, j]] = (traj.actions[r.t][j] / b).clamp(-1.0, 1.0) as f32;
        }
        reward.push(traj.rewards[r.t] as f32);
        cost.push(buffer.redistribute(r)? as f32);
    }
    Ok(Batch { obs, act, reward, cost, next_obs })
}

/// Trains a Lagrangian soft actor-critic policy under `formula` in `env`.
///
/// Warm-start trajectories are re-scored under `formula` and only those
/// with ρ ≥ 0 enter the replay buffer. Observation normalization is frozen
/// once the random-action phase ends; that phase follows persistent random
/// headings so that early episodes cover the workspace. λ ascends on the mean cost of the
/// last N_ξ policy episodes, or of the minibatch before any exist.
pub fn train_policy<E: Env + ?Sized>(
    env: &mut E,
    formula: &Formula,
    warm_start: &[Trajectory],
    cfg: &CrlConfig,
) -> Result<(LagrangianPolicy, TrainReport), CrlError> {
    cfg.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = LagrangianPolicy::new(
        formula,
        env.state_dim(),
        env.action_dim(),
        env.action_bound(),
        &cfg.hidden,
        &mut rng,
    )?;
    policy.log_alpha = cfg.entropy_init.ln();
    policy.lambda = cfg.lambda_init;
    let mut opt = policy.optimizers(cfg);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut report = TrainReport::default();

    for t in warm_start {
        if t.state_dim() != env.state_dim() || t.actions.first().is_some_and(|a| a.len() != env.action_dim()) {
            return Err(CrlError::Malformed("warm-start trajectory does not match the environment".into()));
        }
        let mut t = t.clone();
        score_trajectory(&mut t, formula, Some(policy.dfa()), cfg.alpha, cfg.upsilon)?;
        if t.rho.is_some_and(|r| r >= 0.0) && !t.is_empty() {
            buffer.push(t);
            report.warm_start_inserted += 1;
        } else {
            report.warm_start_rejected += 1;
        }
    }

    let bound = env.action_bound();
    let mut frozen = false;
    if cfg.random_steps == 0 {
        let (m, s) = normalization(&buffer, env.state_dim());
        policy.set_normalization(m, s);
        frozen = true;
    }
    let dfa = policy.dfa().clone();
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(cfg.n_xi);
    while report.env_steps < cfg.env_steps {
        let random_phase = !frozen;
        let s0 = env.reset(&mut rng);
        let mut q = dfa.reset(&s0)?;
        let mut states = vec![s0];
        let mut qs = vec![q];
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut heading = random_heading(env.action_dim(), &mut rng);
        loop {
            let a: Vec<f64> = if random_phase {
                if !rng.random_bool(cfg.random_persistence) {
                    heading = random_heading(env.action_dim(), &mut rng);
                }
                heading
                    .iter()
                    .map(|h| (h + 0.3 * rng.sample::<f64, _>(StandardNormal)).clamp(-1.0, 1.0) * bound)
                    .collect()
            } else {
                let obs = policy.observation(states.last().expect("non-empty"), q);
                policy.act(&obs, false, &mut rng)
            };
            let step = env.step(&a);
            q = dfa.product_step(q, &step.state)?;
            actions.push(a);
            rewards.push(step.reward);
            states.push(step.state);
            qs.push(q);
            report.env_steps += 1;

            if frozen && buffer.n_steps() >= cfg.batch_size && report.env_steps % cfg.update_every == 0 {
                for _ in 0..cfg.updates_per_round {
                    let batch = make_batch(&policy, &buffer, cfg.batch_size, &mut rng)?;
                    let avg_cost = if recent.is_empty() {
                        batch.cost.iter().map(|c| *c as f64).sum::<f64>() / batch.cost.len() as f64
                    } else {
                        recent.iter().sum::<f64>() / recent.len() as f64
                    };
                    let stats = policy.update(&batch, cfg, &mut opt, avg_cost, &mut rng);
                    report.updates += 1;
                    report.lambda_history.push(policy.lambda);
                    if !(stats.critic_loss.is_finite() && stats.actor_loss.is_finite()) || !policy.is_finite() {
                        return Err(CrlError::Divergence {
                            update: report.updates,
                            what: format!("critic loss {}, actor loss {}", stats.critic_loss, stats.actor_loss),
                        });
                    }
                }
            }
            if step.done || actions.len() >= env.horizon() {
                break;
            }
        }
        let mut t = Trajectory::new(states, actions, rewards);
        t.dfa_states = Some(qs);
        score_trajectory(&mut t, formula, None, cfg.alpha, cfg.upsilon)?;
        report.episodes += 1;
        report.episode_rewards.push(t.total_reward());
        report.episode_violations.push(t.violation);
        if frozen {
            if recent.len() == cfg.n_xi {
                recent.pop_front();
            }
            recent.push_back(t.traj_cost);
        }
        buffer.push(t);
        if !frozen && report.env_steps >= cfg.random_steps {
            let (m, s) = normalization(&buffer, env.state_dim());
            policy.set_normalization(m, s);
            frozen = true;
        }
        if report.episodes % 500 == 0 {
            let k = report.episode_rewards.len().min(100);
            let recent = &report.episode_rewards[report.episode_rewards.len() - k..];
            let viol = report.episode_violations[report.episode_violations.len() - k..].iter().filter(|v| **v).count();
            log::info!(
                "crl: {} steps, {} episodes, reward {:.2}, violations {}/{}, lambda {:.3}, alpha {:.4}",
                report.env_steps,
                report.episodes,
                recent.iter().sum::<f64>() / k as f64,
                viol,
                k,
                policy.lambda,
                policy.entropy_coef(),
            );
        }
    }
    report.final_lambda = policy.lambda;
    report.final_entropy_coef = policy.entropy_coef();
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((policy, report))
}

/// Draws stochastic rollouts until `n` of them satisfy `formula` (ρ ≥ 0)
/// or `max_attempts` rollouts have been made.
pub fn sample_zero_violation<E: Env + ?Sized, R: Rng + ?Sized>(
    policy: &LagrangianPolicy,
    env: &mut E,
    formula: &Formula,
    n: usize,
    max_attempts: usize,
    rng: &mut R,
) -> Result<Sampled, CrlError> {
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < max_attempts {
        attempts += 1;
        let mut t = rollout(policy, env, ActionMode::Stochastic, rng)?;
        let rho = robustness(&t.trace()?, formula, 0)?;
        if rho >= 0.0 {
            t.rho = Some(rho);
            t.violation = false;
            t.traj_cost = 0.0;
            out.push(t);
        }
    }
    let partial = out.len() < n;
    Ok(Sampled { trajectories: out, attempts, partial })
}

/// VR, REW and TR from per-rollout robustness values and total rewards.
pub fn metrics_from(rhos: &[f64], rewards: &[f64]) -> Metrics {
    assert_eq!(rhos.len(), rewards.len());
    let n = rhos.len();
    if n == 0 {
        return Metrics { n, vr: 0.0, rew: 0.0, tr: 0.0 };
    }
    let nf = n as f64;
    Metrics {
        n,
        vr: 100.0 * rhos.iter().filter(|r| **r < 0.0).count() as f64 / nf,
        rew: rewards.iter().sum::<f64>() / nf,
        tr: rhos.iter().map(|r| (-r).max(0.0)).sum::<f64>() / nf,
    }
}

/// Deterministic rollouts of `policy` in each environment, scored against
/// `formula`.
pub fn evaluate_policy<E: Env>(
    policy: &LagrangianPolicy,
    envs: &mut [E],
    formula: &Formula,
    episodes_per_env: usize,
    seed: u64,
) -> Result<Metrics, CrlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rhos = Vec::new();
    let mut rewards = Vec::new();
    for env in envs.iter_mut() {
        for _ in 0..episodes_per_env {
            let t = rollout(policy, env, ActionMode::Deterministic, &mut rng)?;
            rhos.push(robustness(&t.trace()?, formula, 0)?);
            rewards.push(t.total_reward());
        }
    }
    Ok(metrics_from(&rhos, &rewards))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{randomize, NavEnv, Split};
    use crate::tl::{parse_formula, Trace};

    fn quick() -> CrlConfig {
        CrlConfig { env_steps: 1_500, random_steps: 250, batch_size: 32, hidden: vec![16, 16], update_every: 1, ..CrlConfig::default() }
    }

    #[test]
    fn metric_arithmetic() {
        let m = metrics_from(&[1.0, -2.0], &[3.0, 5.0]);
        assert_eq!(m.vr, 50.0);
        assert_eq!(m.tr, 1.0);
        assert_eq!(m.rew, 4.0);
        assert_eq!(metrics_from(&[], &[]).n, 0);
    }

    #[test]
    fn lambda_rises_under_unsatisfiable_constraint() {
        let mut env = NavEnv::new(randomize(0, Split::Train)).unwrap();
        let f = parse_formula("G(s0 < -1000)").unwrap();
        let cfg = CrlConfig { env_steps: 1_200, ..quick() };
        let (policy, report) = train_policy(&mut env, &f, &[], &cfg).unwrap();
        assert!(report.updates >= 900);
        let first = &report.lambda_history[..report.updates.min(1000)];
        assert!(first.windows(2).all(|w| w[1] > w[0]));
        assert!(policy.lambda > 0.0);
    }

    #[test]
    fn rollouts_track_the_automaton() {
        let mut env = NavEnv::new(randomize(1, Split::Train)).unwrap();
        let f = crate::envs::NavTask::Nav1.gt();
        let (policy, _) = train_policy(&mut env, &f, &[], &CrlConfig { env_steps: 300, ..quick() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let t = rollout(&policy, &mut env, ActionMode::Stochastic, &mut rng).unwrap();
            let qs = t.dfa_states.clone().unwrap();
            let mut q = policy.dfa().reset(&t.states[0]).unwrap();
            assert_eq!(qs[0], q);
            for k in 1..t.states.len() {
                q = policy.dfa().product_step(q, &t.states[k]).unwrap();
                assert_eq!(qs[k], q);
            }
            assert_eq!(qs, policy.dfa().run(&Trace::new(t.states.clone()).unwrap()).unwrap());
        }
    }

    #[test]
    fn warm_start_keeps_only_satisfying_trajectories() {
        let spec = randomize(2, Split::Train);
        let gt = crate::envs::NavTask::Nav1.gt();
        let data = crate::envs::planted_dataset(&spec, crate::envs::NavTask::Nav1, &gt, 3, 4, 0).unwrap();
        let mut warm = data.experts.clone();
        warm.extend(data.negatives.iter().cloned());
        let mut env = NavEnv::new(spec).unwrap();
        let (_, report) = train_policy(&mut env, &gt, &warm, &CrlConfig { env_steps: 100, ..quick() }).unwrap();
        assert_eq!(report.warm_start_inserted, 3);
        assert_eq!(report.warm_start_rejected, 4);
    }

    #[test]
    fn training_is_deterministic_and_samples_satisfy() {
        let mut env = NavEnv::new(randomize(3, Split::Train)).unwrap();
        let f = parse_formula("G(s0 > -1)").unwrap();
        let cfg = CrlConfig { env_steps: 600, ..quick() };
        let (a, ra) = train_policy(&mut env, &f, &[], &cfg).unwrap();
        let (b, rb) = train_policy(&mut env, &f, &[], &cfg).unwrap();
        assert_eq!(a.actor.params(), b.actor.params());
        assert_eq!(ra.lambda_history, rb.lambda_history);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_zero_violation(&a, &mut env, &f, 3, 10, &mut rng).unwrap();
        assert_eq!(s.trajectories.len(), 3);
        assert!(!s.partial);
        let never = parse_formula("G(s0 < -1)").unwrap();
        let s = sample_zero_violation(&a, &mut env, &never, 3, 4, &mut rng).unwrap();
        assert!(s.partial && s.attempts == 4 && s.trajectories.is_empty());
    }
}
