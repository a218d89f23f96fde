//! Constrained reinforcement learning under a temporal-logic constraint:
//! dense trajectory costs, per-step redistribution, and a Lagrangian
//! soft actor-critic over the product of the environment and the
//! constraint's automaton.

mod buffer;
mod checkpoint;
mod policy;
mod train;
mod traj;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::automaton::AutomatonError;
use crate::tl::{robustness, Formula, TlError, Trace};

pub use buffer::{ReplayBuffer, StepRef};
pub use checkpoint::{load_policy, save_policy, CheckpointMeta};
pub use policy::LagrangianPolicy;
pub use train::{
    evaluate_policy, metrics_from, rollout, sample_zero_violation, score_trajectory,
    train_policy, ActionMode, Metrics, Sampled, TrainReport,
};
pub use traj::{read_jsonl, read_jsonl_file, write_jsonl, write_jsonl_file, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrlError {
    #[error("malformed trajectory: {0}")]
    Malformed(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("step {t} of trajectory {traj_id} is not in the buffer")]
    StepNotFound { traj_id: u64, t: usize },
    #[error("invalid CRL config: {0}")]
    Config(String),
    #[error("state dimension mismatch: environment has {env}, formula needs at least {formula}")]
    DimensionMismatch { env: usize, formula: usize },
    #[error("training diverged at update {update}: {what}")]
    Divergence { update: usize, what: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Logic(#[from] TlError),
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrlConfig {
    /// Weight α of the violation indicator in the dense cost.
    pub alpha: f64,
    /// Clip bound Υ on negative robustness.
    pub upsilon: f64,
    /// Threshold factor ε; the per-step threshold is d = εα/N_ξ.
    pub epsilon: f64,
    /// Trajectories per evaluation batch N_ξ.
    pub n_xi: usize,
    pub gamma: f64,
    /// Polyak factor for target critics.
    pub tau: f64,
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub entropy_lr: f64,
    pub lambda_lr: f64,
    pub lambda_init: f64,
    pub entropy_init: f64,
    /// Entropy target; defaults to −|A| when unset.
    pub target_entropy: Option<f64>,
    pub batch_size: usize,
    /// Environment steps collected during training.
    pub env_steps: usize,
    /// Initial steps with random exploratory actions.
    pub random_steps: usize,
    /// Per-step probability of keeping the exploratory heading during the
    /// random phase; 0 gives independent uniform actions.
    pub random_persistence: f64,
    /// Environment steps between gradient rounds.
    pub update_every: usize,
    /// Gradient updates per round.
    pub updates_per_round: usize,
    /// Replay capacity in steps.
    pub buffer_capacity: usize,
    pub seed: u64,
}

impl Default for CrlConfig {
    fn default() -> Self {
        CrlConfig {
            alpha: 0.5,
            upsilon: 1.0,
            epsilon: 0.5,
            n_xi: 10,
            gamma: 0.99,
            tau: 0.005,
            hidden: vec![64, 64],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            entropy_lr: 3e-4,
            lambda_lr: 1e-3,
            lambda_init: 0.0,
            entropy_init: 0.2,
            target_entropy: None,
            batch_size: 128,
            env_steps: 200_000,
            random_steps: 5_000,
            random_persistence: 0.9,
            update_every: 2,
            updates_per_round: 1,
            buffer_capacity: 200_000,
            seed: 0,
        }
    }
}

impl CrlConfig {
    pub fn validate(&self) -> Result<(), CrlError> {
        let bad = |m: &str| Err(CrlError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.upsilon > 0.0) {
            return bad("upsilon must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.random_persistence) {
            return bad("random_persistence must lie in [0, 1)");
        }
        if self.n_xi == 0 {
            return bad("n_xi must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return bad("gamma and tau must lie in [0, 1]");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if self.batch_size == 0 || self.update_every == 0 || self.buffer_capacity == 0 {
            return bad("batch_size, update_every and buffer_capacity must be positive");
        }
        if self.lambda_init < 0.0 || self.lambda_lr < 0.0 || !(self.entropy_init > 0.0) {
            return bad("lambda_init and lambda_lr must be non-negative, entropy_init positive");
        }
        Ok(())
    }

    /// Per-step cost threshold d = εα/N_ξ.
    pub fn threshold(&self) -> f64 {
        self.epsilon * self.alpha / self.n_xi as f64
    }

    /// Hex SHA-256 of the JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// α·1[ρ<0] + ((1−α)/Υ)·clip(−ρ, 0, Υ).
pub fn cost_from_rho(rho: f64, alpha: f64, upsilon: f64) -> f64 {
    let indicator = if rho < 0.0 { 1.0 } else { 0.0 };
    alpha * indicator + (1.0 - alpha) / upsilon * (-rho).clamp(0.0, upsilon)
}

/// Dense, bounded trajectory cost of `trace` under `formula`.
pub fn dense_cost(trace: &Trace, formula: &Formula, alpha: f64, upsilon: f64) -> Result<f64, CrlError> {
    Ok(cost_from_rho(robustness(trace, formula, 0)?, alpha, upsilon))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_cost_examples() {
        assert_eq!(cost_from_rho(0.3, 0.5, 1.0), 0.0);
        assert!((cost_from_rho(-0.2, 0.5, 1.0) - 0.6).abs() < 1e-15);
        assert_eq!(cost_from_rho(-10.0, 0.5, 1.0), 1.0);
        assert_eq!(cost_from_rho(0.0, 0.5, 1.0), 0.0);
        assert!((cost_from_rho(-0.4, 0.0, 1.0) - 0.4).abs() < 1e-15);
        let f = crate::tl::parse_formula("G(s0 < 1)").unwrap();
        let t = Trace::new(vec![vec![0.5], vec![1.2]]).unwrap();
        assert!((dense_cost(&t, &f, 0.5, 1.0).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn threshold_and_validation() {
        let cfg = CrlConfig::default();
        assert!((cfg.threshold() - 0.025).abs() < 1e-15);
        assert_eq!(CrlConfig { alpha: 0.0, ..cfg.clone() }.threshold(), 0.0);
        assert!(CrlConfig { epsilon: 1.0, ..cfg.clone() }.validate().is_err());
        assert!(CrlConfig { upsilon: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.hash(), CrlConfig::default().hash());
    }
}
