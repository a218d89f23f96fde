//! Navigation environment, layout randomization, ground-truth constraint
//! fixtures, and demonstration generation.

mod demos;
mod nav;
mod scripted;

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crl::Trajectory;
use crate::tl::{parse_formula_with, robustness, FeatureNames, Formula, TlError};

pub use demos::{gen_expert_demos, DemoConfig, DemoSet};
pub use nav::{
    randomize, wrap_angle, Color, EnvSpec, NavEnv, Region, Split, NAV_FEATURES, TEST_HORIZON,
    TEST_SCALE, TRAIN_HORIZON, TRAIN_SIDE,
};
pub use scripted::{random_style, ScriptedNavigator};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("unknown task '{0}'")]
    UnknownTask(String),
    #[error(transparent)]
    Logic(#[from] TlError),
    #[error("policy training failed: {0}")]
    Crl(String),
    #[error("could not collect {wanted} trajectories, got {got}")]
    Exhausted { wanted: usize, got: usize },
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Episodic environment with a box action space `[-bound, bound]^n`.
pub trait Env {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_bound(&self) -> f64;
    fn horizon(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Step;
}

pub const WIPING_FEATURES: [&str; 9] =
    ["Ax_agt", "Ay_agt", "Bx_agt", "By_agt", "vx_agt", "vy_agt", "w_agt", "d_g", "f_c"];

pub const PEG_FEATURES: [&str; 22] = [
    "x_grip", "y_grip", "theta_grip", "vx_grip", "vy_grip", "w_grip", "x_peg", "y_peg",
    "theta_peg", "vx_peg", "vy_peg", "w_peg", "xd_grip", "yd_grip", "thetad_grip", "d_jaw",
    "v_jaw", "dd_jaw", "d_hole_peg", "d_jaw_peg", "cos_h", "sin_h",
];

/// A ground-truth constraint with the feature table it is written over.
#[derive(Debug, Clone, PartialEq)]
pub struct GtConstraint {
    pub text: &'static str,
    pub formula: Formula,
    pub features: FeatureNames,
}

const GT_TEXT: [(&str, &str); 4] = [
    ("nav1", "G(pR_dist > 0.2) & ((pB_dist > 0.25) U (pG_dist < 0.08))"),
    ("nav2", "F((pR_dist < 0.06) & F((pG_dist < 0.05) & F(pB_dist < 0.04)))"),
    ("wiping", "(f_c < 0.05) U ((G(f_c > 1.6)) R ((Ax_agt > -0.1) & (Ax_agt < 0.1)))"),
    (
        "peg",
        "F((theta_peg > 34.88) & ((theta_peg < 4.217) R (d_jaw_peg < 0.0053)) & G(d_hole_peg < 0.0072))",
    ),
];

/// Ground-truth constraints keyed by task. Wiping and peg have no
/// environment here; they serve as parser and compiler fixtures.
pub fn gt_constraints() -> BTreeMap<&'static str, GtConstraint> {
    GT_TEXT
        .iter()
        .map(|&(name, text)| {
            let features = match name {
                "wiping" => FeatureNames::new(WIPING_FEATURES),
                "peg" => FeatureNames::new(PEG_FEATURES),
                _ => FeatureNames::new(NAV_FEATURES),
            };
            let formula = parse_formula_with(text, &features).expect("fixture parses");
            (name, GtConstraint { text, formula, features })
        })
        .collect()
}

/// The two navigation tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NavTask {
    Nav1,
    Nav2,
}

impl NavTask {
    pub fn name(self) -> &'static str {
        match self {
            NavTask::Nav1 => "nav1",
            NavTask::Nav2 => "nav2",
        }
    }

    pub fn parse(name: &str) -> Result<Self, EnvError> {
        match name {
            "nav1" => Ok(NavTask::Nav1),
            "nav2" => Ok(NavTask::Nav2),
            other => Err(EnvError::UnknownTask(other.to_string())),
        }
    }

    pub fn gt(self) -> Formula {
        gt_constraints().remove(self.name()).expect("navigation fixture").formula
    }

    /// Scripted behavior that aims to satisfy this task's constraint.
    pub fn expert_style(self, noise: f64) -> ScriptedNavigator {
        match self {
            NavTask::Nav1 => ScriptedNavigator::avoid_task(noise),
            NavTask::Nav2 => ScriptedNavigator::ordering_task(noise),
        }
    }
}

pub fn nav_features() -> FeatureNames {
    FeatureNames::new(NAV_FEATURES)
}

/// Experts and negatives drawn by rejection sampling against a formula.
#[derive(Debug, Clone)]
pub struct PlantedData {
    pub experts: Vec<Trajectory>,
    pub negatives: Vec<Trajectory>,
}

/// Scripted rollouts on one layout: experts from the task's expert style
/// kept iff ρ > 0, negatives from a mixture of styles kept iff ρ < 0.
pub fn planted_dataset(
    spec: &EnvSpec,
    task: NavTask,
    formula: &Formula,
    n_experts: usize,
    n_negatives: usize,
    seed: u64,
) -> Result<PlantedData, EnvError> {
    let mut env = NavEnv::new(spec.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut experts = Vec::with_capacity(n_experts);
    let mut attempts = 0;
    while experts.len() < n_experts {
        attempts += 1;
        if attempts > 200 * n_experts.max(1) {
            return Err(EnvError::Exhausted { wanted: n_experts, got: experts.len() });
        }
        let noise = rand::Rng::random_range(&mut rng, 0.05..0.3);
        let mut t = task.expert_style(noise).rollout(&mut env, &mut rng);
        let rho = robustness(&t.trace().expect("env trace"), formula, 0)?;
        if rho > 0.0 {
            t.rho = Some(rho);
            t.meta.insert("source".into(), "scripted-expert".into());
            experts.push(t);
        }
    }
    let mut negatives = Vec::with_capacity(n_negatives);
    attempts = 0;
    while negatives.len() < n_negatives {
        attempts += 1;
        if attempts > 200 * n_negatives.max(1) {
            return Err(EnvError::Exhausted { wanted: n_negatives, got: negatives.len() });
        }
        let mut t = random_style(&mut rng).rollout(&mut env, &mut rng);
        let rho = robustness(&t.trace().expect("env trace"), formula, 0)?;
        if rho < 0.0 {
            t.rho = Some(rho);
            t.violation = true;
            t.meta.insert("source".into(), "scripted-negative".into());
            negatives.push(t);
        }
    }
    Ok(PlantedData { experts, negatives })
}
