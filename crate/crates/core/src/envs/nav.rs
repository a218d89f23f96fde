use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Env, EnvError, Step};

/// Names of the ten navigation state features, in state-vector order.
pub const NAV_FEATURES: [&str; 10] = [
    "x_agt", "y_agt", "x_goal", "y_goal", "pR_dist", "pR_ang", "pG_dist", "pG_ang", "pB_dist",
    "pB_ang",
];

pub const TRAIN_SIDE: f64 = 2.0;
pub const TRAIN_HORIZON: usize = 25;
pub const TEST_SCALE: f64 = 1.5;
pub const TEST_HORIZON: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
}

impl Color {
    pub const ALL: [Color; 3] = [Color::Red, Color::Green, Color::Blue];

    /// Index of the color's distance feature; the bearing follows it.
    pub fn feature(self) -> usize {
        match self {
            Color::Red => 4,
            Color::Green => 6,
            Color::Blue => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub color: Color,
    pub center: [f64; 2],
    pub radius: f64,
}

impl Region {
    /// Distance from `p` to the region boundary, zero inside.
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        ((p[0] - self.center[0]).hypot(p[1] - self.center[1]) - self.radius).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A complete, serializable navigation layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    /// Side length of the square workspace `[0, side]²`.
    pub side: f64,
    pub horizon: usize,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub regions: Vec<Region>,
    /// Half-width of the uniform start perturbation applied on reset.
    pub start_jitter: f64,
    pub seed: u64,
    pub split: Split,
}

impl EnvSpec {
    pub fn action_bound(&self) -> f64 {
        0.05 * self.side
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let inside = |p: [f64; 2]| p.iter().all(|v| (0.0..=self.side).contains(v));
        if !(self.side > 0.0) || self.horizon == 0 {
            return Err(EnvError::InvalidSpec("workspace side and horizon must be positive".into()));
        }
        if !inside(self.start) || !inside(self.goal) {
            return Err(EnvError::InvalidSpec("start and goal must lie in the workspace".into()));
        }
        for r in &self.regions {
            let fits = r.radius > 0.0
                && r.center.iter().all(|c| *c - r.radius >= 0.0 && *c + r.radius <= self.side);
            if !fits {
                return Err(EnvError::InvalidSpec(format!("region {r:?} leaves the workspace")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// The ten-dimensional state for an agent at `pos`.
    pub fn features(&self, pos: [f64; 2]) -> Vec<f64> {
        let mut s = vec![0.0; 10];
        s[0] = pos[0];
        s[1] = pos[1];
        s[2] = self.goal[0];
        s[3] = self.goal[1];
        let diagonal = self.side * 2f64.sqrt();
        for color in Color::ALL {
            let nearest = self
                .regions
                .iter()
                .filter(|r| r.color == color)
                .map(|r| (r.boundary_distance(pos), r))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            let (dist, ang) = match nearest {
                Some((d, r)) => (d, wrap_angle((r.center[1] - pos[1]).atan2(r.center[0] - pos[0]))),
                None => (diagonal, 0.0),
            };
            s[color.feature()] = dist;
            s[color.feature() + 1] = ang;
        }
        s
    }

    pub fn reward(&self, pos: [f64; 2]) -> f64 {
        1.0 - (5.0 * (pos[0] - self.goal[0]).hypot(pos[1] - self.goal[1])).tanh()
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Point agent with bounded velocity commands in a square workspace.
#[derive(Debug, Clone)]
pub struct NavEnv {
    spec: EnvSpec,
    pos: [f64; 2],
    t: usize,
}

impl NavEnv {
    pub fn new(spec: EnvSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        let pos = spec.start;
        Ok(NavEnv { spec, pos, t: 0 })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn time(&self) -> usize {
        self.t
    }

    /// Resets to the nominal start, without jitter.
    pub fn reset_nominal(&mut self) -> Vec<f64> {
        self.pos = self.spec.start;
        self.t = 0;
        self.spec.features(self.pos)
    }
}

impl Env for NavEnv {
    fn state_dim(&self) -> usize {
        10
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bound(&self) -> f64 {
        self.spec.action_bound()
    }

    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let j = self.spec.start_jitter;
        let side = self.spec.side;
        self.pos = [0, 1].map(|i| {
            let off = if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
            (self.spec.start[i] + off).clamp(0.0, side)
        });
        self.t = 0;
        self.spec.features(self.pos)
    }

    fn step(&mut self, action: &[f64]) -> Step {
        let b = self.spec.action_bound();
        for i in 0..2 {
            let a = if action[i].is_finite() { action[i].clamp(-b, b) } else { 0.0 };
            self.pos[i] = (self.pos[i] + a).clamp(0.0, self.spec.side);
        }
        self.t += 1;
        Step {
            state: self.spec.features(self.pos),
            reward: self.spec.reward(self.pos),
            done: self.t >= self.spec.horizon,
        }
    }
}

/// Draws a random layout. Training layouts use a side of 2 and T=25; test
/// layouts a 1.5× larger side and T=50.
///
/// Blue sits across the straight start–goal path, green beside it, and one
/// or two reds elsewhere, so that the ground-truth constraints bind.
pub fn randomize(seed: u64, split: Split) -> EnvSpec {
    let (side, horizon) = match split {
        Split::Train => (TRAIN_SIDE, TRAIN_HORIZON),
        Split::Test => (TRAIN_SIDE * TEST_SCALE, TEST_HORIZON),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6E61_765F_656E_7600);
    loop {
        if let Some(spec) = try_layout(&mut rng, side, horizon, seed, split) {
            return spec;
        }
    }
}

fn try_layout(rng: &mut ChaCha8Rng, side: f64, horizon: usize, seed: u64, split: Split) -> Option<EnvSpec> {
    let u = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| side * rng.random_range(lo..hi);
    let flip = [rng.random_bool(0.5), rng.random_bool(0.5)];
    let orient = |p: [f64; 2]| [0, 1].map(|i| if flip[i] { side - p[i] } else { p[i] });
    let start = orient([u(rng, 0.08, 0.2), u(rng, 0.08, 0.2)]);
    let goal = orient([u(rng, 0.8, 0.92), u(rng, 0.8, 0.92)]);

    let mid = [(start[0] + goal[0]) / 2.0, (start[1] + goal[1]) / 2.0];
    let dir = {
        let d = [goal[0] - start[0], goal[1] - start[1]];
        let n = d[0].hypot(d[1]);
        [d[0] / n, d[1] / n]
    };
    let normal = if rng.random_bool(0.5) { [-dir[1], dir[0]] } else { [dir[1], -dir[0]] };

    let rb = u(rng, 0.08, 0.12);
    let along = u(rng, -0.06, 0.06);
    let blue = Region {
        color: Color::Blue,
        center: [mid[0] + dir[0] * along, mid[1] + dir[1] * along],
        radius: rb,
    };
    let rg = u(rng, 0.04, 0.07);
    let gap = rb + rg + u(rng, 0.17, 0.24);
    let shift = u(rng, -0.1, 0.05);
    let green = Region {
        color: Color::Green,
        center: [
            blue.center[0] + normal[0] * gap + dir[0] * shift,
            blue.center[1] + normal[1] * gap + dir[1] * shift,
        ],
        radius: rg,
    };
    let mut regions = vec![blue, green];
    let n_red = rng.random_range(1..=2);
    let mut placed = 0;
    for _ in 0..200 {
        if placed == n_red {
            break;
        }
        let rr = u(rng, 0.05, 0.09);
        let c = [u(rng, 0.1, 0.9), u(rng, 0.1, 0.9)];
        let red = Region { color: Color::Red, center: c, radius: rr };
        let clear_of = |p: [f64; 2], m: f64| red.boundary_distance(p) > m;
        let apart = regions.iter().all(|r| {
            (r.center[0] - c[0]).hypot(r.center[1] - c[1]) > r.radius + rr + 0.3 * side / 2.0
        });
        if apart && clear_of(start, 0.35) && clear_of(goal, 0.35) {
            regions.push(red);
            placed += 1;
        }
    }
    if placed == 0 {
        return None;
    }
    let spec = EnvSpec { side, horizon, start, goal, regions, start_jitter: 0.05 * side, seed, split };
    if spec.validate().is_err() || !nav1_feasible(&spec) {
        return None;
    }
    Some(spec)
}

/// The noiseless scripted expert satisfies the first navigation constraint
/// with margin from the nominal start.
fn nav1_feasible(spec: &EnvSpec) -> bool {
    let gt = super::NavTask::Nav1.gt();
    let nominal = EnvSpec { start_jitter: 0.0, ..spec.clone() };
    let mut env = NavEnv::new(nominal).expect("validated");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let traj = super::NavTask::Nav1.expert_style(0.0).rollout(&mut env, &mut rng);
    let trace = traj.trace().expect("env trace");
    crate::tl::robustness(&trace, &gt, 0).is_ok_and(|rho| rho >= 0.03)
}
