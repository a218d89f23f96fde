//! Hand-written navigation controllers used to build planted datasets and
//! to check that a layout admits constraint-satisfying behavior.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::nav::{Color, EnvSpec, NavEnv};
use super::Env;
use crate::crl::Trajectory;

/// Waypoint follower with potential-field avoidance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedNavigator {
    /// Colors to touch, in order, before heading to the goal.
    pub visit: Vec<Color>,
    /// Boundary margin kept from red regions (0 disables avoidance).
    pub red_margin: f64,
    /// Boundary margin kept from blue regions until green has been reached.
    pub blue_margin: f64,
    /// Gaussian action noise, as a fraction of the action bound.
    pub noise: f64,
    /// Boundary distance at which a region counts as visited.
    pub reach: f64,
}

impl ScriptedNavigator {
    /// Behavior that satisfies the first navigation constraint.
    pub fn avoid_task(noise: f64) -> Self {
        ScriptedNavigator { visit: vec![Color::Green], red_margin: 0.3, blue_margin: 0.35, noise, reach: 0.03 }
    }

    /// Behavior that satisfies the second navigation constraint.
    pub fn ordering_task(noise: f64) -> Self {
        ScriptedNavigator {
            visit: vec![Color::Red, Color::Green, Color::Blue],
            red_margin: 0.0,
            blue_margin: 0.0,
            noise,
            reach: 0.02,
        }
    }

    /// Straight to the goal, ignoring all regions.
    pub fn direct(noise: f64) -> Self {
        ScriptedNavigator { visit: vec![], red_margin: 0.0, blue_margin: 0.0, noise, reach: 0.03 }
    }

    pub fn rollout(&self, env: &mut NavEnv, rng: &mut dyn RngCore) -> Trajectory {
        let s0 = env.reset(rng);
        let spec = env.spec().clone();
        let mut stage = 0;
        let mut green_seen = false;
        let mut states = vec![s0];
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        loop {
            let pos = env.position();
            let feats = states.last().expect("non-empty");
            green_seen |= feats[Color::Green.feature()] < 0.08;
            while stage < self.visit.len() && feats[self.visit[stage].feature()] < self.reach {
                stage += 1;
            }
            let target = match self.visit.get(stage) {
                Some(c) => nearest_center(&spec, *c, pos).unwrap_or(spec.goal),
                None => spec.goal,
            };
            let action = self.act(&spec, pos, target, green_seen, rng);
            let step = env.step(&action);
            actions.push(action.to_vec());
            rewards.push(step.reward);
            states.push(step.state);
            if step.done {
                break;
            }
        }
        Trajectory::new(states, actions, rewards)
    }

    fn act(&self, spec: &EnvSpec, pos: [f64; 2], target: [f64; 2], green_seen: bool, rng: &mut dyn RngCore) -> [f64; 2] {
        let b = spec.action_bound();
        let to = [target[0] - pos[0], target[1] - pos[1]];
        let dist = to[0].hypot(to[1]);
        let mut dir = if dist > 1e-9 { [to[0] / dist, to[1] / dist] } else { [0.0, 0.0] };
        for r in &spec.regions {
            let margin = match r.color {
                Color::Red => self.red_margin,
                Color::Blue if !green_seen => self.blue_margin,
                _ => 0.0,
            };
            if margin <= 0.0 {
                continue;
            }
            let d = r.boundary_distance(pos);
            let influence = margin + 0.25;
            if d >= influence {
                continue;
            }
            let away = {
                let v = [pos[0] - r.center[0], pos[1] - r.center[1]];
                let n = v[0].hypot(v[1]).max(1e-9);
                [v[0] / n, v[1] / n]
            };
            // Slide around the region on the side facing the target.
            let tangent = {
                let t = [-away[1], away[0]];
                if t[0] * dir[0] + t[1] * dir[1] >= 0.0 { t } else { [-t[0], -t[1]] }
            };
            let w = ((influence - d) / 0.25).min(3.0);
            let inward = (dir[0] * away[0] + dir[1] * away[1]).min(0.0);
            for i in 0..2 {
                dir[i] += w * (away[i] * 0.6 - inward * away[i]) + w * tangent[i];
            }
        }
        let n = dir[0].hypot(dir[1]);
        let speed = (dist / b).min(1.0) * b * 1.4;
        let mut a = if n > 1e-9 { [dir[0] / n * speed, dir[1] / n * speed] } else { [0.0, 0.0] };
        for v in &mut a {
            *v += self.noise * b * rng.sample::<f64, _>(StandardNormal);
            *v = v.clamp(-b, b);
        }
        a
    }
}

fn nearest_center(spec: &EnvSpec, color: Color, pos: [f64; 2]) -> Option<[f64; 2]> {
    spec.regions
        .iter()
        .filter(|r| r.color == color)
        .min_by(|a, b| a.boundary_distance(pos).total_cmp(&b.boundary_distance(pos)))
        .map(|r| r.center)
}

/// A random behavior from a mixture of constraint-agnostic styles.
pub fn random_style<R: Rng + ?Sized>(rng: &mut R) -> ScriptedNavigator {
    let noise = rng.random_range(0.05..0.9);
    match rng.random_range(0..5) {
        0 => ScriptedNavigator::direct(noise),
        1 => ScriptedNavigator { red_margin: 0.0, ..ScriptedNavigator::avoid_task(noise) },
        2 => ScriptedNavigator { blue_margin: 0.0, ..ScriptedNavigator::avoid_task(noise) },
        3 => ScriptedNavigator { visit: vec![], ..ScriptedNavigator::avoid_task(noise) },
        _ => ScriptedNavigator::avoid_task(rng.random_range(0.5..1.5)),
    }
}
