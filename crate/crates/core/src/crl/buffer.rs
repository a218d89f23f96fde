use std::collections::VecDeque;

use rand::Rng;

use super::{CrlError, Trajectory};

/// Address of one transition: trajectory id and time index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StepRef {
    pub traj_id: u64,
    pub t: usize,
}

/// Trajectory-granular replay memory. Each stored transition resolves to
/// the trajectory that contains it; the oldest trajectories are evicted
/// once the step capacity is exceeded.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    trajs: VecDeque<Trajectory>,
    first_id: u64,
    capacity: usize,
    n_steps: usize,
    max_len: usize,
}

impl ReplayBuffer {
    pub fn new(capacity_steps: usize) -> Self {
        ReplayBuffer { trajs: VecDeque::new(), first_id: 0, capacity: capacity_steps, n_steps: 0, max_len: 0 }
    }

    /// Stores a scored trajectory and returns its id. Empty trajectories
    /// are stored but never sampled.
    pub fn push(&mut self, traj: Trajectory) -> u64 {
        let id = self.first_id + self.trajs.len() as u64;
        self.n_steps += traj.len();
        self.max_len = self.max_len.max(traj.len());
        self.trajs.push_back(traj);
        while self.n_steps > self.capacity && self.trajs.len() > 1 {
            let old = self.trajs.pop_front().expect("non-empty");
            self.n_steps -= old.len();
            self.first_id += 1;
        }
        id
    }

    pub fn get(&self, id: u64) -> Option<&Trajectory> {
        id.checked_sub(self.first_id).and_then(|i| self.trajs.get(i as usize))
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_trajectories(&self) -> usize {
        self.trajs.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &Trajectory)> {
        self.trajs.iter().enumerate().map(move |(i, t)| (self.first_id + i as u64, t))
    }

    /// Trajectory-level cost assigned to one of its steps: the containing
    /// trajectory's cost, shared uniformly by all its steps.
    pub fn redistribute(&self, step: StepRef) -> Result<f64, CrlError> {
        match self.get(step.traj_id) {
            Some(t) if step.t < t.len() => Ok(t.traj_cost),
            _ => Err(CrlError::StepNotFound { traj_id: step.traj_id, t: step.t }),
        }
    }

    /// A transition drawn uniformly over all stored steps.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<StepRef> {
        if self.n_steps == 0 {
            return None;
        }
        loop {
            let i = rng.random_range(0..self.trajs.len());
            let len = self.trajs[i].len();
            if len > 0 && rng.random_range(0..self.max_len) < len {
                return Some(StepRef { traj_id: self.first_id + i as u64, t: rng.random_range(0..len) });
            }
        }
    }
}
