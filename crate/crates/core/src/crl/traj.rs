use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::CrlError;
use crate::tl::Trace;

/// One episode: T+1 states, T actions and rewards, plus constraint
/// bookkeeping under the formula it was last scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dfa_states: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default)]
    pub traj_cost: f64,
    #[serde(default)]
    pub violation: bool,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Trajectory {
    pub fn new(states: Vec<Vec<f64>>, actions: Vec<Vec<f64>>, rewards: Vec<f64>) -> Self {
        Trajectory {
            states,
            actions,
            rewards,
            dfa_states: None,
            rho: None,
            traj_cost: 0.0,
            violation: false,
            meta: BTreeMap::new(),
        }
    }

    /// Number of transitions T.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), CrlError> {
        let t = self.actions.len();
        if self.states.len() != t + 1 || self.rewards.len() != t {
            return Err(CrlError::Malformed(format!(
                "{} states, {} actions, {} rewards",
                self.states.len(),
                t,
                self.rewards.len()
            )));
        }
        if let Some(q) = &self.dfa_states {
            if q.len() != t + 1 {
                return Err(CrlError::Malformed(format!("{} DFA states for {} states", q.len(), t + 1)));
            }
        }
        let dim = self.state_dim();
        if self.states.iter().any(|s| s.len() != dim) {
            return Err(CrlError::Malformed("ragged state rows".into()));
        }
        if let Some(a0) = self.actions.first() {
            if self.actions.iter().any(|a| a.len() != a0.len()) {
                return Err(CrlError::Malformed("ragged action rows".into()));
            }
        }
        Ok(())
    }

    pub fn trace(&self) -> Result<Trace, CrlError> {
        Ok(Trace::new(self.states.clone())?)
    }
}

/// Reads one trajectory per non-blank line. Errors carry the 1-based line.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Trajectory>, CrlError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| CrlError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let traj: Trajectory = serde_json::from_str(&line)
            .map_err(|e| CrlError::Parse { line: i + 1, message: e.to_string() })?;
        traj.validate().map_err(|e| CrlError::Parse { line: i + 1, message: e.to_string() })?;
        out.push(traj);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut out: W, trajs: &[Trajectory]) -> Result<(), CrlError> {
    for t in trajs {
        serde_json::to_writer(&mut out, t).map_err(|e| CrlError::Io(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| CrlError::Io(e.to_string()))?;
    }
    Ok(())
}

pub fn read_jsonl_file(path: &std::path::Path) -> Result<Vec<Trajectory>, CrlError> {
    let f = std::fs::File::open(path).map_err(|e| CrlError::Io(format!("{}: {e}", path.display())))?;
    read_jsonl(std::io::BufReader::new(f))
}

pub fn write_jsonl_file(path: &std::path::Path, trajs: &[Trajectory]) -> Result<(), CrlError> {
    let f = std::fs::File::create(path).map_err(|e| CrlError::Io(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(f);
    write_jsonl(&mut w, trajs)?;
    w.flush().map_err(|e| CrlError::Io(e.to_string()))
}
