//! Policy checkpoints: a flat little-endian `f32` parameter file plus a
//! JSON sidecar with shapes, hashes and the constraint text. The automaton
//! is rebuilt from the constraint on load.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CrlConfig, CrlError, LagrangianPolicy};
use crate::automaton::to_dfa;
use crate::nn::Mlp;
use crate::tl::{format_formula, parse_formula};

const FORMAT: &str = "ilcl-policy";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub constraint: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_bound: f64,
    pub n_dfa_states: usize,
    pub actor_sizes: Vec<usize>,
    pub critic_sizes: Vec<usize>,
    /// Name and length of each array, in file order.
    pub arrays: Vec<(String, usize)>,
    pub log_alpha: f64,
    pub lambda: f64,
    pub seed: u64,
    pub config_hash: String,
    pub config: CrlConfig,
    pub params_sha256: String,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io(e: std::io::Error) -> CrlError {
    CrlError::Io(e.to_string())
}

fn arrays(p: &LagrangianPolicy) -> Vec<(&'static str, &[f32])> {
    vec![
        ("obs_mean", &p.obs_mean[..]),
        ("obs_std", &p.obs_std[..]),
        ("actor", p.actor.params()),
        ("q_r0", p.q_r[0].params()),
        ("q_r1", p.q_r[1].params()),
        ("q_c0", p.q_c[0].params()),
        ("q_c1", p.q_c[1].params()),
        ("q_r0_targ", p.q_r_targ[0].params()),
        ("q_r1_targ", p.q_r_targ[1].params()),
        ("q_c0_targ", p.q_c_targ[0].params()),
        ("q_c1_targ", p.q_c_targ[1].params()),
    ]
}

/// Writes `path` and `path.json`. Returns the sidecar metadata.
pub fn save_policy(policy: &LagrangianPolicy, cfg: &CrlConfig, path: &Path) -> Result<CheckpointMeta, CrlError> {
    let arrs = arrays(policy);
    let mut bytes = Vec::with_capacity(arrs.iter().map(|(_, a)| 4 * a.len()).sum());
    for (_, a) in &arrs {
        for v in *a {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = CheckpointMeta {
        format: FORMAT.into(),
        version: VERSION,
        constraint: format_formula(&policy.constraint),
        state_dim: policy.state_dim,
        action_dim: policy.action_dim,
        action_bound: policy.action_bound,
        n_dfa_states: policy.dfa.n_states(),
        actor_sizes: policy.actor.sizes().to_vec(),
        critic_sizes: policy.q_r[0].sizes().to_vec(),
        arrays: arrs.iter().map(|(n, a)| (n.to_string(), a.len())).collect(),
        log_alpha: policy.log_alpha,
        lambda: policy.lambda,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        params_sha256: hex(&bytes),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, &bytes).map_err(io)?;
    let json = serde_json::to_string_pretty(&meta).map_err(|e| CrlError::Checkpoint(e.to_string()))?;
    fs::write(sidecar(path), json).map_err(io)?;
    Ok(meta)
}

pub fn load_policy(path: &Path) -> Result<(LagrangianPolicy, CheckpointMeta), CrlError> {
    let bad = |m: String| CrlError::Checkpoint(m);
    let json = fs::read_to_string(sidecar(path)).map_err(io)?;
    let meta: CheckpointMeta = serde_json::from_str(&json).map_err(|e| bad(e.to_string()))?;
    if meta.format != FORMAT || meta.version != VERSION {
        return Err(bad(format!("unsupported checkpoint {} v{}", meta.format, meta.version)));
    }
    let bytes = fs::read(path).map_err(io)?;
    if hex(&bytes) != meta.params_sha256 {
        return Err(bad("parameter file does not match its recorded hash".into()));
    }
    let constraint = parse_formula(&meta.constraint)?;
    let dfa = to_dfa(&constraint)?;
    if dfa.n_states() != meta.n_dfa_states {
        return Err(bad(format!(
            "automaton rebuilt with {} states, checkpoint recorded {}",
            dfa.n_states(),
            meta.n_dfa_states
        )));
    }
    let floats: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if bytes.len() % 4 != 0 || floats.len() != meta.arrays.iter().map(|(_, n)| n).sum::<usize>() {
        return Err(bad("parameter file length disagrees with the recorded shapes".into()));
    }
    let mut offset = 0;
    let mut take = |n: usize| {
        let v = floats[offset..offset + n].to_vec();
        offset += n;
        v
    };
    let mut parts: Vec<Vec<f32>> = meta.arrays.iter().map(|(_, n)| take(*n)).collect();
    if parts.len() != 11 {
        return Err(bad(format!("expected 11 arrays, found {}", parts.len())));
    }
    let net = |sizes: &[usize], p: Vec<f32>| Mlp::from_params(sizes, p).ok_or_else(|| bad("network shape mismatch".into()));
    let mut nets = parts.split_off(2).into_iter();
    let actor = net(&meta.actor_sizes, nets.next().expect("actor"))?;
    let mut critic = || net(&meta.critic_sizes, nets.next().expect("critic"));
    let (q_r0, q_r1, q_c0, q_c1) = (critic()?, critic()?, critic()?, critic()?);
    let (t_r0, t_r1, t_c0, t_c1) = (critic()?, critic()?, critic()?, critic()?);
    let obs_dim = meta.state_dim + dfa.n_states();
    if parts[0].len() != meta.state_dim
        || parts[1].len() != meta.state_dim
        || meta.actor_sizes.first() != Some(&obs_dim)
        || meta.critic_sizes.first() != Some(&(obs_dim + meta.action_dim))
    {
        return Err(bad("network input width disagrees with state and automaton sizes".into()));
    }
    let obs_std = parts.pop().expect("std");
    let obs_mean = parts.pop().expect("mean");
    let policy = LagrangianPolicy {
        constraint,
        dfa,
        state_dim: meta.state_dim,
        action_dim: meta.action_dim,
        action_bound: meta.action_bound,
        obs_mean,
        obs_std,
        actor,
        q_r: [q_r0, q_r1],
        q_r_targ: [t_r0, t_r1],
        q_c: [q_c0, q_c1],
        q_c_targ: [t_c0, t_c1],
        log_alpha: meta.log_alpha,
        lambda: meta.lambda,
    };
    Ok((policy, meta))
}
