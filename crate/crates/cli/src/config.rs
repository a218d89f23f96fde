use std::path::Path;

use ilcl::crl::CrlConfig;
use ilcl::envs::DemoConfig;
use ilcl::ilcl::IlclConfig;
use ilcl::mining::MiningConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Top-level run configuration, read from TOML. Every table is optional and
/// falls back to the module defaults; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<String>,
    pub seed: Option<u64>,
    /// Seed of the randomized training layout.
    pub layout_seed: Option<u64>,
    pub mining: MiningConfig,
    pub crl: CrlConfig,
    pub demos: DemoOptions,
    pub ilcl: IlclOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoOptions {
    pub n: usize,
    pub quantile: f64,
    pub pool_size: usize,
    pub max_attempts: usize,
    pub scripted_warm_start: usize,
}

impl Default for DemoOptions {
    fn default() -> Self {
        let d = DemoConfig::default();
        DemoOptions {
            n: d.n,
            quantile: d.quantile,
            pool_size: d.pool_size,
            max_attempts: d.max_attempts,
            scripted_warm_start: d.scripted_warm_start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlclOptions {
    pub iterations: usize,
    pub bootstrap_rollouts: usize,
    pub samples_per_iteration: usize,
    pub sample_attempts: usize,
    pub select_samples: usize,
}

impl Default for IlclOptions {
    fn default() -> Self {
        let d = IlclConfig::default();
        IlclOptions {
            iterations: d.iterations,
            bootstrap_rollouts: d.bootstrap_rollouts,
            samples_per_iteration: d.samples_per_iteration,
            sample_attempts: d.sample_attempts,
            select_samples: d.select_samples,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        };
        cfg.mining.validate().map_err(|e| CliError::Config(e.to_string()))?;
        cfg.crl.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn demo_config(&self) -> DemoConfig {
        DemoConfig {
            n: self.demos.n,
            quantile: self.demos.quantile,
            pool_size: self.demos.pool_size,
            max_attempts: self.demos.max_attempts,
            scripted_warm_start: self.demos.scripted_warm_start,
            seed: self.seed(),
            crl: self.crl.clone(),
        }
    }

    pub fn ilcl_config(&self) -> IlclConfig {
        IlclConfig {
            iterations: self.ilcl.iterations,
            bootstrap_rollouts: self.ilcl.bootstrap_rollouts,
            samples_per_iteration: self.ilcl.samples_per_iteration,
            sample_attempts: self.ilcl.sample_attempts,
            select_samples: self.ilcl.select_samples,
            seed: self.seed(),
            mining: MiningConfig { seed: self.mining.seed ^ self.seed(), ..self.mining.clone() },
            crl: CrlConfig { seed: self.crl.seed ^ self.seed(), ..self.crl.clone() },
            bootstrap_crl: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_override_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 3\n[mining]\nzeta = 0.05\n[crl]\nenv_steps = 10\n").unwrap();
        assert_eq!(cfg.mining.zeta, 0.05);
        assert_eq!(cfg.mining.population, MiningConfig::default().population);
        assert_eq!(cfg.crl.env_steps, 10);
        assert_eq!(cfg.ilcl_config().seed, 3);
        assert!(toml::from_str::<RunConfig>("bogus = 1\n").is_err());
        assert!(toml::from_str::<RunConfig>("[crl]\nalphaa = 1\n").is_err());
    }
}
