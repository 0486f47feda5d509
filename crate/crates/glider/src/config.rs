//! Run configuration: a single TOML document merging the environment, net,
//! trainer, and noise settings, serialized verbatim next to every artifact
//! so a run can be bit-reproduced from its output directory alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::environment::{EnvConfig, NoiseSpec};
use crate::net::{MlpSpec, CHECKPOINT_FORMAT_VERSION};
use crate::racer::TrainerConfig;
use crate::{Error, Result};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Grid and seed list for the phase sweep subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub betas: Vec<f64>,
    pub rho_stars: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepConfig {
    /// Full cartesian grid of (beta, rho*) points.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        let mut g = Vec::with_capacity(self.betas.len() * self.rho_stars.len());
        for &b in &self.betas {
            for &r in &self.rho_stars {
                g.push((b, r));
            }
        }
        g
    }
}

/// Everything a run needs. Unknown keys are rejected so a typo in a sweep
/// config fails loudly instead of silently using a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub env: EnvConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub net: MlpSpec,
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.trainer.validate()?;
        if self.noise.sigma_xi < 0.0 {
            return Err(Error::InvalidParam {
                name: "sigma_xi",
                reason: "must be >= 0".into(),
            });
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("{e}")))
    }
}

/// Serialized alongside every artifact; holds the exact config, the seed,
/// and the format versions needed to reload the outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub config_format_version: u32,
    pub checkpoint_format_version: u32,
    pub seed: u64,
    pub command: String,
    pub config: RunConfig,
}

/// Write `provenance.json` (and the config as TOML) into `out_dir`.
pub fn write_provenance(out_dir: &Path, cfg: &RunConfig, command: &str) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let prov = Provenance {
        config_format_version: CONFIG_FORMAT_VERSION,
        checkpoint_format_version: CHECKPOINT_FORMAT_VERSION,
        seed: cfg.seed,
        command: command.to_string(),
        config: cfg.clone(),
    };
    let json = serde_json::to_string_pretty(&prov)?;
    std::fs::write(out_dir.join("provenance.json"), json)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}
