//! Run configuration: one human-editable TOML file per experiment.
//!
//! Parsing is strict: any unknown key anywhere in the tree is rejected
//! before any computation starts. The raw file contents are hashed into
//! every output file so reruns are attributable and byte-identical.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelParams, Payoff};
use crate::pide::GridSpec;
use crate::simulate::StrategyClosure;
use crate::util::fnv1a64;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("command `{command}` requires the [{block}] block")]
    MissingBlock {
        command: &'static str,
        block: &'static str,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Batch commands exposed by the front door.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Price,
    Hedge,
    Simulate,
    Validate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Price => "price",
            Command::Hedge => "hedge",
            Command::Simulate => "simulate",
            Command::Validate => "validate",
        }
    }
}

impl std::str::FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "price" => Ok(Command::Price),
            "hedge" => Ok(Command::Hedge),
            "simulate" => Ok(Command::Simulate),
            "validate" => Ok(Command::Validate),
            other => Err(format!("unknown command `{other}`")),
        }
    }
}

/// Monte Carlo sizes; the seed is a reproducibility contract for the
/// simulate and hedge commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: Option<u64>,
    /// Initial wealth for plain simulation runs (hedge runs start from the
    /// option premium instead).
    pub v0: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateBlock {
    /// Named checks to run; omitted means the full suite, an explicit empty
    /// list runs nothing.
    pub checks: Option<Vec<String>>,
}

/// One experiment: market, contract, strategy closure, grids, simulation
/// sizes and output destination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub command: Command,
    pub model: Option<ModelParams>,
    pub payoff: Option<Payoff>,
    pub closure: Option<StrategyClosure>,
    pub grid: Option<GridSpec>,
    pub simulation: Option<SimulationBlock>,
    #[serde(default)]
    pub output: Option<OutputBlock>,
    #[serde(default)]
    pub validate: Option<ValidateBlock>,
}

/// A parsed config together with the hash of its raw bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub config_hash: u64,
}

pub fn parse_config(text: &str) -> Result<LoadedConfig, ConfigError> {
    let config: RunConfig = toml::from_str(text)?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(ConfigError::SchemaVersion(config.schema_version));
    }
    let loaded = LoadedConfig {
        config,
        config_hash: fnv1a64(text.as_bytes()),
    };
    loaded.validate_blocks()?;
    Ok(loaded)
}

pub fn load_config(path: &std::path::Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

impl LoadedConfig {
    fn require<'a, T>(
        field: &'a Option<T>,
        command: &'static str,
        block: &'static str,
    ) -> Result<&'a T, ConfigError> {
        field
            .as_ref()
            .ok_or(ConfigError::MissingBlock { command, block })
    }

    fn validate_blocks(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        match c.command {
            Command::Price => {
                Self::require(&c.model, "price", "model")?;
                Self::require(&c.payoff, "price", "payoff")?;
                Self::require(&c.closure, "price", "closure")?;
                Self::require(&c.grid, "price", "grid")?;
            }
            Command::Hedge => {
                Self::require(&c.model, "hedge", "model")?;
                Self::require(&c.payoff, "hedge", "payoff")?;
                Self::require(&c.closure, "hedge", "closure")?;
                Self::require(&c.grid, "hedge", "grid")?;
                let sim = Self::require(&c.simulation, "hedge", "simulation")?;
                if sim.n_paths < 2 {
                    return Err(ConfigError::Invalid(
                        "hedge needs n_paths >= 2 (standard error undefined otherwise)".into(),
                    ));
                }
            }
            Command::Simulate => {
                Self::require(&c.model, "simulate", "model")?;
                Self::require(&c.closure, "simulate", "closure")?;
                Self::require(&c.simulation, "simulate", "simulation")?;
            }
            Command::Validate => {
                Self::require(&c.model, "validate", "model")?;
                Self::require(&c.payoff, "validate", "payoff")?;
                Self::require(&c.closure, "validate", "closure")?;
                Self::require(&c.grid, "validate", "grid")?;
                Self::require(&c.simulation, "validate", "simulation")?;
            }
        }
        if let Some(sim) = &c.simulation {
            if sim.n_paths == 0 || sim.n_steps == 0 {
                return Err(ConfigError::Invalid(
                    "n_paths and n_steps must be >= 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// The effective seed: a CLI override wins over the config value. The
    /// simulate and hedge commands refuse to run without one.
    pub fn effective_seed(&self, cli_seed: Option<u64>) -> Result<Option<u64>, ConfigError> {
        let configured = self.config.simulation.as_ref().and_then(|s| s.seed);
        let seed = cli_seed.or(configured);
        match self.config.command {
            Command::Simulate | Command::Hedge if seed.is_none() => Err(ConfigError::Invalid(
                "simulate/hedge require a seed (config [simulation].seed or --seed)".into(),
            )),
            _ => Ok(seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
schema_version = 1
command = "price"

[model]
mu = { kind = "constant", value = 0.05 }
sigma = { kind = "constant", value = 0.2 }
r = { kind = "constant", value = 0.05 }
lambda = { kind = "constant", value = 0.0 }
rho = 0.0
a = 0.0
b = 0.0
s0 = 100.0
theta0 = 0.0
maturity = 1.0

[payoff]
kind = "european-call"
strike = 100.0

[closure]
mode = "exogenous"
eta = { kind = "constant", value = 0.0 }
zeta = { kind = "constant", value = 0.0 }

[grid]
s_max = 300.0
n_space = 400
n_time = 400
"#;

    #[test]
    fn parses_base_config() {
        let loaded = parse_config(BASE).unwrap();
        assert_eq!(loaded.config.command, Command::Price);
        let model = loaded.config.model.unwrap();
        assert_eq!(model.s0, 100.0);
        assert!(
            loaded.config.grid.unwrap().align_strike,
            "alignment defaults on"
        );
    }

    #[test]
    fn rejects_unknown_keys_anywhere() {
        let with_unknown_top = format!("{BASE}\nnonsense = 3\n");
        assert!(parse_config(&with_unknown_top).is_err());
        let with_unknown_nested = BASE.replace("rho = 0.0", "rho = 0.0\nruh = 1.0");
        assert!(parse_config(&with_unknown_nested).is_err());
    }

    #[test]
    fn rejects_wrong_schema_version() {
        let v2 = BASE.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(
            parse_config(&v2),
            Err(ConfigError::SchemaVersion(2))
        ));
    }

    #[test]
    fn missing_block_for_command_is_an_error() {
        let no_grid = BASE
            .replace("[grid]", "[output]")
            .replace("s_max = 300.0", "")
            .replace("n_space = 400", "")
            .replace("n_time = 400", "");
        match parse_config(&no_grid) {
            Err(ConfigError::MissingBlock { block, .. }) => assert_eq!(block, "grid"),
            other => panic!("expected missing-block error, got {other:?}"),
        }
    }

    #[test]
    fn hedge_requires_seed_and_enough_paths() {
        let hedge = BASE.replace("command = \"price\"", "command = \"hedge\"")
            + "\n[simulation]\nn_paths = 1\nn_steps = 10\n";
        assert!(matches!(parse_config(&hedge), Err(ConfigError::Invalid(_))));
        let hedge_ok = BASE.replace("command = \"price\"", "command = \"hedge\"")
            + "\n[simulation]\nn_paths = 100\nn_steps = 10\n";
        let loaded = parse_config(&hedge_ok).unwrap();
        assert!(loaded.effective_seed(None).is_err());
        assert_eq!(loaded.effective_seed(Some(7)).unwrap(), Some(7));
    }

    #[test]
    fn config_hash_tracks_bytes() {
        let a = parse_config(BASE).unwrap();
        let b = parse_config(&format!("{BASE}\n# a trailing comment\n")).unwrap();
        assert_ne!(a.config_hash, b.config_hash);
        assert_eq!(a.config_hash, parse_config(BASE).unwrap().config_hash);
    }
}
