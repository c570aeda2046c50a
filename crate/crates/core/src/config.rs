//! Run configuration: a single versioned TOML file. Relative paths are
//! resolved against the directory holding the file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{default_ev_fuels, resolve, FuelType, IngestOptions};
use crate::models::suite::{
    default_grid, default_templates, validate_suite, GridCell, ModelTemplate,
};
use crate::sim::{EvParams, SimOptions};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub trips: PathBuf,
    pub vehicles: PathBuf,
    /// Column mapping; the built-in default names are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    #[serde(default = "default_max_distance")]
    pub max_distance_mi: f64,
    #[serde(default = "default_ev_fuels")]
    pub fuel_types: BTreeSet<FuelType>,
}

fn default_max_distance() -> f64 {
    200.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub min_dwell_h: f64,
    pub bin_width_h: f64,
    pub overnight_charge: bool,
    pub initial_soc: f64,
    /// Model whose predictions drive `simulate --source predicted`.
    pub model: String,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let o = SimOptions::default();
        Self {
            min_dwell_h: o.min_dwell_h,
            bin_width_h: o.bin_width_h,
            overnight_charge: o.overnight_charge,
            initial_soc: o.initial_soc,
            model: "rf".into(),
        }
    }
}

impl SimulationConfig {
    pub fn options(&self) -> SimOptions {
        SimOptions {
            min_dwell_h: self.min_dwell_h,
            bin_width_h: self.bin_width_h,
            overnight_charge: self.overnight_charge,
            initial_soc: self.initial_soc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default = "default_templates")]
    pub models: Vec<ModelTemplate>,
    #[serde(default = "default_grid")]
    pub grid: Vec<GridCell>,
    #[serde(default)]
    pub ev: EvParams,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("run")
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub model: Option<String>,
}

impl RunConfig {
    /// Load, apply overrides, resolve paths and validate.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, base: &Path, overrides: &Overrides) -> Result<RunConfig> {
        let mut raw: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(seed) = overrides.seed {
            raw.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        if !raw.contains_key("seed") {
            return Err(Error::Config("`seed` is required".into()));
        }
        if let Some(models) = raw.get("models").and_then(|m| m.as_array()) {
            for (i, m) in models.iter().enumerate() {
                let has = |k: &str| m.as_table().is_some_and(|t| t.contains_key(k));
                if !has("name") || !has("kind") {
                    return Err(Error::Config(format!(
                        "models[{i}] needs both `name` and `kind`"
                    )));
                }
            }
        }
        let mut cfg: RunConfig = raw
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(dir) = &overrides.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(model) = &overrides.model {
            cfg.simulation.model = model.clone();
        }
        cfg.output_dir = resolve(base, &cfg.output_dir);
        cfg.data.trips = resolve(base, &cfg.data.trips);
        cfg.data.vehicles = resolve(base, &cfg.data.vehicles);
        cfg.data.schema = cfg.data.schema.as_deref().map(|s| resolve(base, s));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let mut paths = vec![&self.data.trips, &self.data.vehicles];
        paths.extend(self.data.schema.as_ref());
        for p in paths {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "input file {} does not exist",
                    p.display()
                )));
            }
        }
        if !(self.data.max_distance_mi > 0.0) {
            return Err(Error::Config("max_distance_mi must be positive".into()));
        }
        let frac = self.split.train_fraction;
        if !(frac > 0.0 && frac < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {frac} must lie in (0, 1)"
            )));
        }
        validate_suite(&self.models, &self.grid)?;
        self.ev.validate()?;
        self.simulation.options().validate()?;
        if !self.models.iter().any(|m| m.name == self.simulation.model) {
            return Err(Error::Config(format!(
                "simulation model `{}` is not among the configured models",
                self.simulation.model
            )));
        }
        Ok(())
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            max_distance_mi: self.data.max_distance_mi,
            fuels: self.data.fuel_types.clone(),
        }
    }

    /// Canonical TOML rendering of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`RunConfig::to_toml`], leaving out the output directory
    /// so a run can be repeated elsewhere under the same hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }
}
