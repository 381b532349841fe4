//! One file configures a whole pipeline run. TOML or JSON, every section
//! optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archspace::SearchSpaceConfig;
use crate::error::{Error, Result};
use crate::fedsim::{desk_space, FedConfig};
use crate::fitness::FitnessWeights;
use crate::ga::GaConfig;
use crate::latency::LpmConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub n_budgets: usize,
    /// MACs; defaults to the usual floor, clamped to the space.
    pub min_budget: Option<f64>,
    /// MACs; defaults to the space maximum.
    pub max_budget: Option<f64>,
    /// Cache sizes compared by the sensitivity sweep.
    pub sweep: Vec<usize>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self { n_budgets: 60, min_budget: None, max_budget: None, sweep: vec![2, 4, 8, 10, 12, 16, 20, 30, 40, 60] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedsimSection {
    /// Simulated supernet; independent of the search space above so the
    /// simulation stays small.
    pub space: SearchSpaceConfig,
    pub run: FedConfig,
    /// Weights for building the curriculum cache on `space`. Narrow desk
    /// networks have high effectiveness, so the default `rho0` is loose.
    pub weights: FitnessWeights,
    /// Budgets in the curriculum cache built when none is supplied.
    pub cache_budgets: usize,
}

impl Default for FedsimSection {
    fn default() -> Self {
        Self {
            space: desk_space(),
            run: FedConfig::default(),
            weights: FitnessWeights { rho0: 2.0, ..FitnessWeights::default() },
            cache_budgets: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencySection {
    /// `cpu` or `gpu` synthetic oracle.
    pub profile: String,
    pub samples: usize,
    pub lpm: LpmConfig,
}

impl Default for LatencySection {
    fn default() -> Self {
        Self { profile: "cpu".into(), samples: 600, lpm: LpmConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub space: SearchSpaceConfig,
    pub weights: FitnessWeights,
    pub ga: GaConfig,
    pub cache: CacheConfig,
    pub fedsim: FedsimSection,
    pub latency: LatencySection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// `.json` files are JSON, anything else TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text)?,
            _ => Self::from_toml(&text)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        self.weights.validate(self.space.num_stages)?;
        self.ga.validate()?;
        self.fedsim.space.validate()?;
        self.fedsim.weights.validate(self.fedsim.space.num_stages)?;
        self.fedsim.run.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
        assert_eq!(PipelineConfig::from_json("{}").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn partial_sections_and_unknown_keys() {
        let c = PipelineConfig::from_toml("[ga]\ngenerations = 7\n[weights]\ngamma = 100.0\n").unwrap();
        assert_eq!(c.ga.generations, 7);
        assert_eq!(c.ga.population_size, 64);
        assert_eq!(c.weights.gamma, 100.0);
        assert!(PipelineConfig::from_toml("[ga]\ngenerashuns = 7\n").is_err());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
