//! Deployment-time search: the budgeted GA with extra hard limits on
//! parameters and predicted latency, or a soft latency penalty.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::archspace::{ArchGenome, GenomeRatios, SearchSpaceConfig};
use crate::error::{Error, Result};
use crate::fitness::{FitnessReport, FitnessWeights, LatencyPredictor};
use crate::ga::{search, BudgetConstraint, GaConfig, SearchProblem};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyMode {
    /// Reject candidates over the latency budget.
    #[default]
    Hard,
    /// Maximize `F − δ·latency`; the latency budget is not enforced.
    Soft,
}

impl std::str::FromStr for LatencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Self::Hard),
            "soft" => Ok(Self::Soft),
            other => Err(Error::Argument(format!("latency mode must be hard or soft, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentSpec {
    pub macs_budget: f64,
    /// Millions of parameters.
    #[serde(default)]
    pub param_budget_m: Option<f64>,
    #[serde(default)]
    pub latency_budget_ms: Option<f64>,
    #[serde(default)]
    pub latency_mode: LatencyMode,
    #[serde(default)]
    pub delta: f64,
    /// When set, the latency model must have been trained for this device.
    #[serde(default)]
    pub device: Option<String>,
}

impl DeploymentSpec {
    pub fn macs_only(macs_budget: f64) -> Self {
        Self {
            macs_budget,
            param_budget_m: None,
            latency_budget_ms: None,
            latency_mode: LatencyMode::Hard,
            delta: 0.0,
            device: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config("delta must be finite and non-negative".into()));
        }
        if self.latency_mode == LatencyMode::Hard && self.delta != 0.0 {
            return Err(Error::Config("delta only applies in soft latency mode".into()));
        }
        Ok(())
    }

    fn constraint(&self, rho0: f64) -> BudgetConstraint {
        BudgetConstraint {
            macs_budget: self.macs_budget,
            param_budget: self.param_budget_m.map(|m| m * 1e6),
            latency_budget_ms: match self.latency_mode {
                LatencyMode::Hard => self.latency_budget_ms,
                LatencyMode::Soft => None,
            },
            rho0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentResult {
    pub genome: ArchGenome,
    pub ratios: GenomeRatios,
    pub report: FitnessReport,
    /// The maximized quantity: fitness, or the latency-penalized fitness in
    /// soft mode.
    pub objective: f64,
    pub predicted_latency_ms: Option<f64>,
    pub macs: u64,
    pub params: u64,
    /// Not serialized, so responses are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_s: f64,
}

pub fn deployment_search(
    cfg: &SearchSpaceConfig,
    weights: &FitnessWeights,
    ga_cfg: &GaConfig,
    spec: &DeploymentSpec,
    latency_model: Option<&(dyn LatencyPredictor + Sync)>,
) -> Result<DeploymentResult> {
    let started = Instant::now();
    spec.validate()?;
    if let (Some(want), Some(model)) = (&spec.device, latency_model) {
        if model.device() != want {
            return Err(Error::ModelMismatch(format!(
                "latency model is for {:?}, request is for {want:?}",
                model.device()
            )));
        }
    }
    let problem = SearchProblem {
        space: cfg,
        weights,
        constraint: spec.constraint(weights.rho0),
        latency: latency_model,
        latency_penalty: match spec.latency_mode {
            LatencyMode::Soft => Some(spec.delta),
            LatencyMode::Hard => None,
        },
    };
    if spec.latency_mode == LatencyMode::Soft && latency_model.is_none() {
        return Err(Error::MissingLatencyModel);
    }
    let best = search(&problem, ga_cfg)?.best;
    let predicted_latency_ms = match (best.latency_ms, latency_model) {
        (Some(l), _) => Some(l),
        (None, Some(m)) => Some(m.predict_ms(&best.genome, cfg)?),
        (None, None) => None,
    };
    Ok(DeploymentResult {
        ratios: GenomeRatios::from_genome(&best.genome, cfg),
        genome: best.genome,
        report: best.report,
        objective: best.objective,
        predicted_latency_ms,
        macs: best.macs,
        params: best.params,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::{decode, macs, params};
    use crate::ga::search_budget;

    struct MacsClock;

    impl LatencyPredictor for MacsClock {
        fn device(&self) -> &str {
            "clock"
        }
        fn predict_ms(&self, genome: &ArchGenome, cfg: &SearchSpaceConfig) -> Result<f64> {
            Ok(macs(&decode(genome, cfg)?) as f64 / 1e8)
        }
    }

    fn quick() -> GaConfig {
        GaConfig { generations: 20, rng_seed: 11, ..Default::default() }
    }

    #[test]
    fn macs_only_reduces_to_budget_search() {
        let cfg = SearchSpaceConfig::default();
        let w = FitnessWeights::default();
        let d = deployment_search(&cfg, &w, &quick(), &DeploymentSpec::macs_only(600e6), None).unwrap();
        let g = search_budget(&cfg, &w, &quick(), BudgetConstraint::macs_only(600e6, w.rho0)).unwrap();
        assert_eq!(d.genome, g.best.genome);
        assert_eq!(d.report, g.best.report);
        assert_eq!(d.predicted_latency_ms, None);
    }

    #[test]
    fn param_budget_is_hard() {
        let cfg = SearchSpaceConfig::default();
        let w = FitnessWeights::default();
        let spec = DeploymentSpec { param_budget_m: Some(20.0), ..DeploymentSpec::macs_only(3.4e9) };
        let d = deployment_search(&cfg, &w, &quick(), &spec, None).unwrap();
        assert!(params(&decode(&d.genome, &cfg).unwrap()) <= 20_000_000);
    }

    #[test]
    fn latency_modes() {
        let cfg = SearchSpaceConfig::default();
        let w = FitnessWeights::default();
        let clock = MacsClock;
        let hard = DeploymentSpec { latency_budget_ms: Some(5.0), ..DeploymentSpec::macs_only(3.4e9) };
        let d = deployment_search(&cfg, &w, &quick(), &hard, Some(&clock)).unwrap();
        assert!(d.predicted_latency_ms.unwrap() <= 5.0);
        assert!(matches!(deployment_search(&cfg, &w, &quick(), &hard, None), Err(Error::MissingLatencyModel)));

        let soft =
            |delta| DeploymentSpec { latency_mode: LatencyMode::Soft, delta, ..DeploymentSpec::macs_only(3.4e9) };
        let zero = deployment_search(&cfg, &w, &quick(), &soft(0.0), Some(&clock)).unwrap();
        let plain = deployment_search(&cfg, &w, &quick(), &DeploymentSpec::macs_only(3.4e9), None).unwrap();
        assert_eq!(zero.genome, plain.genome);
        assert_eq!(zero.report, plain.report);
        let heavy = deployment_search(&cfg, &w, &quick(), &soft(50.0), Some(&clock)).unwrap();
        assert!(heavy.predicted_latency_ms.unwrap() < zero.predicted_latency_ms.unwrap());

        let wrong = DeploymentSpec { device: Some("phone".into()), ..hard };
        assert!(matches!(deployment_search(&cfg, &w, &quick(), &wrong, Some(&clock)), Err(Error::ModelMismatch(_))));
    }

    #[test]
    fn wall_time_is_not_serialized() {
        let cfg = SearchSpaceConfig::default();
        let w = FitnessWeights::default();
        let ga = GaConfig { generations: 2, ..Default::default() };
        let d = deployment_search(&cfg, &w, &ga, &DeploymentSpec::macs_only(600e6), None).unwrap();
        assert!(!serde_json::to_string(&d).unwrap().contains("wall"));
    }
}
