//! Training-free architecture fitness: stage entropy, effectiveness, depth
//! uniformity and channel monotonicity, combined into one scalar.

use serde::{Deserialize, Serialize};

use crate::archspace::{decode, ArchGenome, ArchInstance, SearchSpaceConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitnessWeights {
    /// Per-stage entropy weights. An empty vector means 1.0 for every stage.
    pub alpha: Vec<f64>,
    pub omega: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub rho0: f64,
    /// Latency penalty weight for the deployment objective.
    pub delta: f64,
}

impl Default for FitnessWeights {
    fn default() -> Self {
        Self { alpha: Vec::new(), omega: 1.0, lambda: 1.0, gamma: 1.0, rho0: 0.5, delta: 0.0 }
    }
}

impl FitnessWeights {
    pub fn alpha_for(&self, stage: usize) -> f64 {
        if self.alpha.is_empty() {
            1.0
        } else {
            self.alpha[stage]
        }
    }

    pub fn validate(&self, num_stages: usize) -> Result<()> {
        if !self.alpha.is_empty() && self.alpha.len() != num_stages {
            return Err(Error::Config(format!("alpha has {} entries, expected {num_stages}", self.alpha.len())));
        }
        let all = self.alpha.iter().chain([&self.omega, &self.lambda, &self.gamma, &self.delta]);
        if all.into_iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("fitness weights must be finite and non-negative".into()));
        }
        if !(self.rho0.is_finite() && self.rho0 > 0.0) {
            return Err(Error::Config("rho0 must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub stage_entropy: Vec<f64>,
    pub effectiveness: f64,
    pub depth_penalty: f64,
    pub channel_penalty: f64,
    pub total: f64,
    /// `effectiveness <= rho0`.
    pub feasible: bool,
}

impl FitnessReport {
    /// Recombine the components with `weights`.
    pub fn recompute(&self, weights: &FitnessWeights) -> f64 {
        combine(weights, &self.stage_entropy, self.effectiveness, self.depth_penalty, self.channel_penalty)
    }
}

fn combine(weights: &FitnessWeights, entropy: &[f64], rho: f64, q: f64, v: f64) -> f64 {
    let h: f64 = entropy.iter().enumerate().map(|(j, h)| weights.alpha_for(j) * h).sum();
    h - weights.omega * q + weights.lambda * rho - weights.gamma * v
}

/// `ln(r² · c_out) · Σ ln(c_in · k²)` over the stage's conv layers.
pub fn stage_entropy(instance: &ArchInstance, stage: usize) -> f64 {
    let layers = instance.stage_layers(stage);
    if layers.is_empty() {
        return 0.0;
    }
    let r = instance.stage_resolutions[stage] as f64;
    let c_out = instance.stage_widths[stage] as f64;
    let inner: f64 =
        layers.iter().filter(|l| l.is_conv()).map(|l| (l.c_in as f64 * (l.kernel * l.kernel) as f64).ln()).sum();
    (r * r * c_out).ln() * inner
}

/// Active conv layer count over the geometric mean of `c_in · k²`.
pub fn effectiveness(instance: &ArchInstance) -> Result<f64> {
    let logs: Vec<f64> = instance.conv_layers().map(|l| (l.c_in as f64 * (l.kernel * l.kernel) as f64).ln()).collect();
    if logs.is_empty() {
        return Err(Error::NoActiveLayers);
    }
    let n = logs.len() as f64;
    let mean_log = logs.iter().sum::<f64>() / n;
    Ok(n / mean_log.exp())
}

/// `exp` of the population variance of the stage depths.
pub fn depth_penalty(depths: &[usize]) -> f64 {
    if depths.is_empty() {
        return 1.0;
    }
    let n = depths.len() as f64;
    let mean = depths.iter().map(|&d| d as f64).sum::<f64>() / n;
    let var = depths.iter().map(|&d| (d as f64 - mean).powi(2)).sum::<f64>() / n;
    var.exp()
}

/// Sum of drops along the stem-then-stages width profile, in raw channels.
pub fn channel_penalty(widths: &[usize]) -> f64 {
    widths.windows(2).map(|w| w[0].saturating_sub(w[1]) as f64).sum()
}

pub fn fitness_of_instance(instance: &ArchInstance, weights: &FitnessWeights) -> Result<FitnessReport> {
    let stages = instance.stage_widths.len();
    let entropy: Vec<f64> = (0..stages).map(|j| stage_entropy(instance, j)).collect();
    let rho = effectiveness(instance)?;
    let q = depth_penalty(&instance.depths);
    let v = channel_penalty(&instance.width_profile());
    let total = combine(weights, &entropy, rho, q, v);
    Ok(FitnessReport {
        stage_entropy: entropy,
        effectiveness: rho,
        depth_penalty: q,
        channel_penalty: v,
        total,
        feasible: rho <= weights.rho0,
    })
}

/// Unclamped: infeasible genomes still get a total, and `feasible` is false.
pub fn fitness(genome: &ArchGenome, cfg: &SearchSpaceConfig, weights: &FitnessWeights) -> Result<FitnessReport> {
    fitness_of_instance(&decode(genome, cfg)?, weights)
}

/// Source of predicted latency for a genome.
pub trait LatencyPredictor {
    fn device(&self) -> &str;
    fn predict_ms(&self, genome: &ArchGenome, cfg: &SearchSpaceConfig) -> Result<f64>;
}

/// `F − δ · L_pred`.
pub fn deploy_fitness(
    genome: &ArchGenome,
    cfg: &SearchSpaceConfig,
    weights: &FitnessWeights,
    latency_model: Option<&dyn LatencyPredictor>,
    device: &str,
) -> Result<f64> {
    let model = latency_model.ok_or(Error::MissingLatencyModel)?;
    if model.device() != device {
        return Err(Error::ModelMismatch(format!(
            "latency model is for device '{}', requested '{device}'",
            model.device()
        )));
    }
    let report = fitness(genome, cfg, weights)?;
    Ok(penalize(report.total, weights.delta, model.predict_ms(genome, cfg)?))
}

pub(crate) fn penalize(total: f64, delta: f64, latency_ms: f64) -> f64 {
    total - delta * latency_ms
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::{LayerKind, LayerSpec};
    use approx::assert_relative_eq;

    fn layer(c_in: usize, c_out: usize, kernel: usize, r: usize, stage: Option<usize>) -> LayerSpec {
        LayerSpec {
            kind: if stage.is_some() { LayerKind::BlockReduce } else { LayerKind::Stem },
            c_in,
            c_out,
            kernel,
            stride: 1,
            resolution_out: r,
            stage,
            block: stage.map(|_| 0),
        }
    }

    fn instance(
        layers: Vec<LayerSpec>,
        boundaries: Vec<std::ops::Range<usize>>,
        widths: Vec<usize>,
        res: Vec<usize>,
    ) -> ArchInstance {
        let depths = vec![1; widths.len()];
        ArchInstance {
            layers,
            stage_boundaries: boundaries,
            stem_width: 8,
            stage_widths: widths,
            stage_resolutions: res,
            depths,
        }
    }

    #[test]
    fn entropy_single_layer() {
        let inst = instance(vec![layer(32, 64, 3, 8, Some(0))], vec![0..1], vec![64], vec![8]);
        let expected = 4096f64.ln() * 288f64.ln();
        assert_relative_eq!(stage_entropy(&inst, 0), expected, max_relative = 1e-12);
        assert_relative_eq!(stage_entropy(&inst, 0), 47.103, epsilon = 5e-4);
    }

    #[test]
    fn entropy_empty_stage_and_linearity() {
        let inst = instance(vec![], vec![0..0], vec![64], vec![8]);
        assert_eq!(stage_entropy(&inst, 0), 0.0);

        let one = instance(vec![layer(32, 64, 3, 8, Some(0))], vec![0..1], vec![64], vec![8]);
        let two = instance(vec![layer(32, 64, 3, 8, Some(0)); 2], vec![0..2], vec![64], vec![8]);
        assert_relative_eq!(stage_entropy(&two, 0), 2.0 * stage_entropy(&one, 0), max_relative = 1e-12);
    }

    #[test]
    fn effectiveness_cases() {
        let one = instance(vec![layer(4, 4, 1, 8, None)], vec![], vec![], vec![]);
        assert_relative_eq!(effectiveness(&one).unwrap(), 0.25, max_relative = 1e-12);

        // c_in·k² = 144 and 576 -> geometric mean 288
        let two = instance(vec![layer(16, 4, 3, 8, None), layer(64, 4, 3, 8, None)], vec![], vec![], vec![]);
        assert_relative_eq!(effectiveness(&two).unwrap(), 2.0 / 288.0, max_relative = 1e-12);

        let base = instance(vec![layer(3, 4, 1, 8, None), layer(7, 4, 1, 8, None)], vec![], vec![], vec![]);
        let scaled = instance(vec![layer(12, 4, 1, 8, None), layer(28, 4, 1, 8, None)], vec![], vec![], vec![]);
        assert_relative_eq!(effectiveness(&scaled).unwrap(), effectiveness(&base).unwrap() / 4.0, max_relative = 1e-12);

        let empty = instance(vec![], vec![], vec![], vec![]);
        assert!(matches!(effectiveness(&empty), Err(Error::NoActiveLayers)));
    }

    #[test]
    fn depth_penalty_cases() {
        assert_eq!(depth_penalty(&[2, 2, 2, 2]), 1.0);
        assert_relative_eq!(depth_penalty(&[1, 3, 1, 3]), std::f64::consts::E, max_relative = 1e-12);
        assert_relative_eq!(depth_penalty(&[1, 1, 1, 3]), 0.75f64.exp(), max_relative = 1e-12);
        assert_relative_eq!(depth_penalty(&[1, 1, 1, 3]), 2.1170, epsilon = 1e-4);
    }

    #[test]
    fn channel_penalty_cases() {
        assert_eq!(channel_penalty(&[25, 51, 102, 204, 409]), 0.0);
        assert_eq!(channel_penalty(&[128, 64, 256, 512, 512]), 64.0);
        assert_eq!(channel_penalty(&[512, 256, 128, 64, 32]), 480.0);
    }

    #[test]
    fn large_genome_fitness_magnitude() {
        let cfg = SearchSpaceConfig::default();
        let report = fitness(&ArchGenome::max(&cfg), &cfg, &FitnessWeights::default()).unwrap();
        assert!((2300.0..=2500.0).contains(&report.total), "{}", report.total);
        assert!(report.feasible);
        assert_eq!(report.channel_penalty, 0.0);
        assert_eq!(report.depth_penalty, 1.0);
    }

    #[test]
    fn penalty_floors_for_uniform_monotone_genome() {
        let cfg = SearchSpaceConfig::default();
        let w = FitnessWeights::default();
        let g = ArchGenome { depth: vec![1; 4], expansion: vec![2; 12], width: vec![3, 3, 5, 7, 9] };
        let r = fitness(&g, &cfg, &w).unwrap();
        let h: f64 = r.stage_entropy.iter().sum();
        assert_eq!(r.channel_penalty, 0.0);
        assert_eq!(r.depth_penalty, 1.0);
        assert_relative_eq!(r.total - h, -w.omega + w.lambda * r.effectiveness, max_relative = 1e-9);
    }

    struct Fixed(f64);
    impl LatencyPredictor for Fixed {
        fn device(&self) -> &str {
            "cpu"
        }
        fn predict_ms(&self, _: &ArchGenome, _: &SearchSpaceConfig) -> Result<f64> {
            Ok(self.0)
        }
    }

    #[test]
    fn deploy_fitness_contract() {
        let cfg = SearchSpaceConfig::default();
        let g = ArchGenome::max(&cfg);
        let mut w = FitnessWeights::default();
        let f = fitness(&g, &cfg, &w).unwrap().total;
        assert_eq!(deploy_fitness(&g, &cfg, &w, Some(&Fixed(12.5)), "cpu").unwrap(), f);
        w.delta = 10.0;
        assert_relative_eq!(
            deploy_fitness(&g, &cfg, &w, Some(&Fixed(12.5)), "cpu").unwrap(),
            f - 125.0,
            max_relative = 1e-12
        );
        let lo = deploy_fitness(&g, &cfg, &w, Some(&Fixed(1.0)), "cpu").unwrap();
        let hi = deploy_fitness(&g, &cfg, &w, Some(&Fixed(2.0)), "cpu").unwrap();
        assert!(hi < lo);
        assert!(matches!(deploy_fitness(&g, &cfg, &w, None, "cpu"), Err(Error::MissingLatencyModel)));
        assert!(matches!(deploy_fitness(&g, &cfg, &w, Some(&Fixed(1.0)), "gpu"), Err(Error::ModelMismatch(_))));
    }
}
