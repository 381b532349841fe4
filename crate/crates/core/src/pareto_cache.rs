//! Budget-indexed elite cache: one GA search per MACs budget, persisted as
//! versioned JSON tied to the space and weights it was built for.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archspace::{space_bounds, ArchGenome, SearchSpaceConfig};
use crate::error::{Error, Result};
use crate::fitness::FitnessWeights;
use crate::ga::{search_budget, BudgetConstraint, GaConfig};
use crate::rng::derive_seed;
use crate::stats;

pub const CACHE_FORMAT_VERSION: u32 = 1;

/// Lowest budget of the default cache, in MACs.
pub const DEFAULT_MIN_BUDGET: f64 = 458.2e6;

/// `n` equidistant budgets from `min_b` to `max_b`, both included.
pub fn discretize_budgets(min_b: f64, max_b: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 budgets, got {n}")));
    }
    if min_b.is_nan() || max_b.is_nan() || min_b >= max_b {
        return Err(Error::Argument(format!("empty budget range [{min_b}, {max_b}]")));
    }
    let step = (max_b - min_b) / (n - 1) as f64;
    Ok((0..n).map(|i| if i == n - 1 { max_b } else { min_b + step * i as f64 }).collect())
}

/// Where the usual floor sits within the default space's MACs range.
pub const SMALL_SPACE_FLOOR_FRACTION: f64 = 0.13;

/// The default budget range for `cfg`: the usual floor up to the space
/// maximum. Spaces whose maximum is below that floor start at the same
/// relative position of their own range instead.
pub fn default_budget_range(cfg: &SearchSpaceConfig) -> Result<(f64, f64)> {
    let b = space_bounds(cfg)?;
    let (lo, max) = (b.min_macs as f64, b.max_macs as f64);
    let min = if DEFAULT_MIN_BUDGET < max {
        DEFAULT_MIN_BUDGET.max(lo)
    } else {
        lo + SMALL_SPACE_FLOOR_FRACTION * (max - lo)
    };
    Ok((min, max))
}

/// SHA-256 of the canonical JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types always serialize");
    hex::encode(Sha256::digest(&json))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub budget: f64,
    pub genome: ArchGenome,
    pub fitness: f64,
    pub effectiveness: f64,
    pub macs: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoCache {
    pub format_version: u32,
    pub space_hash: String,
    pub weights_hash: String,
    pub master_seed: u64,
    pub ga: GaConfig,
    /// Sorted by budget, ascending.
    pub entries: Vec<CacheEntry>,
}

impl ParetoCache {
    pub fn smallest(&self) -> Option<&CacheEntry> {
        self.entries.first()
    }

    pub fn largest(&self) -> Option<&CacheEntry> {
        self.entries.last()
    }

    pub fn fitness_values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.fitness).collect()
    }

    pub fn check_compatible(&self, cfg: &SearchSpaceConfig, weights: &FitnessWeights) -> Result<()> {
        if self.format_version != CACHE_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported cache version {}", self.format_version)));
        }
        if self.space_hash != config_hash(cfg) {
            return Err(Error::ModelMismatch("cache was built for a different search space".into()));
        }
        if self.weights_hash != config_hash(weights) {
            return Err(Error::ModelMismatch("cache was built with different fitness weights".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cache: Self = serde_json::from_str(text)?;
        if cache.entries.windows(2).any(|w| w[0].budget > w[1].budget) {
            return Err(Error::Format("cache entries are not sorted by budget".into()));
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Load and refuse caches built for another space or weight set.
    pub fn load(path: &Path, cfg: &SearchSpaceConfig, weights: &FitnessWeights) -> Result<Self> {
        let cache = Self::from_json(&std::fs::read_to_string(path)?)?;
        cache.check_compatible(cfg, weights)?;
        Ok(cache)
    }

    /// Budget, MACs, params and fitness per entry, ascending budget.
    pub fn write_frontier_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["budget", "macs", "params", "fitness"])?;
        for e in &self.entries {
            w.write_record([e.budget.to_string(), e.macs.to_string(), e.params.to_string(), e.fitness.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheBuild {
    pub cache: ParetoCache,
    /// Wall-clock seconds per budget search, in entry order.
    pub seconds: Vec<f64>,
}

/// Search every budget independently and in parallel. Budget `i` (after
/// sorting) uses the seed derived from `(ga_cfg.rng_seed, i)`.
pub fn build_cache(
    cfg: &SearchSpaceConfig,
    weights: &FitnessWeights,
    ga_cfg: &GaConfig,
    budgets: &[f64],
) -> Result<CacheBuild> {
    if budgets.is_empty() {
        return Err(Error::EmptyCache);
    }
    let mut budgets = budgets.to_vec();
    budgets.sort_by(f64::total_cmp);
    let results: Vec<Result<(CacheEntry, f64)>> = budgets
        .par_iter()
        .enumerate()
        .map(|(i, &budget)| {
            let started = Instant::now();
            let ga = GaConfig { rng_seed: derive_seed(ga_cfg.rng_seed, i as u64), ..ga_cfg.clone() };
            let out = search_budget(cfg, weights, &ga, BudgetConstraint::macs_only(budget, weights.rho0))?;
            let b = out.best;
            let entry = CacheEntry {
                budget,
                fitness: b.report.total,
                effectiveness: b.report.effectiveness,
                macs: b.macs,
                params: b.params,
                genome: b.genome,
            };
            Ok((entry, started.elapsed().as_secs_f64()))
        })
        .collect();
    let (entries, seconds) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok(CacheBuild {
        cache: ParetoCache {
            format_version: CACHE_FORMAT_VERSION,
            space_hash: config_hash(cfg),
            weights_hash: config_hash(weights),
            master_seed: ga_cfg.rng_seed,
            ga: ga_cfg.clone(),
            entries,
        },
        seconds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub n: usize,
    pub mean_fitness: f64,
    pub std_fitness: f64,
}

/// Population mean and standard deviation of entry fitness.
pub fn cache_stats(cache: &ParetoCache) -> Result<CacheStats> {
    if cache.entries.is_empty() {
        return Err(Error::EmptyCache);
    }
    let f = cache.fitness_values();
    Ok(CacheStats { n: f.len(), mean_fitness: stats::mean(&f), std_fitness: stats::std_dev(&f) })
}

/// Build one cache per `n` over the same budget range and summarize each.
pub fn sensitivity_sweep(
    cfg: &SearchSpaceConfig,
    weights: &FitnessWeights,
    ga_cfg: &GaConfig,
    range: (f64, f64),
    n_values: &[usize],
) -> Result<Vec<CacheStats>> {
    n_values
        .iter()
        .map(|&n| {
            let budgets = discretize_budgets(range.0, range.1, n)?;
            cache_stats(&build_cache(cfg, weights, ga_cfg, &budgets)?.cache)
        })
        .collect()
}

pub fn write_sensitivity_csv<W: std::io::Write>(rows: &[CacheStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "mean", "std"])?;
    for r in rows {
        w.write_record([r.n.to_string(), r.mean_fitness.to_string(), r.std_fitness.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
