//! Fitness-guided architecture search, budget-indexed Pareto caches,
//! a federated supernet training simulator and latency-aware deployment
//! search.

pub mod archspace;
pub mod config;
pub mod deploy;
pub mod error;
pub mod fedsim;
pub mod fitness;
pub mod ga;
pub mod hybrid;
pub mod latency;
pub mod pareto_cache;
pub mod rng;
pub mod stats;

pub use archspace::{ArchGenome, ArchInstance, GenomeRatios, LayerKind, LayerSpec, SearchSpaceConfig, SpaceBounds};
pub use config::PipelineConfig;
pub use deploy::{DeploymentResult, DeploymentSpec, LatencyMode};
pub use error::{Error, Result};
pub use fedsim::{ActivityMask, ClientState, FedConfig, RoundMetrics, SupernetState};
pub use fitness::{FitnessReport, FitnessWeights, LatencyPredictor};
pub use ga::{BudgetConstraint, Candidate, GaConfig, SearchOutcome, SearchProblem};
pub use latency::{DeviceProfile, LatencyModel, LatencySample, LpmConfig};
pub use pareto_cache::{CacheEntry, CacheStats, ParetoCache};
