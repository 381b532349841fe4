//! Constrained single-objective genetic search over genomes.
//!
//! Hard constraints (MACs, params, predicted latency, `ρ ≤ ρ₀`) are enforced
//! by rejection: the initial population is rejection-sampled, and offspring
//! that violate a constraint are replaced by re-mutating their parent.
//! Offspring that repeat an architecture already in the next generation are
//! mutated again a few times before being accepted as repeats.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archspace::{decode, macs, params, random_genome, ArchGenome, SearchSpaceConfig};
use crate::error::{Error, Result};
use crate::fitness::{fitness_of_instance, penalize, FitnessReport, FitnessWeights, LatencyPredictor};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub mutation_prob: f64,
    pub elitism_count: usize,
    pub max_rejection_attempts: usize,
    pub rng_seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 64,
            generations: 100,
            tournament_size: 4,
            mutation_prob: 0.1,
            elitism_count: 1,
            max_rejection_attempts: 10_000,
            rng_seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tournament_size < 2 || self.population_size < self.tournament_size {
            return Err(Error::Config("need population_size >= tournament_size >= 2".into()));
        }
        if !(self.mutation_prob > 0.0 && self.mutation_prob < 1.0) {
            return Err(Error::Config("mutation_prob must lie in (0, 1)".into()));
        }
        if self.elitism_count >= self.population_size {
            return Err(Error::Config("elitism_count must be below population_size".into()));
        }
        if self.max_rejection_attempts == 0 {
            return Err(Error::Config("max_rejection_attempts must be positive".into()));
        }
        Ok(())
    }
}

/// Hard limits a candidate must satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetConstraint {
    pub macs_budget: f64,
    pub param_budget: Option<f64>,
    pub latency_budget_ms: Option<f64>,
    pub rho0: f64,
}

impl BudgetConstraint {
    pub fn macs_only(macs_budget: f64, rho0: f64) -> Self {
        Self { macs_budget, param_budget: None, latency_budget_ms: None, rho0 }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let ok = positive(self.macs_budget)
            && positive(self.rho0)
            && self.param_budget.is_none_or(positive)
            && self.latency_budget_ms.is_none_or(positive);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("budget bounds must be positive: {self:?}")))
        }
    }
}

/// An evaluated genome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub genome: ArchGenome,
    pub report: FitnessReport,
    pub macs: u64,
    pub params: u64,
    pub latency_ms: Option<f64>,
    /// Quantity being maximized: `report.total`, or the latency-penalized
    /// variant for soft-latency deployment searches.
    pub objective: f64,
}

/// Higher objective first, then fewer MACs, then the lexicographically
/// smaller genome.
pub fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.objective.total_cmp(&a.objective).then(a.macs.cmp(&b.macs)).then_with(|| a.genome.cmp(&b.genome))
}

/// Everything a search needs to evaluate and filter genomes.
pub struct SearchProblem<'a> {
    pub space: &'a SearchSpaceConfig,
    pub weights: &'a FitnessWeights,
    pub constraint: BudgetConstraint,
    pub latency: Option<&'a (dyn LatencyPredictor + Sync)>,
    /// Soft latency penalty δ; `None` optimizes plain fitness.
    pub latency_penalty: Option<f64>,
}

impl<'a> SearchProblem<'a> {
    pub fn new(space: &'a SearchSpaceConfig, weights: &'a FitnessWeights, constraint: BudgetConstraint) -> Self {
        Self { space, weights, constraint, latency: None, latency_penalty: None }
    }

    fn needs_latency(&self) -> bool {
        self.constraint.latency_budget_ms.is_some() || self.latency_penalty.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        self.weights.validate(self.space.num_stages)?;
        self.constraint.validate()?;
        if self.needs_latency() && self.latency.is_none() {
            return Err(Error::MissingLatencyModel);
        }
        Ok(())
    }

    pub fn evaluate(&self, genome: ArchGenome) -> Result<Candidate> {
        let instance = decode(&genome, self.space)?;
        let report = fitness_of_instance(&instance, self.weights)?;
        let latency_ms = match (self.needs_latency(), self.latency) {
            (true, Some(model)) => Some(model.predict_ms(&genome, self.space)?),
            (true, None) => return Err(Error::MissingLatencyModel),
            (false, _) => None,
        };
        let objective = match (self.latency_penalty, latency_ms) {
            (Some(delta), Some(l)) => penalize(report.total, delta, l),
            _ => report.total,
        };
        Ok(Candidate { macs: macs(&instance), params: params(&instance), genome, report, latency_ms, objective })
    }

    pub fn is_feasible(&self, c: &Candidate) -> bool {
        let k = &self.constraint;
        c.objective.is_finite()
            && c.macs as f64 <= k.macs_budget
            && c.report.effectiveness <= k.rho0
            && k.param_budget.is_none_or(|b| c.params as f64 <= b)
            && match (k.latency_budget_ms, c.latency_ms) {
                (Some(b), Some(l)) => l <= b,
                (Some(_), None) => false,
                (None, _) => true,
            }
    }
}

/// Extra mutations tried on an offspring that repeats an architecture
/// already in the next generation.
const DUPLICATE_RETRIES: usize = 8;

/// The genome with expansion genes of unused block slots zeroed, so genomes
/// that decode to the same network compare equal.
fn phenotype(genome: &ArchGenome, cfg: &SearchSpaceConfig) -> ArchGenome {
    let slots = cfg.max_blocks_per_stage();
    let mut g = genome.clone();
    for (s, &d) in genome.depth.iter().enumerate() {
        g.expansion[s * slots + cfg.depth_choices[d]..(s + 1) * slots].fill(0);
    }
    g
}

/// Rejection-sample `population_size` feasible genomes.
pub fn init_population<R: Rng + ?Sized>(
    problem: &SearchProblem<'_>,
    ga_cfg: &GaConfig,
    rng: &mut R,
) -> Result<Vec<Candidate>> {
    random_feasible(problem, ga_cfg.population_size, ga_cfg.max_rejection_attempts, rng)
}

/// `n` uniformly drawn feasible candidates; fails after `max_attempts`
/// consecutive rejections.
pub fn random_feasible<R: Rng + ?Sized>(
    problem: &SearchProblem<'_>,
    n: usize,
    max_attempts: usize,
    rng: &mut R,
) -> Result<Vec<Candidate>> {
    let mut out = Vec::with_capacity(n);
    let mut rejected = 0;
    while out.len() < n {
        let cand = problem.evaluate(random_genome(problem.space, rng))?;
        if problem.is_feasible(&cand) {
            out.push(cand);
            rejected = 0;
        } else {
            rejected += 1;
            if rejected >= max_attempts {
                return Err(Error::Infeasible { attempts: rejected });
            }
        }
    }
    Ok(out)
}

/// Swap the suffixes of the flat `d ‖ e ‖ w` encodings after `cut`.
pub fn crossover_at(a: &ArchGenome, b: &ArchGenome, cut: usize) -> (ArchGenome, ArchGenome) {
    let (mut fa, mut fb) = (a.to_flat(), b.to_flat());
    let cut = cut.min(fa.len());
    fa[cut..].swap_with_slice(&mut fb[cut..]);
    let split = |flat: Vec<usize>| {
        let (d, e) = (a.depth.len(), a.expansion.len());
        ArchGenome { depth: flat[..d].to_vec(), expansion: flat[d..d + e].to_vec(), width: flat[d + e..].to_vec() }
    };
    (split(fa), split(fb))
}

/// Single-point crossover with a cut drawn uniformly from the interior.
pub fn crossover<R: Rng + ?Sized>(a: &ArchGenome, b: &ArchGenome, rng: &mut R) -> (ArchGenome, ArchGenome) {
    let len = a.depth.len() + a.expansion.len() + a.width.len();
    let cut = if len < 2 { 0 } else { rng.random_range(1..len) };
    crossover_at(a, b, cut)
}

/// Resample each gene uniformly from its choice set with probability `p_m`.
pub fn mutate<R: Rng + ?Sized>(
    genome: &ArchGenome,
    cfg: &SearchSpaceConfig,
    ga_cfg: &GaConfig,
    rng: &mut R,
) -> ArchGenome {
    let p = ga_cfg.mutation_prob;
    let mut g = genome.clone();
    let mut resample = |genes: &mut [usize], n: usize| {
        for gene in genes {
            if rng.random::<f64>() < p {
                *gene = rng.random_range(0..n);
            }
        }
    };
    resample(&mut g.depth, cfg.depth_choices.len());
    resample(&mut g.expansion, cfg.expansion_choices.len());
    resample(&mut g.width, cfg.width_choices.len());
    g
}

fn tournament<'p, R: Rng + ?Sized>(pop: &'p [Candidate], size: usize, rng: &mut R) -> &'p Candidate {
    let mut best = &pop[rng.random_range(0..pop.len())];
    for _ in 1..size {
        let c = &pop[rng.random_range(0..pop.len())];
        if rank(c, best) == Ordering::Less {
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_f: f64,
    pub mean_f: f64,
    /// Share of offspring that were feasible without a retry.
    pub feasible_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Candidate,
    pub trace: Vec<GenerationStats>,
    pub evaluations: usize,
}

/// Run one GA instance to completion.
pub fn search(problem: &SearchProblem<'_>, ga_cfg: &GaConfig) -> Result<SearchOutcome> {
    problem.validate()?;
    ga_cfg.validate()?;
    let mut rng = seeded(ga_cfg.rng_seed);
    let mut pop = init_population(problem, ga_cfg, &mut rng)?;
    let mut evaluations = pop.len();
    pop.sort_by(rank);
    let mut best = pop[0].clone();
    let mean = |pop: &[Candidate]| pop.iter().map(|c| c.objective).sum::<f64>() / pop.len() as f64;
    let mut trace =
        vec![GenerationStats { generation: 0, best_f: best.objective, mean_f: mean(&pop), feasible_fraction: 1.0 }];

    for generation in 1..=ga_cfg.generations {
        let mut next: Vec<Candidate> = pop[..ga_cfg.elitism_count].to_vec();
        let mut seen: HashSet<ArchGenome> = next.iter().map(|c| phenotype(&c.genome, problem.space)).collect();
        let (mut offspring, mut first_try) = (0usize, 0usize);
        while next.len() < ga_cfg.population_size {
            let pa = tournament(&pop, ga_cfg.tournament_size, &mut rng);
            let pb = tournament(&pop, ga_cfg.tournament_size, &mut rng);
            let (ca, cb) = crossover(&pa.genome, &pb.genome, &mut rng);
            for (child, parent) in [(ca, pa), (cb, pb)] {
                if next.len() == ga_cfg.population_size {
                    break;
                }
                offspring += 1;
                let cand = problem.evaluate(mutate(&child, problem.space, ga_cfg, &mut rng))?;
                evaluations += 1;
                let mut accepted = if problem.is_feasible(&cand) {
                    first_try += 1;
                    cand
                } else {
                    let mut replacement = None;
                    for _ in 0..ga_cfg.max_rejection_attempts {
                        let retry = problem.evaluate(mutate(&parent.genome, problem.space, ga_cfg, &mut rng))?;
                        evaluations += 1;
                        if problem.is_feasible(&retry) {
                            replacement = Some(retry);
                            break;
                        }
                    }
                    replacement.unwrap_or_else(|| parent.clone())
                };
                for _ in 0..DUPLICATE_RETRIES {
                    if !seen.contains(&phenotype(&accepted.genome, problem.space)) {
                        break;
                    }
                    let retry = problem.evaluate(mutate(&accepted.genome, problem.space, ga_cfg, &mut rng))?;
                    evaluations += 1;
                    if problem.is_feasible(&retry) {
                        accepted = retry;
                    }
                }
                seen.insert(phenotype(&accepted.genome, problem.space));
                if rank(&accepted, &best) == Ordering::Less {
                    best = accepted.clone();
                }
                next.push(accepted);
            }
        }
        next.sort_by(rank);
        pop = next;
        trace.push(GenerationStats {
            generation,
            best_f: best.objective,
            mean_f: mean(&pop),
            feasible_fraction: if offspring == 0 { 1.0 } else { first_try as f64 / offspring as f64 },
        });
    }
    Ok(SearchOutcome { best, trace, evaluations })
}

/// Maximize fitness under a MACs (and optional params) budget.
pub fn search_budget(
    cfg: &SearchSpaceConfig,
    weights: &FitnessWeights,
    ga_cfg: &GaConfig,
    constraint: BudgetConstraint,
) -> Result<SearchOutcome> {
    search(&SearchProblem::new(cfg, weights, constraint), ga_cfg)
}

pub fn write_trace_csv<W: std::io::Write>(trace: &[GenerationStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["generation", "best_F", "mean_F", "feasible_fraction"])?;
    for s in trace {
        w.write_record([
            s.generation.to_string(),
            s.best_f.to_string(),
            s.mean_f.to_string(),
            s.feasible_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
