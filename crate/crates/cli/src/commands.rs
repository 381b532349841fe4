use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use paretonas_core::archspace::space_bounds;
use paretonas_core::fedsim::{self, init_federation, run_training};
use paretonas_core::ga::{random_feasible, BudgetConstraint, SearchProblem};
use paretonas_core::latency::{fit_lpm, generate_samples, read_samples_csv, write_samples_csv};
use paretonas_core::pareto_cache::{
    build_cache, cache_stats, config_hash, default_budget_range, discretize_budgets, sensitivity_sweep,
    write_sensitivity_csv, CacheEntry,
};
use paretonas_core::rng::{derive_seed, seeded};
use paretonas_core::{
    deploy, DeploymentSpec, DeviceProfile, LatencyModel, LatencyPredictor, ParetoCache, PipelineConfig,
};

use crate::output::OutDir;
use crate::{Cli, Command, DeployArgs};

/// Seed streams derived from the master seed for work outside the GA.
const LAT_GEN_STREAM: u64 = 1;
const RANDOM_BASELINE_STREAM: u64 = 2;

struct Run {
    cfg: PipelineConfig,
    seed: u64,
    out: OutDir,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let mut cfg = match &cli.common.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    let seed = cli.common.seed.unwrap_or(cfg.ga.rng_seed);
    cfg.ga.rng_seed = seed;
    cfg.fedsim.run.seed = seed;
    cfg.latency.lpm.seed = seed;
    let name = command_name(&cli.command);
    let mut run = Run { cfg, seed, out: OutDir::create(&cli.common.out)? };

    let timings = match cli.command {
        Command::Bounds => bounds(&mut run)?,
        Command::GenCache { n_budgets, min_budget, max_budget } => {
            gen_cache(&mut run, n_budgets, min_budget, max_budget)?
        }
        Command::CacheStats { cache } => stats(&mut run, cache)?,
        Command::Sensitivity { sizes } => sensitivity(&mut run, sizes)?,
        Command::Fedsim { cache, rounds } => fedsim_cmd(&mut run, cache, rounds)?,
        Command::LatGen { profile, samples } => lat_gen(&mut run, profile, samples)?,
        Command::LatTrain { samples } => lat_train(&mut run, samples)?,
        Command::DeploySearch(args) => deploy_search(&mut run, args)?,
        Command::RandomBaseline { samples, n_budgets } => random_baseline(&mut run, samples, n_budgets)?,
    };
    let hash = config_hash(&run.cfg);
    let manifest = run.out.finish(name, run.seed, hash, timings)?;
    eprintln!("manifest: {}", manifest.display());
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Bounds => "bounds",
        Command::GenCache { .. } => "gen-cache",
        Command::CacheStats { .. } => "cache-stats",
        Command::Sensitivity { .. } => "sensitivity",
        Command::Fedsim { .. } => "fedsim",
        Command::LatGen { .. } => "lat-gen",
        Command::LatTrain { .. } => "lat-train",
        Command::DeploySearch(_) => "deploy-search",
        Command::RandomBaseline { .. } => "random-baseline",
    }
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(value)? + "\n").into_bytes())
}

fn bounds(run: &mut Run) -> Result<serde_json::Value> {
    let space = &run.cfg.space;
    let b = space_bounds(space)?;
    let report = json!({
        "min_macs": b.min_macs,
        "max_macs": b.max_macs,
        "min_params": b.min_params,
        "max_params": b.max_params,
        "genome_len": space.genome_len(),
        "space_size": space.space_size().to_string(),
    });
    println!("MACs   {:>12.2} M .. {:>12.2} M", b.min_macs as f64 / 1e6, b.max_macs as f64 / 1e6);
    println!("params {:>12.3} M .. {:>12.3} M", b.min_params as f64 / 1e6, b.max_params as f64 / 1e6);
    println!("genomes {}", space.space_size());
    run.out.write("bounds.json", &json_bytes(&report)?)?;
    Ok(serde_json::Value::Null)
}

fn budget_grid(run: &Run, n: Option<usize>, min: Option<f64>, max: Option<f64>) -> Result<Vec<f64>> {
    let (lo, hi) = default_budget_range(&run.cfg.space)?;
    let lo = min.or(run.cfg.cache.min_budget).unwrap_or(lo);
    let hi = max.or(run.cfg.cache.max_budget).unwrap_or(hi);
    Ok(discretize_budgets(lo, hi, n.unwrap_or(run.cfg.cache.n_budgets))?)
}

fn gen_cache(run: &mut Run, n: Option<usize>, min: Option<f64>, max: Option<f64>) -> Result<serde_json::Value> {
    let budgets = budget_grid(run, n, min, max)?;
    let built = build_cache(&run.cfg.space, &run.cfg.weights, &run.cfg.ga, &budgets)?;
    let cache = built.cache;
    run.out.write("cache.json", cache.to_json()?.as_bytes())?;
    run.out.write_with("frontier.csv", |buf| Ok(cache.write_frontier_csv(buf)?))?;
    let s = cache_stats(&cache)?;
    println!("{} entries, mean fitness {:.3}, std {:.3}", s.n, s.mean_fitness, s.std_fitness);
    Ok(json!({ "budget_seconds": built.seconds }))
}

fn stats(run: &mut Run, cache: Option<PathBuf>) -> Result<serde_json::Value> {
    let path = cache.unwrap_or_else(|| run.out.path("cache.json"));
    let cache = load_cache(&path, &run.cfg.space, &run.cfg.weights)?;
    let s = cache_stats(&cache)?;
    println!("n {} mean {:.6} std {:.6}", s.n, s.mean_fitness, s.std_fitness);
    run.out.write("cache_stats.json", &json_bytes(&s)?)?;
    Ok(serde_json::Value::Null)
}

fn load_cache(
    path: &Path,
    space: &paretonas_core::SearchSpaceConfig,
    weights: &paretonas_core::FitnessWeights,
) -> Result<ParetoCache> {
    ParetoCache::load(path, space, weights).with_context(|| format!("loading cache {}", path.display()))
}

fn sensitivity(run: &mut Run, sizes: Option<Vec<usize>>) -> Result<serde_json::Value> {
    let sizes = sizes.unwrap_or_else(|| run.cfg.cache.sweep.clone());
    let grid = budget_grid(run, Some(2), None, None)?;
    let rows = sensitivity_sweep(&run.cfg.space, &run.cfg.weights, &run.cfg.ga, (grid[0], grid[1]), &sizes)?;
    for r in &rows {
        println!("n {:>4}  mean {:>10.3}  std {:>9.3}", r.n, r.mean_fitness, r.std_fitness);
    }
    run.out.write_with("sensitivity.csv", |buf| Ok(write_sensitivity_csv(&rows, buf)?))?;
    Ok(serde_json::Value::Null)
}

fn fedsim_cmd(run: &mut Run, cache: Option<PathBuf>, rounds: Option<usize>) -> Result<serde_json::Value> {
    let sec = run.cfg.fedsim.clone();
    let cache = match cache {
        Some(path) => load_cache(&path, &sec.space, &sec.weights)?,
        None => {
            let (lo, hi) = default_budget_range(&sec.space)?;
            let budgets = discretize_budgets(lo, hi, sec.cache_budgets)?;
            let c = build_cache(&sec.space, &sec.weights, &run.cfg.ga, &budgets)?.cache;
            run.out.write("fedsim_cache.json", c.to_json()?.as_bytes())?;
            c
        }
    };
    let mut fed = sec.run.clone();
    if let Some(r) = rounds {
        fed.rounds = r;
    }
    let path: Vec<_> = cache.entries.iter().map(|e: &CacheEntry| e.genome.clone()).collect();
    let (mut state, mut clients) = init_federation(&sec.space, &fed)?;
    let trace = run_training(&sec.space, &fed, &mut state, &mut clients, &path)?;
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        println!(
            "{} rounds, objective {:.6e} -> {:.6e}, largest-path loss {:.6e}",
            trace.len(),
            first.objective,
            last.objective,
            last.loss_max_path
        );
    }
    run.out.write_with("fedsim_trace.csv", |buf| Ok(fedsim::write_trace_csv(&trace, buf)?))?;
    run.out.write_with("supernet.bin", |buf| Ok(fedsim::write_checkpoint(&state, buf)?))?;
    Ok(serde_json::Value::Null)
}

fn lat_gen(run: &mut Run, profile: Option<String>, samples: Option<usize>) -> Result<serde_json::Value> {
    let profile = DeviceProfile::by_name(profile.as_deref().unwrap_or(&run.cfg.latency.profile))?;
    let n = samples.unwrap_or(run.cfg.latency.samples);
    let mut rng = seeded(derive_seed(run.seed, LAT_GEN_STREAM));
    let samples = generate_samples(&run.cfg.space, &profile, n, &mut rng)?;
    run.out.write_with("latency_samples.csv", |buf| Ok(write_samples_csv(&samples, &run.cfg.space, buf)?))?;
    println!("{n} samples from the {} profile", profile.device);
    Ok(serde_json::Value::Null)
}

fn lat_train(run: &mut Run, samples: Option<PathBuf>) -> Result<serde_json::Value> {
    let path = samples.unwrap_or_else(|| run.out.path("latency_samples.csv"));
    let file = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let samples = read_samples_csv(file, &run.cfg.space)?;
    let fit = fit_lpm(&samples, &run.cfg.space, &run.cfg.latency.lpm)?;
    let model = &fit.model;
    run.out.write_with("lpm.bin", |buf| Ok(model.write(buf)?))?;
    run.out.write_with("lpm_history.csv", |buf| {
        use std::io::Write;
        writeln!(buf, "epoch,train_loss")?;
        for (i, l) in fit.history.iter().enumerate() {
            writeln!(buf, "{i},{l}")?;
        }
        Ok(())
    })?;
    let report = json!({
        "device": model.device,
        "samples": samples.len(),
        "train_mse": model.train_mse,
        "validation_mse": model.validation_mse,
        "target_mean_ms": model.target_mean,
    });
    println!(
        "{} samples, validation RMSE {:.4} ms (mean latency {:.3} ms)",
        samples.len(),
        model.validation_mse.sqrt(),
        model.target_mean
    );
    run.out.write("lpm_report.json", &json_bytes(&report)?)?;
    Ok(serde_json::Value::Null)
}

fn deploy_search(run: &mut Run, args: DeployArgs) -> Result<serde_json::Value> {
    let spec = DeploymentSpec {
        macs_budget: args.macs,
        param_budget_m: args.params.map(|p| p / 1e6),
        latency_budget_ms: args.latency,
        latency_mode: args.latency_mode,
        delta: args.delta,
        device: args.device,
    };
    let model = match &args.model {
        Some(p) => Some(LatencyModel::load(p).with_context(|| format!("loading latency model {}", p.display()))?),
        None => None,
    };
    let predictor = model.as_ref().map(|m| m as &(dyn LatencyPredictor + Sync));
    let result = deploy::deployment_search(&run.cfg.space, &run.cfg.weights, &run.cfg.ga, &spec, predictor)?;
    let bytes = json_bytes(&result)?;
    run.out.write("deploy.json", &bytes)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(json!({ "search_seconds": result.wall_time_s }))
}

fn random_baseline(run: &mut Run, samples: usize, n: Option<usize>) -> Result<serde_json::Value> {
    if samples == 0 {
        bail!("--samples must be at least 1");
    }
    let budgets = budget_grid(run, n, None, None)?;
    let stream = derive_seed(run.seed, RANDOM_BASELINE_STREAM);
    let cfg = &run.cfg;
    let mut rows = Vec::with_capacity(budgets.len());
    for (i, &b) in budgets.iter().enumerate() {
        let problem = SearchProblem::new(&cfg.space, &cfg.weights, BudgetConstraint::macs_only(b, cfg.weights.rho0));
        let mut rng = seeded(derive_seed(stream, i as u64));
        let pool = random_feasible(&problem, samples, cfg.ga.max_rejection_attempts, &mut rng)?;
        let best = pool
            .iter()
            .min_by(|a, b| paretonas_core::ga::rank(a, b))
            .expect("random_feasible returns the requested count");
        rows.push((b, best.macs, best.params, best.report.total));
    }
    run.out.write_with("random_baseline.csv", |buf| {
        use std::io::Write;
        writeln!(buf, "budget,macs,params,fitness")?;
        for (b, m, p, f) in &rows {
            writeln!(buf, "{b},{m},{p},{f}")?;
        }
        Ok(())
    })?;
    println!(
        "{} budgets, best-of-{samples} random fitness {:.3} .. {:.3}",
        rows.len(),
        rows[0].3,
        rows[rows.len() - 1].3
    );
    Ok(serde_json::Value::Null)
}
