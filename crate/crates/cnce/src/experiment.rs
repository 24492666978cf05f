//! Simulation grid: one estimation per (method, N, κ, repeat) cell.

use std::time::Instant;

use cnce_core::estimators::{CnceObjective, NceObjective, ScoreMatchingObjective};
use cnce_core::model::initial_params;
use cnce_core::optimize::minimize_with_mask;
use cnce_core::seed::{derive, stable_hash, Part};
use cnce_core::{
    adapt_epsilon, estimation_error, fit_marginal, generate_true_params, mle_fit, quantile, sample_conditional,
    sample_data, sample_marginal, EpsilonChoice, EstimationRun, ModelKind, ModelSpec, OptimizerConfig, ParamVector,
    SampleMatrix,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{kernel_kind, kernel_template, EpsilonSetting, ExperimentConfig, Method};
use crate::error::{Error, Result};

/// Seed for the true parameters and data of repeat `r` at size `n`. Shared
/// by every method and `κ`, so comparisons are paired.
pub fn data_seed(master: u64, kind: ModelKind, n: usize, repeat: usize) -> u64 {
    stable_hash(&[
        Part::from(master),
        Part::from(kind.as_str()),
        Part::from("data"),
        Part::from(n as u64),
        Part::from(repeat as u64),
    ])
}

/// Seed for everything the estimator draws: initial point, noise, restarts.
pub fn run_seed(master: u64, kind: ModelKind, method: Method, n: usize, kappa: usize, repeat: usize) -> u64 {
    stable_hash(&[
        Part::from(master),
        Part::from(kind.as_str()),
        Part::from(method.as_str()),
        Part::from(n as u64),
        Part::from(kappa as u64),
        Part::from(repeat as u64),
    ])
}

/// True parameters (drawn from the seed unless given) and `n` samples.
pub fn simulate(spec: &ModelSpec, theta_true: Option<&ParamVector>, n: usize, seed: u64) -> Result<(ParamVector, SampleMatrix)> {
    let theta = match theta_true {
        Some(t) => t.clone(),
        None => generate_true_params(spec, derive(seed, "theta")),
    };
    let x = sample_data(spec, &theta, n, derive(seed, "sample"))?;
    Ok((theta, x))
}

/// Estimator settings shared by every cell.
#[derive(Debug, Clone, Copy)]
pub struct FitSettings<'a> {
    pub method: Method,
    pub kappa: usize,
    pub epsilon: &'a EpsilonSetting,
    pub per_dim: bool,
    pub optimizer: &'a OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fit {
    pub theta_hat: ParamVector,
    /// NCE's estimated log-normaliser.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_normaliser: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_choice: Option<EpsilonChoice>,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<EstimationRun>,
}

impl Fit {
    pub fn epsilon_capped(&self) -> bool {
        self.epsilon_choice.as_ref().is_some_and(|c| c.capped)
    }
}

pub fn fit(spec: &ModelSpec, x: &SampleMatrix, s: &FitSettings<'_>, seed: u64) -> Result<Fit> {
    let p = spec.param_count();
    let mask = spec.positive_mask();
    let opt_seed = derive(seed, "optimizer");
    let theta0 = initial_params(spec, s.optimizer.init_scale, &mut ChaCha8Rng::seed_from_u64(derive(seed, "init")));
    let from_run = |run: EstimationRun, epsilon, choice, log_normaliser| Fit {
        theta_hat: ParamVector::new(run.theta_final[..p].to_vec()),
        log_normaliser,
        epsilon,
        epsilon_choice: choice,
        converged: run.converged,
        iterations: run.iterations,
        run: Some(run),
    };
    match s.method {
        Method::Cnce => {
            let noise_seed = derive(seed, "noise");
            let template = kernel_template(kernel_kind(spec), 1.0, s.per_dim);
            let (epsilon, choice) = match s.epsilon {
                EpsilonSetting::Fixed(e) => (*e, None),
                EpsilonSetting::Auto(schedule) => {
                    let c = adapt_epsilon(spec, &theta0, x, &template, schedule, s.kappa, noise_seed)?;
                    (c.epsilon, Some(c))
                }
            };
            let kernel = template.with_epsilon(epsilon).build(x)?;
            let pairing = sample_conditional(&kernel, x, s.kappa, noise_seed)?;
            let obj = CnceObjective::new(spec, x, &pairing)?;
            let run = minimize_with_mask(&obj, &mask, &theta0, s.optimizer, opt_seed)?;
            Ok(from_run(run, Some(epsilon), choice, None))
        }
        Method::Nce => {
            let marginal = fit_marginal(x)?;
            let noise = sample_marginal(&marginal, s.kappa * x.n(), derive(seed, "noise"));
            let obj = NceObjective::new(spec, x, &noise, &marginal)?;
            let mut mask_c = mask;
            mask_c.push(false);
            let mut start = theta0.values;
            start.push(0.0);
            let run = minimize_with_mask(&obj, &mask_c, &start, s.optimizer, opt_seed)?;
            let c = run.theta_final[p];
            Ok(from_run(run, None, None, Some(c)))
        }
        Method::ScoreMatching => {
            let obj = ScoreMatchingObjective { spec: *spec, x };
            let run = minimize_with_mask(&obj, &mask, &theta0, s.optimizer, opt_seed)?;
            Ok(from_run(run, None, None, None))
        }
        Method::Mle => {
            let r = mle_fit(spec, x, s.optimizer, derive(seed, "init"))?;
            Ok(Fit {
                theta_hat: r.theta_hat,
                log_normaliser: None,
                epsilon: None,
                epsilon_choice: None,
                converged: r.converged,
                iterations: r.run.as_ref().map_or(0, |run| run.iterations),
                run: r.run,
            })
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub run_id: u64,
    pub model: ModelKind,
    pub method: Method,
    pub n: usize,
    pub kappa: usize,
    /// Noise scale used by CNCE; empty for the other methods.
    pub epsilon: Option<f64>,
    pub seed: u64,
    /// NaN when the run failed outright.
    pub error: f64,
    pub sq_error: f64,
    pub converged: bool,
    pub iters: usize,
    pub wall_ms: f64,
}

/// Error quantiles over the repeats of one (method, N, κ) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub method: Method,
    pub n: usize,
    pub kappa: usize,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
    pub runs: usize,
    /// Runs that stopped with an error and carry no estimate.
    pub failed: usize,
    pub converged: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub run_id: u64,
    pub method: Method,
    pub n: usize,
    pub kappa: usize,
    pub repeat: usize,
}

/// Cells in canonical order: method, then N, then κ, then repeat.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &method in &cfg.methods {
        for &n in &cfg.n_grid {
            for &kappa in &cfg.kappa_grid {
                for repeat in 0..cfg.repeats {
                    out.push(Cell { run_id: out.len() as u64, method, n, kappa, repeat });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub record: ErrorRecord,
    pub epsilon_capped: bool,
    pub failure: Option<String>,
}

pub fn run_cell(cfg: &ExperimentConfig, spec: &ModelSpec, cell: &Cell) -> CellOutcome {
    let started = Instant::now();
    let seed = run_seed(cfg.master_seed, spec.kind, cell.method, cell.n, cell.kappa, cell.repeat);
    let settings = FitSettings {
        method: cell.method,
        kappa: cell.kappa,
        epsilon: &cfg.epsilon,
        per_dim: cfg.per_dim,
        optimizer: &cfg.optimizer,
    };
    let outcome = simulate(spec, None, cell.n, data_seed(cfg.master_seed, spec.kind, cell.n, cell.repeat)).and_then(
        |(theta_true, x)| {
            let f = fit(spec, &x, &settings, seed)?;
            let err = estimation_error(spec, &f.theta_hat, &theta_true)?;
            Ok((f, err))
        },
    );
    let wall_ms = if cfg.record_wall_time { started.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
    let mut record = ErrorRecord {
        run_id: cell.run_id,
        model: spec.kind,
        method: cell.method,
        n: cell.n,
        kappa: cell.kappa,
        epsilon: None,
        seed,
        error: f64::NAN,
        sq_error: f64::NAN,
        converged: false,
        iters: 0,
        wall_ms,
    };
    match outcome {
        Ok((f, err)) => {
            record.epsilon = f.epsilon;
            record.error = err;
            record.sq_error = err * err;
            record.converged = f.converged;
            record.iters = f.iterations;
            CellOutcome { record, epsilon_capped: f.epsilon_capped(), failure: None }
        }
        Err(e) => CellOutcome { record, epsilon_capped: false, failure: Some(e.to_string()) },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub records: Vec<ErrorRecord>,
    pub summaries: Vec<QuantileSummary>,
    pub warnings: Vec<String>,
}

/// Runs every cell on a pool of `jobs` threads. Output is sorted by `run_id`
/// and does not depend on `jobs`.
pub fn run_grid(cfg: &ExperimentConfig, jobs: usize) -> Result<GridResult> {
    let spec = cfg.validate()?;
    let all = cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    let mut outcomes: Vec<CellOutcome> = pool.install(|| all.par_iter().map(|c| run_cell(cfg, &spec, c)).collect());
    outcomes.sort_by_key(|o| o.record.run_id);

    let mut warnings = Vec::new();
    let failed: Vec<_> = outcomes.iter().filter(|o| o.failure.is_some()).collect();
    for o in failed.iter().take(5) {
        warnings.push(format!("run {} failed: {}", o.record.run_id, o.failure.as_deref().unwrap_or("")));
    }
    if failed.len() > 5 {
        warnings.push(format!("{} more runs failed", failed.len() - 5));
    }
    let unconverged = outcomes.iter().filter(|o| o.failure.is_none() && !o.record.converged).count();
    if unconverged > 0 {
        warnings.push(format!("{unconverged} of {} runs did not reach the gradient tolerance", outcomes.len()));
    }
    let capped = outcomes.iter().filter(|o| o.epsilon_capped).count();
    if capped > 0 {
        warnings.push(format!("{capped} runs used the capped epsilon"));
    }
    let records: Vec<ErrorRecord> = outcomes.into_iter().map(|o| o.record).collect();
    let summaries = summarize(&records);
    Ok(GridResult { records, summaries, warnings })
}

/// Quantile summaries in first-appearance order of (method, N, κ).
pub fn summarize(records: &[ErrorRecord]) -> Vec<QuantileSummary> {
    let mut keys: Vec<(Method, usize, usize)> = Vec::new();
    for r in records {
        let k = (r.method, r.n, r.kappa);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, n, kappa)| {
            let cell: Vec<&ErrorRecord> =
                records.iter().filter(|r| r.method == method && r.n == n && r.kappa == kappa).collect();
            let errors: Vec<f64> = cell.iter().map(|r| r.error).collect();
            let q = |p| quantile(&errors, p).unwrap_or(f64::NAN);
            QuantileSummary {
                method,
                n,
                kappa,
                median: q(0.5),
                q10: q(0.1),
                q90: q(0.9),
                runs: cell.len(),
                failed: errors.iter().filter(|e| !e.is_finite()).count(),
                converged: cell.iter().filter(|r| r.converged).count(),
            }
        })
        .collect()
}
