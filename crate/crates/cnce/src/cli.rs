//! `cnce` command line. Exit codes: 0 success, 1 usage or config error,
//! 2 finished with warnings (non-convergence, capped ε, unresolved limit rows).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cnce_core::limit::limit_check;
use cnce_core::{estimation_error, ModelSpec, ParamRecord, ParamVector};
use serde::Serialize;

use crate::config::{load_json, EstimateConfig, ExperimentConfig, LimitConfig};
use crate::error::Result;
use crate::experiment::{data_seed, fit, run_grid, run_seed, simulate, Fit, FitSettings};
use crate::persist::{check_writable, write_records, write_summary};
use crate::report::{plot_file_names, write_report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_WARNINGS: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cnce", version, about = "Conditional noise-contrastive estimation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one data set, fit it and write the optimisation trace.
    Estimate(RunArgs),
    /// Run a grid of simulations and write results, a summary and plots.
    Experiment(ExperimentArgs),
    /// Compare the CNCE loss with its small-noise expansion on a Gaussian model.
    LimitCheck(RunArgs),
    /// Render log-log error plots from a results CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Replaces the seed from the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite existing output files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results CSV written by `cnce experiment`.
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

/// Parses `args` (including the program name) and runs the command, printing
/// to `out` and `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Estimate(a) => cmd_estimate(&a, out),
        Command::Experiment(a) => cmd_experiment(&a, out),
        Command::LimitCheck(a) => cmd_limit_check(&a, out),
        Command::Report(a) => cmd_report(&a, out),
    };
    match result {
        Ok(warnings) if warnings.is_empty() => EXIT_OK,
        Ok(warnings) => {
            for w in &warnings {
                let _ = writeln!(err, "warning: {w}");
            }
            EXIT_WARNINGS
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn format_vector(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    config: &'a EstimateConfig,
    theta_true: ParamRecord,
    theta_hat: ParamRecord,
    error: f64,
    fit: &'a Fit,
}

/// The data and fit seeds are those of repeat 0 of an experiment whose
/// master seed is the estimate's seed.
pub fn cmd_estimate(args: &RunArgs, out: &mut dyn Write) -> Result<Vec<String>> {
    let mut cfg: EstimateConfig = load_json(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let spec = cfg.validate()?;
    let path = args.out.join("estimate.json");
    check_writable(&path, args.force)?;

    let given = cfg.theta_true.clone().map(ParamVector::new);
    let (theta_true, x) = simulate(&spec, given.as_ref(), cfg.n, data_seed(cfg.seed, spec.kind, cfg.n, 0))?;
    let settings = FitSettings {
        method: cfg.method,
        kappa: cfg.kappa,
        epsilon: &cfg.epsilon,
        per_dim: cfg.per_dim,
        optimizer: &cfg.optimizer,
    };
    let seed = run_seed(cfg.seed, spec.kind, cfg.method, cfg.n, cfg.kappa, 0);
    let f = fit(&spec, &x, &settings, seed)?;
    let error = estimation_error(&spec, &f.theta_hat, &theta_true)?;

    writeln!(out, "theta_hat: {}", format_vector(&f.theta_hat.values))?;
    writeln!(out, "theta_true: {}", format_vector(&theta_true.values))?;
    writeln!(out, "error: {error:.6e}")?;
    if let Some(eps) = f.epsilon {
        writeln!(out, "epsilon: {eps}")?;
    }
    writeln!(out, "converged: {} after {} iterations", f.converged, f.iterations)?;

    write_json(
        &path,
        &EstimateOutput {
            config: &cfg,
            theta_true: ParamRecord::new(&spec, &theta_true),
            theta_hat: ParamRecord::new(&spec, &f.theta_hat),
            error,
            fit: &f,
        },
    )?;
    writeln!(out, "wrote {}", path.display())?;

    let mut warnings = Vec::new();
    if !f.converged {
        warnings.push(format!("the optimizer did not converge in {} iterations", f.iterations));
    }
    if f.epsilon_capped() {
        warnings.push("epsilon reached the schedule cap".into());
    }
    Ok(warnings)
}

pub fn cmd_experiment(args: &ExperimentArgs, out: &mut dyn Write) -> Result<Vec<String>> {
    let mut cfg: ExperimentConfig = load_json(&args.run.config)?;
    if let Some(seed) = args.run.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    let dir = &args.run.out;
    let csv = dir.join("results.csv");
    let summary = dir.join("summary.json");
    check_writable(&csv, args.run.force)?;
    check_writable(&summary, args.run.force)?;
    for name in plot_file_names(cfg.model.kind, &cfg.methods, &cfg.kappa_grid) {
        check_writable(&dir.join(name), args.run.force)?;
    }
    let jobs = args.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));

    let result = run_grid(&cfg, jobs)?;
    write_records(&csv, &result.records, args.run.force)?;
    write_summary(&summary, &cfg, &result.summaries, args.run.force)?;
    let svgs = write_report(&result.records, dir, args.run.force)?;

    writeln!(out, "{:<15} {:>8} {:>6} {:>12} {:>12} {:>12} {:>5}", "method", "n", "kappa", "median", "q10", "q90", "conv")?;
    for s in &result.summaries {
        writeln!(
            out,
            "{:<15} {:>8} {:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>2}/{:<2}",
            s.method.as_str(),
            s.n,
            s.kappa,
            s.median,
            s.q10,
            s.q90,
            s.converged,
            s.runs
        )?;
    }
    writeln!(out, "wrote {} and {}", csv.display(), summary.display())?;
    for p in svgs {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(result.warnings)
}

fn identity_precision(d: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            v.push(if i == j { 1.0 } else { 0.0 });
        }
    }
    v
}

pub fn cmd_limit_check(args: &RunArgs, out: &mut dyn Write) -> Result<Vec<String>> {
    let mut cfg: LimitConfig = load_json(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let spec: ModelSpec = cfg.validate()?;
    let json = args.out.join("limit.json");
    let csv = args.out.join("limit.csv");
    check_writable(&json, args.force)?;
    check_writable(&csv, args.force)?;

    let theta = ParamVector::new(cfg.theta.clone().unwrap_or_else(|| identity_precision(spec.dim)));
    let report = limit_check(&spec, &theta, &cfg.eps_grid, cfg.mc_pairs, cfg.seed)?;

    let mut w = csv::Writer::from_path(&csv)?;
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    write_json(&json, &report)?;

    writeln!(out, "score-matching objective: {:.6}", report.sm_value)?;
    writeln!(out, "{:>8} {:>14} {:>14} {:>12} {:>10}", "epsilon", "mc_loss", "sm_prediction", "residual", "resolved")?;
    for r in &report.rows {
        writeln!(
            out,
            "{:>8} {:>14.10} {:>14.10} {:>12.4e} {:>10}",
            r.epsilon, r.mc_loss, r.sm_prediction, r.residual, !r.flagged
        )?;
    }
    writeln!(out, "wrote {} and {}", json.display(), csv.display())?;
    let flagged = report.rows.iter().filter(|r| r.flagged && r.epsilon > 0.0).count();
    Ok(if flagged > 0 {
        vec![format!("{flagged} residuals are within three standard errors of zero; increase mc_pairs")]
    } else {
        Vec::new()
    })
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<Vec<String>> {
    let records = crate::persist::read_records(&args.csv)?;
    for p in write_report(&records, &args.out, args.force)? {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(Vec::new())
}
