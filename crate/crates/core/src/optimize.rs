//! Deterministic full-batch first-order minimisation and the ε ladder.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::cnce_loss;
use crate::math::{dot, inf_norm, TWO_LN_2};
use crate::model::{ModelSpec, ParamVector};
use crate::noise::{sample_conditional, KernelConfig};
use crate::sample::SampleMatrix;

/// A differentiable scalar objective.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Returns the value at `theta` and writes the gradient into `grad`.
    fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64>;

    /// `false` for objectives with kinks, where the gradient norm says little
    /// about the distance to a minimum.
    fn is_smooth(&self) -> bool {
        true
    }
}

impl<O: Objective + ?Sized> Objective for &O {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        (**self).value_grad(theta, grad)
    }
    fn is_smooth(&self) -> bool {
        (**self).is_smooth()
    }
}

/// Closure-backed objective.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) -> Result<f64>> FnObjective<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnObjective { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) -> Result<f64>> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        (self.f)(theta, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Per-coordinate adaptive moments followed by a backtracking polish.
    AdaptiveMoment,
    /// Steepest descent with Armijo backtracking from a Barzilai-Borwein trial step.
    BacktrackingGd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Stop once the infinity norm of the gradient is at most this.
    pub grad_tol: f64,
    pub step_rule: StepRule,
    /// Scale of the standard-normal initial point and of restart perturbations.
    pub init_scale: f64,
    pub restarts: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// On smooth objectives the adaptive-moment phase hands over to the
    /// backtracking polish once the gradient infinity norm is at most this.
    /// Zero disables the hand-off.
    pub handoff_grad_tol: f64,
    /// Backtracking iterations run after the adaptive-moment phase, in
    /// addition to any adaptive-moment iterations left unused.
    pub polish_iters: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 2000,
            grad_tol: 1e-7,
            step_rule: StepRule::AdaptiveMoment,
            init_scale: 0.3,
            restarts: 1,
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            handoff_grad_tol: 1e-2,
            polish_iters: 200,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::config("optimizer.max_iters must be at least 1"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::config("optimizer.grad_tol must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::config("optimizer.restarts must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("optimizer.learning_rate must be positive"));
        }
        if !(self.handoff_grad_tol >= 0.0) {
            return Err(Error::config("optimizer.handoff_grad_tol must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("optimizer.beta1 and optimizer.beta2 must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
    /// The line search could not find a decrease.
    Stalled,
    /// The objective became non-finite or failed at a visited point.
    NonFinite,
}

/// One optimizer trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationRun {
    pub theta_initial: Vec<f64>,
    pub theta_final: Vec<f64>,
    pub loss_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    pub converged: bool,
    pub status: RunStatus,
    pub iterations: usize,
    pub evaluations: usize,
    /// Index of the restart that produced `theta_final`.
    pub restart: usize,
    /// Filled in by callers that time the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

impl EstimationRun {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN)
    }
}

struct Tracker<'a, O: ?Sized> {
    obj: &'a O,
    evaluations: usize,
}

impl<O: Objective + ?Sized> Tracker<'_, O> {
    fn eval(&mut self, theta: &[f64], grad: &mut [f64]) -> Option<f64> {
        self.evaluations += 1;
        match self.obj.value_grad(theta, grad) {
            Ok(v) if v.is_finite() && grad.iter().all(|g| g.is_finite()) => Some(v),
            _ => None,
        }
    }
}

struct Point {
    theta: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
}

/// Minimises `obj` from `theta0`. Deterministic in `(obj, theta0, cfg, seed)`;
/// the seed only drives restart perturbations.
pub fn minimize<O: Objective + ?Sized>(obj: &O, theta0: &[f64], cfg: &OptimizerConfig, seed: u64) -> Result<EstimationRun> {
    cfg.validate()?;
    if theta0.len() != obj.dim() {
        return Err(Error::shape(format!("initial point has {} entries, objective {}", theta0.len(), obj.dim())));
    }
    let mut probe = vec![0.0; obj.dim()];
    match obj.value_grad(theta0, &mut probe) {
        Ok(v) if v.is_finite() && probe.iter().all(|g| g.is_finite()) => {}
        Ok(_) => return Err(Error::param("objective is not finite at the initial point")),
        Err(e) => return Err(e),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<EstimationRun> = None;
    for r in 0..cfg.restarts {
        let start: Vec<f64> = if r == 0 {
            theta0.to_vec()
        } else {
            theta0
                .iter()
                .map(|t| t + cfg.init_scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let mut run = single_run(obj, &start, cfg);
        run.restart = r;
        let better = match &best {
            None => true,
            Some(b) => run.final_loss() < b.final_loss() || !b.final_loss().is_finite(),
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

fn single_run<O: Objective + ?Sized>(obj: &O, start: &[f64], cfg: &OptimizerConfig) -> EstimationRun {
    let mut tr = Tracker { obj, evaluations: 0 };
    let mut run = EstimationRun {
        theta_initial: start.to_vec(),
        theta_final: start.to_vec(),
        loss_trace: Vec::new(),
        grad_norm_trace: Vec::new(),
        converged: false,
        status: RunStatus::MaxIterations,
        iterations: 0,
        evaluations: 0,
        restart: 0,
        wall_ms: None,
    };
    let mut grad = vec![0.0; obj.dim()];
    let Some(value) = tr.eval(start, &mut grad) else {
        run.status = RunStatus::NonFinite;
        run.evaluations = tr.evaluations;
        return run;
    };
    let point = Point { theta: start.to_vec(), value, grad };
    let (point, status) = match cfg.step_rule {
        StepRule::AdaptiveMoment => {
            let (best, status) = adam_phase(&mut tr, point, cfg, &mut run);
            if status == RunStatus::Converged {
                (best, status)
            } else {
                let budget = cfg.polish_iters + cfg.max_iters.saturating_sub(run.iterations);
                let (p, s) = backtracking_phase(&mut tr, best, budget, cfg.grad_tol, &mut run);
                // A stalled polish after a non-finite excursion keeps the failure visible.
                (p, if status == RunStatus::NonFinite && s != RunStatus::Converged { status } else { s })
            }
        }
        StepRule::BacktrackingGd => backtracking_phase(&mut tr, point, cfg.max_iters, cfg.grad_tol, &mut run),
    };
    run.theta_final = point.theta;
    run.status = status;
    run.converged = status == RunStatus::Converged;
    run.evaluations = tr.evaluations;
    run
}

fn record(run: &mut EstimationRun, p: &Point) {
    run.loss_trace.push(p.value);
    run.grad_norm_trace.push(inf_norm(&p.grad));
}

/// Returns the lowest-loss point visited.
fn adam_phase<O: Objective + ?Sized>(
    tr: &mut Tracker<'_, O>,
    start: Point,
    cfg: &OptimizerConfig,
    run: &mut EstimationRun,
) -> (Point, RunStatus) {
    let dim = start.theta.len();
    let handoff = if tr.obj.is_smooth() { cfg.handoff_grad_tol } else { 0.0 };
    let (mut m, mut v) = (vec![0.0; dim], vec![0.0; dim]);
    let mut cur = start;
    let mut best_theta = cur.theta.clone();
    let mut best_value = cur.value;
    let mut best_grad = cur.grad.clone();
    let (mut b1t, mut b2t) = (1.0, 1.0);
    let mut status = RunStatus::MaxIterations;
    for _ in 0..cfg.max_iters {
        let gn = inf_norm(&cur.grad);
        if gn > cfg.grad_tol && gn <= handoff && cur.value <= best_value {
            return (cur, RunStatus::MaxIterations);
        }
        record(run, &cur);
        if gn <= cfg.grad_tol {
            status = RunStatus::Converged;
            break;
        }
        run.iterations += 1;
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for k in 0..dim {
            let g = cur.grad[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            let mhat = m[k] / (1.0 - b1t);
            let vhat = v[k] / (1.0 - b2t);
            cur.theta[k] -= cfg.learning_rate * mhat / (libm::sqrt(vhat) + 1e-8);
        }
        match tr.eval(&cur.theta, &mut cur.grad) {
            Some(val) => cur.value = val,
            None => {
                status = RunStatus::NonFinite;
                break;
            }
        }
        if cur.value < best_value {
            best_value = cur.value;
            best_theta.copy_from_slice(&cur.theta);
            best_grad.copy_from_slice(&cur.grad);
        }
    }
    if status == RunStatus::Converged {
        return (cur, status);
    }
    (Point { theta: best_theta, value: best_value, grad: best_grad }, status)
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Monotone steepest descent: accepted values never increase.
fn backtracking_phase<O: Objective + ?Sized>(
    tr: &mut Tracker<'_, O>,
    start: Point,
    iters: usize,
    grad_tol: f64,
    run: &mut EstimationRun,
) -> (Point, RunStatus) {
    let dim = start.theta.len();
    let mut cur = start;
    let mut step = 1.0 / libm::sqrt(dot(&cur.grad, &cur.grad)).max(1.0);
    let mut trial = vec![0.0; dim];
    let mut trial_grad = vec![0.0; dim];
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for _ in 0..iters {
        if inf_norm(&cur.grad) <= grad_tol {
            record(run, &cur);
            return (cur, RunStatus::Converged);
        }
        record(run, &cur);
        run.iterations += 1;
        if let Some((s, y)) = prev.take() {
            let sy = dot(&s, &y);
            if sy > 0.0 {
                step = dot(&s, &s) / sy;
            } else {
                step *= 2.0;
            }
        }
        let gg = dot(&cur.grad, &cur.grad);
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            for k in 0..dim {
                trial[k] = cur.theta[k] - step * cur.grad[k];
            }
            if let Some(val) = tr.eval(&trial, &mut trial_grad) {
                if val <= cur.value - ARMIJO_C * step * gg {
                    accepted = Some(val);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(val) = accepted else {
            return (cur, RunStatus::Stalled);
        };
        let s: Vec<f64> = trial.iter().zip(&cur.theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        prev = Some((s, y));
        cur.theta.copy_from_slice(&trial);
        cur.grad.copy_from_slice(&trial_grad);
        cur.value = val;
    }
    record(run, &cur);
    let status = if inf_norm(&cur.grad) <= grad_tol { RunStatus::Converged } else { RunStatus::MaxIterations };
    (cur, status)
}

/// Wraps an objective so that masked coordinates are optimised on the log
/// scale: `θ_k = exp(η_k)`.
pub struct LogReparam<'a, O: ?Sized> {
    inner: &'a O,
    mask: &'a [bool],
}

impl<'a, O: Objective + ?Sized> LogReparam<'a, O> {
    pub fn new(inner: &'a O, mask: &'a [bool]) -> Self {
        LogReparam { inner, mask }
    }
}

pub fn to_unconstrained(mask: &[bool], theta: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .zip(mask)
        .map(|(&t, &pos)| if pos { libm::log(t) } else { t })
        .collect()
}

pub fn from_unconstrained(mask: &[bool], eta: &[f64]) -> Vec<f64> {
    eta.iter()
        .zip(mask)
        .map(|(&e, &pos)| if pos { libm::exp(e) } else { e })
        .collect()
}

impl<O: Objective + ?Sized> Objective for LogReparam<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn is_smooth(&self) -> bool {
        self.inner.is_smooth()
    }

    fn value_grad(&self, eta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let theta = from_unconstrained(self.mask, eta);
        let v = self.inner.value_grad(&theta, grad)?;
        for ((g, &pos), t) in grad.iter_mut().zip(self.mask).zip(&theta) {
            if pos {
                *g *= t;
            }
        }
        Ok(v)
    }
}

/// [`minimize`] over log-coordinates for the masked entries. The returned run
/// reports `theta_initial` and `theta_final` in natural coordinates.
pub fn minimize_with_mask<O: Objective + ?Sized>(
    obj: &O,
    mask: &[bool],
    theta0: &[f64],
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<EstimationRun> {
    if mask.len() != obj.dim() {
        return Err(Error::shape("mask length does not match the objective"));
    }
    if theta0.iter().zip(mask).any(|(&t, &pos)| pos && !(t > 0.0)) {
        return Err(Error::param("positive coordinates must start above zero"));
    }
    let wrapped = LogReparam::new(obj, mask);
    let eta0 = to_unconstrained(mask, theta0);
    let mut run = minimize(&wrapped, &eta0, cfg, seed)?;
    run.theta_initial = from_unconstrained(mask, &run.theta_initial);
    run.theta_final = from_unconstrained(mask, &run.theta_final);
    Ok(run)
}

/// Geometric ε ladder `ε0 · growth^k` for the noise-scale heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub epsilon_0: f64,
    pub growth: f64,
    /// Required distance of the loss from `2 log 2`.
    pub delta: f64,
    pub epsilon_max: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { epsilon_0: 0.05, growth: 2.0, delta: 0.05, epsilon_max: 4.0 }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_0 > 0.0) {
            return Err(Error::config("epsilon.epsilon_0 must be positive"));
        }
        if !(self.growth > 1.0) {
            return Err(Error::config("epsilon.growth must exceed 1"));
        }
        if !(self.delta > 0.0 && self.delta < TWO_LN_2) {
            return Err(Error::config("epsilon.delta must lie in (0, 2 log 2)"));
        }
        if !(self.epsilon_max >= self.epsilon_0) {
            return Err(Error::config("epsilon.epsilon_max must be at least epsilon_0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonChoice {
    pub epsilon: f64,
    /// No rung reached the threshold; `epsilon` is the cap.
    pub capped: bool,
    /// `(ε, |J_N - 2 log 2|)` for every rung evaluated.
    pub ladder: Vec<(f64, f64)>,
}

/// Smallest ε on the ladder whose loss at `theta0` departs from `2 log 2` by
/// at least `delta`. All rungs share the same noise draws.
pub fn adapt_epsilon(
    spec: &ModelSpec,
    theta0: &ParamVector,
    x: &SampleMatrix,
    template: &KernelConfig,
    schedule: &EpsilonSchedule,
    kappa: usize,
    seed: u64,
) -> Result<EpsilonChoice> {
    schedule.validate()?;
    let cap = schedule.epsilon_max.min(template.epsilon_limit());
    let mut ladder = Vec::new();
    let mut eps = schedule.epsilon_0;
    while eps < cap {
        let kernel = template.with_epsilon(eps).build(x)?;
        let pairing = sample_conditional(&kernel, x, kappa, seed)?;
        let gap = libm::fabs(cnce_loss(spec, theta0, x, &pairing)?.value - TWO_LN_2);
        ladder.push((eps, gap));
        if gap >= schedule.delta {
            return Ok(EpsilonChoice { epsilon: eps, capped: false, ladder });
        }
        eps *= schedule.growth;
    }
    Ok(EpsilonChoice { epsilon: cap, capped: true, ladder })
}
