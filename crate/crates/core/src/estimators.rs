//! Loss functions: CNCE, NCE with a learned log-normaliser, score matching,
//! maximum-likelihood baselines and the exact Bernoulli population loss.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sign, sigmoid, softplus, softplus_sigmoid, SQRT_2};
use crate::model::{initial_params, ModelKind, ModelSpec, ParamVector, PreparedModel};
use crate::noise::{ConditionalKernel, ConditionalNoise, MarginalKernel, NoisePairing};
use crate::optimize::{minimize_with_mask, EstimationRun, Objective, OptimizerConfig};
use crate::sample::SampleMatrix;

/// Loss value, gradient and number of summands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub value: f64,
    pub gradient: ParamVector,
    pub n_terms: usize,
}

/// `G(u1, u2; θ) = log φ(u1) - log φ(u2) + log pc(u2|u1) - log pc(u1|u2)`.
pub fn cnce_g<K: ConditionalNoise + ?Sized>(
    spec: &ModelSpec,
    theta: &ParamVector,
    kernel: &K,
    u1: &[f64],
    u2: &[f64],
) -> Result<f64> {
    let m = PreparedModel::new(spec, theta)?;
    Ok(m.log_phi(u1)? - m.log_phi(u2)? + kernel.log_ratio(u1, u2))
}

/// Empirical CNCE loss `(2 / κN) Σ_ij log(1 + exp(-G(x_i, y_ij)))` and its
/// gradient.
pub fn cnce_loss(
    spec: &ModelSpec,
    theta: &ParamVector,
    x: &SampleMatrix,
    pairing: &NoisePairing,
) -> Result<LossReport> {
    let mut grad = vec![0.0; spec.param_count()];
    let value = cnce_value_grad(spec, theta, x, pairing, &mut grad)?;
    Ok(LossReport { value, gradient: grad.into(), n_terms: x.n() * pairing.kappa() })
}

fn cnce_value_grad(
    spec: &ModelSpec,
    theta: &[f64],
    x: &SampleMatrix,
    pairing: &NoisePairing,
    grad: &mut [f64],
) -> Result<f64> {
    check_cnce_inputs(spec, x, pairing)?;
    cnce_value_grad_unchecked(spec, theta, x, pairing, grad)
}

fn check_cnce_inputs(spec: &ModelSpec, x: &SampleMatrix, pairing: &NoisePairing) -> Result<()> {
    pairing.check_matches(x)?;
    if x.n() == 0 {
        return Err(Error::shape("empty sample"));
    }
    for u in x.rows().chain(pairing.noise_slice().chunks_exact(x.dim())) {
        spec.check_point(u)?;
    }
    Ok(())
}

/// Points must have passed [`check_cnce_inputs`].
fn cnce_value_grad_unchecked(
    spec: &ModelSpec,
    theta: &[f64],
    x: &SampleMatrix,
    pairing: &NoisePairing,
    grad: &mut [f64],
) -> Result<f64> {
    let m = PreparedModel::new(spec, theta)?;
    if spec.kind == ModelKind::IcaLaplace {
        match spec.dim {
            2 => return Ok(cnce_ica::<2>(theta, x, pairing, grad)),
            3 => return Ok(cnce_ica::<3>(theta, x, pairing, grad)),
            4 => return Ok(cnce_ica::<4>(theta, x, pairing, grad)),
            _ => {}
        }
    }
    let kappa = pairing.kappa();
    let scale = 2.0 / (kappa * x.n()) as f64;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut value = 0.0;
    let (mut sx, mut sy) = (vec![0.0; spec.dim], vec![0.0; spec.dim]);
    for (i, xi) in x.rows().enumerate() {
        let fx = m.log_phi_cached(xi, &mut sx);
        let mut weight_x = 0.0;
        for j in 0..kappa {
            let y = pairing.noise(i, j);
            let g = fx - m.log_phi_cached(y, &mut sy) + pairing.log_ratio(i, j);
            // d/dθ softplus(-G) = -σ(-G) (∇ log φ(x) - ∇ log φ(y))
            let (sp, w) = softplus_sigmoid(-g);
            value += sp;
            weight_x += w;
            m.add_grad_theta_cached(y, &sy, scale * w, grad);
        }
        m.add_grad_theta_cached(xi, &sx, -scale * weight_x, grad);
    }
    Ok(scale * value)
}

/// Fixed-dimension CNCE for the ICA model, `θ` being `B` row-major.
fn cnce_ica<const D: usize>(theta: &[f64], x: &SampleMatrix, pairing: &NoisePairing, grad: &mut [f64]) -> f64 {
    let mut b = [[0.0; D]; D];
    for (row, chunk) in b.iter_mut().zip(theta.chunks_exact(D)) {
        row.copy_from_slice(chunk);
    }
    let project = |u: &[f64; D]| -> ([f64; D], f64) {
        let mut s = [0.0; D];
        let mut total = 0.0;
        for (sr, row) in s.iter_mut().zip(&b) {
            *sr = row.iter().zip(u).map(|(a, c)| a * c).sum();
            total += sr.abs();
        }
        (s, -SQRT_2 * total)
    };
    let kappa = pairing.kappa();
    let scale = 2.0 / (kappa * x.n()) as f64;
    let mut acc = [[0.0; D]; D];
    let mut value = 0.0;
    let noise = pairing.noise_slice().chunks_exact(D * kappa);
    let ratios = pairing.log_ratios().chunks_exact(kappa);
    for ((xi, ys), lrs) in x.rows().zip(noise).zip(ratios) {
        let xi: &[f64; D] = xi.try_into().expect("dimension checked");
        let (sx, fx) = project(xi);
        let mut weight_x = 0.0;
        for (y, lr) in ys.chunks_exact(D).zip(lrs) {
            let y: &[f64; D] = y.try_into().expect("dimension checked");
            let (sy, fy) = project(y);
            let (sp, w) = softplus_sigmoid(fy - fx - lr);
            value += sp;
            weight_x += w;
            for (row, s) in acc.iter_mut().zip(&sy) {
                let c = w * sign(*s);
                for (a, u) in row.iter_mut().zip(y) {
                    *a += c * u;
                }
            }
        }
        for (row, s) in acc.iter_mut().zip(&sx) {
            let c = weight_x * sign(*s);
            for (a, u) in row.iter_mut().zip(xi) {
                *a -= c * u;
            }
        }
    }
    for (g, a) in grad.iter_mut().zip(acc.iter().flatten()) {
        *g = -SQRT_2 * scale * a;
    }
    scale * value
}

/// Rows `T(u)` and offsets `b(u)` of a model that is linear in `θ`, so that
/// `log φ(u_k) = θ·T(u_k) + b_k`.
struct LinearDesign {
    features: Vec<f64>,
    offsets: Vec<f64>,
    p: usize,
}

impl LinearDesign {
    /// `None` for models that are not linear in `θ`.
    fn new<'u>(spec: &ModelSpec, points: impl Iterator<Item = &'u [f64]>) -> Result<Option<Self>> {
        let p = spec.param_count();
        let mut row = vec![0.0; p];
        let mut features = Vec::new();
        let mut offsets = Vec::new();
        for u in points {
            spec.check_point(u)?;
            match spec.linear_features(u, &mut row) {
                Some(b) => {
                    features.extend_from_slice(&row);
                    offsets.push(b);
                }
                None => return Ok(None),
            }
        }
        Ok(Some(LinearDesign { features, offsets, p }))
    }

    fn row(&self, k: usize) -> &[f64] {
        &self.features[k * self.p..(k + 1) * self.p]
    }

    fn eval(&self, k: usize, theta: &[f64]) -> f64 {
        self.offsets[k] + self.row(k).iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
    }

    fn add_row(&self, k: usize, weight: f64, out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(self.row(k)) {
            *o += weight * t;
        }
    }
}

/// CNCE objective over natural parameters. Models that are linear in `θ`
/// have the pair differences `T(x_i) - T(y_ij)` precomputed.
pub struct CnceObjective<'a> {
    spec: ModelSpec,
    x: &'a SampleMatrix,
    pairing: &'a NoisePairing,
    design: Option<LinearDesign>,
}

impl<'a> CnceObjective<'a> {
    pub fn new(spec: &ModelSpec, x: &'a SampleMatrix, pairing: &'a NoisePairing) -> Result<Self> {
        if x.dim() != spec.dim {
            return Err(Error::shape("data dimension does not match the model"));
        }
        check_cnce_inputs(spec, x, pairing)?;
        let kappa = pairing.kappa();
        let design = LinearDesign::new(spec, x.rows())?
            .map(|dx| -> Result<Option<LinearDesign>> {
                let ys = (0..x.n()).flat_map(|i| (0..kappa).map(move |j| (i, j))).map(|(i, j)| pairing.noise(i, j));
                let Some(dy) = LinearDesign::new(spec, ys)? else { return Ok(None) };
                let p = dx.p;
                let mut features = dy.features;
                let mut offsets = dy.offsets;
                for i in 0..x.n() {
                    for j in 0..kappa {
                        let k = i * kappa + j;
                        for (f, t) in features[k * p..(k + 1) * p].iter_mut().zip(dx.row(i)) {
                            *f = t - *f;
                        }
                        offsets[k] = dx.offsets[i] - offsets[k] + pairing.log_ratio(i, j);
                    }
                }
                Ok(Some(LinearDesign { features, offsets, p }))
            })
            .transpose()?
            .flatten();
        Ok(CnceObjective { spec: *spec, x, pairing, design })
    }
}

impl Objective for CnceObjective<'_> {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn is_smooth(&self) -> bool {
        self.spec.kind != ModelKind::IcaLaplace
    }

    fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let Some(design) = &self.design else {
            return cnce_value_grad_unchecked(&self.spec, theta, self.x, self.pairing, grad);
        };
        self.spec.check_theta(theta)?;
        let terms = design.offsets.len();
        let scale = 2.0 / terms as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        for k in 0..terms {
            let g = design.eval(k, theta);
            let (sp, w) = softplus_sigmoid(-g);
            value += sp;
            design.add_row(k, -scale * w, grad);
        }
        Ok(scale * value)
    }
}

/// NCE data with the noise log-densities cached. Parameters are `θ` followed
/// by the log-normaliser `c`.
pub struct NceObjective<'a> {
    pub spec: ModelSpec,
    x: &'a SampleMatrix,
    noise: &'a SampleMatrix,
    log_pn_x: Vec<f64>,
    log_pn_y: Vec<f64>,
    log_nu: f64,
    design: Option<(LinearDesign, LinearDesign)>,
}

impl<'a> NceObjective<'a> {
    pub fn new(
        spec: &ModelSpec,
        x: &'a SampleMatrix,
        noise: &'a SampleMatrix,
        marginal: &MarginalKernel,
    ) -> Result<Self> {
        Self::build(spec, x, noise, marginal, true)
    }

    fn build(
        spec: &ModelSpec,
        x: &'a SampleMatrix,
        noise: &'a SampleMatrix,
        marginal: &MarginalKernel,
        precompute: bool,
    ) -> Result<Self> {
        if x.n() == 0 {
            return Err(Error::shape("empty sample"));
        }
        if noise.dim() != x.dim() || marginal.dim() != x.dim() {
            return Err(Error::shape("noise and data dimensions differ"));
        }
        if noise.n() < x.n() || noise.n() % x.n() != 0 {
            return Err(Error::shape(format!(
                "noise count {} is not a positive multiple of the data count {}",
                noise.n(),
                x.n()
            )));
        }
        for u in x.rows().chain(noise.rows()) {
            spec.check_point(u)?;
        }
        let nu = (noise.n() / x.n()) as f64;
        let design = match precompute.then(|| LinearDesign::new(spec, x.rows())).transpose()?.flatten() {
            Some(dx) => LinearDesign::new(spec, noise.rows())?.map(|dy| (dx, dy)),
            None => None,
        };
        Ok(NceObjective {
            design,
            spec: *spec,
            x,
            noise,
            log_pn_x: x.rows().map(|u| marginal.log_density(u)).collect(),
            log_pn_y: noise.rows().map(|u| marginal.log_density(u)).collect(),
            log_nu: libm::log(nu),
        })
    }

    pub fn nu(&self) -> usize {
        self.noise.n() / self.x.n()
    }
}

impl Objective for NceObjective<'_> {
    fn dim(&self) -> usize {
        self.spec.param_count() + 1
    }

    fn is_smooth(&self) -> bool {
        self.spec.kind != ModelKind::IcaLaplace
    }

    fn value_grad(&self, theta_c: &[f64], grad: &mut [f64]) -> Result<f64> {
        let p = self.spec.param_count();
        if theta_c.len() != p + 1 {
            return Err(Error::shape(format!("nce expects {} parameters, got {}", p + 1, theta_c.len())));
        }
        let (theta, c) = (&theta_c[..p], theta_c[p]);
        let m = PreparedModel::new(&self.spec, theta)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let inv_n = 1.0 / self.x.n() as f64;
        let (theta_grad, c_grad) = grad.split_at_mut(p);
        let mut value = 0.0;
        let mut dc = 0.0;
        if let Some((dx, dy)) = &self.design {
            for (k, lpn) in self.log_pn_x.iter().enumerate() {
                let h = dx.eval(k, theta) + c - lpn - self.log_nu;
                let (sp, sg) = softplus_sigmoid(-h);
                value += sp;
                let w = -sg * inv_n;
                dc += w;
                dx.add_row(k, w, theta_grad);
            }
            for (k, lpn) in self.log_pn_y.iter().enumerate() {
                let h = dy.eval(k, theta) + c - lpn - self.log_nu;
                let (sp, sg) = softplus_sigmoid(h);
                value += sp;
                let w = sg * inv_n;
                dc += w;
                dy.add_row(k, w, theta_grad);
            }
            c_grad[0] = dc;
            return Ok(value * inv_n);
        }
        let mut proj = vec![0.0; self.spec.dim];
        // data: softplus(-h), d/dh = -σ(-h)
        for (u, lpn) in self.x.rows().zip(&self.log_pn_x) {
            let h = m.log_phi_cached(u, &mut proj) + c - lpn - self.log_nu;
            let (sp, sg) = softplus_sigmoid(-h);
            value += sp;
            let w = -sg * inv_n;
            dc += w;
            m.add_grad_theta_cached(u, &proj, w, theta_grad);
        }
        // noise: softplus(h), d/dh = σ(h)
        for (u, lpn) in self.noise.rows().zip(&self.log_pn_y) {
            let h = m.log_phi_cached(u, &mut proj) + c - lpn - self.log_nu;
            let (sp, sg) = softplus_sigmoid(h);
            value += sp;
            let w = sg * inv_n;
            dc += w;
            m.add_grad_theta_cached(u, &proj, w, theta_grad);
        }
        c_grad[0] = dc;
        Ok(value * inv_n)
    }
}

/// NCE loss `-(1/N)[Σ_x log σ(h(x)) + Σ_y log(1 - σ(h(y)))]` with
/// `h(u) = log φ(u; θ) + c - log p_n(u) - log ν`. `theta_with_c` carries `c`
/// as its last entry; the report's gradient has the same layout.
pub fn nce_loss(
    spec: &ModelSpec,
    theta_with_c: &ParamVector,
    x: &SampleMatrix,
    noise: &SampleMatrix,
    marginal: &MarginalKernel,
) -> Result<LossReport> {
    let obj = NceObjective::build(spec, x, noise, marginal, false)?;
    let mut grad = vec![0.0; obj.dim()];
    let value = obj.value_grad(theta_with_c, &mut grad)?;
    Ok(LossReport { value, gradient: grad.into(), n_terms: x.n() + noise.n() })
}

/// Score-matching objective `mean_x [Δu log φ + ½ |∇u log φ|²]`.
pub fn score_matching_loss(spec: &ModelSpec, theta: &ParamVector, x: &SampleMatrix) -> Result<LossReport> {
    let mut grad = vec![0.0; spec.param_count()];
    let value = sm_value_grad(spec, theta, x, &mut grad)?;
    Ok(LossReport { value, gradient: grad.into(), n_terms: x.n() })
}

fn sm_value_grad(spec: &ModelSpec, theta: &[f64], x: &SampleMatrix, grad: &mut [f64]) -> Result<f64> {
    if !spec.kind.is_smooth() {
        return Err(Error::unsupported(format!("score matching needs a smooth model, got {}", spec.kind)));
    }
    if x.n() == 0 {
        return Err(Error::shape("empty sample"));
    }
    let m = PreparedModel::new(spec, theta)?;
    let w = 1.0 / x.n() as f64;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut value = 0.0;
    let d = spec.dim;
    for u in x.rows() {
        let score = m.grad_u(u)?;
        let lap = m.laplacian_u(u)?;
        value += lap + 0.5 * crate::math::dot(&score, &score);
        match spec.kind {
            ModelKind::GaussianPrecision => {
                // score = -Λu; d/dΛ of [-tr Λ + ½|Λu|²]
                let mut k = 0;
                for i in 0..d {
                    for j in i..d {
                        let (vi, vj) = (-score[i], -score[j]);
                        grad[k] += w * if i == j { -1.0 + vi * u[i] } else { vi * u[j] + vj * u[i] };
                        k += 1;
                    }
                }
            }
            ModelKind::Ring => {
                let gamma = theta[0];
                let r = crate::math::norm2(u);
                let dr = r - spec.ring_mean;
                let bracket = 1.0 + (d as f64 - 1.0) * dr / r;
                grad[0] += w * (-bracket + gamma * dr * dr);
            }
            ModelKind::LogNormalExt => {
                let t = theta[0];
                let l = libm::log(u[0]);
                let u2 = u[0] * u[0];
                grad[0] += w * ((l - 1.0) + (t * l + 1.0) * l) / u2;
            }
            _ => unreachable!(),
        }
    }
    Ok(value * w)
}

pub struct ScoreMatchingObjective<'a> {
    pub spec: ModelSpec,
    pub x: &'a SampleMatrix,
}

impl Objective for ScoreMatchingObjective<'_> {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        sm_value_grad(&self.spec, theta, self.x, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MleMethod {
    ClosedForm,
    GradientAscent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub theta_hat: ParamVector,
    pub method: MleMethod,
    pub converged: bool,
    /// Optimizer trajectory for the iterative fits.
    pub run: Option<EstimationRun>,
}

/// Maximum likelihood for the normalised versions of the models.
///
/// The log-normal fit reports `C = -5`: the normalised model puts no mass on
/// `u <= 0` and the constant is not estimated.
pub fn mle_fit(spec: &ModelSpec, x: &SampleMatrix, cfg: &OptimizerConfig, seed: u64) -> Result<MleResult> {
    if x.dim() != spec.dim {
        return Err(Error::shape("data dimension does not match the model"));
    }
    if x.n() == 0 {
        return Err(Error::shape("empty sample"));
    }
    let closed = |theta_hat: ParamVector| MleResult { theta_hat, method: MleMethod::ClosedForm, converged: true, run: None };
    match spec.kind {
        ModelKind::GaussianPrecision => {
            let d = spec.dim;
            let mut s = DMatrix::<f64>::zeros(d, d);
            for row in x.rows() {
                for i in 0..d {
                    for j in 0..d {
                        s[(i, j)] += row[i] * row[j];
                    }
                }
            }
            s /= x.n() as f64;
            let lambda = s
                .try_inverse()
                .filter(|m| m.iter().all(|v| v.is_finite()))
                .ok_or_else(|| Error::Singular(String::from("sample second-moment matrix is singular")))?;
            Ok(closed(spec.pack_precision(&lambda)))
        }
        ModelKind::Bernoulli => {
            let ones = x.as_slice().iter().filter(|&&v| v == 1.0).count() as f64;
            let n = x.n() as f64;
            Ok(closed(ParamVector::new(vec![(n - ones) / n, ones / n])))
        }
        ModelKind::LogNormalExt => {
            if x.as_slice().iter().any(|&v| v <= 0.0) {
                return Err(Error::domain("log-normal data must be positive"));
            }
            let msq = x.as_slice().iter().map(|v| { let l = libm::log(*v); l * l }).sum::<f64>() / x.n() as f64;
            Ok(closed(ParamVector::new(vec![1.0 / msq, -5.0])))
        }
        ModelKind::IcaLaplace => {
            let obj = IcaLikelihood { dim: spec.dim, x };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta0 = initial_params(spec, cfg.init_scale, &mut rng);
            let run = minimize_with_mask(&obj, &vec![false; obj.dim()], &theta0, cfg, seed)?;
            Ok(MleResult {
                theta_hat: ParamVector::new(run.theta_final.clone()),
                method: MleMethod::GradientAscent,
                converged: run.converged,
                run: Some(run),
            })
        }
        ModelKind::Ring => Err(Error::unsupported("mle unsupported for ring")),
    }
}

/// Negative mean log-likelihood of the normalised ICA model with unit-variance
/// Laplace sources: `-log|det B| + mean_x Σ_j √2 |b_j·x| + (D/2) log 2`.
pub struct IcaLikelihood<'a> {
    pub dim: usize,
    pub x: &'a SampleMatrix,
}

impl Objective for IcaLikelihood<'_> {
    fn dim(&self) -> usize {
        self.dim * self.dim
    }

    fn is_smooth(&self) -> bool {
        false
    }

    fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let d = self.dim;
        let b = DMatrix::from_row_slice(d, d, theta);
        let lu = b.clone().lu();
        let det = lu.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Singular(String::from("demixing matrix is singular")));
        }
        let b_inv = lu.try_inverse().ok_or_else(|| Error::Singular(String::from("demixing matrix is singular")))?;
        let w = 1.0 / self.x.n() as f64;
        let mut value = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for u in self.x.rows() {
            for (j, row) in theta.chunks_exact(d).enumerate() {
                let s: f64 = row.iter().zip(u).map(|(a, c)| a * c).sum();
                value += SQRT_2 * s.abs();
                let c = SQRT_2 * crate::math::sign(s) * w;
                for k in 0..d {
                    grad[j * d + k] += c * u[k];
                }
            }
        }
        // d log|det B| / dB = B^{-T}
        for j in 0..d {
            for k in 0..d {
                grad[j * d + k] -= b_inv[(k, j)];
            }
        }
        Ok(value * w - libm::log(det.abs()) + 0.5 * d as f64 * crate::math::LN_2)
    }
}

/// Exact population CNCE loss of the Bernoulli model under flip noise:
/// `2 Σ_{x,y ∈ {0,1}} p_d(x) pc(y|x) log(1 + exp(-G(x, y)))`.
pub fn bernoulli_population_loss(theta: &ParamVector, theta_true: &ParamVector, epsilon: f64) -> Result<f64> {
    Ok(bernoulli_population_loss_report(theta, theta_true, epsilon)?.value)
}

pub fn bernoulli_population_loss_report(
    theta: &ParamVector,
    theta_true: &ParamVector,
    epsilon: f64,
) -> Result<LossReport> {
    let obj = BernoulliPopulation::new(theta_true, epsilon)?;
    let mut grad = vec![0.0; 2];
    let value = obj.value_grad(theta, &mut grad)?;
    Ok(LossReport { value, gradient: grad.into(), n_terms: 4 })
}

/// [`bernoulli_population_loss`] as an optimizer objective.
pub struct BernoulliPopulation {
    p_data: [f64; 2],
    kernel: ConditionalKernel,
}

impl BernoulliPopulation {
    pub fn new(theta_true: &ParamVector, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::param(format!("population loss needs 0 < epsilon < 1, got {epsilon}")));
        }
        if theta_true.len() != 2 || theta_true.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::param("true bernoulli parameters must be two positive numbers"));
        }
        let z = theta_true[0] + theta_true[1];
        Ok(BernoulliPopulation {
            p_data: [theta_true[0] / z, theta_true[1] / z],
            kernel: ConditionalKernel::bernoulli_flip(epsilon)?,
        })
    }
}

impl Objective for BernoulliPopulation {
    fn dim(&self) -> usize {
        2
    }

    fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let spec = ModelSpec::bernoulli();
        let m = PreparedModel::new(&spec, theta)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        for (xv, px) in [0.0, 1.0].into_iter().zip(self.p_data) {
            for yv in [0.0, 1.0] {
                let (x, y) = ([xv], [yv]);
                let weight = px * libm::exp(self.kernel.log_density(&y, &x));
                let g = m.log_phi_unchecked(&x) - m.log_phi_unchecked(&y) + self.kernel.log_ratio(&x, &y);
                value += 2.0 * weight * softplus(-g);
                let w = 2.0 * weight * sigmoid(-g);
                m.add_grad_theta(&y, w, grad);
                m.add_grad_theta(&x, -w, grad);
            }
        }
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::TWO_LN_2;
    use crate::model::{generate_true_params, sample_data};
    use crate::noise::{fit_marginal, sample_conditional, sample_marginal};

    #[test]
    fn g_examples() {
        let spec = ModelSpec::gaussian(1);
        let th = ParamVector::new(vec![1.0]);
        let k = ConditionalKernel::gaussian(vec![0.5]).unwrap();
        assert_eq!(cnce_g(&spec, &th, &k, &[1.3], &[1.3]).unwrap(), 0.0);
        let g = cnce_g(&spec, &th, &k, &[1.0], &[1.5]).unwrap();
        assert!((g - 0.625).abs() < 1e-15);
        let back = cnce_g(&spec, &th, &k, &[1.5], &[1.0]).unwrap();
        assert_eq!(g, -back);
    }

    #[test]
    fn single_pair_loss_value() {
        let spec = ModelSpec::gaussian(1);
        let x = SampleMatrix::new(vec![1.0], 1).unwrap();
        let k = ConditionalKernel::gaussian(vec![0.5]).unwrap();
        let p = NoisePairing::from_parts(&k, &x, vec![1.5], 1).unwrap();
        let r = cnce_loss(&spec, &ParamVector::new(vec![1.0]), &x, &p).unwrap();
        // 2 log(1 + e^{-0.625})
        assert!((r.value - 0.857_401_356_553_037_3).abs() < 1e-12, "{}", r.value);
        assert_eq!(r.n_terms, 1);
    }

    #[test]
    fn huge_g_drives_loss_to_zero() {
        let spec = ModelSpec::gaussian(1);
        let x = SampleMatrix::new(vec![0.0, 0.0], 1).unwrap();
        let k = ConditionalKernel::gaussian(vec![1.0]).unwrap();
        let p = NoisePairing::from_parts(&k, &x, vec![100.0, -100.0], 1).unwrap();
        let r = cnce_loss(&spec, &ParamVector::new(vec![1e3]), &x, &p).unwrap();
        assert!(r.value >= 0.0 && r.value < 1e-300);
        assert!(r.gradient.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn zero_noise_gives_two_log_two() {
        for kind in ModelKind::ALL {
            let spec = ModelSpec::default_for(kind);
            let theta = generate_true_params(&spec, 3);
            let x = sample_data(&spec, &theta, 50, 4).unwrap();
            let k = ConditionalKernel::gaussian(vec![0.0; spec.dim]).unwrap();
            let noise: Vec<f64> = x.rows().flat_map(|r| r.iter().copied().cycle().take(3 * r.len())).collect();
            let p = NoisePairing::from_parts(&k, &x, noise, 3).unwrap();
            let r = cnce_loss(&spec, &theta, &x, &p).unwrap();
            assert!((r.value - TWO_LN_2).abs() < 1e-12, "{kind}");
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let spec = ModelSpec::gaussian(1);
        let x = SampleMatrix::new(vec![1.0, 2.0], 1).unwrap();
        let other = SampleMatrix::new(vec![1.0], 1).unwrap();
        let k = ConditionalKernel::gaussian(vec![0.5]).unwrap();
        let p = sample_conditional(&k, &other, 2, 1).unwrap();
        assert!(matches!(cnce_loss(&spec, &ParamVector::new(vec![1.0]), &x, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn nce_indifferent_classifier() {
        // φ equal to the noise density with c = 0 and ν = 1 gives h ≡ 0.
        let spec = ModelSpec::gaussian(2);
        let marginal = MarginalKernel::new(vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        let x = sample_marginal(&marginal, 200, 1);
        let y = sample_marginal(&marginal, 200, 2);
        // log φ = -½|u|² and c = -log(2π) reproduce log p_n exactly.
        let c = -(2.0 * core::f64::consts::PI).ln();
        let r = nce_loss(&spec, &ParamVector::new(vec![1.0, 0.0, 1.0, c]), &x, &y, &marginal).unwrap();
        assert!((r.value - TWO_LN_2).abs() < 1e-12);
        assert_eq!(r.gradient.len(), 4);
    }

    #[test]
    fn precomputed_designs_match_direct_evaluation() {
        let specs = [ModelSpec::gaussian(3), ModelSpec::ring(3, 4.0), ModelSpec::log_normal()];
        for (s, spec) in specs.iter().enumerate() {
            let truth = generate_true_params(spec, s as u64);
            let x = sample_data(spec, &truth, 300, 10 + s as u64).unwrap();
            let kernel = ConditionalKernel::gaussian_for_data(0.7, &x, true).unwrap();
            let pairing = sample_conditional(&kernel, &x, 3, 20).unwrap();
            let mut theta = truth.clone();
            theta[0] *= 1.3;
            let direct = cnce_loss(spec, &theta, &x, &pairing).unwrap();
            let obj = CnceObjective::new(spec, &x, &pairing).unwrap();
            assert!(obj.design.is_some());
            let mut g = vec![0.0; obj.dim()];
            let v = obj.value_grad(&theta, &mut g).unwrap();
            assert!((v - direct.value).abs() < 1e-12);
            assert!(g.iter().zip(direct.gradient.iter()).all(|(a, b)| (a - b).abs() < 1e-10));

            let marginal = fit_marginal(&x).unwrap();
            let y = sample_marginal(&marginal, 600, 30);
            let mut tc = theta.values.clone();
            tc.push(-1.0);
            let direct = nce_loss(spec, &ParamVector::new(tc.clone()), &x, &y, &marginal).unwrap();
            let obj = NceObjective::new(spec, &x, &y, &marginal).unwrap();
            assert!(obj.design.is_some());
            let mut g = vec![0.0; obj.dim()];
            let v = obj.value_grad(&tc, &mut g).unwrap();
            assert!((v - direct.value).abs() < 1e-12);
            assert!(g.iter().zip(direct.gradient.iter()).all(|(a, b)| (a - b).abs() < 1e-10));
        }
    }

    #[test]
    fn fixed_dimension_ica_matches_generic_terms() {
        for d in 2..=5 {
            let spec = ModelSpec::ica(d);
            let truth = generate_true_params(&spec, d as u64);
            let x = sample_data(&spec, &truth, 200, 3).unwrap();
            let kernel = ConditionalKernel::gaussian_for_data(0.5, &x, true).unwrap();
            let pairing = sample_conditional(&kernel, &x, 4, 5).unwrap();
            let got = cnce_loss(&spec, &truth, &x, &pairing).unwrap();

            let m = PreparedModel::new(&spec, &truth).unwrap();
            let scale = 2.0 / (4 * x.n()) as f64;
            let (mut value, mut grad) = (0.0, vec![0.0; spec.param_count()]);
            for (i, xi) in x.rows().enumerate() {
                for j in 0..4 {
                    let y = pairing.noise(i, j);
                    let g = m.log_phi(xi).unwrap() - m.log_phi(y).unwrap();
                    value += scale * softplus(-g);
                    let w = scale * sigmoid(-g);
                    m.add_grad_theta(xi, -w, &mut grad);
                    m.add_grad_theta(y, w, &mut grad);
                }
            }
            assert!((got.value - value).abs() < 1e-12, "d = {d}");
            assert!(got.gradient.iter().zip(&grad).all(|(a, b)| (a - b).abs() < 1e-12), "d = {d}");
        }
    }

    #[test]
    fn nce_rejects_uneven_noise() {
        let spec = ModelSpec::gaussian(1);
        let x = SampleMatrix::new(vec![1.0, 2.0], 1).unwrap();
        let y = SampleMatrix::new(vec![1.0, 2.0, 3.0], 1).unwrap();
        let m = fit_marginal(&SampleMatrix::new(vec![1.0, 2.0, 4.0], 1).unwrap()).unwrap();
        assert!(matches!(nce_loss(&spec, &ParamVector::new(vec![1.0, 0.0]), &x, &y, &m), Err(Error::Shape(_))));
    }

    #[test]
    fn nce_truth_beats_perturbation() {
        let spec = ModelSpec::gaussian(2);
        let theta = ParamVector::new(vec![2.0, 0.5, 1.0]);
        let x = sample_data(&spec, &theta, 20_000, 8).unwrap();
        let marginal = fit_marginal(&x).unwrap();
        let y = sample_marginal(&marginal, 20_000, 9);
        let lam = spec.unpack_precision(&theta);
        let log_z = (2.0 * core::f64::consts::PI).ln() - 0.5 * lam.determinant().ln();
        let truth = nce_loss(&spec, &ParamVector::new(vec![2.0, 0.5, 1.0, -log_z]), &x, &y, &marginal).unwrap();
        let off = nce_loss(&spec, &ParamVector::new(vec![2.5, 0.2, 1.0, -log_z]), &x, &y, &marginal).unwrap();
        assert!(truth.value < off.value);
    }

    #[test]
    fn score_matching_examples() {
        let g5 = ModelSpec::gaussian(5);
        let eye = g5.pack_precision(&DMatrix::identity(5, 5));
        let x = SampleMatrix::new(vec![0.0; 5], 5).unwrap();
        assert_eq!(score_matching_loss(&g5, &eye, &x).unwrap().value, -5.0);

        let g1 = ModelSpec::gaussian(1);
        let x = sample_data(&g1, &ParamVector::new(vec![1.0]), 200_000, 2).unwrap();
        let msq = x.as_slice().iter().map(|v| v * v).sum::<f64>() / x.n() as f64;
        for lam in [0.5, 1.0, 2.0] {
            let v = score_matching_loss(&g1, &ParamVector::new(vec![lam]), &x).unwrap().value;
            assert!((v - (-lam + 0.5 * lam * lam * msq)).abs() < 1e-12);
        }
        let at_one = score_matching_loss(&g1, &ParamVector::new(vec![1.0]), &x).unwrap().value;
        assert!((at_one + 0.5).abs() < 0.01);
        // Stationary point of -λ + ½λ² mean(x²) is 1 / mean(x²).
        let lam_star = 1.0 / msq;
        let grad = score_matching_loss(&g1, &ParamVector::new(vec![lam_star]), &x).unwrap().gradient;
        assert!(grad[0].abs() < 1e-12);
    }

    #[test]
    fn score_matching_unsupported_models() {
        let x = SampleMatrix::new(vec![1.0], 1).unwrap();
        assert!(matches!(
            score_matching_loss(&ModelSpec::bernoulli(), &ParamVector::new(vec![1.0, 1.0]), &x),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn mle_closed_forms() {
        let bern = SampleMatrix::new([vec![1.0; 7], vec![0.0; 3]].concat(), 1).unwrap();
        let r = mle_fit(&ModelSpec::bernoulli(), &bern, &OptimizerConfig::default(), 0).unwrap();
        assert!((r.theta_hat[0] - 0.3).abs() < 1e-15 && (r.theta_hat[1] - 0.7).abs() < 1e-15);
        assert_eq!(r.method, MleMethod::ClosedForm);

        let spec = ModelSpec::gaussian(2);
        let x = SampleMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 1.0]]).unwrap();
        let r = mle_fit(&spec, &x, &OptimizerConfig::default(), 0).unwrap();
        // S = [[2/3, -1/3], [-1/3, 5/3]]
        let s = DMatrix::from_row_slice(2, 2, &[2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0, 5.0 / 3.0]);
        let prod = spec.unpack_precision(&r.theta_hat) * s;
        assert!((prod - DMatrix::identity(2, 2)).norm() < 1e-12);

        let ring = ModelSpec::ring(5, 4.0);
        let x = sample_data(&ring, &ParamVector::new(vec![2.0]), 10, 0).unwrap();
        let err = mle_fit(&ring, &x, &OptimizerConfig::default(), 0).unwrap_err();
        assert!(alloc::format!("{err}").contains("mle unsupported for ring"));
    }

    #[test]
    fn ica_mle_recovers_demixing() {
        let spec = ModelSpec::ica(2);
        let b = ParamVector::new(vec![1.0, 0.5, -0.3, 1.2]);
        let x = sample_data(&spec, &b, 20_000, 4).unwrap();
        let r = mle_fit(&spec, &x, &OptimizerConfig::default(), 11).unwrap();
        let err = crate::metrics::estimation_error(&spec, &r.theta_hat, &b).unwrap();
        assert!(err < 0.1, "error {err}, {:?}", r.theta_hat);
    }

    #[test]
    fn population_loss_properties() {
        let truth = ParamVector::new(vec![0.3, 0.7]);
        let at = |t: [f64; 2]| bernoulli_population_loss(&ParamVector::new(t.to_vec()), &truth, 0.2).unwrap();
        assert_eq!(at([0.3, 0.7]), at([0.6, 1.4]));
        assert!(at([0.3, 0.7]) < at([0.35, 0.65]));
        assert!(at([0.3, 0.7]) < at([0.25, 0.75]));

        let sym = ParamVector::new(vec![0.5, 0.5]);
        for eps in [0.1, 0.5, 0.9] {
            let f = |t1: f64| bernoulli_population_loss(&ParamVector::new(vec![t1, 1.0 - t1]), &sym, eps).unwrap();
            assert!(f(0.5) < f(0.49) && f(0.5) < f(0.51));
        }
        assert!(bernoulli_population_loss(&truth, &truth, 0.0).is_err());
        assert!(bernoulli_population_loss(&truth, &truth, 1.0).is_err());
    }
}
