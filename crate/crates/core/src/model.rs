//! Unnormalised models `log φ(u; θ)`.
//!
//! Parameter packings:
//!
//! | kind                 | values                                          |
//! |----------------------|-------------------------------------------------|
//! | `gaussian_precision` | upper triangle of the precision `Λ`, row-major  |
//! | `ica_laplace`        | rows `b_j` of the demixing matrix `B`           |
//! | `ring`               | `[γ]`, radial precision (the ring mean is fixed) |
//! | `log_normal_ext`     | `[θ, C]`, log-domain precision and the constant  |
//! | `bernoulli`          | `[θ1, θ2]`, unnormalised masses of 0 and 1      |

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sign, SQRT_2};
use crate::sample::SampleMatrix;

/// Ring mean used when none is configured.
pub const DEFAULT_RING_MEAN: f64 = 4.0;

/// Smallest singular value accepted for a generated demixing matrix.
pub const ICA_MIN_SINGULAR_VALUE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    GaussianPrecision,
    IcaLaplace,
    Ring,
    LogNormalExt,
    Bernoulli,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::GaussianPrecision,
        ModelKind::IcaLaplace,
        ModelKind::Ring,
        ModelKind::LogNormalExt,
        ModelKind::Bernoulli,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::GaussianPrecision => "gaussian_precision",
            ModelKind::IcaLaplace => "ica_laplace",
            ModelKind::Ring => "ring",
            ModelKind::LogNormalExt => "log_normal_ext",
            ModelKind::Bernoulli => "bernoulli",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn default_dim(self) -> usize {
        match self {
            ModelKind::GaussianPrecision | ModelKind::Ring => 5,
            ModelKind::IcaLaplace => 4,
            ModelKind::LogNormalExt | ModelKind::Bernoulli => 1,
        }
    }

    pub fn packing(self) -> &'static str {
        match self {
            ModelKind::GaussianPrecision => "upper_triangle_row_major",
            ModelKind::IcaLaplace => "demixing_rows",
            ModelKind::Ring => "ring_precision",
            ModelKind::LogNormalExt => "theta_c",
            ModelKind::Bernoulli => "theta1_theta2",
        }
    }

    /// Whether `log φ` is twice differentiable in `u` (score matching applies).
    pub fn is_smooth(self) -> bool {
        matches!(
            self,
            ModelKind::GaussianPrecision | ModelKind::Ring | ModelKind::LogNormalExt
        )
    }
}

impl core::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dim: usize,
    /// Known ring radius `μr`; ignored by the other models.
    pub ring_mean: f64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dim must be at least 1"));
        }
        if matches!(kind, ModelKind::LogNormalExt | ModelKind::Bernoulli) && dim != 1 {
            return Err(Error::param(format!("{kind} is univariate, got dim {dim}")));
        }
        Ok(ModelSpec { kind, dim, ring_mean: DEFAULT_RING_MEAN })
    }

    pub fn default_for(kind: ModelKind) -> Self {
        ModelSpec { kind, dim: kind.default_dim(), ring_mean: DEFAULT_RING_MEAN }
    }

    pub fn gaussian(dim: usize) -> Self {
        ModelSpec { kind: ModelKind::GaussianPrecision, dim, ring_mean: DEFAULT_RING_MEAN }
    }

    pub fn ica(dim: usize) -> Self {
        ModelSpec { kind: ModelKind::IcaLaplace, dim, ring_mean: DEFAULT_RING_MEAN }
    }

    pub fn ring(dim: usize, ring_mean: f64) -> Self {
        ModelSpec { kind: ModelKind::Ring, dim, ring_mean }
    }

    pub fn log_normal() -> Self {
        Self::default_for(ModelKind::LogNormalExt)
    }

    pub fn bernoulli() -> Self {
        Self::default_for(ModelKind::Bernoulli)
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::GaussianPrecision => self.dim * (self.dim + 1) / 2,
            ModelKind::IcaLaplace => self.dim * self.dim,
            ModelKind::Ring => 1,
            ModelKind::LogNormalExt | ModelKind::Bernoulli => 2,
        }
    }

    /// Coordinates that must stay positive. The optimizer works on their logs.
    pub fn positive_mask(&self) -> Vec<bool> {
        match self.kind {
            ModelKind::GaussianPrecision | ModelKind::IcaLaplace => vec![false; self.param_count()],
            ModelKind::Ring => vec![true],
            ModelKind::LogNormalExt => vec![true, false],
            ModelKind::Bernoulli => vec![true, true],
        }
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::shape(format!(
                "{} expects {} parameters, got {}",
                self.kind,
                self.param_count(),
                theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::param("non-finite parameter"));
        }
        Ok(())
    }

    pub fn check_point(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim {
            return Err(Error::shape(format!("point of length {} for dim {}", u.len(), self.dim)));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite point"));
        }
        if self.kind == ModelKind::Bernoulli && u[0] != 0.0 && u[0] != 1.0 {
            return Err(Error::domain(format!("bernoulli point must be 0 or 1, got {}", u[0])));
        }
        Ok(())
    }

    /// For models with `log φ(u; θ) = θ·T(u) + b(u)`, writes `T(u)` into
    /// `out` and returns `b(u)`. Returns `None` for ICA and Bernoulli.
    /// The point is not validated.
    pub fn linear_features(&self, u: &[f64], out: &mut [f64]) -> Option<f64> {
        match self.kind {
            ModelKind::GaussianPrecision => {
                let d = self.dim;
                let mut k = 0;
                for i in 0..d {
                    for j in i..d {
                        out[k] = if i == j { -0.5 * u[i] * u[i] } else { -u[i] * u[j] };
                        k += 1;
                    }
                }
                Some(0.0)
            }
            ModelKind::Ring => {
                let dr = crate::math::norm2(u) - self.ring_mean;
                out[0] = -0.5 * dr * dr;
                Some(0.0)
            }
            ModelKind::LogNormalExt => {
                if u[0] > 0.0 {
                    let l = libm::log(u[0]);
                    out[0] = -0.5 * l * l;
                    out[1] = 0.0;
                    Some(-l)
                } else {
                    out[0] = 0.0;
                    out[1] = 1.0;
                    Some(0.0)
                }
            }
            ModelKind::IcaLaplace | ModelKind::Bernoulli => None,
        }
    }

    /// Precision matrix `Λ` from its packed upper triangle.
    pub fn unpack_precision(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        let mut m = DMatrix::zeros(d, d);
        let mut k = 0;
        for i in 0..d {
            for j in i..d {
                m[(i, j)] = theta[k];
                m[(j, i)] = theta[k];
                k += 1;
            }
        }
        m
    }

    pub fn pack_precision(&self, m: &DMatrix<f64>) -> ParamVector {
        let d = self.dim;
        let mut v = Vec::with_capacity(self.param_count());
        for i in 0..d {
            for j in i..d {
                v.push(0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        ParamVector::new(v)
    }

    /// Demixing matrix `B` with rows `b_j`.
    pub fn unpack_demixing(&self, theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, theta)
    }
}

/// Flat parameter vector in the model's documented packing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector { values }
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector { values: vec![0.0; len] }
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector { values }
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Serialised form `{"kind", "dim", "values", "packing"}` of a model together
/// with one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub kind: ModelKind,
    pub dim: usize,
    pub values: Vec<f64>,
    pub packing: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring_mean: Option<f64>,
}

impl ParamRecord {
    pub fn new(spec: &ModelSpec, theta: &ParamVector) -> Self {
        ParamRecord {
            kind: spec.kind,
            dim: spec.dim,
            values: theta.values.clone(),
            packing: String::from(spec.kind.packing()),
            ring_mean: (spec.kind == ModelKind::Ring).then_some(spec.ring_mean),
        }
    }

    pub fn into_parts(self) -> Result<(ModelSpec, ParamVector)> {
        let mut spec = ModelSpec::new(self.kind, self.dim)?;
        if self.packing != self.kind.packing() {
            return Err(Error::param(format!(
                "packing {:?} does not match {} (expected {:?})",
                self.packing,
                self.kind,
                self.kind.packing()
            )));
        }
        if let Some(mu) = self.ring_mean {
            spec.ring_mean = mu;
        }
        spec.check_theta(&self.values)?;
        Ok((spec, ParamVector::new(self.values)))
    }
}

/// A model bound to one parameter vector, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct PreparedModel<'a> {
    spec: ModelSpec,
    theta: &'a [f64],
    /// Full symmetric `Λ` (Gaussian) or `B` (ICA), row-major.
    matrix: Vec<f64>,
}

impl<'a> PreparedModel<'a> {
    pub fn new(spec: &ModelSpec, theta: &'a [f64]) -> Result<Self> {
        spec.check_theta(theta)?;
        let matrix = match spec.kind {
            ModelKind::GaussianPrecision => {
                let m = spec.unpack_precision(theta);
                // nalgebra is column-major; Λ is symmetric so the layouts agree.
                m.as_slice().to_vec()
            }
            ModelKind::IcaLaplace => theta.to_vec(),
            _ => Vec::new(),
        };
        if spec.kind == ModelKind::Bernoulli && (theta[0] <= 0.0 || theta[1] <= 0.0) {
            return Err(Error::param("bernoulli parameters must be positive"));
        }
        Ok(PreparedModel { spec: *spec, theta, matrix })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn log_phi(&self, u: &[f64]) -> Result<f64> {
        self.spec.check_point(u)?;
        Ok(self.log_phi_unchecked(u))
    }

    /// `log φ(u)` for a point already known to be in the domain.
    pub fn log_phi_unchecked(&self, u: &[f64]) -> f64 {
        let th = self.theta;
        match self.spec.kind {
            ModelKind::GaussianPrecision => {
                let d = self.spec.dim;
                let mut q = 0.0;
                for i in 0..d {
                    let row = &self.matrix[i * d..(i + 1) * d];
                    let mut s = 0.0;
                    for j in 0..d {
                        s += row[j] * u[j];
                    }
                    q += u[i] * s;
                }
                -0.5 * q
            }
            ModelKind::IcaLaplace => {
                let d = self.spec.dim;
                let mut total = 0.0;
                for row in self.matrix.chunks_exact(d) {
                    let s: f64 = row.iter().zip(u).map(|(b, x)| b * x).sum();
                    total += s.abs();
                }
                -SQRT_2 * total
            }
            ModelKind::Ring => {
                let r = crate::math::norm2(u);
                let dr = r - self.spec.ring_mean;
                -0.5 * th[0] * dr * dr
            }
            ModelKind::LogNormalExt => {
                let x = u[0];
                if x > 0.0 {
                    let l = libm::log(x);
                    -0.5 * th[0] * l * l - l
                } else {
                    th[1]
                }
            }
            ModelKind::Bernoulli => {
                if u[0] == 0.0 {
                    libm::log(th[0])
                } else {
                    libm::log(th[1])
                }
            }
        }
    }

    /// [`log_phi_unchecked`](Self::log_phi_unchecked) that also leaves the
    /// ICA projections `b_j·u` in `scratch` (length `dim`) for
    /// [`add_grad_theta_cached`](Self::add_grad_theta_cached).
    #[inline]
    pub fn log_phi_cached(&self, u: &[f64], scratch: &mut [f64]) -> f64 {
        if self.spec.kind != ModelKind::IcaLaplace {
            return self.log_phi_unchecked(u);
        }
        let d = self.spec.dim;
        let mut total = 0.0;
        for (row, s) in self.matrix.chunks_exact(d).zip(scratch.iter_mut()) {
            *s = row.iter().zip(u).map(|(b, x)| b * x).sum();
            total += s.abs();
        }
        -SQRT_2 * total
    }

    /// [`add_grad_theta`](Self::add_grad_theta) reusing the projections from
    /// [`log_phi_cached`](Self::log_phi_cached) at the same point.
    #[inline]
    pub fn add_grad_theta_cached(&self, u: &[f64], scratch: &[f64], weight: f64, out: &mut [f64]) {
        if self.spec.kind != ModelKind::IcaLaplace {
            return self.add_grad_theta(u, weight, out);
        }
        let d = self.spec.dim;
        for (g, s) in out.chunks_exact_mut(d).zip(scratch) {
            let c = -SQRT_2 * sign(*s) * weight;
            if c != 0.0 {
                for (gk, x) in g.iter_mut().zip(u) {
                    *gk += c * x;
                }
            }
        }
    }

    /// Adds `weight * ∇θ log φ(u)` into `out`.
    pub fn add_grad_theta(&self, u: &[f64], weight: f64, out: &mut [f64]) {
        let th = self.theta;
        match self.spec.kind {
            ModelKind::GaussianPrecision => {
                let d = self.spec.dim;
                let mut k = 0;
                for i in 0..d {
                    let wi = weight * u[i];
                    out[k] -= 0.5 * wi * u[i];
                    k += 1;
                    for j in i + 1..d {
                        out[k] -= wi * u[j];
                        k += 1;
                    }
                }
            }
            ModelKind::IcaLaplace => {
                let d = self.spec.dim;
                for (row, g) in self.matrix.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
                    let s: f64 = row.iter().zip(u).map(|(b, x)| b * x).sum();
                    let c = -SQRT_2 * sign(s) * weight;
                    if c != 0.0 {
                        for (gk, x) in g.iter_mut().zip(u) {
                            *gk += c * x;
                        }
                    }
                }
            }
            ModelKind::Ring => {
                let dr = crate::math::norm2(u) - self.spec.ring_mean;
                out[0] -= 0.5 * weight * dr * dr;
            }
            ModelKind::LogNormalExt => {
                let x = u[0];
                if x > 0.0 {
                    let l = libm::log(x);
                    out[0] -= 0.5 * weight * l * l;
                } else {
                    out[1] += weight;
                }
            }
            ModelKind::Bernoulli => {
                if u[0] == 0.0 {
                    out[0] += weight / th[0];
                } else {
                    out[1] += weight / th[1];
                }
            }
        }
    }

    pub fn grad_theta(&self, u: &[f64]) -> Result<ParamVector> {
        self.spec.check_point(u)?;
        let mut g = vec![0.0; self.spec.param_count()];
        self.add_grad_theta(u, 1.0, &mut g);
        Ok(ParamVector::new(g))
    }

    fn check_smooth_point(&self, u: &[f64]) -> Result<()> {
        self.spec.check_point(u)?;
        match self.spec.kind {
            ModelKind::IcaLaplace | ModelKind::Bernoulli => Err(Error::unsupported(format!(
                "{} has no derivatives in u",
                self.spec.kind
            ))),
            ModelKind::Ring if crate::math::norm2(u) == 0.0 => {
                Err(Error::Singular(String::from("ring model is not differentiable at u = 0")))
            }
            ModelKind::LogNormalExt if u[0] <= 0.0 => Err(Error::domain(
                "log-normal model is only differentiable on u > 0",
            )),
            _ => Ok(()),
        }
    }

    /// `∇u log φ(u)`.
    pub fn grad_u(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_smooth_point(u)?;
        let th = self.theta;
        Ok(match self.spec.kind {
            ModelKind::GaussianPrecision => {
                let d = self.spec.dim;
                self.matrix
                    .chunks_exact(d)
                    .map(|row| -row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
                    .collect()
            }
            ModelKind::Ring => {
                let r = crate::math::norm2(u);
                let c = -th[0] * (r - self.spec.ring_mean) / r;
                u.iter().map(|x| c * x).collect()
            }
            ModelKind::LogNormalExt => {
                let x = u[0];
                vec![-(th[0] * libm::log(x) + 1.0) / x]
            }
            _ => unreachable!(),
        })
    }

    /// `Σ_i ∂²/∂u_i² log φ(u)`.
    pub fn laplacian_u(&self, u: &[f64]) -> Result<f64> {
        self.check_smooth_point(u)?;
        let th = self.theta;
        Ok(match self.spec.kind {
            ModelKind::GaussianPrecision => {
                let d = self.spec.dim;
                -(0..d).map(|i| self.matrix[i * d + i]).sum::<f64>()
            }
            ModelKind::Ring => {
                let r = crate::math::norm2(u);
                let d = self.spec.dim as f64;
                -th[0] * (1.0 + (d - 1.0) * (r - self.spec.ring_mean) / r)
            }
            ModelKind::LogNormalExt => {
                let x = u[0];
                (th[0] * libm::log(x) + 1.0 - th[0]) / (x * x)
            }
            _ => unreachable!(),
        })
    }
}

pub fn log_phi(spec: &ModelSpec, theta: &ParamVector, u: &[f64]) -> Result<f64> {
    PreparedModel::new(spec, theta)?.log_phi(u)
}

/// Analytic `∇θ log φ(u; θ)`. For ICA the kink `b_j·u = 0` uses `sign(0) = 0`.
pub fn grad_theta_log_phi(spec: &ModelSpec, theta: &ParamVector, u: &[f64]) -> Result<ParamVector> {
    PreparedModel::new(spec, theta)?.grad_theta(u)
}

pub fn grad_u_log_phi(spec: &ModelSpec, theta: &ParamVector, u: &[f64]) -> Result<Vec<f64>> {
    PreparedModel::new(spec, theta)?.grad_u(u)
}

pub fn laplacian_u_log_phi(spec: &ModelSpec, theta: &ParamVector, u: &[f64]) -> Result<f64> {
    PreparedModel::new(spec, theta)?.laplacian_u(u)
}

/// Draws `n` i.i.d. points from the density proportional to `φ(·; θ)` on the
/// model's data space.
pub fn sample_data(spec: &ModelSpec, theta: &ParamVector, n: usize, seed: u64) -> Result<SampleMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_data_with(spec, theta, n, &mut rng)
}

pub fn sample_data_with<R: RngCore + ?Sized>(
    spec: &ModelSpec,
    theta: &ParamVector,
    n: usize,
    rng: &mut R,
) -> Result<SampleMatrix> {
    spec.check_theta(theta)?;
    let d = spec.dim;
    let mut out = Vec::with_capacity(n * d);
    match spec.kind {
        ModelKind::GaussianPrecision => {
            // x = L^{-T} z with Λ = L Lᵀ gives Cov x = Λ^{-1}.
            let chol = spec
                .unpack_precision(theta)
                .cholesky()
                .ok_or_else(|| Error::param("precision matrix is not positive definite"))?;
            let lt_inv = chol
                .l()
                .transpose()
                .try_inverse()
                .ok_or_else(|| Error::param("precision matrix is singular"))?;
            let mut z = vec![0.0; d];
            for _ in 0..n {
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                for i in 0..d {
                    out.push((0..d).map(|j| lt_inv[(i, j)] * z[j]).sum());
                }
            }
        }
        ModelKind::IcaLaplace => {
            let b = spec.unpack_demixing(theta);
            let b_inv = b
                .try_inverse()
                .filter(|m| m.iter().all(|v| v.is_finite()))
                .ok_or_else(|| Error::param("demixing matrix is singular"))?;
            let scale = 1.0 / SQRT_2;
            let mut s = vec![0.0; d];
            for _ in 0..n {
                s.iter_mut().for_each(|v| *v = sample_laplace(rng, scale));
                for i in 0..d {
                    out.push((0..d).map(|j| b_inv[(i, j)] * s[j]).sum());
                }
            }
        }
        ModelKind::Ring => {
            let gamma = theta[0];
            if gamma <= 0.0 {
                return Err(Error::param("ring precision must be positive"));
            }
            let sd = 1.0 / libm::sqrt(gamma);
            let mut z = vec![0.0; d];
            for _ in 0..n {
                let r = loop {
                    let r = spec.ring_mean + sd * rng.sample::<f64, _>(StandardNormal);
                    if r > 0.0 {
                        break r;
                    }
                };
                let norm = loop {
                    z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                    let nz = crate::math::norm2(&z);
                    if nz > 0.0 {
                        break nz;
                    }
                };
                out.extend(z.iter().map(|v| r * v / norm));
            }
        }
        ModelKind::LogNormalExt => {
            let prec = theta[0];
            if prec <= 0.0 {
                return Err(Error::param("log-normal precision must be positive"));
            }
            let sd = 1.0 / libm::sqrt(prec);
            for _ in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                out.push(libm::exp(sd * z));
            }
        }
        ModelKind::Bernoulli => {
            let (t1, t2) = (theta[0], theta[1]);
            if t1 <= 0.0 || t2 <= 0.0 {
                return Err(Error::param("bernoulli parameters must be positive"));
            }
            let p1 = t2 / (t1 + t2);
            for _ in 0..n {
                out.push(if rng.random::<f64>() < p1 { 1.0 } else { 0.0 });
            }
        }
    }
    SampleMatrix::new(out, d)
}

/// Laplace(0, scale) by inversion.
fn sample_laplace<R: RngCore + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * sign(u) * libm::log(1.0 - 2.0 * u.abs())
}

/// Random data-generating parameters for one simulation.
pub fn generate_true_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_true_params_with(spec, &mut rng)
}

pub fn generate_true_params_with<R: RngCore + ?Sized>(spec: &ModelSpec, rng: &mut R) -> ParamVector {
    let d = spec.dim;
    match spec.kind {
        ModelKind::GaussianPrecision => {
            let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let lambda = a.transpose() * &a + DMatrix::identity(d, d) * 0.5;
            spec.pack_precision(&lambda)
        }
        ModelKind::IcaLaplace => loop {
            let b = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            if min_singular_value(&b) > ICA_MIN_SINGULAR_VALUE {
                let mut rows = Vec::with_capacity(d * d);
                for i in 0..d {
                    rows.extend((0..d).map(|j| b[(i, j)]));
                }
                break ParamVector::new(rows);
            }
        },
        ModelKind::Ring => ParamVector::new(vec![rng.random_range(1.0..=10.0)]),
        ModelKind::LogNormalExt => ParamVector::new(vec![rng.random_range(0.5..=2.0), -5.0]),
        ModelKind::Bernoulli => {
            let t1: f64 = rng.random_range(0.1..=0.9);
            ParamVector::new(vec![t1, 1.0 - t1])
        }
    }
}

pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Initial optimizer point: standard normal entries times `init_scale`, with
/// positivity-constrained coordinates set to 1 (log-parameter 0) and the
/// log-normal constant `C` at -5.
pub fn initial_params<R: RngCore + ?Sized>(spec: &ModelSpec, init_scale: f64, rng: &mut R) -> ParamVector {
    let mask = spec.positive_mask();
    let mut v: Vec<f64> = mask
        .iter()
        .map(|&pos| {
            let z: f64 = rng.sample(StandardNormal);
            if pos {
                1.0
            } else {
                init_scale * z
            }
        })
        .collect();
    if spec.kind == ModelKind::LogNormalExt {
        v[1] = -5.0;
    }
    ParamVector::new(v)
}
