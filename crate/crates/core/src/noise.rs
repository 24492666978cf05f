//! Conditional noise `pc(y|x)` for CNCE and moment-matched marginal noise for
//! the NCE baseline.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::SampleMatrix;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Covariance jitter added by [`fit_marginal`].
pub const MARGINAL_JITTER: f64 = 1e-9;

/// A conditional noise distribution `pc(y|x)`.
pub trait ConditionalNoise {
    /// True when `pc(y|x) = pc(x|y)` for all pairs.
    fn is_symmetric(&self) -> bool;

    /// `log pc(y|x)`.
    fn log_density(&self, y: &[f64], x: &[f64]) -> f64;

    /// Writes one draw `y ~ pc(·|x)` into `out`.
    fn sample_into(&self, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]);

    /// `log pc(u2|u1) - log pc(u1|u2)`. Symmetric kernels return the constant 0.
    fn log_ratio(&self, u1: &[f64], u2: &[f64]) -> f64 {
        if self.is_symmetric() {
            0.0
        } else {
            self.log_density(u2, u1) - self.log_density(u1, u2)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    GaussianPerturb,
    BernoulliFlip,
}

/// JSON form `{"kind", "epsilon", "per_dim"}` of a conditional kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub epsilon: f64,
    /// Scale ε by each dimension's empirical standard deviation.
    #[serde(default = "default_per_dim")]
    pub per_dim: bool,
}

fn default_per_dim() -> bool {
    true
}

impl KernelConfig {
    /// Builds the kernel for data `x`.
    pub fn build(&self, x: &SampleMatrix) -> Result<ConditionalKernel> {
        match self.kind {
            KernelKind::GaussianPerturb => ConditionalKernel::gaussian_for_data(self.epsilon, x, self.per_dim),
            KernelKind::BernoulliFlip => ConditionalKernel::bernoulli_flip(self.epsilon),
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// Largest ε the kernel accepts.
    pub fn epsilon_limit(&self) -> f64 {
        match self.kind {
            KernelKind::GaussianPerturb => f64::INFINITY,
            KernelKind::BernoulliFlip => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConditionalKernel {
    /// `y = x + ε ⊙ ξ`, `ξ ~ N(0, I)`, one standard deviation per dimension.
    GaussianPerturb { epsilon: Vec<f64> },
    /// Keep `x` with probability `1 - ε`, flip it otherwise.
    BernoulliFlip { epsilon: f64 },
}

impl ConditionalKernel {
    pub fn gaussian(epsilon: Vec<f64>) -> Result<Self> {
        if epsilon.is_empty() || epsilon.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::param("gaussian kernel needs finite non-negative scales"));
        }
        Ok(ConditionalKernel::GaussianPerturb { epsilon })
    }

    /// Per-dimension scale `epsilon * std_d` (or `epsilon` in every dimension
    /// when `per_dim` is false).
    pub fn gaussian_for_data(epsilon: f64, x: &SampleMatrix, per_dim: bool) -> Result<Self> {
        let scales = if per_dim {
            x.column_std()
                .into_iter()
                .map(|s| epsilon * if s > 0.0 { s } else { 1.0 })
                .collect()
        } else {
            vec![epsilon; x.dim()]
        };
        Self::gaussian(scales)
    }

    pub fn bernoulli_flip(epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::param(format!("flip probability {epsilon} outside [0, 1]")));
        }
        Ok(ConditionalKernel::BernoulliFlip { epsilon })
    }

    fn check_sampling(&self, dim: usize) -> Result<()> {
        match self {
            ConditionalKernel::GaussianPerturb { epsilon } => {
                if epsilon.len() != dim {
                    return Err(Error::shape(format!("kernel has {} scales for dim {dim}", epsilon.len())));
                }
                if epsilon.iter().any(|&e| e <= 0.0) {
                    return Err(Error::param("gaussian kernel with zero scale cannot be sampled"));
                }
            }
            ConditionalKernel::BernoulliFlip { .. } => {
                if dim != 1 {
                    return Err(Error::shape("bernoulli flip kernel is univariate"));
                }
            }
        }
        Ok(())
    }
}

impl ConditionalNoise for ConditionalKernel {
    fn is_symmetric(&self) -> bool {
        true
    }

    fn log_density(&self, y: &[f64], x: &[f64]) -> f64 {
        match self {
            ConditionalKernel::GaussianPerturb { epsilon } => y
                .iter()
                .zip(x)
                .zip(epsilon)
                .map(|((a, b), e)| {
                    let z = (a - b) / e;
                    -0.5 * z * z - libm::log(*e) - 0.5 * LN_2PI
                })
                .sum(),
            ConditionalKernel::BernoulliFlip { epsilon } => {
                if y[0] == x[0] {
                    libm::log(1.0 - epsilon)
                } else {
                    libm::log(*epsilon)
                }
            }
        }
    }

    fn sample_into(&self, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        match self {
            ConditionalKernel::GaussianPerturb { epsilon } => {
                for ((o, xi), e) in out.iter_mut().zip(x).zip(epsilon) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = xi + e * z;
                }
            }
            ConditionalKernel::BernoulliFlip { epsilon } => {
                let flip = rng.random::<f64>() < *epsilon;
                out[0] = if flip { 1.0 - x[0] } else { x[0] };
            }
        }
    }
}

pub fn log_ratio<K: ConditionalNoise + ?Sized>(kernel: &K, u1: &[f64], u2: &[f64]) -> f64 {
    kernel.log_ratio(u1, u2)
}

/// `κ` noise points per observation, with the cached log-ratios
/// `log pc(y_ij|x_i) - log pc(x_i|y_ij)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePairing {
    noise: Vec<f64>,
    log_ratio: Vec<f64>,
    n: usize,
    kappa: usize,
    dim: usize,
}

impl NoisePairing {
    /// Wraps explicit noise points (`n * kappa` rows, `y_ij` at row `i * kappa + j`).
    pub fn from_parts<K: ConditionalNoise + ?Sized>(
        kernel: &K,
        x: &SampleMatrix,
        noise: Vec<f64>,
        kappa: usize,
    ) -> Result<Self> {
        if kappa == 0 {
            return Err(Error::param("kappa must be at least 1"));
        }
        let (n, dim) = (x.n(), x.dim());
        if noise.len() != n * kappa * dim {
            return Err(Error::shape(format!(
                "{} noise values for n = {n}, kappa = {kappa}, dim = {dim}",
                noise.len()
            )));
        }
        let log_ratio = if kernel.is_symmetric() {
            vec![0.0; n * kappa]
        } else {
            let mut lr = Vec::with_capacity(n * kappa);
            for (i, xi) in x.rows().enumerate() {
                for j in 0..kappa {
                    let y = &noise[(i * kappa + j) * dim..(i * kappa + j + 1) * dim];
                    lr.push(kernel.log_ratio(xi, y));
                }
            }
            lr
        };
        if log_ratio.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite conditional log-ratio"));
        }
        Ok(NoisePairing { noise, log_ratio, n, kappa, dim })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `y_ij`.
    pub fn noise(&self, i: usize, j: usize) -> &[f64] {
        let k = i * self.kappa + j;
        &self.noise[k * self.dim..(k + 1) * self.dim]
    }

    pub fn log_ratio(&self, i: usize, j: usize) -> f64 {
        self.log_ratio[i * self.kappa + j]
    }

    pub fn noise_slice(&self) -> &[f64] {
        &self.noise
    }

    /// `log_ratio(i, j)` for all pairs, row-major in `i`.
    pub fn log_ratios(&self) -> &[f64] {
        &self.log_ratio
    }

    pub fn check_matches(&self, x: &SampleMatrix) -> Result<()> {
        if x.n() != self.n || x.dim() != self.dim {
            return Err(Error::shape(format!(
                "pairing built for {}x{} data, got {}x{}",
                self.n,
                self.dim,
                x.n(),
                x.dim()
            )));
        }
        Ok(())
    }
}

/// Draws `y_ij ~ pc(·|x_i)` for `j < kappa`, row by row.
pub fn sample_conditional(
    kernel: &ConditionalKernel,
    x: &SampleMatrix,
    kappa: usize,
    seed: u64,
) -> Result<NoisePairing> {
    kernel.check_sampling(x.dim())?;
    sample_pairs(kernel, x, kappa, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Pair sampling for any kernel; validation of the kernel itself is the caller's.
pub fn sample_pairs<K: ConditionalNoise + ?Sized>(
    kernel: &K,
    x: &SampleMatrix,
    kappa: usize,
    rng: &mut dyn RngCore,
) -> Result<NoisePairing> {
    if kappa == 0 {
        return Err(Error::param("kappa must be at least 1"));
    }
    let d = x.dim();
    let mut noise = vec![0.0; x.n() * kappa * d];
    for (i, xi) in x.rows().enumerate() {
        for j in 0..kappa {
            let k = i * kappa + j;
            kernel.sample_into(xi, rng, &mut noise[k * d..(k + 1) * d]);
        }
    }
    NoisePairing::from_parts(kernel, x, noise, kappa)
}

/// Gaussian matched to the data mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalKernel {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    chol_l_inv: DMatrix<f64>,
    log_norm: f64,
}

impl MarginalKernel {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::shape("covariance does not match mean"));
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular(alloc::string::String::from("marginal covariance is not positive definite")))?;
        let chol_l = chol.l();
        let chol_l_inv = chol_l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular(alloc::string::String::from("singular covariance factor")))?;
        let log_det_half: f64 = (0..d).map(|i| libm::log(chol_l[(i, i)])).sum();
        let log_norm = -log_det_half - 0.5 * d as f64 * LN_2PI;
        Ok(MarginalKernel { mean, covariance, chol_l, chol_l_inv, log_norm })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, u: &[f64]) -> f64 {
        let d = self.dim();
        let mut q = 0.0;
        for i in 0..d {
            let mut z = 0.0;
            for j in 0..=i {
                z += self.chol_l_inv[(i, j)] * (u[j] - self.mean[j]);
            }
            q += z * z;
        }
        self.log_norm - 0.5 * q
    }

    pub fn sample_with(&self, m: usize, rng: &mut dyn RngCore) -> SampleMatrix {
        let d = self.dim();
        let mut out = Vec::with_capacity(m * d);
        let mut z = vec![0.0; d];
        for _ in 0..m {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            for i in 0..d {
                let mut s = self.mean[i];
                for j in 0..=i {
                    s += self.chol_l[(i, j)] * z[j];
                }
                out.push(s);
            }
        }
        SampleMatrix::new(out, d).expect("dim >= 1")
    }
}

/// Sample mean and covariance (denominator `n - 1`) plus `1e-9 I`.
pub fn fit_marginal(x: &SampleMatrix) -> Result<MarginalKernel> {
    let (n, d) = (x.n(), x.dim());
    if n < d + 1 {
        return Err(Error::param(format!("need at least {} points to fit a {d}-dim covariance", d + 1)));
    }
    let mean = x.column_means();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in x.rows() {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
        cov[(i, i)] += MARGINAL_JITTER;
    }
    MarginalKernel::new(mean, cov)
}

pub fn sample_marginal(kernel: &MarginalKernel, m: usize, seed: u64) -> SampleMatrix {
    kernel.sample_with(m, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn log_density_marginal(kernel: &MarginalKernel, u: &[f64]) -> f64 {
    kernel.log_density(u)
}
