//! Small-ε behaviour of the CNCE loss against its score-matching expansion.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::TWO_LN_2;
use crate::model::{sample_data, ModelKind, ModelSpec, ParamVector, PreparedModel};
use crate::seed::derive;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub epsilon: f64,
    /// Monte Carlo CNCE loss.
    pub mc_loss: f64,
    /// `(ε²/2) · SM`, the leading-order deviation from `2 log 2`.
    pub sm_term: f64,
    /// `2 log 2 + sm_term`.
    pub sm_prediction: f64,
    /// `mc_loss - sm_prediction`.
    pub residual: f64,
    pub residual_se: f64,
    /// The residual is within three standard errors of zero.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub mc_pairs: usize,
    /// Score-matching objective estimated from the shared draws.
    pub sm_value: f64,
    /// Score-matching objective as the plain sample mean over the data.
    pub sm_sample_mean: f64,
    pub rows: Vec<LimitRow>,
}

impl LimitReport {
    /// `|R(ε_a)| / |R(ε_b)|` for two grid values.
    pub fn residual_ratio(&self, eps_a: f64, eps_b: f64) -> Option<f64> {
        let find = |e: f64| self.rows.iter().find(|r| r.epsilon == e).map(|r| libm::fabs(r.residual));
        Some(find(eps_a)? / find(eps_b)?)
    }
}

#[derive(Clone, Copy, Default)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }
    fn se(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            libm::sqrt(self.m2 / (self.n - 1.0) / self.n)
        }
    }
}

/// `2 softplus(v) - 2 log 2`, accurate for small `v`.
fn excess_loss(v: f64) -> f64 {
    2.0 * libm::log1p(libm::expm1(v) / 2.0)
}

/// Monte Carlo CNCE loss for a Gaussian model with symmetric noise
/// `y = x + εξ`, `ξ ~ N(0, I)`, compared against `2 log 2 + (ε²/2) SM`.
///
/// Data points and `ξ` are shared across the grid. Each `ξ` is used with
/// both signs, so `mc_pairs` must be even. The score-matching term uses the
/// same draws, `ξᵀHξ + (∇fᵀξ)²/2`, whose expectation over `ξ` equals
/// `Δf + |∇f|²/2`.
pub fn limit_check(spec: &ModelSpec, theta: &ParamVector, eps_grid: &[f64], mc_pairs: usize, seed: u64) -> Result<LimitReport> {
    if spec.kind != ModelKind::GaussianPrecision {
        return Err(Error::unsupported("the limit check is defined for the gaussian model"));
    }
    if mc_pairs < 2 || mc_pairs % 2 != 0 {
        return Err(Error::param("mc_pairs must be a positive even number"));
    }
    if eps_grid.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::param("epsilon values must be finite and non-negative"));
    }
    let model = PreparedModel::new(spec, theta)?;
    let lambda = spec.unpack_precision(theta);
    let dim = spec.dim;
    let couples = mc_pairs / 2;
    let x = sample_data(spec, theta, couples, derive(seed, "data"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "perturbation"));

    let mut sm_shared = Welford::default();
    let mut sm_plain = Welford::default();
    let mut loss = vec![Welford::default(); eps_grid.len()];
    let mut resid = vec![Welford::default(); eps_grid.len()];
    let trace = lambda.trace();
    let (mut xi, mut hxi, mut yp, mut ym) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    for u in x.rows() {
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let grad = model.grad_u(u)?;
        let (mut quad, mut lin) = (0.0, 0.0);
        for i in 0..dim {
            hxi[i] = 0.0;
            for j in 0..dim {
                hxi[i] -= lambda[(i, j)] * xi[j];
            }
            quad += xi[i] * hxi[i];
            lin += grad[i] * xi[i];
        }
        let s = quad + 0.5 * lin * lin;
        sm_shared.push(s);
        sm_plain.push(-trace + 0.5 * grad.iter().map(|g| g * g).sum::<f64>());
        let f0 = model.log_phi_unchecked(u);
        for (k, &eps) in eps_grid.iter().enumerate() {
            for i in 0..dim {
                yp[i] = u[i] + eps * xi[i];
                ym[i] = u[i] - eps * xi[i];
            }
            let vp = model.log_phi_unchecked(&yp) - f0;
            let vm = model.log_phi_unchecked(&ym) - f0;
            let excess = 0.5 * (excess_loss(vp) + excess_loss(vm));
            loss[k].push(excess);
            resid[k].push(excess - 0.5 * eps * eps * s);
        }
    }
    let sm_value = sm_shared.mean;
    let rows = eps_grid
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let sm_term = 0.5 * eps * eps * sm_value;
            let residual = resid[k].mean;
            let residual_se = resid[k].se();
            LimitRow {
                epsilon: eps,
                mc_loss: TWO_LN_2 + loss[k].mean,
                sm_term,
                sm_prediction: TWO_LN_2 + sm_term,
                residual,
                residual_se,
                flagged: libm::fabs(residual) < 3.0 * residual_se,
            }
        })
        .collect();
    Ok(LimitReport { mc_pairs, sm_value, sm_sample_mean: sm_plain.mean, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn zero_epsilon_row_is_exact() {
        let spec = ModelSpec::gaussian(3);
        let theta = spec.pack_precision(&DMatrix::identity(3, 3));
        let rep = limit_check(&spec, &theta, &[0.0, 0.1], 1000, 1).unwrap();
        let r0 = &rep.rows[0];
        assert_eq!(r0.mc_loss, TWO_LN_2);
        assert_eq!(r0.residual, 0.0);
        assert!(!r0.flagged);
    }

    #[test]
    fn excess_loss_series() {
        for v in [1e-3f64, -2e-3, 0.05] {
            let series = v + v * v / 4.0 - v.powi(4) / 96.0;
            assert!((excess_loss(v) - series).abs() < v.powi(6) / 100.0 + 1e-18);
        }
    }

    #[test]
    fn residual_shrinks_fast() {
        let spec = ModelSpec::gaussian(5);
        let theta = spec.pack_precision(&DMatrix::identity(5, 5));
        let rep = limit_check(&spec, &theta, &[0.08, 0.04, 0.02], 20_000, 7).unwrap();
        assert!(rep.residual_ratio(0.08, 0.04).unwrap() >= 6.0);
        assert!(rep.residual_ratio(0.04, 0.02).unwrap() >= 6.0);
        assert!((rep.sm_value + 2.5).abs() < 0.1);
    }

    #[test]
    fn rejects_other_models_and_odd_counts() {
        let ring = ModelSpec::ring(2, 4.0);
        assert!(limit_check(&ring, &ParamVector::new(vec![1.0]), &[0.1], 10, 0).is_err());
        let spec = ModelSpec::gaussian(2);
        let theta = spec.pack_precision(&DMatrix::identity(2, 2));
        assert!(limit_check(&spec, &theta, &[0.1], 11, 0).is_err());
    }
}
