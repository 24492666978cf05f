//! Estimation-error metrics and quantiles.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};

/// Distance between an estimate and the truth, resolving each model's
/// identifiability:
///
/// * Gaussian, ring: Euclidean distance of the packed vectors.
/// * ICA: minimum over row permutations and per-row sign flips of the
///   Frobenius distance between demixing matrices.
/// * Bernoulli: Euclidean distance after scaling the estimate to sum 1.
/// * Log-normal: `|θ̂ - θ*|`, the normaliser `C` is ignored.
pub fn estimation_error(spec: &ModelSpec, theta_hat: &[f64], theta_true: &[f64]) -> Result<f64> {
    let p = spec.param_count();
    if theta_hat.len() != p || theta_true.len() != p {
        return Err(Error::shape(format!(
            "{} expects {p} parameters, got {} and {}",
            spec.kind,
            theta_hat.len(),
            theta_true.len()
        )));
    }
    Ok(match spec.kind {
        ModelKind::GaussianPrecision | ModelKind::Ring => euclidean(theta_hat, theta_true),
        ModelKind::LogNormalExt => libm::fabs(theta_hat[0] - theta_true[0]),
        ModelKind::Bernoulli => {
            let total = theta_hat[0] + theta_hat[1];
            if !(total > 0.0) {
                return Err(Error::param("bernoulli estimate must have a positive sum"));
            }
            let scaled = [theta_hat[0] / total, theta_hat[1] / total];
            euclidean(&scaled, theta_true)
        }
        ModelKind::IcaLaplace => ica_distance(spec.dim, theta_hat, theta_true),
    })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Exact minimum over signed row permutations, by dynamic programming over
/// subsets of assigned rows.
fn ica_distance(dim: usize, hat: &[f64], truth: &[f64]) -> f64 {
    let row = |m: &'_ [f64], i: usize| -> Vec<f64> { m[i * dim..(i + 1) * dim].to_vec() };
    let mut cost = vec![0.0; dim * dim];
    for i in 0..dim {
        let t = row(truth, i);
        for j in 0..dim {
            let h = row(hat, j);
            let (mut plus, mut minus) = (0.0, 0.0);
            for k in 0..dim {
                plus += (h[k] - t[k]) * (h[k] - t[k]);
                minus += (h[k] + t[k]) * (h[k] + t[k]);
            }
            cost[i * dim + j] = plus.min(minus);
        }
    }
    // best[mask]: cheapest assignment of the first popcount(mask) true rows
    // to the estimated rows in `mask`.
    let mut best = vec![f64::INFINITY; 1 << dim];
    best[0] = 0.0;
    for mask in 0usize..(1 << dim) {
        let base = best[mask];
        if !base.is_finite() {
            continue;
        }
        let i = mask.count_ones() as usize;
        if i == dim {
            continue;
        }
        for j in 0..dim {
            if mask & (1 << j) == 0 {
                let next = mask | (1 << j);
                let c = base + cost[i * dim + j];
                if c < best[next] {
                    best[next] = c;
                }
            }
        }
    }
    libm::sqrt(best[(1 << dim) - 1])
}

/// Linear-interpolation quantile (the common "type 7" rule) of the finite
/// values. Returns `None` when there are none.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let frac = pos - lo as f64;
    Some(v[lo] + frac * (v[hi] - v[lo]))
}
