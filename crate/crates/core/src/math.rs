//! Scalar helpers shared by the loss functions.

pub use core::f64::consts::LN_2;

/// `2 log 2`, the CNCE loss of an indifferent classifier.
pub const TWO_LN_2: f64 = 2.0 * LN_2;

pub const SQRT_2: f64 = core::f64::consts::SQRT_2;

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.exp()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::exp(x)
    }
}

#[inline]
pub(crate) fn ln_1p(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.ln_1p()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::log1p(x)
    }
}

/// `log(1 + exp(x))` without overflow for large `|x|`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + ln_1p(exp(-x))
    } else {
        ln_1p(exp(x))
    }
}

/// Logistic function `1 / (1 + exp(-x))`, branch-by-sign.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `(softplus(x), sigmoid(x))` from a single exponential.
#[inline]
pub fn softplus_sigmoid(x: f64) -> (f64, f64) {
    let e = exp(-x.abs());
    let lp = ln_1p(e);
    let inv = 1.0 / (1.0 + e);
    let pos = (x > 0.0) as u8 as f64;
    (x.max(0.0) + lp, inv * (pos + (1.0 - pos) * e))
}

#[inline]
pub fn sign(x: f64) -> f64 {
    (x > 0.0) as u8 as f64 - (x < 0.0) as u8 as f64
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fused_pair_matches_separate_calls() {
        for &x in &[-800.0, -30.0, -2.5, -1e-3, 0.0, 1e-3, 0.7, 12.0, 30.0, 800.0] {
            let (sp, sg) = softplus_sigmoid(x);
            assert!((sp - softplus(x)).abs() <= 1e-15 * (1.0 + sp.abs()));
            assert!((sg - sigmoid(x)).abs() <= 1e-16 + 1e-15 * sg);
        }
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for &x in &[-30.0, -2.5, -1e-3, 0.0, 0.7, 12.0, 30.0] {
            let naive = libm::log(1.0 + libm::exp(x));
            assert!((softplus(x) - naive).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn softplus_and_sigmoid_survive_huge_arguments() {
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!((sigmoid(0.3) + sigmoid(-0.3) - 1.0).abs() < 1e-15);
    }
}
