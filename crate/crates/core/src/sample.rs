use alloc::vec::Vec;

use crate::error::{Error, Result};

/// `n` observations of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    data: Vec<f64>,
    n: usize,
    dim: usize,
}

impl SampleMatrix {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::shape("dimension must be at least 1"));
        }
        if data.len() % dim != 0 {
            return Err(Error::shape(alloc::format!(
                "{} values do not form rows of length {dim}",
                data.len()
            )));
        }
        Ok(SampleMatrix { n: data.len() / dim, data, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(rows.concat(), dim)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = alloc::vec![0.0; self.dim];
        for row in self.rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        let n = self.n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Per-dimension sample standard deviation (denominator `n - 1`).
    pub fn column_std(&self) -> Vec<f64> {
        let mean = self.column_means();
        let mut var = alloc::vec![0.0; self.dim];
        for row in self.rows() {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let denom = self.n.saturating_sub(1).max(1) as f64;
        var.into_iter().map(|v| libm::sqrt(v / denom)).collect()
    }
}
