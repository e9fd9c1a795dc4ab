//! Small dense symmetric positive-definite helpers (row-major `d x d`).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a row-major SPD matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn new(matrix: &[f64], dim: usize) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::Dimension("matrix is not d x d".into()));
        }
        let mut lower = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let mut sum = matrix[i * dim + j];
                for k in 0..j {
                    sum -= lower[i * dim + k] * lower[j * dim + k];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::IllConditionedPrior);
                    }
                    lower[i * dim + i] = libm::sqrt(sum);
                } else {
                    lower[i * dim + j] = sum / lower[j * dim + j];
                }
            }
        }
        Ok(Self { dim, lower })
    }

    pub fn ln_det(&self) -> f64 {
        (0..self.dim)
            .map(|i| libm::log(self.lower[i * self.dim + i]))
            .sum::<f64>()
            * 2.0
    }

    /// Solves `L z = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower[i * d + k] * z[k];
            }
            z[i] = s / self.lower[i * d + i];
        }
        z
    }

    /// Solves `L^T x = z`.
    pub fn backward(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut x = vec![0.0; d];
        for i in (0..d).rev() {
            let mut s = z[i];
            for k in i + 1..d {
                s -= self.lower[k * d + i] * x[k];
            }
            x[i] = s / self.lower[i * d + i];
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }
}

pub fn mat_vec(matrix: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d)
        .map(|i| (0..d).map(|j| matrix[i * d + j] * v[j]).sum())
        .collect()
}

/// `(v - c)^T A (v - c)`.
pub fn quad_form(matrix: &[f64], v: &[f64], center: &[f64]) -> f64 {
    let d = v.len();
    let mut s = 0.0;
    for i in 0..d {
        let ri = v[i] - center[i];
        for j in 0..d {
            s += ri * matrix[i * d + j] * (v[j] - center[j]);
        }
    }
    s
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let chol = Cholesky::new(&a, 3).unwrap();
        let x = chol.solve(&[1.0, 2.0, 3.0]);
        let back = mat_vec(&a, &x);
        for (got, want) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = [1.0, 2.0, 2.0, 1.0];
        assert_eq!(Cholesky::new(&a, 2).unwrap_err(), Error::IllConditionedPrior);
    }

    #[test]
    fn log_determinant() {
        let a = [2.0, 0.0, 0.0, 8.0];
        let chol = Cholesky::new(&a, 2).unwrap();
        assert!((chol.ln_det() - libm::log(16.0)).abs() < 1e-12);
    }
}
