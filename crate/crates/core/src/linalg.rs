//! Small dense kernels used in inner loops where allocating `nalgebra`
//! matrices per call would dominate.

use crate::error::{Error, Result};

/// LU factorization with partial pivoting of a row-major `n x n` matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl Lu {
    pub fn factor(a: Vec<f64>, n: usize) -> Result<Self> {
        let mut lu = Self {
            n,
            lu: a,
            piv: (0..n).collect(),
        };
        lu.factor_in_place()?;
        Ok(lu)
    }

    /// Workspace for repeated factorizations of `n x n` matrices.
    pub fn with_size(n: usize) -> Self {
        Self {
            n,
            lu: vec![0.0; n * n],
            piv: (0..n).collect(),
        }
    }

    /// Factors `a` reusing this workspace.
    pub fn refactor(&mut self, a: &[f64]) -> Result<()> {
        self.lu.copy_from_slice(a);
        for (i, p) in self.piv.iter_mut().enumerate() {
            *p = i;
        }
        self.factor_in_place()
    }

    fn factor_in_place(&mut self) -> Result<()> {
        let n = self.n;
        debug_assert_eq!(self.lu.len(), n * n);
        let a = &mut self.lu;
        let piv = &mut self.piv;
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, a[i * n + k].abs()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax <= 1e-300 * scale || !pmax.is_finite() {
                return Err(Error::Singular);
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                piv.swap(k, p);
            }
            let d = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / d;
                a[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        a[i * n + j] -= f * a[k * n + j];
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: [f64; 16] = [0.0; 16];
        let mut heap;
        let y: &mut [f64] = if n <= 16 {
            &mut x[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        for i in 0..n {
            y[i] = b[self.piv[i]];
        }
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * y[j];
            }
            y[i] = s / self.lu[i * n + i];
        }
        b[..n].copy_from_slice(y);
    }

    /// Solves `A^T x = b` in place.
    pub fn solve_transpose(&self, b: &mut [f64]) {
        let n = self.n;
        let mut z = b[..n].to_vec();
        // U^T w = b
        for i in 0..n {
            let mut s = z[i];
            for j in 0..i {
                s -= self.lu[j * n + i] * z[j];
            }
            z[i] = s / self.lu[i * n + i];
        }
        // L^T v = w
        for i in (0..n).rev() {
            let mut s = z[i];
            for j in i + 1..n {
                s -= self.lu[j * n + i] * z[j];
            }
            z[i] = s;
        }
        for i in 0..n {
            b[self.piv[i]] = z[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_and_transposed_solves() {
        let a = vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let lu = Lu::factor(a.clone(), 3).unwrap();
        let x = [1.0, -2.0, 0.5];
        let mut b: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| a[i * 3 + j] * x[j]).sum())
            .collect();
        lu.solve(&mut b);
        for i in 0..3 {
            assert!((b[i] - x[i]).abs() < 1e-14);
        }
        let mut bt: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| a[j * 3 + i] * x[j]).sum())
            .collect();
        lu.solve_transpose(&mut bt);
        for i in 0..3 {
            assert!((bt[i] - x[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        assert!(matches!(
            Lu::factor(vec![1.0, 2.0, 2.0, 4.0], 2),
            Err(Error::Singular)
        ));
    }
}
