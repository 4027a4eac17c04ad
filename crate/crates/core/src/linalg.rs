//! Small dense linear algebra: square row-major matrices, matrix-vector
//! products and LU factorization with partial pivoting.
//!
//! Sized for the 4×4 normal equations but kept dimension-generic so solver
//! cost can be measured across sizes.

use rand::Rng;
use thiserror::Error;

/// Relative pivot threshold: a pivot below `PIVOT_TOL · ‖A‖∞` is singular.
pub const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular: pivot {pivot:e} at column {column}")]
    Singular { column: usize, pivot: f64 },
    #[error("dimension mismatch: matrix is {n}×{n}, vector has {len}")]
    Dimension { n: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Matrix { n, data }
    }

    pub fn from_rows<const N: usize>(rows: &[[f64; N]; N]) -> Self {
        Self::from_fn(N, |i, j| rows[i][j])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// `out = A·x`, no allocation.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.n)) {
            *o = dot(row, x);
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `Aᵀ·x`.
    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (row, &xi) in self.data.chunks_exact(self.n).zip(x) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * xi;
            }
        }
        out
    }

    /// `AᵀA`.
    pub fn gram(&self) -> Matrix {
        let n = self.n;
        let mut g = Matrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = (0..n).map(|k| self.get(k, i) * self.get(k, j)).sum();
                g.set(i, j, v);
                g.set(j, i, v);
            }
        }
        g
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        Matrix::from_fn(self.n, |i, j| {
            (0..self.n).map(|k| self.get(i, k) * other.get(k, j)).sum()
        })
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.n, |i, j| self.get(j, i))
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        self.data
            .chunks_exact(self.n.max(1))
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }
}

/// LU factorization `PA = LU` with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Lu, LinalgError> {
        let n = a.n;
        let scale = a.inf_norm();
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let (piv_row, piv_abs) = (col..n)
                .map(|r| (r, lu[r * n + col].abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(piv_abs > PIVOT_TOL * scale) {
                return Err(LinalgError::Singular {
                    column: col,
                    pivot: piv_abs,
                });
            }
            if piv_row != col {
                for j in 0..n {
                    lu.swap(col * n + j, piv_row * n + j);
                }
                perm.swap(col, piv_row);
            }
            let (upper, lower) = lu.split_at_mut((col + 1) * n);
            let pivot_row = &upper[col * n..];
            let pivot = pivot_row[col];
            for row in lower.chunks_exact_mut(n) {
                let factor = row[col] / pivot;
                row[col] = factor;
                for (a, b) in row[col + 1..].iter_mut().zip(&pivot_row[col + 1..]) {
                    *a -= factor * b;
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let mut x = vec![0.0; self.n];
        self.solve_into(b, &mut x)?;
        Ok(x)
    }

    /// Like [`solve`](Self::solve) but writes into `x`, no allocation.
    pub fn solve_into(&self, b: &[f64], x: &mut [f64]) -> Result<(), LinalgError> {
        let n = self.n;
        if b.len() != n || x.len() != n {
            return Err(LinalgError::Dimension {
                n,
                len: b.len().min(x.len()),
            });
        }
        for (xi, &p) in x.iter_mut().zip(&self.perm) {
            *xi = b[p];
        }
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            x[i] -= dot(row, &x[..i]);
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            x[i] = (x[i] - dot(row, &x[i + 1..])) / self.lu[i * n + i];
        }
        Ok(())
    }

    /// `‖A⁻¹‖∞`, from solving against each unit vector.
    pub fn inverse_inf_norm(&self) -> f64 {
        let n = self.n;
        let mut row_sums = vec![0.0; n];
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.solve_into(&e, &mut col)
                .expect("unit vector has dimension n");
            e[j] = 0.0;
            for (s, c) in row_sums.iter_mut().zip(&col) {
                *s += c.abs();
            }
        }
        row_sums.into_iter().fold(0.0, f64::max)
    }
}

/// Solves `A·x = b` by Gaussian elimination with partial pivoting.
pub fn lu_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if b.len() != a.n {
        return Err(LinalgError::Dimension { n: a.n, len: b.len() });
    }
    Lu::factor(a)?.solve(b)
}

/// `κ∞(A) = ‖A‖∞ · ‖A⁻¹‖∞`.
pub fn condition_inf(a: &Matrix) -> Result<f64, LinalgError> {
    let lu = Lu::factor(a)?;
    Ok(a.inf_norm() * lu.inverse_inf_norm())
}

/// Solves `A·x = b` and returns `x` together with `κ∞(A)`, sharing one
/// factorization.
pub fn solve_with_condition(a: &Matrix, b: &[f64]) -> Result<(Vec<f64>, f64), LinalgError> {
    if b.len() != a.n {
        return Err(LinalgError::Dimension { n: a.n, len: b.len() });
    }
    let lu = Lu::factor(a)?;
    let x = lu.solve(b)?;
    Ok((x, a.inf_norm() * lu.inverse_inf_norm()))
}

/// Random symmetric positive definite matrix `MᵀM + ridge·I`, with the
/// entries of `M` uniform on `[−entry_scale, entry_scale]`. The smallest
/// eigenvalue is at least `ridge`.
pub fn random_spd<R: Rng + ?Sized>(n: usize, entry_scale: f64, ridge: f64, rng: &mut R) -> Matrix {
    let m = Matrix::from_fn(n, |_, _| rng.random_range(-entry_scale..=entry_scale));
    let mut e = m.gram();
    for i in 0..n {
        e.set(i, i, e.get(i, i) + ridge);
    }
    e
}
