//! Plain (non-tape) complex linear algebra for the evaluation path, plus the
//! Levinson-Durbin solver for symmetric positive-definite Toeplitz systems.

use nalgebra::{Complex, DMatrix};
use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn to_na(a: &Array2<Complex64>) -> DMatrix<Complex<f64>> {
    DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().cloned())
}

pub fn from_na(m: &DMatrix<Complex<f64>>) -> Array2<Complex64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &Array2<Complex64>) -> Result<Vec<f64>> {
    let eig = to_na(a)
        .try_symmetric_eigen(1e-13, 1000)
        .ok_or_else(|| Error::Numerical("Hermitian eigensolver failed to converge".into()))?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(vals)
}

/// Dominant eigenpair of a Hermitian matrix.
pub fn hermitian_max_eigenpair(a: &Array2<Complex64>) -> Result<(f64, Array1<Complex64>)> {
    let eig = to_na(a)
        .try_symmetric_eigen(1e-13, 1000)
        .ok_or_else(|| Error::Numerical("Hermitian eigensolver failed to converge".into()))?;
    let (k, &val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|(_, x), (_, y)| x.partial_cmp(y).unwrap())
        .expect("non-empty");
    let v = eig.eigenvectors.column(k);
    Ok((val, Array1::from_vec(v.iter().cloned().collect())))
}

/// Condition estimate of a Hermitian matrix: |λ|max / |λ|min.
pub fn hermitian_condition(a: &Array2<Complex64>) -> Result<f64> {
    let vals = hermitian_eigenvalues(a)?;
    let max = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = vals.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    Ok(if min == 0.0 { f64::INFINITY } else { max / min })
}

/// Solve a complex system with partial-pivoting LU.
pub fn solve_complex(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let x = to_na(a)
        .lu()
        .solve(&to_na(b))
        .ok_or_else(|| Error::Numerical("singular complex matrix in solve".into()))?;
    Ok(from_na(&x))
}

/// Solve `T x = rhs` where `T` is the symmetric positive-definite Toeplitz
/// matrix with first column `col`, by Levinson recursion in O(n²).
pub fn levinson_toeplitz_solve(col: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = col.len();
    if n == 0 || rhs.len() != n {
        return Err(Error::InvalidArgument(format!(
            "levinson: column length {n} vs rhs length {}",
            rhs.len()
        )));
    }
    if col[0] <= 0.0 {
        return Err(Error::Numerical(
            "levinson: leading Toeplitz coefficient must be positive".into(),
        ));
    }

    // Backward vector b_k solves T_k b_k = e_k (last unit vector).
    let mut b = vec![1.0 / col[0]];
    let mut x = vec![rhs[0] / col[0]];

    for k in 1..n {
        // alpha = first row of T_{k+1} applied to [0; b_k]
        let alpha: f64 = (0..k).map(|i| col[i + 1] * b[i]).sum();
        let denom = 1.0 - alpha * alpha;
        if denom.abs() < 1e-300 {
            return Err(Error::Numerical(
                "levinson: reflection coefficient reached ±1 (singular system)".into(),
            ));
        }
        // b_{k+1} = ([0; b] - alpha·[rev(b); 0]) / (1 - alpha²)
        let mut b_next = vec![0.0; k + 1];
        for i in 0..k {
            b_next[i + 1] += b[i];
            b_next[i] -= alpha * b[k - 1 - i];
        }
        for v in &mut b_next {
            *v /= denom;
        }
        b = b_next;

        // gamma = last row of T_{k+1} applied to [x; 0]
        let gamma: f64 = (0..k).map(|i| col[k - i] * x[i]).sum();
        let c = rhs[k] - gamma;
        x.push(0.0);
        for i in 0..=k {
            x[i] += c * b[i];
        }
    }
    Ok(x)
}
