//! Complex tensors as (re, im) pairs of real tensors.
//!
//! Every operation here lowers to real tape primitives; the tape never sees
//! a complex-valued node.

use ndarray::{Array2, ArrayD, IxDyn};
use num_complex::Complex64;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ComplexTensor {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexTensor {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::ShapeMismatch {
                op: "complex",
                lhs: re.shape().to_vec(),
                rhs: im.shape().to_vec(),
            });
        }
        Ok(ComplexTensor { re, im })
    }

    pub fn from_matrix(m: &Array2<Complex64>) -> Self {
        let re = Tensor::constant(m.mapv(|c| c.re).into_dyn());
        let im = Tensor::constant(m.mapv(|c| c.im).into_dyn());
        ComplexTensor { re, im }
    }

    pub fn identity(n: usize) -> Self {
        ComplexTensor {
            re: Tensor::constant(ndarray::Array2::<f64>::eye(n).into_dyn()),
            im: Tensor::constant(ArrayD::zeros(IxDyn(&[n, n]))),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    /// Snapshot of the forward value as a complex matrix.
    pub fn to_matrix(&self) -> Result<Array2<Complex64>> {
        let r = self
            .re
            .value()
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|_| Error::InvalidArgument("to_matrix requires 2-d".into()))?;
        let i = self
            .im
            .value()
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        Ok(Array2::from_shape_fn(r.dim(), |(a, b)| {
            Complex64::new(r[(a, b)], i[(a, b)])
        }))
    }

    pub fn conj(&self) -> Self {
        ComplexTensor {
            re: self.re.clone(),
            im: self.im.neg(),
        }
    }

    pub fn neg(&self) -> Self {
        ComplexTensor {
            re: self.re.neg(),
            im: self.im.neg(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(ComplexTensor {
            re: self.re.add(&other.re)?,
            im: self.im.add(&other.im)?,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Ok(ComplexTensor {
            re: self.re.sub(&other.re)?,
            im: self.im.sub(&other.im)?,
        })
    }

    /// Elementwise product (broadcasting).
    pub fn mul(&self, other: &Self) -> Result<Self> {
        let rr = self.re.mul(&other.re)?;
        let ii = self.im.mul(&other.im)?;
        let ri = self.re.mul(&other.im)?;
        let ir = self.im.mul(&other.re)?;
        Ok(ComplexTensor {
            re: rr.sub(&ii)?,
            im: ri.add(&ir)?,
        })
    }

    /// Elementwise division (broadcasting): `x·conj(y) / |y|²`.
    pub fn div(&self, other: &Self) -> Result<Self> {
        let num = self.mul(&other.conj())?;
        let den = other.abs_sq()?;
        Ok(ComplexTensor {
            re: num.re.div(&den)?,
            im: num.im.div(&den)?,
        })
    }

    /// Scale by a real tensor (broadcasting).
    pub fn scale_real(&self, s: &Tensor) -> Result<Self> {
        Ok(ComplexTensor {
            re: self.re.mul(s)?,
            im: self.im.mul(s)?,
        })
    }

    /// Complex matrix product via four real products.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let rr = self.re.matmul(&other.re)?;
        let ii = self.im.matmul(&other.im)?;
        let ri = self.re.matmul(&other.im)?;
        let ir = self.im.matmul(&other.re)?;
        Ok(ComplexTensor {
            re: rr.sub(&ii)?,
            im: ri.add(&ir)?,
        })
    }

    /// Hermitian transpose (2-d).
    pub fn hermitian(&self) -> Result<Self> {
        Ok(ComplexTensor {
            re: self.re.transpose()?,
            im: self.im.transpose()?.neg(),
        })
    }

    /// Squared magnitude `re² + im²` as a real tensor.
    pub fn abs_sq(&self) -> Result<Tensor> {
        self.re.mul(&self.re)?.add(&self.im.mul(&self.im)?)
    }

    /// Solve the complex system `A X = B` through the equivalent real block
    /// system `[[Re A, −Im A], [Im A, Re A]] [Re X; Im X] = [Re B; Im B]`.
    pub fn solve(&self, rhs: &Self) -> Result<Self> {
        let n = match self.shape() {
            [r, c] if r == c => *r,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "complex solve requires a square matrix, got {other:?}"
                )))
            }
        };
        let k = match rhs.shape() {
            [r, c] if *r == n => *c,
            other => {
                return Err(Error::ShapeMismatch {
                    op: "complex_solve",
                    lhs: self.shape().to_vec(),
                    rhs: other.to_vec(),
                })
            }
        };
        let top = Tensor::concat(&[self.re.clone(), self.im.neg()], 1)?;
        let bottom = Tensor::concat(&[self.im.clone(), self.re.clone()], 1)?;
        let block = Tensor::concat(&[top, bottom], 0)?;
        let stacked = Tensor::concat(&[rhs.re.clone(), rhs.im.clone()], 0)?;
        let x = block.solve(&stacked)?;
        Ok(ComplexTensor {
            re: x.slice2(0..n, 0..k)?,
            im: x.slice2(n..2 * n, 0..k)?,
        })
    }

    /// Matrix inverse via [`Self::solve`] against the identity.
    pub fn inverse(&self) -> Result<Self> {
        let n = self.shape()[0];
        self.solve(&ComplexTensor::identity(n))
    }

    pub fn slice2(
        &self,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> Result<Self> {
        Ok(ComplexTensor {
            re: self.re.slice2(rows.clone(), cols.clone())?,
            im: self.im.slice2(rows, cols)?,
        })
    }

    pub fn concat(parts: &[ComplexTensor], axis: usize) -> Result<Self> {
        let res: Vec<Tensor> = parts.iter().map(|p| p.re.clone()).collect();
        let ims: Vec<Tensor> = parts.iter().map(|p| p.im.clone()).collect();
        Ok(ComplexTensor {
            re: Tensor::concat(&res, axis)?,
            im: Tensor::concat(&ims, axis)?,
        })
    }

    /// Real part of the trace of the forward value (not on the tape).
    pub fn trace_re(&self) -> Result<f64> {
        let m = self.to_matrix()?;
        Ok((0..m.nrows()).map(|i| m[(i, i)].re).sum())
    }
}
