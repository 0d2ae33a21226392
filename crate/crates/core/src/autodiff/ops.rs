//! Primitive tape operations. Every op computes its forward value eagerly
//! and, when an operand is tape-linked, records a backward rule.

use std::ops::Range;
use std::rc::Rc;

use nalgebra::DMatrix;
use ndarray::{concatenate, ArrayD, Axis, Ix1, Ix2, IxDyn, Zip};
use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{BackwardFn, Tape, Tensor};
use crate::error::{Error, Result};

/// Application of the inverse of a fixed symmetric linear operator.
/// Used for constant-matrix solves (Wiener-Hopf normal equations), where
/// the backward pass is another application of the same inverse.
pub type SymSolveFn = Rc<dyn Fn(&[f64]) -> Vec<f64>>;

fn bc_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "broadcast",
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

fn bc_apply(
    op: &'static str,
    a: &ArrayD<f64>,
    b: &ArrayD<f64>,
    f: impl Fn(f64, f64) -> f64,
) -> Result<ArrayD<f64>> {
    let shape = bc_shape(a.shape(), b.shape()).map_err(|_| Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let av = a.broadcast(IxDyn(&shape)).expect("lhs broadcast");
    let bv = b.broadcast(IxDyn(&shape)).expect("rhs broadcast");
    let mut out = ArrayD::zeros(IxDyn(&shape));
    Zip::from(&mut out)
        .and(&av)
        .and(&bv)
        .for_each(|o, &x, &y| *o = f(x, y));
    Ok(out)
}

/// Sum a broadcast-shaped gradient back down to an operand's shape.
fn reduce_to_shape(g: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let mut out = g.to_owned();
    while out.ndim() > shape.len() {
        out = out.sum_axis(Axis(0));
    }
    for ax in 0..shape.len() {
        if shape[ax] == 1 && out.shape()[ax] != 1 {
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    out
}

fn as2<'a>(t: &'a ArrayD<f64>, op: &'static str) -> Result<ndarray::ArrayView2<'a, f64>> {
    t.view().into_dimensionality::<Ix2>().map_err(|_| {
        Error::InvalidArgument(format!("`{op}` requires a 2-d tensor, got {:?}", t.shape()))
    })
}

fn as1<'a>(t: &'a ArrayD<f64>, op: &'static str) -> Result<ndarray::ArrayView1<'a, f64>> {
    t.view().into_dimensionality::<Ix1>().map_err(|_| {
        Error::InvalidArgument(format!("`{op}` requires a 1-d tensor, got {:?}", t.shape()))
    })
}

fn to_dmatrix(a: &ndarray::ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().cloned())
}

fn from_dmatrix(m: &DMatrix<f64>) -> ArrayD<f64> {
    ndarray::Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)]).into_dyn()
}

fn vec1(v: &ndarray::ArrayView1<f64>) -> Vec<f64> {
    match v.as_slice() {
        Some(s) => s.to_vec(),
        None => v.iter().cloned().collect(),
    }
}

pub(crate) fn conv_truncated(s: &[f64], taps: &[f64], out_len: usize) -> Vec<f64> {
    let mut y = vec![0.0; out_len];
    for (tau, &a) in taps.iter().enumerate() {
        if a == 0.0 || tau >= out_len {
            continue;
        }
        let n_end = (tau + s.len()).min(out_len);
        for n in tau..n_end {
            y[n] += a * s[n - tau];
        }
    }
    y
}

pub(crate) fn xcorr_lags(s: &[f64], x: &[f64], lags: usize) -> Vec<f64> {
    let mut r = vec![0.0; lags];
    for (k, rk) in r.iter_mut().enumerate() {
        let l_end = (k + s.len()).min(x.len());
        let mut acc = 0.0;
        for l in k..l_end {
            acc += s[l - k] * x[l];
        }
        *rk = acc;
    }
    r
}

impl Tensor {
    fn record(
        value: ArrayD<f64>,
        op: &'static str,
        operands: &[&Tensor],
        make_backward: impl FnOnce() -> BackwardFn,
    ) -> Tensor {
        let value = Rc::new(value);
        let node = Tensor::joint_tape(operands).map(|tape: Tape| {
            let id = tape.push(op, value.clone(), make_backward());
            (tape, id)
        });
        Tensor { value, node }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let value = bc_apply("add", &self.value, &other.value, |x, y| x + y)?;
        let (aid, bid) = (self.node_id(), other.node_id());
        let (ash, bsh) = (self.shape().to_vec(), other.shape().to_vec());
        Ok(Tensor::record(value, "add", &[self, other], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    sink(a, reduce_to_shape(g, &ash));
                }
                if let Some(b) = bid {
                    sink(b, reduce_to_shape(g, &bsh));
                }
            })
        }))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let value = bc_apply("sub", &self.value, &other.value, |x, y| x - y)?;
        let (aid, bid) = (self.node_id(), other.node_id());
        let (ash, bsh) = (self.shape().to_vec(), other.shape().to_vec());
        Ok(Tensor::record(value, "sub", &[self, other], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    sink(a, reduce_to_shape(g, &ash));
                }
                if let Some(b) = bid {
                    sink(b, reduce_to_shape(&g.mapv(|x| -x), &bsh));
                }
            })
        }))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let value = bc_apply("mul", &self.value, &other.value, |x, y| x * y)?;
        let (aid, bid) = (self.node_id(), other.node_id());
        let (ash, bsh) = (self.shape().to_vec(), other.shape().to_vec());
        let (av, bv) = (self.value.clone(), other.value.clone());
        Ok(Tensor::record(value, "mul", &[self, other], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    let full = bc_apply("mul", g, &bv, |g, y| g * y).expect("shape checked");
                    sink(a, reduce_to_shape(&full, &ash));
                }
                if let Some(b) = bid {
                    let full = bc_apply("mul", g, &av, |g, x| g * x).expect("shape checked");
                    sink(b, reduce_to_shape(&full, &bsh));
                }
            })
        }))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        let value = bc_apply("div", &self.value, &other.value, |x, y| x / y)?;
        let (aid, bid) = (self.node_id(), other.node_id());
        let (ash, bsh) = (self.shape().to_vec(), other.shape().to_vec());
        let (av, bv) = (self.value.clone(), other.value.clone());
        Ok(Tensor::record(value, "div", &[self, other], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    let full = bc_apply("div", g, &bv, |g, y| g / y).expect("shape checked");
                    sink(a, reduce_to_shape(&full, &ash));
                }
                if let Some(b) = bid {
                    let num = bc_apply("div", g, &av, |g, x| g * x).expect("shape checked");
                    let full = bc_apply("div", &num, &bv, |n, y| -n / (y * y)).expect("shape");
                    sink(b, reduce_to_shape(&full, &bsh));
                }
            })
        }))
    }

    pub fn neg(&self) -> Tensor {
        let value = self.value.mapv(|x| -x);
        let aid = self.node_id();
        Tensor::record(value, "neg", &[self], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    sink(a, g.mapv(|x| -x));
                }
            })
        })
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let value = self.value.mapv(|x| x + c);
        let aid = self.node_id();
        Tensor::record(value, "add_scalar", &[self], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    sink(a, g.clone());
                }
            })
        })
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let value = self.value.mapv(|x| x * c);
        let aid = self.node_id();
        Tensor::record(value, "mul_scalar", &[self], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    sink(a, g.mapv(|x| x * c));
                }
            })
        })
    }

    /// 2-d matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let a = as2(&self.value, "matmul")?;
        let b = as2(&other.value, "matmul")?;
        if a.ncols() != b.nrows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let value = a.dot(&b).into_dyn();
        let (aid, bid) = (self.node_id(), other.node_id());
        let (av, bv) = (self.value.clone(), other.value.clone());
        Ok(Tensor::record(value, "matmul", &[self, other], || {
            Box::new(move |g, sink| {
                let g2 = g.view().into_dimensionality::<Ix2>().expect("2-d grad");
                if let Some(a) = aid {
                    let b2 = bv.view().into_dimensionality::<Ix2>().unwrap();
                    sink(a, g2.dot(&b2.t()).into_dyn());
                }
                if let Some(b) = bid {
                    let a2 = av.view().into_dimensionality::<Ix2>().unwrap();
                    sink(b, a2.t().dot(&g2).into_dyn());
                }
            })
        }))
    }

    /// 2-d transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        let a = as2(&self.value, "transpose")?;
        let value = a.t().to_owned().into_dyn();
        let aid = self.node_id();
        Ok(Tensor::record(value, "transpose", &[self], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    let g2 = g.view().into_dimensionality::<Ix2>().expect("2-d grad");
                    sink(a, g2.t().to_owned().into_dyn());
                }
            })
        }))
    }

    /// Rectangular slice of a 2-d tensor.
    pub fn slice2(&self, rows: Range<usize>, cols: Range<usize>) -> Result<Tensor> {
        let a = as2(&self.value, "slice2")?;
        if rows.end > a.nrows() || cols.end > a.ncols() || rows.start > rows.end || cols.start > cols.end {
            return Err(Error::InvalidArgument(format!(
                "slice2 {:?}x{:?} out of bounds for shape {:?}",
                rows,
                cols,
                self.shape()
            )));
        }
        let value = a
            .slice(ndarray::s![rows.clone(), cols.clone()])
            .to_owned()
            .into_dyn();
        let aid = self.node_id();
        let shape = self.shape().to_vec();
        Ok(Tensor::record(value, "slice2", &[self], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    let mut out = ArrayD::zeros(IxDyn(&shape));
                    let mut v = out.view_mut().into_dimensionality::<Ix2>().unwrap();
                    let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                    v.slice_mut(ndarray::s![rows.clone(), cols.clone()])
                        .assign(&g2);
                    sink(a, out);
                }
            })
        }))
    }

    /// Contiguous slice of a 1-d tensor.
    pub fn slice1(&self, range: Range<usize>) -> Result<Tensor> {
        let a = as1(&self.value, "slice1")?;
        if range.end > a.len() || range.start > range.end {
            return Err(Error::InvalidArgument(format!(
                "slice1 {:?} out of bounds for length {}",
                range,
                a.len()
            )));
        }
        let value = a.slice(ndarray::s![range.clone()]).to_owned().into_dyn();
        let aid = self.node_id();
        let len = a.len();
        Ok(Tensor::record(value, "slice1", &[self], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    let mut out = ArrayD::zeros(IxDyn(&[len]));
                    let mut v = out.view_mut().into_dimensionality::<Ix1>().unwrap();
                    let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                    v.slice_mut(ndarray::s![range.clone()]).assign(&g1);
                    sink(a, out);
                }
            })
        }))
    }

    /// Concatenate tensors of equal rank along `axis`.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let views: Vec<_> = parts.iter().map(|p| p.value.view()).collect();
        let value = concatenate(Axis(axis), &views).map_err(|e| {
            Error::InvalidArgument(format!("concat along axis {axis} failed: {e}"))
        })?;
        let ids: Vec<Option<usize>> = parts.iter().map(|p| p.node_id()).collect();
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok(Tensor::record(value, "concat", &refs, || {
            Box::new(move |g, sink| {
                let mut offset = 0;
                for (id, &size) in ids.iter().zip(&sizes) {
                    if let Some(a) = id {
                        let piece = g
                            .slice_axis(Axis(axis), ndarray::Slice::from(offset..offset + size))
                            .to_owned();
                        sink(*a, piece);
                    }
                    offset += size;
                }
            })
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.value.len() {
            return Err(Error::InvalidArgument(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape(),
                shape
            )));
        }
        let value =
            ArrayD::from_shape_vec(IxDyn(shape), self.value.iter().cloned().collect()).unwrap();
        let aid = self.node_id();
        let old = self.shape().to_vec();
        Ok(Tensor::record(value, "reshape", &[self], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    let back =
                        ArrayD::from_shape_vec(IxDyn(&old), g.iter().cloned().collect()).unwrap();
                    sink(a, back);
                }
            })
        }))
    }

    /// Sum of all elements (0-d result).
    pub fn sum(&self) -> Tensor {
        let value = ArrayD::from_elem(IxDyn(&[]), self.value.sum());
        let aid = self.node_id();
        let dim = self.value.raw_dim();
        Tensor::record(value, "sum", &[self], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    let gv = *g.iter().next().unwrap();
                    sink(a, ArrayD::from_elem(dim.clone(), gv));
                }
            })
        })
    }

    /// Mean of all elements (0-d result).
    pub fn mean(&self) -> Tensor {
        let n = self.value.len() as f64;
        let value = ArrayD::from_elem(IxDyn(&[]), self.value.sum() / n);
        let aid = self.node_id();
        let dim = self.value.raw_dim();
        Tensor::record(value, "mean", &[self], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    let gv = *g.iter().next().unwrap() / n;
                    sink(a, ArrayD::from_elem(dim.clone(), gv));
                }
            })
        })
    }

    pub fn log10(&self) -> Tensor {
        let value = self.value.mapv(f64::log10);
        let aid = self.node_id();
        let xv = self.value.clone();
        Tensor::record(value, "log10", &[self], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    let ln10 = std::f64::consts::LN_10;
                    let mut out = g.clone();
                    Zip::from(&mut out).and(&*xv).for_each(|o, &x| *o /= x * ln10);
                    sink(a, out);
                }
            })
        })
    }

    pub fn sigmoid(&self) -> Tensor {
        let value = self.value.mapv(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        let aid = self.node_id();
        let out_rc = Rc::new(value.clone());
        Tensor::record(value, "sigmoid", &[self], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    let mut out = g.clone();
                    Zip::from(&mut out)
                        .and(&*out_rc)
                        .for_each(|o, &s| *o *= s * (1.0 - s));
                    sink(a, out);
                }
            })
        })
    }

    pub fn tanh(&self) -> Tensor {
        let value = self.value.mapv(f64::tanh);
        let aid = self.node_id();
        let out_rc = Rc::new(value.clone());
        Tensor::record(value, "tanh", &[self], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    let mut out = g.clone();
                    Zip::from(&mut out)
                        .and(&*out_rc)
                        .for_each(|o, &t| *o *= 1.0 - t * t);
                    sink(a, out);
                }
            })
        })
    }

    /// Elementwise `max(x, c)`; gradient passes only where `x > c`.
    pub fn clamp_min(&self, c: f64) -> Tensor {
        let value = self.value.mapv(|x| x.max(c));
        let aid = self.node_id();
        let xv = self.value.clone();
        Tensor::record(value, "clamp_min", &[self], || {
            Box::new(move |g, sink| {
                if let Some(a) = aid {
                    let mut out = g.clone();
                    Zip::from(&mut out)
                        .and(&*xv)
                        .for_each(|o, &x| *o = if x > c { *o } else { 0.0 });
                    sink(a, out);
                }
            })
        })
    }

    /// Solve the real linear system `A X = B` (A: n×n, B: n×k) with partial
    /// pivoting. Differentiable in both A and B.
    pub fn solve(&self, rhs: &Tensor) -> Result<Tensor> {
        let a = as2(&self.value, "solve")?;
        let b = as2(&rhs.value, "solve")?;
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n {
            return Err(Error::ShapeMismatch {
                op: "solve",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let am = to_dmatrix(&a);
        let bm = to_dmatrix(&b);
        let x = am
            .clone()
            .lu()
            .solve(&bm)
            .ok_or_else(|| Error::Numerical(format!("singular {n}x{n} matrix in solve")))?;
        let value = from_dmatrix(&x);
        let (aid, bid) = (self.node_id(), rhs.node_id());
        let av = self.value.clone();
        let xm = Rc::new(x);
        Ok(Tensor::record(value, "solve", &[self, rhs], || {
            Box::new(move |g, sink| {
                let g2 = g.view().into_dimensionality::<Ix2>().expect("2-d grad");
                let gm = to_dmatrix(&g2);
                let a2 = av.view().into_dimensionality::<Ix2>().unwrap();
                let at = to_dmatrix(&a2).transpose();
                // grad_B = A^{-T} G; grad_A = -grad_B X^T
                let gb = at
                    .lu()
                    .solve(&gm)
                    .expect("forward solve succeeded, transpose solve must too");
                if let Some(b) = bid {
                    sink(b, from_dmatrix(&gb));
                }
                if let Some(a) = aid {
                    let ga = -(&gb * xm.transpose());
                    sink(a, from_dmatrix(&ga));
                }
            })
        }))
    }

    /// Solve against a fixed symmetric operator: forward `x = A⁻¹ b`,
    /// backward `g_b = A⁻¹ g`. The operator itself is constant.
    pub fn solve_sym_const(apply_inverse: SymSolveFn, rhs: &Tensor) -> Result<Tensor> {
        let b = as1(&rhs.value, "solve_sym_const")?;
        let x = apply_inverse(&vec1(&b));
        if x.len() != b.len() {
            return Err(Error::Numerical(
                "symmetric solver returned a different length".into(),
            ));
        }
        let value = ndarray::Array1::from_vec(x).into_dyn();
        let bid = rhs.node_id();
        Ok(Tensor::record(value, "solve_sym_const", &[rhs], || {
            Box::new(move |g, sink| {
                if let Some(b) = bid {
                    let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                    let gb = apply_inverse(&vec1(&g1));
                    sink(b, ndarray::Array1::from_vec(gb).into_dyn());
                }
            })
        }))
    }

    /// FIR filtering of a constant signal by tape-linked taps:
    /// `y[n] = Σ_τ taps[τ] · s[n−τ]`, truncated/zero-padded to `out_len`.
    pub fn fir_filter_const(signal: Rc<Vec<f64>>, taps: &Tensor, out_len: usize) -> Result<Tensor> {
        let t = as1(&taps.value, "fir_filter_const")?;
        let y = conv_truncated(&signal, &vec1(&t), out_len);
        let value = ndarray::Array1::from_vec(y).into_dyn();
        let tid = taps.node_id();
        let k = t.len();
        Ok(Tensor::record(value, "fir_filter_const", &[taps], || {
            Box::new(move |g, sink| {
                if let Some(t) = tid {
                    let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                    let gt = xcorr_lags(&signal, &vec1(&g1), k);
                    sink(t, ndarray::Array1::from_vec(gt).into_dyn());
                }
            })
        }))
    }

    /// Cross-correlation of a tape-linked signal with a constant one:
    /// `r[k] = Σ_ℓ s[ℓ−k] · x[ℓ]` for `k < lags`.
    pub fn cross_corr_const(signal: Rc<Vec<f64>>, x: &Tensor, lags: usize) -> Result<Tensor> {
        let xv = as1(&x.value, "cross_corr_const")?;
        let r = xcorr_lags(&signal, &vec1(&xv), lags);
        let value = ndarray::Array1::from_vec(r).into_dyn();
        let xid = x.node_id();
        let xlen = xv.len();
        Ok(Tensor::record(value, "cross_corr_const", &[x], || {
            Box::new(move |g, sink| {
                if let Some(x) = xid {
                    let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                    let gx = conv_truncated(&signal, &vec1(&g1), xlen);
                    sink(x, ndarray::Array1::from_vec(gx).into_dyn());
                }
            })
        }))
    }

    /// Inverse real FFT of one-sided spectra, one frame per row.
    /// `re`, `im`: T×F with F = n/2 + 1; output T×n. The imaginary parts of
    /// the DC and Nyquist bins are ignored (real-signal convention).
    pub fn irfft_frames(re: &Tensor, im: &Tensor, n: usize) -> Result<Tensor> {
        let r = as2(&re.value, "irfft_frames")?;
        let i = as2(&im.value, "irfft_frames")?;
        if r.dim() != i.dim() {
            return Err(Error::ShapeMismatch {
                op: "irfft_frames",
                lhs: re.shape().to_vec(),
                rhs: im.shape().to_vec(),
            });
        }
        let bins = n / 2 + 1;
        if n % 2 != 0 || r.ncols() != bins {
            return Err(Error::InvalidArgument(format!(
                "irfft_frames: {} bins incompatible with frame size {n}",
                r.ncols()
            )));
        }
        let frames = r.nrows();
        let mut planner = FftPlanner::<f64>::new();
        let ifft = planner.plan_fft_inverse(n);
        let mut value = ndarray::Array2::<f64>::zeros((frames, n));
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..frames {
            buf[0] = Complex64::new(r[(t, 0)], 0.0);
            buf[n / 2] = Complex64::new(r[(t, n / 2)], 0.0);
            for k in 1..n / 2 {
                let c = Complex64::new(r[(t, k)], i[(t, k)]);
                buf[k] = c;
                buf[n - k] = c.conj();
            }
            ifft.process(&mut buf);
            for (x, b) in value.row_mut(t).iter_mut().zip(&buf) {
                *x = b.re / n as f64;
            }
        }
        let (rid, iid) = (re.node_id(), im.node_id());
        Ok(Tensor::record(
            value.into_dyn(),
            "irfft_frames",
            &[re, im],
            || {
                Box::new(move |g, sink| {
                    let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                    let frames = g2.nrows();
                    let mut planner = FftPlanner::<f64>::new();
                    let fft = planner.plan_fft_forward(n);
                    let mut gre = ndarray::Array2::<f64>::zeros((frames, bins));
                    let mut gim = ndarray::Array2::<f64>::zeros((frames, bins));
                    let mut buf = vec![Complex64::new(0.0, 0.0); n];
                    for t in 0..frames {
                        for (b, &x) in buf.iter_mut().zip(g2.row(t)) {
                            *b = Complex64::new(x, 0.0);
                        }
                        fft.process(&mut buf);
                        gre[(t, 0)] = buf[0].re / n as f64;
                        gre[(t, n / 2)] = buf[n / 2].re / n as f64;
                        for k in 1..n / 2 {
                            gre[(t, k)] = 2.0 * buf[k].re / n as f64;
                            gim[(t, k)] = 2.0 * buf[k].im / n as f64;
                        }
                    }
                    if let Some(r) = rid {
                        sink(r, gre.into_dyn());
                    }
                    if let Some(i) = iid {
                        sink(i, gim.into_dyn());
                    }
                })
            },
        ))
    }

    /// Overlap-add synthesis: `out[t·shift + m − offset] += frames[t, m]`,
    /// restricted to `[0, out_len)`.
    pub fn overlap_add(
        frames: &Tensor,
        shift: usize,
        offset: usize,
        out_len: usize,
    ) -> Result<Tensor> {
        let f = as2(&frames.value, "overlap_add")?;
        if shift == 0 {
            return Err(Error::InvalidArgument("overlap_add: shift must be > 0".into()));
        }
        let (t_frames, n) = f.dim();
        let mut out = ndarray::Array1::<f64>::zeros(out_len);
        for t in 0..t_frames {
            let base = t * shift;
            for m in 0..n {
                let j = base + m;
                if j >= offset && j - offset < out_len {
                    out[j - offset] += f[(t, m)];
                }
            }
        }
        let fid = frames.node_id();
        Ok(Tensor::record(out.into_dyn(), "overlap_add", &[frames], || {
            Box::new(move |g, sink| {
                if let Some(fi) = fid {
                    let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                    let mut gf = ndarray::Array2::<f64>::zeros((t_frames, n));
                    for t in 0..t_frames {
                        let base = t * shift;
                        for m in 0..n {
                            let j = base + m;
                            if j >= offset && j - offset < out_len {
                                gf[(t, m)] = g1[j - offset];
                            }
                        }
                    }
                    sink(fi, gf.into_dyn());
                }
            })
        }))
    }
}
