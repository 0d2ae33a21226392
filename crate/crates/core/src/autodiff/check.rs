//! Finite-difference gradient checking.

use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{backward, Tape, Tensor};
use crate::error::{Error, Result};

/// Compare reverse-mode gradients of `f` against central differences at
/// `point`, returning the worst relative error over all coordinates.
///
/// `f` is called once with tape-linked leaves to obtain analytic gradients,
/// then twice per coordinate with perturbed constants. Relative error uses
/// the denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, point: &[ArrayD<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "grad_check: eps must be positive, got {eps}"
        )));
    }
    // Normalize layouts so flat indexing below is consistent.
    let standardize = |a: &ArrayD<f64>| -> ArrayD<f64> {
        ArrayD::from_shape_vec(a.raw_dim(), a.iter().cloned().collect()).unwrap()
    };
    let point: Vec<ArrayD<f64>> = point.iter().map(&standardize).collect();
    let point = point.as_slice();

    let tape = Tape::new();
    let leaves: Vec<Tensor> = point.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&leaves)?;
    let grads = backward(&loss)?;
    let analytic: Vec<ArrayD<f64>> = leaves
        .iter()
        .map(|l| standardize(&grads.get_or_zero(l)))
        .collect();

    let eval = |inputs: &[ArrayD<f64>]| -> Result<f64> {
        let consts: Vec<Tensor> = inputs.iter().map(|p| Tensor::constant(p.clone())).collect();
        f(&consts)?.scalar()
    };

    let mut worst = 0.0f64;
    let mut work: Vec<ArrayD<f64>> = point.to_vec();
    for (li, leaf) in point.iter().enumerate() {
        for idx in 0..leaf.len() {
            let orig = work[li].as_slice_mut().expect("contiguous")[idx];
            work[li].as_slice_mut().unwrap()[idx] = orig + eps;
            let fp = eval(&work)?;
            work[li].as_slice_mut().unwrap()[idx] = orig - eps;
            let fm = eval(&work)?;
            work[li].as_slice_mut().unwrap()[idx] = orig;

            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[li].as_slice().expect("contiguous")[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn rand_arr(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
}

fn rand_pos(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(lo..hi))
}

/// Reduce an op output to a scalar through a fixed random weighting, so the
/// check exercises every output coordinate.
fn weighted(y: &Tensor, w: &ArrayD<f64>) -> Result<Tensor> {
    Ok(y.mul(&Tensor::constant(w.clone()))?.sum())
}

/// Run `instances` finite-difference checks per primitive op and return the
/// worst relative error of each, in a fixed order.
pub fn op_suite_grad_check(instances: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    type Case = (
        &'static str,
        Box<dyn Fn(&mut ChaCha8Rng) -> (Vec<ArrayD<f64>>, Box<dyn Fn(&[Tensor]) -> Result<Tensor>>)>,
    );

    let cases: Vec<Case> = vec![
        ("add", Box::new(|rng| {
            let w = rand_arr(rng, &[3, 4]);
            let p = vec![rand_arr(rng, &[3, 4]), rand_arr(rng, &[1, 4])];
            (p, Box::new(move |t| weighted(&t[0].add(&t[1])?, &w)))
        })),
        ("sub", Box::new(|rng| {
            let w = rand_arr(rng, &[3, 4]);
            let p = vec![rand_arr(rng, &[3, 4]), rand_arr(rng, &[3, 1])];
            (p, Box::new(move |t| weighted(&t[0].sub(&t[1])?, &w)))
        })),
        ("mul", Box::new(|rng| {
            let w = rand_arr(rng, &[3, 4]);
            let p = vec![rand_arr(rng, &[3, 4]), rand_arr(rng, &[4])];
            (p, Box::new(move |t| weighted(&t[0].mul(&t[1])?, &w)))
        })),
        ("div", Box::new(|rng| {
            let w = rand_arr(rng, &[3, 4]);
            let p = vec![rand_arr(rng, &[3, 4]), rand_pos(rng, &[3, 4], 0.5, 1.5)];
            (p, Box::new(move |t| weighted(&t[0].div(&t[1])?, &w)))
        })),
        ("neg", Box::new(|rng| {
            let w = rand_arr(rng, &[3, 4]);
            let p = vec![rand_arr(rng, &[3, 4])];
            (p, Box::new(move |t| weighted(&t[0].neg(), &w)))
        })),
        ("add_scalar", Box::new(|rng| {
            let w = rand_arr(rng, &[3, 4]);
            let p = vec![rand_arr(rng, &[3, 4])];
            (p, Box::new(move |t| weighted(&t[0].add_scalar(0.7), &w)))
        })),
        ("mul_scalar", Box::new(|rng| {
            let w = rand_arr(rng, &[3, 4]);
            let p = vec![rand_arr(rng, &[3, 4])];
            (p, Box::new(move |t| weighted(&t[0].mul_scalar(-1.3), &w)))
        })),
        ("matmul", Box::new(|rng| {
            let w = rand_arr(rng, &[3, 2]);
            let p = vec![rand_arr(rng, &[3, 4]), rand_arr(rng, &[4, 2])];
            (p, Box::new(move |t| weighted(&t[0].matmul(&t[1])?, &w)))
        })),
        ("transpose", Box::new(|rng| {
            let w = rand_arr(rng, &[4, 3]);
            let p = vec![rand_arr(rng, &[3, 4])];
            (p, Box::new(move |t| weighted(&t[0].transpose()?, &w)))
        })),
        ("slice2", Box::new(|rng| {
            let w = rand_arr(rng, &[2, 3]);
            let p = vec![rand_arr(rng, &[4, 5])];
            (p, Box::new(move |t| weighted(&t[0].slice2(1..3, 2..5)?, &w)))
        })),
        ("slice1", Box::new(|rng| {
            let w = rand_arr(rng, &[4]);
            let p = vec![rand_arr(rng, &[9])];
            (p, Box::new(move |t| weighted(&t[0].slice1(2..6)?, &w)))
        })),
        ("concat", Box::new(|rng| {
            let w = rand_arr(rng, &[3, 5]);
            let p = vec![rand_arr(rng, &[3, 2]), rand_arr(rng, &[3, 3])];
            (p, Box::new(move |t| {
                weighted(&Tensor::concat(&[t[0].clone(), t[1].clone()], 1)?, &w)
            }))
        })),
        ("reshape", Box::new(|rng| {
            let w = rand_arr(rng, &[3, 4]);
            let p = vec![rand_arr(rng, &[2, 6])];
            (p, Box::new(move |t| weighted(&t[0].reshape(&[3, 4])?, &w)))
        })),
        ("sum", Box::new(|rng| {
            let p = vec![rand_arr(rng, &[3, 4])];
            (p, Box::new(move |t| Ok(t[0].sum().mul_scalar(1.7))))
        })),
        ("mean", Box::new(|rng| {
            let p = vec![rand_arr(rng, &[3, 4])];
            (p, Box::new(move |t| Ok(t[0].mean().mul_scalar(-0.9))))
        })),
        ("log10", Box::new(|rng| {
            let w = rand_arr(rng, &[3, 4]);
            let p = vec![rand_pos(rng, &[3, 4], 0.5, 2.0)];
            (p, Box::new(move |t| weighted(&t[0].log10(), &w)))
        })),
        ("sigmoid", Box::new(|rng| {
            let w = rand_arr(rng, &[3, 4]);
            let p = vec![rand_arr(rng, &[3, 4])];
            (p, Box::new(move |t| weighted(&t[0].sigmoid(), &w)))
        })),
        ("tanh", Box::new(|rng| {
            let w = rand_arr(rng, &[3, 4]);
            let p = vec![rand_arr(rng, &[3, 4])];
            (p, Box::new(move |t| weighted(&t[0].tanh(), &w)))
        })),
        ("clamp_min", Box::new(|rng| {
            let w = rand_arr(rng, &[3, 4]);
            // keep coordinates away from the kink
            let p = vec![ArrayD::from_shape_fn(IxDyn(&[3, 4]), |_| {
                let x: f64 = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) { x } else { -x }
            })];
            (p, Box::new(move |t| weighted(&t[0].clamp_min(0.0), &w)))
        })),
        ("solve", Box::new(|rng| {
            let n = 4;
            let mut a = rand_arr(rng, &[n, n]);
            for i in 0..n {
                a[[i, i]] += 4.0;
            }
            let w = rand_arr(rng, &[n, 2]);
            let p = vec![a, rand_arr(rng, &[n, 2])];
            (p, Box::new(move |t| weighted(&t[0].solve(&t[1])?, &w)))
        })),
        ("solve_sym_const", Box::new(|rng| {
            let n = 6;
            let b = rand_arr(rng, &[n, n]);
            let b2 = b.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let spd = b2.t().dot(&b2) + ndarray::Array2::<f64>::eye(n);
            let m = nalgebra::DMatrix::from_row_iterator(n, n, spd.iter().cloned());
            let chol = m.cholesky().expect("SPD");
            let solver: super::ops::SymSolveFn = Rc::new(move |v: &[f64]| {
                let rhs = nalgebra::DVector::from_column_slice(v);
                chol.solve(&rhs).as_slice().to_vec()
            });
            let w = rand_arr(rng, &[n]);
            let p = vec![rand_arr(rng, &[n])];
            (p, Box::new(move |t| {
                weighted(&Tensor::solve_sym_const(solver.clone(), &t[0])?, &w)
            }))
        })),
        ("fir_filter_const", Box::new(|rng| {
            let s = Rc::new((0..30).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
            let w = rand_arr(rng, &[30]);
            let p = vec![rand_arr(rng, &[5])];
            (p, Box::new(move |t| {
                weighted(&Tensor::fir_filter_const(s.clone(), &t[0], 30)?, &w)
            }))
        })),
        ("cross_corr_const", Box::new(|rng| {
            let s = Rc::new((0..30).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
            let w = rand_arr(rng, &[5]);
            let p = vec![rand_arr(rng, &[30])];
            (p, Box::new(move |t| {
                weighted(&Tensor::cross_corr_const(s.clone(), &t[0], 5)?, &w)
            }))
        })),
        ("irfft_frames", Box::new(|rng| {
            let w = rand_arr(rng, &[3, 8]);
            let p = vec![rand_arr(rng, &[3, 5]), rand_arr(rng, &[3, 5])];
            (p, Box::new(move |t| {
                weighted(&Tensor::irfft_frames(&t[0], &t[1], 8)?, &w)
            }))
        })),
        ("overlap_add", Box::new(|rng| {
            let w = rand_arr(rng, &[10]);
            let p = vec![rand_arr(rng, &[4, 6])];
            (p, Box::new(move |t| {
                weighted(&Tensor::overlap_add(&t[0], 2, 3, 10)?, &w)
            }))
        })),
    ];

    let mut results = Vec::with_capacity(cases.len());
    for (name, make) in &cases {
        let mut worst = 0.0f64;
        for k in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e3779b97f4a7c15));
            let (point, f) = make(&mut rng);
            worst = worst.max(grad_check(|t| f(t), &point, 1e-6)?);
        }
        results.push((*name, worst));
    }
    Ok(results)
}
