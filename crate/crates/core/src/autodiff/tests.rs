use std::rc::Rc;

use ndarray::{arr1, arr2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rnd(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn complex_multiply_real_pair_decomposition() {
    // (1+2i)(3-1i) = 5+5i
    let a = ComplexTensor::new(
        Tensor::constant(arr1(&[1.0]).into_dyn()),
        Tensor::constant(arr1(&[2.0]).into_dyn()),
    )
    .unwrap();
    let b = ComplexTensor::new(
        Tensor::constant(arr1(&[3.0]).into_dyn()),
        Tensor::constant(arr1(&[-1.0]).into_dyn()),
    )
    .unwrap();
    let c = a.mul(&b).unwrap();
    assert_eq!(c.re.value()[[0]], 5.0);
    assert_eq!(c.im.value()[[0]], 5.0);
}

#[test]
fn solve_two_identity() {
    let a = Tensor::constant(arr2(&[[2.0, 0.0], [0.0, 2.0]]).into_dyn());
    let b = Tensor::constant(arr2(&[[4.0], [6.0]]).into_dyn());
    let x = a.solve(&b).unwrap();
    assert!((x.value()[[0, 0]] - 2.0).abs() < 1e-14);
    assert!((x.value()[[1, 0]] - 3.0).abs() < 1e-14);
}

#[test]
fn solve_residual_well_conditioned() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = 6;
        let mut a = rnd(&mut rng, &[n, n]);
        for i in 0..n {
            a[[i, i]] += 4.0;
        }
        let b = rnd(&mut rng, &[n, 3]);
        let at = Tensor::constant(a.clone());
        let bt = Tensor::constant(b.clone());
        let x = at.solve(&bt).unwrap();
        let a2 = a.into_dimensionality::<ndarray::Ix2>().unwrap();
        let x2 = x.value().clone().into_dimensionality::<ndarray::Ix2>().unwrap();
        let b2 = b.into_dimensionality::<ndarray::Ix2>().unwrap();
        let r = a2.dot(&x2) - &b2;
        let rel = r.iter().map(|x| x * x).sum::<f64>().sqrt()
            / b2.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(rel < 1e-10, "residual {rel}");
    }
}

#[test]
fn gradient_of_abs_sq_matches_finite_differences() {
    // f(re, im) = |re + i·im|² at 1 + 1i: expected gradient (2, 2).
    let f = |t: &[Tensor]| -> crate::Result<Tensor> {
        let z = ComplexTensor::new(t[0].clone(), t[1].clone())?;
        Ok(z.abs_sq()?.sum())
    };
    let point = vec![arr1(&[1.0]).into_dyn(), arr1(&[1.0]).into_dyn()];
    let tape = Tape::new();
    let leaves: Vec<Tensor> = point.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&leaves).unwrap();
    let grads = backward(&loss).unwrap();
    assert!((grads.get(&leaves[0]).unwrap()[[0]] - 2.0).abs() < 1e-12);
    assert!((grads.get(&leaves[1]).unwrap()[[0]] - 2.0).abs() < 1e-12);
    let err = grad_check(f, &point, 1e-6).unwrap();
    assert!(err < 1e-9, "finite-difference disagreement {err}");
}

#[test]
fn backward_constant_loss_empty_map() {
    let loss = Tensor::scalar_const(3.5);
    let grads = backward(&loss).unwrap();
    assert!(grads.is_empty());
}

#[test]
fn backward_weighted_sum_gradient_is_weight() {
    let tape = Tape::new();
    let w = tape.leaf(arr1(&[1.0, -2.0, 0.5]).into_dyn());
    let x = Tensor::constant(arr1(&[3.0, 4.0, 5.0]).into_dyn());
    let loss = w.mul(&x).unwrap().sum();
    let grads = backward(&loss).unwrap();
    let g = grads.get(&w).unwrap();
    assert_eq!(g[[0]], 3.0);
    assert_eq!(g[[1]], 4.0);
    assert_eq!(g[[2]], 5.0);
}

#[test]
fn backward_rejects_non_scalar() {
    let tape = Tape::new();
    let w = tape.leaf(arr1(&[1.0, 2.0]).into_dyn());
    let y = w.mul_scalar(2.0);
    assert!(matches!(backward(&y), Err(Error::InvalidArgument(_))));
}

#[test]
fn backward_names_first_non_finite_node() {
    let tape = Tape::new();
    let w = tape.leaf(arr1(&[0.0]).into_dyn());
    // log10(0) = -inf, then further ops propagate it
    let bad = w.log10();
    let loss = bad.mul_scalar(2.0).sum();
    match backward(&loss) {
        Err(Error::NonFinite { op, .. }) => assert_eq!(op, "log10"),
        Err(other) => panic!("expected NonFinite, got {other:?}"),
        Ok(_) => panic!("expected NonFinite, got Ok"),
    }
}

#[test]
fn unreached_leaf_gets_zero_gradient() {
    let tape = Tape::new();
    let used = tape.leaf(arr1(&[2.0]).into_dyn());
    let unused = tape.leaf(arr1(&[7.0]).into_dyn());
    let loss = used.mul(&used).unwrap().sum();
    let grads = backward(&loss).unwrap();
    assert!(grads.get(&unused).is_none());
    assert_eq!(grads.get_or_zero(&unused)[[0]], 0.0);
    assert_eq!(grads.get(&used).unwrap()[[0]], 4.0);
}

#[test]
fn grad_check_simple_square() {
    let f = |t: &[Tensor]| -> crate::Result<Tensor> { Ok(t[0].mul(&t[0])?.sum()) };
    let point = vec![arr1(&[3.0]).into_dyn()];
    let err = grad_check(f, &point, 1e-5).unwrap();
    assert!(err < 1e-8, "x^2 grad error {err}");
}

#[test]
fn grad_check_rejects_bad_eps() {
    let f = |t: &[Tensor]| -> crate::Result<Tensor> { Ok(t[0].sum()) };
    let point = vec![arr1(&[1.0]).into_dyn()];
    assert!(grad_check(f, &point, 0.0).is_err());
    assert!(grad_check(f, &point, -1.0).is_err());
}

#[test]
fn grad_check_hermitian_solve_quadratic_form() {
    // q = Re(c^H (B B^H + I)^{-1} c) over complex leaf B, 4×4.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 4;
    let point = vec![rnd(&mut rng, &[n, n]), rnd(&mut rng, &[n, n])];
    let c_re = rnd(&mut rng, &[n, 1]);
    let c_im = rnd(&mut rng, &[n, 1]);
    let f = move |t: &[Tensor]| -> crate::Result<Tensor> {
        let b = ComplexTensor::new(t[0].clone(), t[1].clone())?;
        let a = b.matmul(&b.hermitian()?)?.add(&ComplexTensor::identity(n))?;
        let c = ComplexTensor::new(
            Tensor::constant(c_re.clone()),
            Tensor::constant(c_im.clone()),
        )?;
        let x = a.solve(&c)?;
        // Re(c^H x)
        let q = c.hermitian()?.matmul(&x)?;
        Ok(q.re.sum())
    };
    let err = grad_check(f, &point, 1e-6).unwrap();
    assert!(err < 1e-6, "solve quadratic form grad error {err}");
}

#[test]
fn grad_check_power_iteration_rayleigh_quotient() {
    // Three power-iteration steps on a symmetrized matrix, then the
    // Rayleigh quotient; checked against central differences.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 4;
    let point = vec![rnd(&mut rng, &[n, n])];
    let f = move |t: &[Tensor]| -> crate::Result<Tensor> {
        let a = t[0].add(&t[0].transpose()?)?;
        let a = a.add(&Tensor::constant(
            (ndarray::Array2::<f64>::eye(n) * 5.0).into_dyn(),
        ))?;
        let mut v = Tensor::constant(ndarray::Array2::from_shape_fn((n, 1), |(i, _)| {
            if i == 0 {
                1.0
            } else {
                0.0
            }
        }).into_dyn());
        for _ in 0..3 {
            v = a.matmul(&v)?;
        }
        let av = a.matmul(&v)?;
        let num = v.transpose()?.matmul(&av)?.sum();
        let den = v.transpose()?.matmul(&v)?.sum();
        num.div(&den)
    };
    let err = grad_check(f, &point, 1e-6).unwrap();
    assert!(err < 1e-5, "power iteration grad error {err}");
}

#[test]
fn every_primitive_op_passes_grad_check() {
    for (name, err) in op_suite_grad_check(20, 42).unwrap() {
        assert!(err < 1e-4, "op `{name}` grad error {err}");
    }
}

#[test]
fn chain_rule_composition_matches_manual_two_tape_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x0 = rnd(&mut rng, &[4]);
    let w = rnd(&mut rng, &[4]);

    // g(x) = tanh(x)·2 + 0.3, f(y) = sum(w ⊙ y ⊙ y)
    let g = |x: &Tensor| -> crate::Result<Tensor> { Ok(x.tanh().mul_scalar(2.0).add_scalar(0.3)) };
    let f = |y: &Tensor, w: &ArrayD<f64>| -> crate::Result<Tensor> {
        Ok(y.mul(y)?.mul(&Tensor::constant(w.clone()))?.sum())
    };

    // single tape
    let tape = Tape::new();
    let x = tape.leaf(x0.clone());
    let loss = f(&g(&x).unwrap(), &w).unwrap();
    let gx_single = backward(&loss).unwrap().get_or_zero(&x);

    // two tapes composed by hand
    let tape_a = Tape::new();
    let xa = tape_a.leaf(x0.clone());
    let y = g(&xa).unwrap();

    let tape_b = Tape::new();
    let yb = tape_b.leaf(y.value().clone());
    let loss_b = f(&yb, &w).unwrap();
    let dy = backward(&loss_b).unwrap().get_or_zero(&yb);

    let pseudo = y.mul(&Tensor::constant(dy)).unwrap().sum();
    let gx_two = backward(&pseudo).unwrap().get_or_zero(&xa);

    for (a, b) in gx_single.iter().zip(gx_two.iter()) {
        assert!((a - b).abs() < 1e-12, "chain rule mismatch {a} vs {b}");
    }
}

#[test]
fn tape_contains_only_real_ops() {
    // Build a representative complex pipeline and assert every recorded
    // node is a known real primitive.
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let a = ComplexTensor::new(tape.leaf(rnd(&mut rng, &[3, 3])), tape.leaf(rnd(&mut rng, &[3, 3])))
        .unwrap();
    let h = a.matmul(&a.hermitian().unwrap()).unwrap();
    let h = h.add(&ComplexTensor::identity(3).mul(&ComplexTensor::identity(3)).unwrap()).unwrap();
    let x = h.solve(&ComplexTensor::identity(3)).unwrap();
    let _ = x.abs_sq().unwrap().sum();

    const REAL_OPS: &[&str] = &[
        "leaf", "add", "sub", "mul", "div", "neg", "add_scalar", "mul_scalar", "matmul",
        "transpose", "slice2", "slice1", "concat", "reshape", "sum", "mean", "log10", "sigmoid",
        "tanh", "clamp_min", "solve", "solve_sym_const", "fir_filter_const", "cross_corr_const",
        "irfft_frames", "overlap_add",
    ];
    let ops = tape.ops();
    assert!(!ops.is_empty());
    for op in ops {
        assert!(REAL_OPS.contains(&op), "unexpected tape op `{op}`");
    }
}

#[test]
fn complex_solve_matches_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 5;
    let re = rnd(&mut rng, &[n, n]);
    let im = rnd(&mut rng, &[n, n]);
    let a = ComplexTensor::new(Tensor::constant(re), Tensor::constant(im)).unwrap();
    let a = a.matmul(&a.hermitian().unwrap()).unwrap().add(&ComplexTensor::identity(n)).unwrap();
    let b = ComplexTensor::new(
        Tensor::constant(rnd(&mut rng, &[n, 1])),
        Tensor::constant(rnd(&mut rng, &[n, 1])),
    )
    .unwrap();
    let x = a.solve(&b).unwrap();

    let am = a.to_matrix().unwrap();
    let bm = b.to_matrix().unwrap();
    let an = nalgebra::DMatrix::from_fn(n, n, |i, j| am[(i, j)]);
    let bn = nalgebra::DVector::from_fn(n, |i, _| bm[(i, 0)]);
    let xn = an.lu().solve(&bn).unwrap();
    let xm = x.to_matrix().unwrap();
    for i in 0..n {
        assert!((xm[(i, 0)] - xn[i]).norm() < 1e-10);
    }
}

#[test]
fn irfft_frames_matches_direct_cosine_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let n = 16;
    let bins = n / 2 + 1;
    let re = rnd(&mut rng, &[2, bins]);
    let im = rnd(&mut rng, &[2, bins]);
    let out =
        Tensor::irfft_frames(&Tensor::constant(re.clone()), &Tensor::constant(im.clone()), n)
            .unwrap();
    for t in 0..2 {
        for s in 0..n {
            let mut x = re[[t, 0]] + re[[t, n / 2]] * if s % 2 == 0 { 1.0 } else { -1.0 };
            for k in 1..n / 2 {
                let w = 2.0 * std::f64::consts::PI * (k * s) as f64 / n as f64;
                x += 2.0 * (re[[t, k]] * w.cos() - im[[t, k]] * w.sin());
            }
            x /= n as f64;
            assert!((out.value()[[t, s]] - x).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_and_xcorr_match_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let s: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let taps: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let y = super::ops::conv_truncated(&s, &taps, 25);
    for n in 0..25 {
        let mut acc = 0.0;
        for (tau, &a) in taps.iter().enumerate() {
            if n >= tau && n - tau < s.len() {
                acc += a * s[n - tau];
            }
        }
        assert!((y[n] - acc).abs() < 1e-12);
    }

    let r = super::ops::xcorr_lags(&s, &x, 6);
    for (k, &rk) in r.iter().enumerate() {
        let mut acc = 0.0;
        for (l, &xl) in x.iter().enumerate() {
            if l >= k && l - k < s.len() {
                acc += s[l - k] * xl;
            }
        }
        assert!((rk - acc).abs() < 1e-12);
    }
}

#[test]
fn solve_sym_const_applies_inverse() {
    let a = arr2(&[[3.0, 1.0], [1.0, 2.0]]);
    let m = nalgebra::DMatrix::from_row_iterator(2, 2, a.iter().cloned());
    let chol = m.cholesky().unwrap();
    let solver: SymSolveFn = Rc::new(move |v: &[f64]| {
        chol.solve(&nalgebra::DVector::from_column_slice(v)).as_slice().to_vec()
    });
    let b = Tensor::constant(arr1(&[5.0, 4.0]).into_dyn());
    let x = Tensor::solve_sym_const(solver, &b).unwrap();
    // A x = b
    let xv = [x.value()[[0]], x.value()[[1]]];
    assert!((3.0 * xv[0] + xv[1] - 5.0).abs() < 1e-12);
    assert!((xv[0] + 2.0 * xv[1] - 4.0).abs() < 1e-12);
}

#[test]
#[should_panic(expected = "different tapes")]
fn mixing_tapes_panics() {
    let t1 = Tape::new();
    let t2 = Tape::new();
    let a = t1.leaf(arr1(&[1.0]).into_dyn());
    let b = t2.leaf(arr1(&[2.0]).into_dyn());
    let _ = a.add(&b);
}
