use invflow_core::invconv::*;
use invflow_core::oracle::*;
use invflow_core::{Exec, ImageTensor, Pixel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, c: usize, h: usize, w: usize, k: usize) -> (MaskedKernel, ImageTensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernel = MaskedKernel::random_stable(c, k, 0.9, &mut rng);
    (kernel, ImageTensor::random_normal(c, h, w, &mut rng))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip(seed in any::<u64>(), c in 1usize..=4, h in 1usize..=32, w in 1usize..=32, k in 1usize..=5) {
        let (kernel, y) = instance(seed, c, h, w, k);
        let x = inv_conv_solve(&y, &kernel).unwrap();
        let back = conv_forward(&x, &kernel).unwrap();
        prop_assert!(back.max_abs_diff(&y) <= 1e-8);
    }

    #[test]
    fn mask_projection_is_idempotent(seed in any::<u64>(), c in 1usize..=3, k in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..c * c * k * k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let once = mask_project(c, c, k, &raw).unwrap();
        let twice = mask_project(c, c, k, once.weights()).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.mask_violation().is_none());
        for (i, (a, b)) in raw.iter().zip(once.weights()).enumerate() {
            if i % (k * k) != k * k - 1 {
                prop_assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn operator_matrix_matches_convolution_exactly() {
    for seed in 0..20u64 {
        let (c, h, w, k) = (1 + seed as usize % 3, 3 + seed as usize % 6, 8 - seed as usize % 5, 1 + seed as usize % 3);
        let (kernel, _) = instance(seed, c, h, w, k);
        let m = build_operator_matrix(&kernel, h, w).unwrap();
        assert!(m.is_unit_lower_triangular());
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        for _ in 0..100 {
            let x = ImageTensor::random_normal(c, h, w, &mut rng);
            let dense = m.matvec(&x.to_raster());
            let fast = conv_forward(&x, &kernel).unwrap().to_raster();
            // same products; only summation order may differ
            assert!(max_abs_diff(&dense, &fast) <= 1e-13);
        }
    }
}

#[test]
fn three_solvers_agree() {
    for seed in 0..12u64 {
        let c = 1 + seed as usize % 3;
        let side = [4, 8, 12, 16][seed as usize % 4];
        let k = 1 + seed as usize % 3;
        if c * side * side > 1024 {
            continue;
        }
        let (kernel, y) = instance(seed, c, side, side, k);
        let m = build_operator_matrix(&kernel, side, side).unwrap();
        let wave = inv_conv_solve(&y, &kernel).unwrap().to_raster();
        let fwd = solve_unit_lower(&m, &y.to_raster()).unwrap();
        let ge = gaussian_elimination_solve(&m, &y.to_raster()).unwrap();
        assert!(max_abs_diff(&wave, &fwd) <= 1e-8);
        assert!(max_abs_diff(&wave, &ge) <= 1e-8);
        assert!(max_abs_diff(&fwd, &ge) <= 1e-8);
    }
}

#[test]
fn input_grad_matches_dense_transpose_and_finite_differences() {
    for seed in 0..10u64 {
        let (c, side, k) = (1 + seed as usize % 2, 4 + seed as usize % 9, 1 + seed as usize % 3);
        let (kernel, y) = instance(seed, c, side, side, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let g = ImageTensor::random_normal(c, side, side, &mut rng);
        let u = input_grad(&g, &kernel).unwrap();

        let minv = dense_inverse(&build_operator_matrix(&kernel, side, side).unwrap()).unwrap();
        let dense = minv.transpose().matvec(&g.to_raster());
        assert!(max_abs_diff(&dense, &u.to_raster()) <= 1e-9);

        // loss L(y) = ⟨g, inv_conv_solve(y)⟩
        let shape = y.shape();
        let fd = finite_diff_grad(
            |v| {
                let yy = ImageTensor::from_vec(shape.0, shape.1, shape.2, v.to_vec()).unwrap();
                inv_conv_solve(&yy, &kernel).unwrap().dot(&g)
            },
            y.data(),
            DEFAULT_FD_STEP,
            None,
        )
        .unwrap();
        assert!(relative_error(&fd, u.data()) <= 1e-6);
    }
}

#[test]
fn weight_grad_matches_finite_differences() {
    for seed in 0..10u64 {
        let (c, side, k) = (1 + seed as usize % 2, 3 + seed as usize % 10, 2 + seed as usize % 2);
        let (kernel, y) = instance(seed, c, side, side, k);
        let x = inv_conv_solve(&y, &kernel).unwrap();
        // quadratic loss ½‖x‖² has ∂L/∂x = x
        let grads = inv_conv_backward(&x, &x, &kernel, &Exec::serial()).unwrap();
        let skip: Vec<bool> = (0..kernel.weights().len()).map(|i| kernel.is_masked_flat(i)).collect();
        let fd = finite_diff_grad(
            |wv| {
                let kk = MaskedKernel::new(c, k, wv.to_vec()).unwrap();
                let xx = inv_conv_solve(&y, &kk).unwrap();
                0.5 * xx.dot(&xx)
            },
            kernel.weights(),
            DEFAULT_FD_STEP,
            Some(&skip),
        )
        .unwrap();
        assert!(relative_error(&fd, &grads.grad_weights) <= 1e-6, "seed {seed}");
        for (i, g) in grads.grad_weights.iter().enumerate() {
            if skip[i] {
                assert_eq!(*g, 0.0);
            }
        }
    }
}

#[test]
fn adjoint_consistency() {
    for seed in 0..10u64 {
        let (kernel, y) = instance(seed, 2, 9, 7, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
        let g = ImageTensor::random_normal(2, 9, 7, &mut rng);
        let v = ImageTensor::random_normal(2, 9, 7, &mut rng);
        let lhs = input_grad(&g, &kernel).unwrap().dot(&v);
        let h = DEFAULT_FD_STEP;
        let shift = |s: f64| {
            let mut yy = y.clone();
            yy.data_mut().iter_mut().zip(v.data()).for_each(|(a, b)| *a += s * b);
            inv_conv_solve(&yy, &kernel).unwrap()
        };
        let (p, m) = (shift(h), shift(-h));
        let jv: Vec<f64> = p.data().iter().zip(m.data()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let rhs: f64 = g.data().iter().zip(&jv).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-5 * lhs.abs().max(rhs.abs()));
    }
}

#[test]
fn recursions_match_fast_paths() {
    for seed in 0..8u64 {
        let side = 3 + seed as usize % 6;
        let k = 2 + seed as usize % 2;
        let (kernel, y) = instance(seed, 1, side, side, k);
        let x = inv_conv_solve(&y, &kernel).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 11);
        let g = ImageTensor::random_normal(1, side, side, &mut rng);
        let u = input_grad(&g, &kernel).unwrap();
        let mut rec = InputJacobianRecursion::new(&kernel, side, side).unwrap();
        let minv = dense_inverse(&build_operator_matrix(&kernel, side, side).unwrap()).unwrap();
        for pr in 1..=side {
            for pc in 1..=side {
                let p = Pixel::new(pr, pc);
                let mut acc = 0.0;
                for qr in 1..=side {
                    for qc in 1..=side {
                        let q = Pixel::new(qr, qc);
                        let e = rec.entry(q, p);
                        let dense = minv.get((qr - 1) * side + qc - 1, (pr - 1) * side + pc - 1);
                        assert!((e - dense).abs() <= 1e-10);
                        acc += g.get(0, q) * e;
                    }
                }
                assert!((acc - u.get(0, p)).abs() <= 1e-9);
            }
        }
        let gw = weight_grad(&u, &x, &kernel).unwrap();
        for a1 in 1..=k {
            for a2 in 1..=k {
                if (a1, a2) == (k, k) {
                    assert!(WeightJacobianRecursion::new(&x, &kernel, (a1, a2)).is_err());
                    continue;
                }
                let table = WeightJacobianRecursion::new(&x, &kernel, (a1, a2)).unwrap();
                let acc: f64 = g.data().iter().zip(table.values()).map(|(a, b)| a * b).sum();
                let fast = gw[kernel.flat_index(0, 0, a1 - 1, a2 - 1)];
                assert!((acc - fast).abs() <= 1e-9 * fast.abs().max(1.0));
            }
        }
    }
}

#[test]
fn determinant_is_one() {
    for seed in 0..10u64 {
        let (kernel, _) = instance(seed, 1 + seed as usize % 3, 5, 6, 3);
        let m = build_operator_matrix(&kernel, 5, 6).unwrap();
        assert!(m.is_unit_lower_triangular());
        assert_eq!(dense_det(&m).unwrap(), 1.0);
        // dense Jacobian of the solve is M⁻¹
        let y = ImageTensor::zeros(kernel.channels(), 5, 6);
        let shape = y.shape();
        let j = finite_diff_jacobian(
            |v| {
                let yy = ImageTensor::from_raster(shape.0, shape.1, shape.2, v).unwrap();
                inv_conv_solve(&yy, &kernel).unwrap().to_raster()
            },
            &y.to_raster(),
            DEFAULT_FD_STEP,
        )
        .unwrap();
        assert!(lu_log_det(&j).unwrap().1.abs() <= 1e-9);
        let minv = dense_inverse(&m).unwrap();
        assert!(max_abs_diff(j.entries(), minv.entries()) <= 1e-8);
    }
}

#[test]
fn results_are_bitwise_identical_across_thread_counts() {
    let (kernel, y) = instance(5, 3, 64, 64, 3);
    let ex = [Exec::serial(), Exec::with_threads(2).unwrap(), Exec::with_threads(4).unwrap()];
    let xs: Vec<_> = ex.iter().map(|e| inv_conv_solve_with(&y, &kernel, e).unwrap()).collect();
    let us: Vec<_> = ex.iter().map(|e| input_grad_with(&y, &kernel, e).unwrap()).collect();
    let gs: Vec<_> = ex.iter().map(|e| weight_grad_with(&us[0], &xs[0], &kernel, e).unwrap()).collect();
    let fs: Vec<_> = ex.iter().map(|e| conv_forward_with(&y, &kernel, e).unwrap()).collect();
    for i in 1..ex.len() {
        assert_eq!(xs[i], xs[0]);
        assert_eq!(us[i], us[0]);
        assert_eq!(gs[i], gs[0]);
        assert_eq!(fs[i], fs[0]);
    }
}

#[test]
fn std_conv_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (co, ci, k) in [(2, 3, 3), (1, 1, 1), (3, 2, 5)] {
        let conv = StdConv::same(co, ci, k);
        let x = ImageTensor::random_normal(ci, 5, 6, &mut rng);
        let w: Vec<f64> = (0..conv.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = ImageTensor::random_normal(co, 5, 6, &mut rng);
        let (gx, gw) = std_conv_backward(&g, &x, &w, co, k).unwrap();
        let fdw = finite_diff_grad(
            |wv| conv.forward(&x, wv, None).unwrap().dot(&g),
            &w,
            DEFAULT_FD_STEP,
            None,
        )
        .unwrap();
        let fdx = finite_diff_grad(
            |xv| conv.forward(&ImageTensor::from_vec(ci, 5, 6, xv.to_vec()).unwrap(), &w, None).unwrap().dot(&g),
            x.data(),
            DEFAULT_FD_STEP,
            None,
        )
        .unwrap();
        assert!(relative_error(&fdw, &gw) <= 1e-6);
        assert!(relative_error(&fdx, gx.data()) <= 1e-6);
    }
}

#[test]
fn finite_difference_step_sweep_has_a_v_shape() {
    let (kernel, y) = instance(3, 1, 8, 8, 3);
    let x = inv_conv_solve(&y, &kernel).unwrap();
    // L = Σ ½x² + x³/3, so ∂L/∂x = x + x²
    let g: Vec<f64> = x.data().iter().map(|a| a + a * a).collect();
    let exact = input_grad(&ImageTensor::from_vec(1, 8, 8, g).unwrap(), &kernel).unwrap();
    let err = |h: f64| {
        let fd = finite_diff_grad(
            |v| {
                let xx = inv_conv_solve(&ImageTensor::from_vec(1, 8, 8, v.to_vec()).unwrap(), &kernel).unwrap();
                xx.data().iter().map(|a| 0.5 * a * a + a * a * a / 3.0).sum()
            },
            y.data(),
            h,
            None,
        )
        .unwrap();
        relative_error(&fd, exact.data())
    };
    let (e4, e5, e6) = (err(1e-4), err(1e-5), err(1e-6));
    assert!(e5 < e4 && e5 < e6, "{e4:e} {e5:e} {e6:e}");
}
