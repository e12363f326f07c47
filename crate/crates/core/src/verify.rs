//! Property suite run by the `verify` command: every fast path against its
//! dense or recursive oracle, each reported with its largest observed error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flow::{FlowConfig, FlowModel};
use crate::invconv::{
    conv_forward_with, input_grad_with, inv_conv_backward, inv_conv_solve_with, InputJacobianRecursion,
    MaskedKernel, WeightJacobianRecursion,
};
use crate::oracle::{
    build_operator_matrix, dense_det, dense_inverse, finite_diff_grad, gaussian_elimination_solve, max_abs_diff,
    relative_error, solve_unit_lower, DEFAULT_FD_STEP,
};
use crate::report::PropertyResult;
use crate::{Exec, ImageTensor, Pixel, Result};

pub const ROUND_TRIP_TOL: f64 = 1e-8;
pub const SOLVER_TOL: f64 = 1e-8;
pub const RECURSION_TOL: f64 = 1e-9;
pub const FD_GRAD_TOL: f64 = 1e-5;
pub const DET_TOL: f64 = 1e-10;
pub const FLOW_RECON_TOL: f64 = 1e-5;

/// Value written into every masked diagonal entry when a violation is injected.
pub const INJECTED_DIAGONAL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Largest image side used by any property.
    pub max_size: usize,
    /// Random instances per property.
    pub instances: usize,
    pub seed: u64,
    /// Overwrite the masked diagonal of every test kernel (negative test).
    pub inject_mask_violation: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            max_size: 16,
            instances: 8,
            seed: 0,
            inject_mask_violation: false,
        }
    }
}

struct Instance {
    kernel: MaskedKernel,
    y: ImageTensor,
    rng: ChaCha8Rng,
}

fn instance(opts: &VerifyOptions, tag: u64, i: usize, c: usize, side: usize, k: usize) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (tag << 32) ^ i as u64);
    let mut kernel = MaskedKernel::random_stable(c, k, 0.9, &mut rng);
    if opts.inject_mask_violation {
        let mut w = kernel.into_weights();
        for ch in 0..c {
            w[((ch * c + ch) * k + k - 1) * k + k - 1] = INJECTED_DIAGONAL;
        }
        kernel = MaskedKernel::new_unchecked(c, k, w)?;
    }
    let y = ImageTensor::random_normal(c, side, side, &mut rng);
    Ok(Instance { kernel, y, rng })
}

fn shape_cycle(opts: &VerifyOptions, i: usize, sides: &[usize], max_n: usize) -> (usize, usize, usize) {
    let sides: Vec<usize> = sides.iter().copied().filter(|&s| s <= opts.max_size.max(1)).collect();
    let sides = if sides.is_empty() { vec![opts.max_size.max(1)] } else { sides };
    let n = sides.len();
    let mut side = sides[i % n];
    let c = [1, 2][(i / n) % 2];
    let k = [2, 3][(i / (2 * n)) % 2];
    while c * side * side > max_n && side > 1 {
        side -= 1;
    }
    (c, side, k)
}

/// Runs `body` over the configured instances, tracking the largest error.
/// The first error aborts the property and is reported as its detail.
fn sweep<F>(name: &str, tol: f64, opts: &VerifyOptions, mut body: F) -> PropertyResult
where
    F: FnMut(usize) -> Result<f64>,
{
    let mut worst = 0.0f64;
    for i in 0..opts.instances.max(1) {
        match body(i) {
            Ok(e) => worst = if e.is_nan() { f64::NAN } else { worst.max(e) },
            Err(e) => return PropertyResult::failed(name, format!("instance {i}: {e}")),
        }
        if worst.is_nan() {
            break;
        }
    }
    let detail = format!("{} instances", opts.instances.max(1));
    PropertyResult::check(name, worst, tol, detail)
}

pub fn check_round_trip(opts: &VerifyOptions, exec: &Exec) -> PropertyResult {
    sweep("round_trip", ROUND_TRIP_TOL, opts, |i| {
        let (c, side, k) = shape_cycle(opts, i, &[4, 8, 16, 32], usize::MAX);
        let inst = instance(opts, 1, i, c, side, k)?;
        let x = inv_conv_solve_with(&inst.y, &inst.kernel, exec)?;
        Ok(conv_forward_with(&x, &inst.kernel, exec)?.max_abs_diff(&inst.y))
    })
}

pub fn check_dense_solve(opts: &VerifyOptions, exec: &Exec) -> PropertyResult {
    sweep("dense_solve_equivalence", SOLVER_TOL, opts, |i| {
        let (c, side, k) = shape_cycle(opts, i, &[4, 8, 16], 1024);
        let inst = instance(opts, 2, i, c, side, k)?;
        let m = build_operator_matrix(&inst.kernel, side, side)?;
        let y = inst.y.to_raster();
        let wave = inv_conv_solve_with(&inst.y, &inst.kernel, exec)?.to_raster();
        let fwd = solve_unit_lower(&m, &y)?;
        let ge = gaussian_elimination_solve(&m, &y)?;
        Ok(max_abs_diff(&wave, &fwd).max(max_abs_diff(&wave, &ge)).max(max_abs_diff(&fwd, &ge)))
    })
}

pub fn check_recursions(opts: &VerifyOptions, exec: &Exec) -> PropertyResult {
    sweep("recursion_equivalence", RECURSION_TOL, opts, |i| {
        let (_, side, k) = shape_cycle(opts, i, &[3, 5, 8], 64);
        let mut inst = instance(opts, 3, i, 1, side, k)?;
        let g = ImageTensor::random_normal(1, side, side, &mut inst.rng);
        let u = input_grad_with(&g, &inst.kernel, exec)?;
        let x = inv_conv_solve_with(&inst.y, &inst.kernel, exec)?;
        let grads = inv_conv_backward(&g, &x, &inst.kernel, exec)?;
        let minv = dense_inverse(&build_operator_matrix(&inst.kernel, side, side)?)?;
        let mut rec = InputJacobianRecursion::new(&inst.kernel, side, side)?;
        let mut worst = 0.0f64;
        for p in 0..side * side {
            let pp = Pixel::new(p / side + 1, p % side + 1);
            let mut acc = 0.0;
            for q in 0..side * side {
                let e = rec.entry(Pixel::new(q / side + 1, q % side + 1), pp);
                worst = worst.max((e - minv.get(q, p)).abs());
                acc += g.data()[q] * e;
            }
            worst = worst.max((acc - u.data()[p]).abs());
        }
        for a1 in 1..=k {
            for a2 in 1..=k {
                if (a1, a2) == (k, k) {
                    continue;
                }
                let table = WeightJacobianRecursion::new(&x, &inst.kernel, (a1, a2))?;
                let acc: f64 = g.data().iter().zip(table.values()).map(|(a, b)| a * b).sum();
                let fast = grads.grad_weights[inst.kernel.flat_index(0, 0, a1 - 1, a2 - 1)];
                worst = worst.max((acc - fast).abs() / fast.abs().max(1.0));
            }
        }
        Ok(worst)
    })
}

pub fn check_input_grad(opts: &VerifyOptions, exec: &Exec) -> PropertyResult {
    sweep("input_grad_fd", FD_GRAD_TOL, opts, |i| {
        let (c, side, k) = shape_cycle(opts, i, &[4, 8, 12], 288);
        let mut inst = instance(opts, 4, i, c, side, k)?;
        let g = ImageTensor::random_normal(c, side, side, &mut inst.rng);
        let u = input_grad_with(&g, &inst.kernel, exec)?;
        let kernel = &inst.kernel;
        let fd = finite_diff_grad(
            |v| {
                let yy = ImageTensor::from_vec(c, side, side, v.to_vec()).expect("shape");
                inv_conv_solve_with(&yy, kernel, exec).map(|x| x.dot(&g)).unwrap_or(f64::NAN)
            },
            inst.y.data(),
            DEFAULT_FD_STEP,
            None,
        )?;
        Ok(relative_error(&fd, u.data()))
    })
}

pub fn check_weight_grad(opts: &VerifyOptions, exec: &Exec) -> PropertyResult {
    sweep("weight_grad_fd", FD_GRAD_TOL, opts, |i| {
        let (c, side, k) = shape_cycle(opts, i, &[4, 8, 12], 288);
        let inst = instance(opts, 5, i, c, side, k)?;
        let x = inv_conv_solve_with(&inst.y, &inst.kernel, exec)?;
        let grads = inv_conv_backward(&x, &x, &inst.kernel, exec)?;
        let skip: Vec<bool> = (0..inst.kernel.weights().len()).map(|j| inst.kernel.is_masked_flat(j)).collect();
        let fd = finite_diff_grad(
            |wv| {
                let kk = MaskedKernel::new_unchecked(c, k, wv.to_vec()).expect("shape");
                inv_conv_solve_with(&inst.y, &kk, exec).map(|xx| 0.5 * xx.dot(&xx)).unwrap_or(f64::NAN)
            },
            inst.kernel.weights(),
            DEFAULT_FD_STEP,
            Some(&skip),
        )?;
        Ok(relative_error(&fd, &grads.grad_weights))
    })
}

pub fn check_unit_determinant(opts: &VerifyOptions) -> PropertyResult {
    let name = "unit_determinant";
    let mut worst = 0.0f64;
    for i in 0..opts.instances.max(1) {
        let (c, side, k) = shape_cycle(opts, i, &[4, 8, 16], 256);
        let inst = match instance(opts, 6, i, c, side, k) {
            Ok(v) => v,
            Err(e) => return PropertyResult::failed(name, format!("instance {i}: {e}")),
        };
        let m = match build_operator_matrix(&inst.kernel, side, side) {
            Ok(m) => m,
            Err(e) => return PropertyResult::failed(name, format!("instance {i}: {e}")),
        };
        let det = match dense_det(&m) {
            Ok(d) => d,
            Err(e) => return PropertyResult::failed(name, format!("instance {i}: {e}")),
        };
        worst = worst.max((det - 1.0).abs());
        if !m.is_unit_lower_triangular() {
            return PropertyResult {
                name: name.into(),
                passed: false,
                max_error: worst,
                tolerance: DET_TOL,
                detail: format!("instance {i}: operator is not unit lower triangular (det {det:e})"),
            };
        }
    }
    PropertyResult::check(name, worst, DET_TOL, format!("{} kernels", opts.instances.max(1)))
}

pub fn check_flow_bijectivity(opts: &VerifyOptions, exec: &Exec) -> PropertyResult {
    let side = (opts.max_size.clamp(4, 16) / 4) * 4;
    let mut cfg = FlowConfig::new(2, 2, [1, side, side]);
    cfg.hidden_width = 8;
    cfg.seed = opts.seed;
    let run = || -> Result<(f64, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut model = FlowModel::new(&cfg, &mut rng)?;
        model.perturb(0.1, &mut rng);
        let mut worst = 0.0f64;
        let mut conserved = true;
        for _ in 0..opts.instances.max(1) {
            let x = ImageTensor::random_normal(1, side, side, &mut rng);
            let trace = model.trace(&x, exec)?;
            conserved &= trace.latents.iter().map(ImageTensor::len).sum::<usize>() == x.len();
            worst = worst.max(model.inverse_with(&trace.latents, exec)?.max_abs_diff(&x));
        }
        Ok((worst, conserved))
    };
    match run() {
        Ok((worst, true)) => PropertyResult::check(
            "flow_bijectivity",
            worst,
            FLOW_RECON_TOL,
            format!("K=2 L=2 on 1x{side}x{side}"),
        ),
        Ok((worst, false)) => PropertyResult {
            name: "flow_bijectivity".into(),
            passed: false,
            max_error: worst,
            tolerance: FLOW_RECON_TOL,
            detail: "latent dimensions do not add up to the input".into(),
        },
        Err(e) => PropertyResult::failed("flow_bijectivity", e.to_string()),
    }
}

/// Every property, in a fixed order.
pub fn run_all(opts: &VerifyOptions, exec: &Exec) -> Vec<PropertyResult> {
    vec![
        check_round_trip(opts, exec),
        check_dense_solve(opts, exec),
        check_recursions(opts, exec),
        check_input_grad(opts, exec),
        check_weight_grad(opts, exec),
        check_unit_determinant(opts),
        check_flow_bijectivity(opts, exec),
    ]
}
