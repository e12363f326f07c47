use crate::exec::Exec;
use crate::schedule::diagonal_rows;
use crate::tensor::ImageTensor;
use crate::{Error, Result};

use super::MaskedKernel;

/// Gradients of a loss through `x = M⁻¹ y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradients {
    /// `∂L/∂y`, shaped like `y`.
    pub grad_input: ImageTensor,
    /// `∂L/∂W` in `(c_out, c_in, k, k)` layout; masked entries are zero.
    pub grad_weights: Vec<f64>,
}

// Below this many multiply-adds a diagonal is swept on the calling thread.
const PARALLEL_DIAGONAL_WORK: usize = 4096;

fn check_kernel(t: &ImageTensor, w: &MaskedKernel, what: &str) -> Result<()> {
    if t.channels() != w.channels() {
        return Err(Error::Shape(format!(
            "{what}: tensor has {} channels, kernel has {}",
            t.channels(),
            w.channels()
        )));
    }
    Ok(())
}

/// `y = M x`: every output pixel reads the `k × k` window ending at it, over
/// all input channels, with zero top-left padding.
pub fn conv_forward(x: &ImageTensor, w: &MaskedKernel) -> Result<ImageTensor> {
    conv_forward_with(x, w, &Exec::serial())
}

pub fn conv_forward_with(x: &ImageTensor, w: &MaskedKernel, exec: &Exec) -> Result<ImageTensor> {
    check_kernel(x, w, "conv_forward")?;
    let (c, h, wd) = x.shape();
    let mut out = vec![0.0; c * h * wd];
    exec.for_each_chunk(&mut out, h * wd, |co, plane| {
        conv_output_channel(x, w, co, plane)
    });
    ImageTensor::from_vec(c, h, wd, out)
}

fn conv_output_channel(x: &ImageTensor, w: &MaskedKernel, co: usize, plane: &mut [f64]) {
    let (c, h, wd) = x.shape();
    let k = w.k();
    for ci in 0..c {
        let src = x.channel(ci);
        for i in 0..k {
            for j in 0..k {
                let wt = w.w(co, ci, i, j);
                if wt == 0.0 {
                    continue;
                }
                let (dr, dc) = (k - 1 - i, k - 1 - j);
                if dr >= h || dc >= wd {
                    continue;
                }
                for r in dr..h {
                    let dst = &mut plane[r * wd + dc..(r + 1) * wd];
                    let s = &src[(r - dr) * wd..(r - dr) * wd + wd - dc];
                    for (o, v) in dst.iter_mut().zip(s) {
                        *o += wt * v;
                    }
                }
            }
        }
    }
}

/// Solves `M x = y` by sweeping anti-diagonals in increasing order.
pub fn inv_conv_solve(y: &ImageTensor, w: &MaskedKernel) -> Result<ImageTensor> {
    inv_conv_solve_with(y, w, &Exec::serial())
}

pub fn inv_conv_solve_with(y: &ImageTensor, w: &MaskedKernel, exec: &Exec) -> Result<ImageTensor> {
    check_kernel(y, w, "inv_conv_solve")?;
    if w.k() == 1 {
        return Ok(y.clone());
    }
    let (c, h, wd) = y.shape();
    let k = w.k();
    let ydata = y.data();
    let plane = h * wd;
    let data = wavefront(y.shape(), k, exec, false, |x, r, col, out| {
        for (co, slot) in out.iter_mut().enumerate() {
            let mut acc = ydata[co * plane + r * wd + col];
            for i in 0..k {
                if r + i < k - 1 {
                    continue;
                }
                let rr = r + i - (k - 1);
                for j in 0..k {
                    if col + j < k - 1 || (i == k - 1 && j == k - 1) {
                        continue;
                    }
                    let cc = col + j - (k - 1);
                    for ci in 0..c {
                        acc -= w.w(co, ci, i, j) * x[ci * plane + rr * wd + cc];
                    }
                }
            }
            *slot = acc;
        }
    });
    ImageTensor::from_vec(c, h, wd, data)
}

/// `u = ∂L/∂y` from `grad_x = ∂L/∂x`: solves `Mᵀ u = grad_x` by sweeping
/// anti-diagonals in decreasing order. Each pixel gathers from the successors
/// whose window contains it.
pub fn input_grad(grad_x: &ImageTensor, w: &MaskedKernel) -> Result<ImageTensor> {
    input_grad_with(grad_x, w, &Exec::serial())
}

pub fn input_grad_with(grad_x: &ImageTensor, w: &MaskedKernel, exec: &Exec) -> Result<ImageTensor> {
    check_kernel(grad_x, w, "input_grad")?;
    if w.k() == 1 {
        return Ok(grad_x.clone());
    }
    let (c, h, wd) = grad_x.shape();
    let k = w.k();
    let g = grad_x.data();
    let plane = h * wd;
    let data = wavefront(grad_x.shape(), k, exec, true, |u, r, col, out| {
        for (ci, slot) in out.iter_mut().enumerate() {
            let mut acc = g[ci * plane + r * wd + col];
            for i in 0..k {
                let rr = r + (k - 1 - i);
                if rr >= h {
                    continue;
                }
                for j in 0..k {
                    let cc = col + (k - 1 - j);
                    if cc >= wd || (i == k - 1 && j == k - 1) {
                        continue;
                    }
                    for co in 0..c {
                        acc -= w.w(co, ci, i, j) * u[co * plane + rr * wd + cc];
                    }
                }
            }
            *slot = acc;
        }
    });
    ImageTensor::from_vec(c, h, wd, data)
}

/// `∂L/∂W[co, ci, a] = −Σ_p u[co, p] · x[ci, p − (k, k) + a]` for every
/// unmasked index `a`; masked entries are zero.
pub fn weight_grad(u: &ImageTensor, x: &ImageTensor, w: &MaskedKernel) -> Result<Vec<f64>> {
    weight_grad_with(u, x, w, &Exec::serial())
}

pub fn weight_grad_with(
    u: &ImageTensor,
    x: &ImageTensor,
    w: &MaskedKernel,
    exec: &Exec,
) -> Result<Vec<f64>> {
    check_kernel(u, w, "weight_grad")?;
    u.ensure_same_shape(x, "weight_grad")?;
    let (c, h, wd) = u.shape();
    let k = w.k();
    Ok(exec.map(c * c * k * k, |idx| {
        let (j, rest) = (idx % k, idx / k);
        let (i, rest) = (rest % k, rest / k);
        let (ci, co) = (rest % c, rest / c);
        if i == k - 1 && j == k - 1 {
            return 0.0;
        }
        let (dr, dc) = (k - 1 - i, k - 1 - j);
        if dr >= h || dc >= wd {
            return 0.0;
        }
        let (uc, xc) = (u.channel(co), x.channel(ci));
        let mut acc = 0.0;
        for r in dr..h {
            let ur = &plane_row(uc, r, wd)[dc..];
            let xr = &plane_row(xc, r - dr, wd)[..wd - dc];
            for (a, b) in ur.iter().zip(xr) {
                acc += a * b;
            }
        }
        -acc
    }))
}

#[inline]
fn plane_row(plane: &[f64], r: usize, wd: usize) -> &[f64] {
    &plane[r * wd..(r + 1) * wd]
}

/// Input and weight gradients of a loss through `x = inv_conv_solve(y, W)`.
pub fn inv_conv_backward(
    grad_x: &ImageTensor,
    x: &ImageTensor,
    w: &MaskedKernel,
    exec: &Exec,
) -> Result<ConvGradients> {
    grad_x.ensure_same_shape(x, "inv_conv_backward")?;
    let grad_input = input_grad_with(grad_x, w, exec)?;
    let grad_weights = weight_grad_with(&grad_input, x, w, exec)?;
    Ok(ConvGradients {
        grad_input,
        grad_weights,
    })
}

/// Drives a per-pixel update over the anti-diagonals, forward or reversed.
/// `pixel(state, r, col, out)` receives the buffer solved so far and writes
/// the values of all channels at zero-based `(r, col)` into `out`. Pixels on
/// one diagonal only read earlier diagonals, so they run concurrently and the
/// writes are applied after the diagonal completes.
fn wavefront<F>(
    (c, h, wd): (usize, usize, usize),
    k: usize,
    exec: &Exec,
    reverse: bool,
    pixel: F,
) -> Vec<f64>
where
    F: Fn(&[f64], usize, usize, &mut [f64]) + Send + Sync,
{
    let plane = h * wd;
    let mut state = vec![0.0; c * plane];
    let mut tmp = vec![0.0; c];
    let mut buf = Vec::new();
    let diagonals: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((2..=h + wd).rev())
    } else {
        Box::new(2..=h + wd)
    };
    for d in diagonals {
        let rows = diagonal_rows(d, h, wd);
        let lo = *rows.start();
        let len = rows.end() + 1 - lo;
        if !exec.is_parallel() || len * c * c * k * k < PARALLEL_DIAGONAL_WORK {
            for row in rows {
                let (r, col) = (row - 1, d - row - 1);
                pixel(&state, r, col, &mut tmp);
                for (ch, v) in tmp.iter().enumerate() {
                    state[ch * plane + r * wd + col] = *v;
                }
            }
        } else {
            buf.clear();
            buf.resize(len * c, 0.0);
            let snapshot = &state;
            exec.for_each_chunk(&mut buf, c, |idx, out| {
                let row = lo + idx;
                pixel(snapshot, row - 1, d - row - 1, out)
            });
            for (idx, vals) in buf.chunks(c).enumerate() {
                let row = lo + idx;
                let (r, col) = (row - 1, d - row - 1);
                for (ch, v) in vals.iter().enumerate() {
                    state[ch * plane + r * wd + col] = *v;
                }
            }
        }
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::Pixel;

    fn running_kernel() -> MaskedKernel {
        MaskedKernel::from_rows(&[&[0.1, 0.2], &[0.3, 1.0]]).unwrap()
    }

    fn running_x() -> ImageTensor {
        ImageTensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = ImageTensor::from_rows(&[&[1.5, -2.0, 0.25], &[3.0, 4.0, 5.0]]).unwrap();
        let id = MaskedKernel::identity(1, 3);
        assert_eq!(conv_forward(&x, &id).unwrap(), x);
        assert_eq!(inv_conv_solve(&x, &id).unwrap(), x);
        assert_eq!(input_grad(&x, &id).unwrap(), x);
    }

    #[test]
    fn running_example_forward_and_inverse() {
        let y = conv_forward(&running_x(), &running_kernel()).unwrap();
        // hand expansion: y12 = 2 + 0.3·1, y21 = 3 + 0.2·1, y22 = 4 + 0.1 + 0.4 + 0.9
        assert_close(y.data(), &[1.0, 2.3, 3.2, 5.4], 1e-12);
        let x = inv_conv_solve(&y, &running_kernel()).unwrap();
        assert_close(x.data(), running_x().data(), 1e-12);
    }

    #[test]
    fn running_example_input_grad() {
        let mut g = ImageTensor::zeros(1, 2, 2);
        g.set(0, Pixel::new(1, 2), 1.0);
        let u = input_grad(&g, &running_kernel()).unwrap();
        assert_close(u.data(), &[-0.3, 1.0, 0.0, 0.0], 1e-12);
    }

    #[test]
    fn running_example_weight_grad() {
        let mut g = ImageTensor::zeros(1, 2, 2);
        g.set(0, Pixel::new(1, 2), 1.0);
        let u = input_grad(&g, &running_kernel()).unwrap();
        let gw = weight_grad(&u, &running_x(), &running_kernel()).unwrap();
        // ∂x12/∂W21 = −y11 = −1; x12 is independent of W11, W12.
        assert_close(&gw, &[0.0, 0.0, -1.0, 0.0], 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_weight_grad() {
        let u = ImageTensor::zeros(1, 3, 3);
        let x = ImageTensor::from_vec(1, 3, 3, (0..9).map(f64::from).collect()).unwrap();
        let gw = weight_grad(&u, &x, &MaskedKernel::identity(1, 2)).unwrap();
        assert!(gw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn k1_is_identity_with_empty_weight_gradient() {
        let x = ImageTensor::from_vec(2, 2, 2, (0..8).map(f64::from).collect()).unwrap();
        let id = MaskedKernel::identity(2, 1);
        assert_eq!(inv_conv_solve(&x, &id).unwrap(), x);
        let grads = inv_conv_backward(&x, &x, &id, &Exec::serial()).unwrap();
        assert_eq!(grads.grad_input, x);
        assert!(grads.grad_weights.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = ImageTensor::zeros(2, 3, 3);
        let w = MaskedKernel::identity(1, 2);
        assert!(conv_forward(&x, &w).is_err());
        assert!(inv_conv_solve(&x, &w).is_err());
        assert!(input_grad(&x, &w).is_err());
        assert!(weight_grad(&x, &ImageTensor::zeros(1, 3, 3), &w).is_err());
    }

    #[test]
    fn kernel_larger_than_image() {
        let y = ImageTensor::from_rows(&[&[1.0, 2.0]]).unwrap();
        let mut w = MaskedKernel::identity(1, 5);
        w = w.with_weight(0, 0, 4, 3, 0.5).unwrap();
        let x = inv_conv_solve(&y, &w).unwrap();
        assert_close(x.data(), &[1.0, 1.5], 1e-12);
        assert_close(conv_forward(&x, &w).unwrap().data(), y.data(), 1e-12);
    }
}
