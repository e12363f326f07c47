//! Slow, obviously-correct baselines: the dense operator matrix of a masked
//! convolution, textbook triangular and Gaussian-elimination solvers, dense
//! inverses and determinants, and central finite differences.
//!
//! Nothing here is used on training paths; tests and the `verify` command use
//! these routines as ground truth for the wavefront implementations.

use crate::invconv::MaskedKernel;
use crate::tensor::ImageTensor;
use crate::{Error, Result};

pub const OPERATOR_SIZE_GUARD: usize = 4096;
pub const ELIMINATION_SIZE_GUARD: usize = 2048;
pub const INVERSE_SIZE_GUARD: usize = 1024;
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Square row-major matrix over raster-ordered (pixel-major, channel-minor)
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    n: usize,
    entries: Vec<f64>,
}

impl DenseOperator {
    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self { n, entries }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("matrix must be square".into()));
        }
        Ok(Self {
            n,
            entries: rows.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.n + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.entries[row * self.n..(row + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        (0..self.n)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut entries = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                entries[c * n + r] = self.entries[r * n + c];
            }
        }
        Self { n, entries }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut entries = vec![0.0; n * n];
        for r in 0..n {
            for t in 0..n {
                let a = self.entries[r * n + t];
                if a == 0.0 {
                    continue;
                }
                for c in 0..n {
                    entries[r * n + c] += a * other.entries[t * n + c];
                }
            }
        }
        Self { n, entries }
    }

    /// Exact structural scan: ones on the diagonal, zeros above it.
    pub fn is_unit_lower_triangular(&self) -> bool {
        (0..self.n).all(|r| {
            self.get(r, r) == 1.0 && (r + 1..self.n).all(|c| self.get(r, c) == 0.0)
        })
    }
}

/// Dense `M` with `conv_forward(x, W) = M · raster(x)`. Row `(p, c)` holds
/// `W[c, c', (k,k) − p + q]` at column `(q, c')` for every `q` in the window
/// ending at `p`, including `p` itself.
pub fn build_operator_matrix(w: &MaskedKernel, height: usize, width: usize) -> Result<DenseOperator> {
    let c = w.channels();
    let k = w.k();
    let n = c * height * width;
    if n > OPERATOR_SIZE_GUARD {
        return Err(Error::SizeGuard {
            n,
            limit: OPERATOR_SIZE_GUARD,
        });
    }
    let idx = |row: usize, col: usize, ch: usize| (row * width + col) * c + ch;
    let mut entries = vec![0.0; n * n];
    for r in 0..height {
        for col in 0..width {
            for co in 0..c {
                let out = idx(r, col, co);
                for i in 0..k {
                    for j in 0..k {
                        let (dr, dc) = (k - 1 - i, k - 1 - j);
                        if dr > r || dc > col {
                            continue;
                        }
                        for ci in 0..c {
                            entries[out * n + idx(r - dr, col - dc, ci)] = w.w(co, ci, i, j);
                        }
                    }
                }
            }
        }
    }
    Ok(DenseOperator { n, entries })
}

/// Forward substitution for a unit lower triangular system.
pub fn solve_unit_lower(m: &DenseOperator, y: &[f64]) -> Result<Vec<f64>> {
    check_rhs(m, y)?;
    for r in 0..m.n {
        if m.get(r, r) != 1.0 {
            return Err(Error::NotUnitLowerTriangular {
                row: r,
                col: r,
                value: m.get(r, r),
            });
        }
    }
    let mut x = vec![0.0; m.n];
    for r in 0..m.n {
        let row = m.row(r);
        let s: f64 = row[..r].iter().zip(&x[..r]).map(|(a, b)| a * b).sum();
        x[r] = y[r] - s;
    }
    Ok(x)
}

fn check_rhs(m: &DenseOperator, y: &[f64]) -> Result<()> {
    if y.len() != m.n {
        return Err(Error::Shape(format!(
            "right-hand side has {} entries, matrix is {}x{}",
            y.len(),
            m.n,
            m.n
        )));
    }
    Ok(())
}

/// Full elimination with partial pivoting: the cubic-time baseline.
pub fn gaussian_elimination_solve(m: &DenseOperator, y: &[f64]) -> Result<Vec<f64>> {
    check_rhs(m, y)?;
    let n = m.n;
    if n > ELIMINATION_SIZE_GUARD {
        return Err(Error::SizeGuard {
            n,
            limit: ELIMINATION_SIZE_GUARD,
        });
    }
    let mut a = m.entries.clone();
    let mut b = y.to_vec();
    for col in 0..n {
        let pivot_row = pivot(&a, n, col);
        let p = a[pivot_row * n + col];
        if p == 0.0 || !p.is_finite() {
            return Err(Error::Singular { col, pivot: p });
        }
        if pivot_row != col {
            swap_rows(&mut a, n, col, pivot_row);
            b.swap(col, pivot_row);
        }
        let (head, tail) = a.split_at_mut((col + 1) * n);
        let prow = &head[col * n..];
        for (off, row) in tail.chunks_mut(n).enumerate() {
            // no zero-multiplier shortcut: this is the dense baseline
            let f = row[col] / p;
            for (dst, src) in row[col..].iter_mut().zip(&prow[col..]) {
                *dst -= f * src;
            }
            b[col + 1 + off] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let row = &a[r * n..(r + 1) * n];
        let s: f64 = row[r + 1..].iter().zip(&x[r + 1..]).map(|(a, b)| a * b).sum();
        x[r] = (b[r] - s) / row[r];
    }
    Ok(x)
}

fn pivot(a: &[f64], n: usize, col: usize) -> usize {
    let mut best = col;
    let mut best_val = a[col * n + col].abs();
    for r in col + 1..n {
        let v = a[r * n + col].abs();
        // strict comparison keeps the natural order on ties
        if v > best_val {
            best = r;
            best_val = v;
        }
    }
    best
}

fn swap_rows(a: &mut [f64], n: usize, r1: usize, r2: usize) {
    for c in 0..n {
        a.swap(r1 * n + c, r2 * n + c);
    }
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn dense_inverse(m: &DenseOperator) -> Result<DenseOperator> {
    let n = m.n;
    if n > INVERSE_SIZE_GUARD {
        return Err(Error::SizeGuard {
            n,
            limit: INVERSE_SIZE_GUARD,
        });
    }
    let mut a = m.entries.clone();
    let mut inv = DenseOperator::identity(n).entries;
    for col in 0..n {
        let pr = pivot(&a, n, col);
        let p = a[pr * n + col];
        if p == 0.0 || !p.is_finite() {
            return Err(Error::Singular { col, pivot: p });
        }
        if pr != col {
            swap_rows(&mut a, n, col, pr);
            swap_rows(&mut inv, n, col, pr);
        }
        for c in 0..n {
            a[col * n + c] /= p;
            inv[col * n + c] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f == 0.0 {
                continue;
            }
            for c in 0..n {
                a[r * n + c] -= f * a[col * n + c];
                inv[r * n + c] -= f * inv[col * n + c];
            }
        }
    }
    Ok(DenseOperator { n, entries: inv })
}

/// Determinant from an LU factorisation with partial pivoting. On a unit lower
/// triangular matrix whose off-diagonal entries are below one in magnitude no
/// row is swapped and every pivot is exactly one, so the result is exactly 1.
pub fn dense_det(m: &DenseOperator) -> Result<f64> {
    let (sign, log_abs) = lu_log_det(m)?;
    Ok(sign * log_abs.exp())
}

/// `(sign, log |det|)`; a singular matrix yields `(0, −∞)`.
pub fn lu_log_det(m: &DenseOperator) -> Result<(f64, f64)> {
    let n = m.n;
    if n > ELIMINATION_SIZE_GUARD {
        return Err(Error::SizeGuard {
            n,
            limit: ELIMINATION_SIZE_GUARD,
        });
    }
    let mut a = m.entries.clone();
    let mut sign = 1.0;
    let mut log_abs = 0.0;
    for col in 0..n {
        let pr = pivot(&a, n, col);
        let p = a[pr * n + col];
        if p == 0.0 {
            return Ok((0.0, f64::NEG_INFINITY));
        }
        if pr != col {
            swap_rows(&mut a, n, col, pr);
            sign = -sign;
        }
        if p < 0.0 {
            sign = -sign;
        }
        log_abs += p.abs().ln();
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
        }
    }
    Ok((sign, log_abs))
}

/// Central differences `(f(θ + h e_i) − f(θ − h e_i)) / 2h` for every
/// coordinate not flagged in `skip`; skipped coordinates report zero.
pub fn finite_diff_grad<F>(mut f: F, point: &[f64], h: f64, skip: Option<&[bool]>) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("finite-difference step {h}")));
    }
    let mut theta = point.to_vec();
    let mut grad = vec![0.0; point.len()];
    for i in 0..point.len() {
        if skip.is_some_and(|s| s[i]) {
            continue;
        }
        theta[i] = point[i] + h;
        let plus = f(&theta);
        theta[i] = point[i] - h;
        let minus = f(&theta);
        theta[i] = point[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {i}")));
        }
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Dense Jacobian of a vector function by central differences; entry
/// `(r, c)` is `∂f_r/∂θ_c`.
pub fn finite_diff_jacobian<F>(mut f: F, point: &[f64], h: f64) -> Result<DenseOperator>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = point.len();
    let mut theta = point.to_vec();
    let mut entries = vec![0.0; n * n];
    for c in 0..n {
        theta[c] = point[c] + h;
        let plus = f(&theta);
        theta[c] = point[c] - h;
        let minus = f(&theta);
        theta[c] = point[c];
        if plus.len() != n || minus.len() != n {
            return Err(Error::Shape("Jacobian must be square".into()));
        }
        for r in 0..n {
            let d = (plus[r] - minus[r]) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::NonFinite(format!("Jacobian entry ({r}, {c})")));
            }
            entries[r * n + c] = d;
        }
    }
    Ok(DenseOperator { n, entries })
}

/// Norm-wise relative error `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Dense solve of `M x = y` for a whole image, returned as a tensor.
pub fn dense_solve_image(w: &MaskedKernel, y: &ImageTensor) -> Result<ImageTensor> {
    let m = build_operator_matrix(w, y.height(), y.width())?;
    let x = solve_unit_lower(&m, &y.to_raster())?;
    ImageTensor::from_raster(y.channels(), y.height(), y.width(), &x)
}
