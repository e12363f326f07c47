//! Direct recursive evaluation of the inverse's Jacobians.
//!
//! Both recursions follow from differentiating `x_q = y_q − Σ_{r∈Δ(q)} W_{(k,k)−q+r} x_r`
//! and are evaluated by dynamic programming over one raster pass, so every
//! entry costs `O(k²)` once its predecessors are known. They are slow
//! cross-checks for the wavefront gradients, single-channel only.

use std::collections::HashMap;

use crate::schedule::{delta_set, pixel_leq, Pixel};
use crate::tensor::ImageTensor;
use crate::{Error, Result};

use super::MaskedKernel;

fn single_channel(w: &MaskedKernel) -> Result<()> {
    if w.channels() != 1 {
        return Err(Error::Shape(format!(
            "reference recursions are single-channel, kernel has {} channels",
            w.channels()
        )));
    }
    Ok(())
}

/// `W_{(k,k) − q + r}` for `r ∈ Δ(q)`.
fn window_weight(w: &MaskedKernel, q: Pixel, r: Pixel) -> f64 {
    let k = w.k();
    w.get(0, 0, (k + r.row - q.row, k + r.col - q.col))
}

/// Memoised `∂x_q/∂y_p` for `x = M⁻¹ y`.
#[derive(Debug, Clone)]
pub struct InputJacobianRecursion {
    kernel: MaskedKernel,
    height: usize,
    width: usize,
    columns: HashMap<Pixel, Vec<f64>>,
}

impl InputJacobianRecursion {
    pub fn new(kernel: &MaskedKernel, height: usize, width: usize) -> Result<Self> {
        single_channel(kernel)?;
        Ok(Self {
            kernel: kernel.clone(),
            height,
            width,
            columns: HashMap::new(),
        })
    }

    /// `∂x_q/∂y_p`: 1 on the diagonal, 0 unless `p ≤ q`, otherwise
    /// `−Σ_{r∈Δ(q)} W_{(k,k)−q+r} ∂x_r/∂y_p`.
    pub fn entry(&mut self, q: Pixel, p: Pixel) -> f64 {
        assert!(q.in_bounds(self.height, self.width) && p.in_bounds(self.height, self.width));
        if q == p {
            return 1.0;
        }
        if !pixel_leq(p, q) {
            return 0.0;
        }
        let width = self.width;
        self.column(p)[(q.row - 1) * width + q.col - 1]
    }

    fn column(&mut self, p: Pixel) -> &[f64] {
        let (h, wd, k) = (self.height, self.width, self.kernel.k());
        let kernel = &self.kernel;
        self.columns.entry(p).or_insert_with(|| {
            let mut col = vec![0.0; h * wd];
            for row in p.row..=h {
                for c in p.col..=wd {
                    let q = Pixel::new(row, c);
                    col[(row - 1) * wd + c - 1] = if q == p {
                        1.0
                    } else {
                        -delta_set(q, k, h, wd)
                            .into_iter()
                            .filter(|&r| pixel_leq(p, r))
                            .map(|r| window_weight(kernel, q, r) * col[(r.row - 1) * wd + r.col - 1])
                            .sum::<f64>()
                    };
                }
            }
            col
        })
    }
}

pub fn jacobian_entry_recursive(
    q: Pixel,
    p: Pixel,
    w: &MaskedKernel,
    height: usize,
    width: usize,
) -> Result<f64> {
    Ok(InputJacobianRecursion::new(w, height, width)?.entry(q, p))
}

/// Table of `∂x_q/∂W_a` over every pixel `q` for one kernel index `a`.
#[derive(Debug, Clone)]
pub struct WeightJacobianRecursion {
    width: usize,
    values: Vec<f64>,
}

impl WeightJacobianRecursion {
    /// `x` is the solve's output; `a` is a 1-based kernel index other than `(k, k)`.
    pub fn new(x: &ImageTensor, w: &MaskedKernel, a: (usize, usize)) -> Result<Self> {
        single_channel(w)?;
        if x.channels() != 1 {
            return Err(Error::Shape("reference recursions are single-channel".into()));
        }
        let k = w.k();
        if a.0 < 1 || a.1 < 1 || a.0 > k || a.1 > k {
            return Err(Error::Shape(format!("kernel index {a:?} outside 1..={k}")));
        }
        if a == (k, k) {
            return Err(Error::MaskedIndex(a));
        }
        let (h, wd) = (x.height(), x.width());
        let mut values = vec![0.0; h * wd];
        for row in 1..=h {
            for col in 1..=wd {
                let q = Pixel::new(row, col);
                // source pixel q − (k, k) + a, absent when it falls in the padding
                let direct = match ((row + a.0).checked_sub(k), (col + a.1).checked_sub(k)) {
                    (Some(sr), Some(sc)) if sr >= 1 && sc >= 1 => x.get(0, Pixel::new(sr, sc)),
                    _ => 0.0,
                };
                let recursive: f64 = delta_set(q, k, h, wd)
                    .into_iter()
                    .map(|r| window_weight(w, q, r) * values[(r.row - 1) * wd + r.col - 1])
                    .sum();
                values[(row - 1) * wd + col - 1] = -direct - recursive;
            }
        }
        Ok(Self { width: wd, values })
    }

    pub fn entry(&self, q: Pixel) -> f64 {
        self.values[(q.row - 1) * self.width + q.col - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn weight_jacobian_recursive(
    q: Pixel,
    a: (usize, usize),
    x: &ImageTensor,
    w: &MaskedKernel,
) -> Result<f64> {
    Ok(WeightJacobianRecursion::new(x, w, a)?.entry(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invconv::conv_forward;

    fn running_kernel() -> MaskedKernel {
        MaskedKernel::from_rows(&[&[0.1, 0.2], &[0.3, 1.0]]).unwrap()
    }

    #[test]
    fn diagonal_entry_is_one() {
        let w = MaskedKernel::from_rows(&[&[0.4, -0.2, 0.1], &[0.3, 0.2, 0.5], &[0.1, 0.7, 1.0]])
            .unwrap();
        let v = jacobian_entry_recursive(Pixel::new(3, 3), Pixel::new(3, 3), &w, 4, 4).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn running_example_entry() {
        let v = jacobian_entry_recursive(Pixel::new(1, 2), Pixel::new(1, 1), &running_kernel(), 2, 2)
            .unwrap();
        assert!((v + 0.3).abs() < 1e-15);
        // x11 does not depend on y12
        let z = jacobian_entry_recursive(Pixel::new(1, 1), Pixel::new(1, 2), &running_kernel(), 2, 2)
            .unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn weight_jacobian_examples() {
        let x = ImageTensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let w = running_kernel();
        for a in [(1, 1), (1, 2), (2, 1)] {
            assert_eq!(weight_jacobian_recursive(Pixel::new(1, 1), a, &x, &w).unwrap(), 0.0);
        }
        let v = weight_jacobian_recursive(Pixel::new(1, 2), (2, 1), &x, &w).unwrap();
        assert!((v + 1.0).abs() < 1e-15);
        assert!(matches!(
            weight_jacobian_recursive(Pixel::new(1, 2), (2, 2), &x, &w),
            Err(Error::MaskedIndex((2, 2)))
        ));
        // sanity: the tensor x is a valid solve output for y = Mx
        assert!(conv_forward(&x, &w).is_ok());
    }

    #[test]
    fn multi_channel_is_rejected() {
        let w = MaskedKernel::identity(2, 2);
        assert!(InputJacobianRecursion::new(&w, 2, 2).is_err());
    }
}
