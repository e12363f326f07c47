//! Ordinary stride-1 cross-correlation with symmetric zero padding, and its
//! backward pass: the weight gradient correlates `∂L/∂y` with the input, the
//! input gradient convolves `∂L/∂y` with the 180°-rotated kernel.

use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// Geometry of a `(c_out, c_in, k, k)` convolution padded by `pad` on every side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StdConv {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StdConvGrads {
    pub grad_x: ImageTensor,
    pub grad_w: Vec<f64>,
    pub grad_b: Vec<f64>,
}

impl StdConv {
    /// Odd `k` with "same" padding.
    pub fn same(c_out: usize, c_in: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "same padding needs an odd kernel");
        Self {
            c_out,
            c_in,
            k,
            pad: k / 2,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        if ph < self.k || pw < self.k {
            return Err(Error::Shape(format!(
                "kernel {} larger than padded input {ph}x{pw}",
                self.k
            )));
        }
        Ok((ph - self.k + 1, pw - self.k + 1))
    }

    fn check(&self, x: &ImageTensor, weight: &[f64], bias: Option<&[f64]>) -> Result<()> {
        if x.channels() != self.c_in {
            return Err(Error::Shape(format!(
                "conv input has {} channels, expected {}",
                x.channels(),
                self.c_in
            )));
        }
        if weight.len() != self.weight_len() {
            return Err(Error::Shape(format!(
                "conv weight has {} entries, expected {}",
                weight.len(),
                self.weight_len()
            )));
        }
        if let Some(b) = bias {
            if b.len() != self.c_out {
                return Err(Error::Shape(format!(
                    "conv bias has {} entries, expected {}",
                    b.len(),
                    self.c_out
                )));
            }
        }
        Ok(())
    }

    /// For kernel row offset `i` and output row `r`, the input row is
    /// `r + i − pad`; returns the output range where it is in bounds.
    #[inline]
    fn valid(out_len: usize, in_len: usize, offset: usize, pad: usize) -> (usize, usize) {
        // r + offset − pad ∈ [0, in_len)
        let lo = pad.saturating_sub(offset);
        let hi = (in_len + pad).saturating_sub(offset).min(out_len);
        (lo, hi.max(lo))
    }

    pub fn forward(&self, x: &ImageTensor, weight: &[f64], bias: Option<&[f64]>) -> Result<ImageTensor> {
        self.check(x, weight, bias)?;
        let (h, w) = (x.height(), x.width());
        let (oh, ow) = self.output_extent(h, w)?;
        let k = self.k;
        let mut out = ImageTensor::zeros(self.c_out, oh, ow);
        for co in 0..self.c_out {
            let plane = out.channel_mut(co);
            if let Some(b) = bias {
                plane.iter_mut().for_each(|v| *v = b[co]);
            }
            for ci in 0..self.c_in {
                let src = x.channel(ci);
                for i in 0..k {
                    let (r0, r1) = Self::valid(oh, h, i, self.pad);
                    for j in 0..k {
                        let wt = weight[((co * self.c_in + ci) * k + i) * k + j];
                        if wt == 0.0 {
                            continue;
                        }
                        let (c0, c1) = Self::valid(ow, w, j, self.pad);
                        if c0 >= c1 {
                            continue;
                        }
                        for r in r0..r1 {
                            let sr = r + i - self.pad;
                            let sc0 = c0 + j - self.pad;
                            let dst = &mut plane[r * ow + c0..r * ow + c1];
                            let s = &src[sr * w + sc0..sr * w + sc0 + (c1 - c0)];
                            for (o, v) in dst.iter_mut().zip(s) {
                                *o += wt * v;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gradients of a loss with respect to input, weights and bias.
    pub fn backward(&self, grad_y: &ImageTensor, x: &ImageTensor, weight: &[f64]) -> Result<StdConvGrads> {
        self.check(x, weight, None)?;
        let (h, w) = (x.height(), x.width());
        let (oh, ow) = self.output_extent(h, w)?;
        if grad_y.shape() != (self.c_out, oh, ow) {
            return Err(Error::Shape(format!(
                "grad_y has shape {:?}, expected {:?}",
                grad_y.shape(),
                (self.c_out, oh, ow)
            )));
        }
        let k = self.k;
        let mut grad_x = ImageTensor::zeros(self.c_in, h, w);
        let mut grad_w = vec![0.0; self.weight_len()];
        let grad_b: Vec<f64> = (0..self.c_out).map(|co| grad_y.channel(co).iter().sum()).collect();
        for co in 0..self.c_out {
            let gy = grad_y.channel(co);
            for ci in 0..self.c_in {
                let src = x.channel(ci);
                for i in 0..k {
                    let (r0, r1) = Self::valid(oh, h, i, self.pad);
                    for j in 0..k {
                        let (c0, c1) = Self::valid(ow, w, j, self.pad);
                        if c0 >= c1 {
                            continue;
                        }
                        let widx = ((co * self.c_in + ci) * k + i) * k + j;
                        let wt = weight[widx];
                        let mut acc = 0.0;
                        let gx = grad_x.channel_mut(ci);
                        for r in r0..r1 {
                            let sr = r + i - self.pad;
                            let sc0 = c0 + j - self.pad;
                            let g = &gy[r * ow + c0..r * ow + c1];
                            let s = &src[sr * w + sc0..sr * w + sc0 + (c1 - c0)];
                            let dx = &mut gx[sr * w + sc0..sr * w + sc0 + (c1 - c0)];
                            for ((gv, sv), dv) in g.iter().zip(s).zip(dx.iter_mut()) {
                                acc += gv * sv;
                                *dv += gv * wt;
                            }
                        }
                        grad_w[widx] += acc;
                    }
                }
            }
        }
        Ok(StdConvGrads {
            grad_x,
            grad_w,
            grad_b,
        })
    }
}

/// Backward pass of a bias-free same-padded convolution with an odd kernel.
pub fn std_conv_backward(
    grad_y: &ImageTensor,
    x: &ImageTensor,
    weight: &[f64],
    c_out: usize,
    k: usize,
) -> Result<(ImageTensor, Vec<f64>)> {
    if k.is_multiple_of(2) {
        return Err(Error::Shape("same padding needs an odd kernel".into()));
    }
    let conv = StdConv::same(c_out, x.channels(), k);
    let g = conv.backward(grad_y, x, weight)?;
    Ok((g.grad_x, g.grad_w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = ImageTensor::random_normal(2, 4, 5, &mut rng);
        let w: Vec<f64> = (0..3 * 2 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (gx, gw) = std_conv_backward(&ImageTensor::zeros(3, 4, 5), &x, &w, 3, 3).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_kernel() {
        let x = ImageTensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let gy = ImageTensor::from_rows(&[&[0.5, -1.0], &[2.0, 0.25]]).unwrap();
        let (gx, gw) = std_conv_backward(&gy, &x, &[3.0], 1, 1).unwrap();
        assert_eq!(gx.data(), &[1.5, -3.0, 6.0, 0.75]);
        assert_eq!(gw, vec![0.5 - 2.0 + 6.0 + 1.0]);
    }

    #[test]
    fn forward_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = ImageTensor::random_normal(2, 5, 4, &mut rng);
        let conv = StdConv::same(3, 2, 3);
        let w: Vec<f64> = (0..conv.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = vec![0.1, -0.2, 0.3];
        let y = conv.forward(&x, &w, Some(&b)).unwrap();
        for co in 0..3 {
            for r in 0..5 {
                for c in 0..4 {
                    let mut acc = b[co];
                    for ci in 0..2 {
                        for i in 0..3 {
                            for j in 0..3 {
                                let (sr, sc) = (r as isize + i as isize - 1, c as isize + j as isize - 1);
                                if sr >= 0 && sc >= 0 && sr < 5 && sc < 4 {
                                    acc += w[((co * 2 + ci) * 3 + i) * 3 + j] * x.at(ci, sr as usize, sc as usize);
                                }
                            }
                        }
                    }
                    assert!((y.at(co, r, c) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let conv = StdConv::same(1, 2, 3);
        let x = ImageTensor::zeros(1, 3, 3);
        assert!(conv.forward(&x, &[0.0; 18], None).is_err());
        let x = ImageTensor::zeros(2, 3, 3);
        assert!(conv.forward(&x, &[0.0; 17], None).is_err());
        assert!(conv.backward(&ImageTensor::zeros(1, 2, 2), &x, &[0.0; 18]).is_err());
    }
}
