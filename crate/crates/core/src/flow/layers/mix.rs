//! Invertible 1×1 convolution: the same `C×C` matrix mixes channels at every pixel.

use nalgebra::DMatrix;

use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// Smallest `|det|` accepted for the mixing matrix.
pub const MIN_ABS_DET: f64 = 1e-8;

fn matrix(weight: &[f64], c: usize) -> Result<DMatrix<f64>> {
    if weight.len() != c * c {
        return Err(Error::Shape(format!(
            "1x1 weight has {} entries for {c} channels",
            weight.len()
        )));
    }
    Ok(DMatrix::from_row_slice(c, c, weight))
}

fn checked_lu(m: &DMatrix<f64>) -> Result<f64> {
    let det = m.clone().lu().determinant();
    if !det.is_finite() || det.abs() <= MIN_ABS_DET {
        return Err(Error::InvalidParameter(format!("1x1 matrix is near-singular (det = {det:e})")));
    }
    Ok(det)
}

fn apply(x: &ImageTensor, m: &DMatrix<f64>) -> ImageTensor {
    let (c, h, w) = x.shape();
    let plane = h * w;
    let mut y = ImageTensor::zeros(c, h, w);
    let (src, dst) = (x.data(), y.data_mut());
    for co in 0..c {
        let out = &mut dst[co * plane..(co + 1) * plane];
        for ci in 0..c {
            let a = m[(co, ci)];
            if a == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&src[ci * plane..(ci + 1) * plane]) {
                *o += a * v;
            }
        }
    }
    y
}

/// `log|det W|` of a row-major `C×C` matrix.
pub fn inv1x1_log_abs_det(weight: &[f64], c: usize) -> Result<f64> {
    Ok(checked_lu(&matrix(weight, c)?)?.abs().ln())
}

pub fn inv1x1_forward(x: &ImageTensor, weight: &[f64]) -> Result<(ImageTensor, f64)> {
    let m = matrix(weight, x.channels())?;
    let det = checked_lu(&m)?;
    let hw = (x.height() * x.width()) as f64;
    Ok((apply(x, &m), hw * det.abs().ln()))
}

pub fn inv1x1_inverse(y: &ImageTensor, weight: &[f64]) -> Result<ImageTensor> {
    let m = matrix(weight, y.channels())?;
    checked_lu(&m)?;
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("1x1 matrix is singular".into()))?;
    Ok(apply(y, &inv))
}

/// Back-propagates `grad_y` for `L(y) − logdet`.
pub fn inv1x1_backward(
    x: &ImageTensor,
    grad_y: &ImageTensor,
    weight: &[f64],
    grad_weight: &mut [f64],
) -> Result<ImageTensor> {
    let c = x.channels();
    x.ensure_same_shape(grad_y, "inv1x1_backward")?;
    let m = matrix(weight, c)?;
    checked_lu(&m)?;
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("1x1 matrix is singular".into()))?;
    let hw = (x.height() * x.width()) as f64;
    for co in 0..c {
        let g = grad_y.channel(co);
        for ci in 0..c {
            let gx: f64 = g.iter().zip(x.channel(ci)).map(|(a, b)| a * b).sum();
            // d log|det W| / dW = W^{-T}
            grad_weight[co * c + ci] += gx - hw * inv[(ci, co)];
        }
    }
    Ok(apply(grad_y, &m.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = ImageTensor::random_normal(3, 2, 2, &mut rng);
        let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let (y, ld) = inv1x1_forward(&x, &id).unwrap();
        assert_eq!((y, ld), (x.clone(), 0.0));
        let perm = [0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let (y, ld) = inv1x1_forward(&x, &perm).unwrap();
        assert_eq!(ld, 0.0);
        assert_eq!(y.channel(0), x.channel(1));
        assert_eq!(y.channel(2), x.channel(0));
        assert_eq!(inv1x1_inverse(&y, &perm).unwrap(), x);
    }

    #[test]
    fn singular_rejected() {
        let x = ImageTensor::zeros(2, 1, 1);
        assert!(inv1x1_forward(&x, &[1.0, 2.0, 2.0, 4.0]).is_err());
    }
}
