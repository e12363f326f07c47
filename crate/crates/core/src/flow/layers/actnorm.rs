//! Per-channel affine normalisation, `y = exp(log_s) ⊙ x + b`.

use crate::tensor::ImageTensor;
use crate::{Error, Result};

fn check(x: &ImageTensor, log_scale: &[f64], bias: &[f64]) -> Result<()> {
    if log_scale.len() != x.channels() || bias.len() != x.channels() {
        return Err(Error::Shape(format!(
            "actnorm parameters have {}/{} entries for {} channels",
            log_scale.len(),
            bias.len(),
            x.channels()
        )));
    }
    if log_scale.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("actnorm scale must be positive and finite".into()));
    }
    Ok(())
}

/// Log-scales for explicit scales; rejects non-positive entries.
pub fn actnorm_log_scale(scale: &[f64]) -> Result<Vec<f64>> {
    scale
        .iter()
        .map(|&s| {
            if s > 0.0 && s.is_finite() {
                Ok(s.ln())
            } else {
                Err(Error::InvalidParameter(format!("actnorm scale {s} is not positive")))
            }
        })
        .collect()
}

pub fn actnorm_forward(x: &ImageTensor, log_scale: &[f64], bias: &[f64]) -> Result<(ImageTensor, f64)> {
    check(x, log_scale, bias)?;
    let mut y = x.clone();
    for c in 0..x.channels() {
        let (s, b) = (log_scale[c].exp(), bias[c]);
        y.channel_mut(c).iter_mut().for_each(|v| *v = s * *v + b);
    }
    let hw = (x.height() * x.width()) as f64;
    Ok((y, hw * log_scale.iter().sum::<f64>()))
}

pub fn actnorm_inverse(y: &ImageTensor, log_scale: &[f64], bias: &[f64]) -> Result<ImageTensor> {
    check(y, log_scale, bias)?;
    let mut x = y.clone();
    for c in 0..y.channels() {
        let (inv, b) = ((-log_scale[c]).exp(), bias[c]);
        x.channel_mut(c).iter_mut().for_each(|v| *v = (*v - b) * inv);
    }
    Ok(x)
}

/// Back-propagates `grad_y` for the objective `L(y) − logdet`, accumulating
/// parameter gradients and returning `∂/∂x`.
pub fn actnorm_backward(
    x: &ImageTensor,
    grad_y: &ImageTensor,
    log_scale: &[f64],
    grad_log_scale: &mut [f64],
    grad_bias: &mut [f64],
) -> Result<ImageTensor> {
    check(x, log_scale, grad_log_scale)?;
    x.ensure_same_shape(grad_y, "actnorm_backward")?;
    let hw = (x.height() * x.width()) as f64;
    let mut grad_x = grad_y.clone();
    for c in 0..x.channels() {
        let s = log_scale[c].exp();
        let (g, xv) = (grad_y.channel(c), x.channel(c));
        let gx: f64 = g.iter().zip(xv).map(|(a, b)| a * b).sum();
        grad_log_scale[c] += s * gx - hw;
        grad_bias[c] += g.iter().sum::<f64>();
        grad_x.channel_mut(c).iter_mut().for_each(|v| *v *= s);
    }
    Ok(grad_x)
}

/// Parameters that give every channel of `batch` zero mean and unit variance.
pub fn actnorm_data_init(batch: &[ImageTensor]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = batch
        .first()
        .ok_or_else(|| Error::InvalidParameter("actnorm initialisation needs a non-empty batch".into()))?;
    let c = first.channels();
    let mut log_scale = vec![0.0; c];
    let mut bias = vec![0.0; c];
    for ch in 0..c {
        let mut n = 0.0;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for x in batch {
            for &v in x.channel(ch) {
                n += 1.0;
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / n;
        let var = (sq / n - mean * mean).max(0.0);
        let s = 1.0 / (var.sqrt() + 1e-6);
        log_scale[ch] = s.ln();
        bias[ch] = -mean * s;
    }
    Ok((log_scale, bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_scale_two() {
        let x = ImageTensor::from_vec(1, 4, 4, (0..16).map(f64::from).collect()).unwrap();
        let (y, ld) = actnorm_forward(&x, &[0.0], &[0.0]).unwrap();
        assert_eq!(y, x);
        assert_eq!(ld, 0.0);
        let ls = actnorm_log_scale(&[2.0]).unwrap();
        let (_, ld) = actnorm_forward(&x, &ls, &[0.0]).unwrap();
        assert!((ld - 16.0 * 2f64.ln()).abs() < 1e-12);
        assert!(actnorm_log_scale(&[0.0]).is_err());
        assert!(actnorm_log_scale(&[-1.0]).is_err());
    }

    #[test]
    fn round_trip_and_data_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch: Vec<_> = (0..4).map(|_| ImageTensor::random_normal(3, 4, 4, &mut rng)).collect();
        let (ls, b) = actnorm_data_init(&batch).unwrap();
        let out: Vec<_> = batch.iter().map(|x| actnorm_forward(x, &ls, &b).unwrap().0).collect();
        for c in 0..3 {
            let vals: Vec<f64> = out.iter().flat_map(|y| y.channel(c).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-4);
        }
        let back = actnorm_inverse(&out[0], &ls, &b).unwrap();
        assert!(back.max_abs_diff(&batch[0]) < 1e-10);
    }
}
