//! Volume-preserving reshapes: squeeze/unsqueeze, channel halving and the
//! Gaussian split.

use std::f64::consts::PI;

use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// `(C,H,W) → (4C,H/2,W/2)`; the 2×2 block `(a,b;c,d)` of channel `c` lands
/// in channels `4c..4c+4` in the order `a,b,c,d`.
pub fn squeeze(x: &ImageTensor) -> Result<ImageTensor> {
    let (c, h, w) = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("squeeze needs even extents, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = ImageTensor::zeros(4 * c, oh, ow);
    for ch in 0..c {
        for di in 0..2 {
            for dj in 0..2 {
                let oc = ch * 4 + di * 2 + dj;
                for i in 0..oh {
                    for j in 0..ow {
                        *y.at_mut(oc, i, j) = x.at(ch, 2 * i + di, 2 * j + dj);
                    }
                }
            }
        }
    }
    Ok(y)
}

pub fn unsqueeze(y: &ImageTensor) -> Result<ImageTensor> {
    let (c4, oh, ow) = y.shape();
    if c4 % 4 != 0 {
        return Err(Error::Shape(format!("unsqueeze needs a multiple of 4 channels, got {c4}")));
    }
    let c = c4 / 4;
    let mut x = ImageTensor::zeros(c, oh * 2, ow * 2);
    for ch in 0..c {
        for di in 0..2 {
            for dj in 0..2 {
                let oc = ch * 4 + di * 2 + dj;
                for i in 0..oh {
                    for j in 0..ow {
                        *x.at_mut(ch, 2 * i + di, 2 * j + dj) = y.at(oc, i, j);
                    }
                }
            }
        }
    }
    Ok(x)
}

/// First `n` channels and the rest.
pub fn split_channels(x: &ImageTensor, n: usize) -> Result<(ImageTensor, ImageTensor)> {
    let (c, h, w) = x.shape();
    if n > c {
        return Err(Error::Shape(format!("cannot take {n} of {c} channels")));
    }
    let cut = n * h * w;
    let a = ImageTensor::from_vec(n, h, w, x.data()[..cut].to_vec())?;
    let b = ImageTensor::from_vec(c - n, h, w, x.data()[cut..].to_vec())?;
    Ok((a, b))
}

pub fn concat_channels(a: &ImageTensor, b: &ImageTensor) -> Result<ImageTensor> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::Shape(format!(
            "cannot stack {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    ImageTensor::from_vec(a.channels() + b.channels(), a.height(), a.width(), data)
}

pub(crate) fn require_even_channels(x: &ImageTensor, what: &str) -> Result<()> {
    if !x.channels().is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "{what} needs an even channel count, got {}",
            x.channels()
        )));
    }
    Ok(())
}

/// Sum of standard-normal log-densities.
pub fn standard_normal_log_density(z: &ImageTensor) -> f64 {
    let n = z.len() as f64;
    -0.5 * n * (2.0 * PI).ln() - 0.5 * z.data().iter().map(|v| v * v).sum::<f64>()
}

/// Keeps the first half of the channels; the second half is scored under a
/// standard Gaussian.
pub fn split(x: &ImageTensor) -> Result<(ImageTensor, ImageTensor, f64)> {
    require_even_channels(x, "split")?;
    let (keep, z) = split_channels(x, x.channels() / 2)?;
    let logp = standard_normal_log_density(&z);
    Ok((keep, z, logp))
}

pub fn unsplit(keep: &ImageTensor, z: &ImageTensor) -> Result<ImageTensor> {
    if keep.shape() != z.shape() {
        return Err(Error::Shape(format!(
            "unsplit halves differ: {:?} vs {:?}",
            keep.shape(),
            z.shape()
        )));
    }
    concat_channels(keep, z)
}
