//! Monotone piecewise-linear activation on a fixed knot grid with linear tails.
//!
//! Per channel there are [`SPLINE_SLOPES`] log-slopes (left tail, the
//! interior segments, right tail) and one offset. With unit slopes and zero
//! offset the map is the identity.

use crate::tensor::ImageTensor;
use crate::{Error, Result};

pub const SPLINE_KNOTS: usize = 8;
pub const SPLINE_SLOPES: usize = SPLINE_KNOTS + 1;
pub const KNOT_MIN: f64 = -3.0;
pub const KNOT_MAX: f64 = 3.0;
const SPACING: f64 = (KNOT_MAX - KNOT_MIN) / (SPLINE_KNOTS - 1) as f64;

#[inline]
pub fn knot(j: usize) -> f64 {
    KNOT_MIN + j as f64 * SPACING
}

/// Piecewise-linear map of one channel.
#[derive(Debug, Clone)]
struct Curve {
    slopes: [f64; SPLINE_SLOPES],
    /// Value of `f − offset − KNOT_MIN` at each knot.
    at_knot: [f64; SPLINE_KNOTS],
    offset: f64,
}

impl Curve {
    fn new(log_slopes: &[f64], offset: f64) -> Self {
        let mut slopes = [0.0; SPLINE_SLOPES];
        for (s, l) in slopes.iter_mut().zip(log_slopes) {
            *s = l.exp();
        }
        let mut at_knot = [0.0; SPLINE_KNOTS];
        for j in 1..SPLINE_KNOTS {
            at_knot[j] = at_knot[j - 1] + slopes[j] * SPACING;
        }
        Self {
            slopes,
            at_knot,
            offset,
        }
    }

    #[inline]
    fn segment(x: f64) -> usize {
        if x < KNOT_MIN {
            0
        } else if x >= KNOT_MAX {
            SPLINE_KNOTS
        } else {
            (1 + ((x - KNOT_MIN) / SPACING) as usize).clamp(1, SPLINE_KNOTS - 1)
        }
    }

    /// Start knot of a segment (the tail segment 0 is anchored at knot 0).
    #[inline]
    fn anchor(seg: usize) -> usize {
        seg.saturating_sub(1)
    }

    #[inline]
    fn eval(&self, x: f64) -> (f64, usize) {
        let seg = Self::segment(x);
        let a = Self::anchor(seg);
        let v = self.at_knot[a] + self.slopes[seg] * (x - knot(a));
        (self.offset + KNOT_MIN + v, seg)
    }

    #[inline]
    fn invert(&self, y: f64) -> f64 {
        let v = y - self.offset - KNOT_MIN;
        let seg = if v < 0.0 {
            0
        } else if v >= self.at_knot[SPLINE_KNOTS - 1] {
            SPLINE_KNOTS
        } else {
            // first interior segment whose right knot value exceeds v
            (1..SPLINE_KNOTS).find(|&j| v < self.at_knot[j]).unwrap_or(SPLINE_KNOTS - 1)
        };
        let a = Self::anchor(seg);
        knot(a) + (v - self.at_knot[a]) / self.slopes[seg]
    }
}

fn curves(c: usize, log_slopes: &[f64], offsets: &[f64]) -> Result<Vec<Curve>> {
    if log_slopes.len() != c * SPLINE_SLOPES || offsets.len() != c {
        return Err(Error::Shape(format!(
            "spline parameters have {}/{} entries for {c} channels",
            log_slopes.len(),
            offsets.len()
        )));
    }
    if log_slopes.iter().chain(offsets).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("spline slopes must be positive and finite".into()));
    }
    Ok((0..c)
        .map(|ch| Curve::new(&log_slopes[ch * SPLINE_SLOPES..(ch + 1) * SPLINE_SLOPES], offsets[ch]))
        .collect())
}

/// Log-slopes for explicit slopes; rejects non-positive entries.
pub fn spline_log_slopes(slopes: &[f64]) -> Result<Vec<f64>> {
    slopes
        .iter()
        .map(|&s| {
            if s > 0.0 && s.is_finite() {
                Ok(s.ln())
            } else {
                Err(Error::InvalidParameter(format!("spline slope {s} is not positive")))
            }
        })
        .collect()
}

pub fn spline_act_forward(x: &ImageTensor, log_slopes: &[f64], offsets: &[f64]) -> Result<(ImageTensor, f64)> {
    let cs = curves(x.channels(), log_slopes, offsets)?;
    let mut y = x.clone();
    let mut logdet = 0.0;
    for (ch, curve) in cs.iter().enumerate() {
        let ls = &log_slopes[ch * SPLINE_SLOPES..(ch + 1) * SPLINE_SLOPES];
        for v in y.channel_mut(ch) {
            let (out, seg) = curve.eval(*v);
            *v = out;
            logdet += ls[seg];
        }
    }
    Ok((y, logdet))
}

pub fn spline_act_inverse(y: &ImageTensor, log_slopes: &[f64], offsets: &[f64]) -> Result<ImageTensor> {
    let cs = curves(y.channels(), log_slopes, offsets)?;
    let mut x = y.clone();
    for (ch, curve) in cs.iter().enumerate() {
        x.channel_mut(ch).iter_mut().for_each(|v| *v = curve.invert(*v));
    }
    Ok(x)
}

/// Back-propagates `grad_y` for `L(y) − logdet`.
pub fn spline_act_backward(
    x: &ImageTensor,
    grad_y: &ImageTensor,
    log_slopes: &[f64],
    offsets: &[f64],
    grad_log_slopes: &mut [f64],
    grad_offsets: &mut [f64],
) -> Result<ImageTensor> {
    x.ensure_same_shape(grad_y, "spline_act_backward")?;
    let cs = curves(x.channels(), log_slopes, offsets)?;
    let mut grad_x = grad_y.clone();
    for (ch, curve) in cs.iter().enumerate() {
        let gs = &mut grad_log_slopes[ch * SPLINE_SLOPES..(ch + 1) * SPLINE_SLOPES];
        // per-slope sums of ∂y/∂s weighted by the upstream gradient
        let mut by_slope = [0.0; SPLINE_SLOPES];
        let mut goff = 0.0;
        for ((gx, &xv), &g) in grad_x.channel_mut(ch).iter_mut().zip(x.channel(ch)).zip(grad_y.channel(ch)) {
            let seg = Curve::segment(xv);
            let a = Curve::anchor(seg);
            for s in by_slope.iter_mut().take(a + 1).skip(1) {
                *s += g * SPACING;
            }
            by_slope[seg] += g * (xv - knot(a));
            gs[seg] -= 1.0;
            goff += g;
            *gx = g * curve.slopes[seg];
        }
        for (j, b) in by_slope.iter().enumerate() {
            gs[j] += curve.slopes[j] * b;
        }
        grad_offsets[ch] += goff;
    }
    Ok(grad_x)
}

/// Distance from the nearest knot over all entries; the log-det is only
/// piecewise smooth, so finite-difference checks need this to be positive.
pub fn knot_distance(x: &ImageTensor) -> f64 {
    x.data()
        .iter()
        .map(|&v| (0..SPLINE_KNOTS).map(|j| (v - knot(j)).abs()).fold(f64::INFINITY, f64::min))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_global_slope() {
        let x = ImageTensor::from_vec(1, 2, 3, vec![-5.0, -3.0, -0.4, 0.0, 2.9, 7.0]).unwrap();
        let zeros = vec![0.0; SPLINE_SLOPES];
        let (y, ld) = spline_act_forward(&x, &zeros, &[0.0]).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-14);
        assert_eq!(ld, 0.0);
        let two = spline_log_slopes(&[2.0; SPLINE_SLOPES]).unwrap();
        let (y, ld) = spline_act_forward(&x, &two, &[0.0]).unwrap();
        assert!((ld - 6.0 * 2f64.ln()).abs() < 1e-12);
        // one global slope: y = 2(x + 3) − 3
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((2.0 * (a + 3.0) - 3.0 - b).abs() < 1e-12);
        }
        assert!(spline_log_slopes(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn random_round_trip_and_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ls: Vec<f64> = (0..2 * SPLINE_SLOPES).map(|_| rng.random_range(-1.0..1.0)).collect();
        let off = [0.3, -0.2];
        let x = ImageTensor::from_vec(2, 4, 4, (0..32).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let (y, ld) = spline_act_forward(&x, &ls, &off).unwrap();
        let back = spline_act_inverse(&y, &ls, &off).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-9);
        assert!(knot_distance(&x) > 1e-5);
        let h = 1e-6;
        let mut fd_ld = 0.0;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let yp = spline_act_forward(&xp, &ls, &off).unwrap().0.data()[i];
            let ym = spline_act_forward(&xm, &ls, &off).unwrap().0.data()[i];
            fd_ld += ((yp - ym) / (2.0 * h)).ln();
        }
        assert!((fd_ld - ld).abs() <= 1e-6 * ld.abs().max(1.0));
    }
}
