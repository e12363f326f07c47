use rand::Rng;

use crate::{Error, Result};

/// `(channels, channels, k, k)` weights whose bottom-right channel block is
/// the identity: `W[c, c, k, k] = 1` and `W[c, c', k, k] = 0` for `c ≠ c'`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedKernel {
    channels: usize,
    k: usize,
    weights: Vec<f64>,
}

impl MaskedKernel {
    /// The kernel of the identity operator.
    pub fn identity(channels: usize, k: usize) -> Self {
        assert!(channels >= 1 && k >= 1);
        let mut weights = vec![0.0; channels * channels * k * k];
        mask_project_in_place(channels, k, &mut weights);
        Self {
            channels,
            k,
            weights,
        }
    }

    /// Validates the mask and finiteness of an existing weight array.
    pub fn new(channels: usize, k: usize, weights: Vec<f64>) -> Result<Self> {
        let kernel = Self::new_unchecked(channels, k, weights)?;
        if let Some((c, c2)) = kernel.mask_violation() {
            return Err(Error::NonInvertibleKernel(format!(
                "bottom-right entry of channel pair ({c}, {c2}) is {}",
                kernel.w(c, c2, k - 1, k - 1)
            )));
        }
        if kernel.weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel weights".into()));
        }
        Ok(kernel)
    }

    /// Skips the mask check. Intended for negative tests that need a kernel
    /// violating the invertibility mask; shapes are still validated.
    pub fn new_unchecked(channels: usize, k: usize, weights: Vec<f64>) -> Result<Self> {
        if channels == 0 || k == 0 {
            return Err(Error::Shape("kernel extents must be positive".into()));
        }
        if weights.len() != channels * channels * k * k {
            return Err(Error::Shape(format!(
                "kernel has {} weights, expected {}",
                weights.len(),
                channels * channels * k * k
            )));
        }
        Ok(Self {
            channels,
            k,
            weights,
        })
    }

    /// Single-channel kernel from rows, e.g. `[[0.1, 0.2], [0.3, 1.0]]`.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("kernel must be square".into()));
        }
        Self::new(1, k, rows.concat())
    }

    /// Random kernel whose unmasked weights for every output channel have
    /// absolute sum `budget`. A budget below one keeps `M⁻¹` bounded by
    /// `1 / (1 − budget)` in the max norm, so solves stay well conditioned at
    /// any image size.
    pub fn random_stable<R: Rng + ?Sized>(channels: usize, k: usize, budget: f64, rng: &mut R) -> Self {
        let mut kernel = Self::identity(channels, k);
        let per_out = channels * k * k;
        for co in 0..channels {
            let row = &mut kernel.weights[co * per_out..(co + 1) * per_out];
            let mut total = 0.0;
            for (idx, w) in row.iter_mut().enumerate() {
                if idx % (k * k) == k * k - 1 {
                    continue;
                }
                *w = rng.random_range(-1.0..1.0);
                total += w.abs();
            }
            if total > 0.0 {
                for (idx, w) in row.iter_mut().enumerate() {
                    if idx % (k * k) != k * k - 1 {
                        *w *= budget / total;
                    }
                }
            }
        }
        kernel
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// Zero-based `(c_out, c_in, row, col)` access.
    #[inline]
    pub fn w(&self, co: usize, ci: usize, i: usize, j: usize) -> f64 {
        self.weights[((co * self.channels + ci) * self.k + i) * self.k + j]
    }

    /// 1-based kernel index `a = (a1, a2)`, as in `W_a`.
    pub fn get(&self, co: usize, ci: usize, a: (usize, usize)) -> f64 {
        self.w(co, ci, a.0 - 1, a.1 - 1)
    }

    pub fn flat_index(&self, co: usize, ci: usize, i: usize, j: usize) -> usize {
        ((co * self.channels + ci) * self.k + i) * self.k + j
    }

    /// Copy with one weight replaced. Masked positions are rejected.
    pub fn with_weight(&self, co: usize, ci: usize, i: usize, j: usize, value: f64) -> Result<Self> {
        if i == self.k - 1 && j == self.k - 1 {
            return Err(Error::MaskedIndex((i + 1, j + 1)));
        }
        let mut out = self.clone();
        let idx = out.flat_index(co, ci, i, j);
        out.weights[idx] = value;
        Ok(out)
    }

    pub fn is_masked_flat(&self, idx: usize) -> bool {
        idx % (self.k * self.k) == self.k * self.k - 1
    }

    /// First channel pair whose bottom-right entry breaks the mask.
    pub fn mask_violation(&self) -> Option<(usize, usize)> {
        let last = self.k - 1;
        for c in 0..self.channels {
            for c2 in 0..self.channels {
                let expected = if c == c2 { 1.0 } else { 0.0 };
                if self.w(c, c2, last, last) != expected {
                    return Some((c, c2));
                }
            }
        }
        None
    }
}

/// Projects a raw `(c_out, c_in, k, k)` array onto the invertibility mask.
/// Entries outside the bottom-right channel block are left untouched.
pub fn mask_project(c_out: usize, c_in: usize, k: usize, weights: &[f64]) -> Result<MaskedKernel> {
    if c_out != c_in {
        return Err(Error::NonInvertibleKernel(format!(
            "channel dims ({c_out}, {c_in}) are not square"
        )));
    }
    if k == 0 || c_out == 0 {
        return Err(Error::Shape("kernel extents must be positive".into()));
    }
    if weights.len() != c_out * c_in * k * k {
        return Err(Error::Shape(format!(
            "kernel has {} weights, expected {}",
            weights.len(),
            c_out * c_in * k * k
        )));
    }
    let mut w = weights.to_vec();
    mask_project_in_place(c_out, k, &mut w);
    MaskedKernel::new_unchecked(c_out, k, w)
}

pub fn mask_project_in_place(channels: usize, k: usize, weights: &mut [f64]) {
    debug_assert_eq!(weights.len(), channels * channels * k * k);
    for c in 0..channels {
        for c2 in 0..channels {
            let idx = ((c * channels + c2) * k + k - 1) * k + k - 1;
            weights[idx] = if c == c2 { 1.0 } else { 0.0 };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projects_zero_kernel_to_unit_corner() {
        let k = mask_project(1, 1, 2, &[0.0; 4]).unwrap();
        assert_eq!(k.weights(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn projection_is_idempotent() {
        let k = MaskedKernel::from_rows(&[&[0.1, 0.2], &[0.3, 1.0]]).unwrap();
        let again = mask_project(1, 1, 2, k.weights()).unwrap();
        assert_eq!(again, k);
    }

    #[test]
    fn random_two_channel_gets_identity_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<f64> = (0..2 * 2 * 9).map(|_| rng.random_range(-2.0..2.0)).collect();
        let k = mask_project(2, 2, 3, &raw).unwrap();
        for c in 0..2 {
            for c2 in 0..2 {
                assert_eq!(k.w(c, c2, 2, 2), if c == c2 { 1.0 } else { 0.0 });
                for i in 0..3 {
                    for j in 0..3 {
                        if (i, j) != (2, 2) {
                            assert_eq!(k.w(c, c2, i, j), raw[k.flat_index(c, c2, i, j)]);
                        }
                    }
                }
            }
        }
        assert!(k.mask_violation().is_none());
    }

    #[test]
    fn rejects_non_square_channels() {
        assert!(matches!(
            mask_project(2, 1, 3, &[0.0; 18]),
            Err(Error::NonInvertibleKernel(_))
        ));
    }

    #[test]
    fn validating_constructor_catches_violations() {
        assert!(MaskedKernel::from_rows(&[&[0.1, 0.2], &[0.3, 2.0]]).is_err());
        assert!(MaskedKernel::new_unchecked(1, 2, vec![0.1, 0.2, 0.3, 2.0]).is_ok());
        let k = MaskedKernel::identity(1, 2);
        assert!(k.with_weight(0, 0, 1, 1, 0.5).is_err());
    }

    #[test]
    fn random_stable_respects_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = MaskedKernel::random_stable(3, 3, 0.8, &mut rng);
        assert!(k.mask_violation().is_none());
        for co in 0..3 {
            let s: f64 = (0..3)
                .flat_map(|ci| (0..9).map(move |t| (ci, t)))
                .filter(|&(_, t)| t != 8)
                .map(|(ci, t)| k.w(co, ci, t / 3, t % 3).abs())
                .sum();
            assert!((s - 0.8).abs() < 1e-12);
        }
    }
}
