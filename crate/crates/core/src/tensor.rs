//! Dense `(channels, height, width)` activation storage.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::schedule::Pixel;
use crate::{Error, Result};

/// Channel-major image: each channel is a row-major `height × width` raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(
            channels > 0 && height > 0 && width > 0,
            "tensor extents must be positive"
        );
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "extents must be positive, got ({channels}, {height}, {width})"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "data length {} does not match ({channels}, {height}, {width})",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Single-channel tensor from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(1, height, width, rows.concat())
    }

    pub fn random_normal<R: Rng + ?Sized>(
        channels: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let data = (0..channels * height * width)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Flat offset for zero-based `(channel, row, col)`.
    #[inline]
    pub fn offset(&self, c: usize, row: usize, col: usize) -> usize {
        (c * self.height + row) * self.width + col
    }

    #[inline]
    pub fn at(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[self.offset(c, row, col)]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, row: usize, col: usize) -> &mut f64 {
        let i = self.offset(c, row, col);
        &mut self.data[i]
    }

    /// Value at a 1-based pixel.
    pub fn get(&self, c: usize, p: Pixel) -> f64 {
        self.at(c, p.row - 1, p.col - 1)
    }

    pub fn set(&mut self, c: usize, p: Pixel, value: f64) {
        *self.at_mut(c, p.row - 1, p.col - 1) = value;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.height * self.width;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Vectorization in pixel-major, channel-minor raster order.
    pub fn to_raster(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for r in 0..self.height {
            for col in 0..self.width {
                for c in 0..self.channels {
                    out.push(self.at(c, r, col));
                }
            }
        }
        out
    }

    pub fn from_raster(
        channels: usize,
        height: usize,
        width: usize,
        raster: &[f64],
    ) -> Result<Self> {
        if raster.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "raster length {} does not match ({channels}, {height}, {width})",
                raster.len()
            )));
        }
        let mut t = Self::zeros(channels, height, width);
        let mut i = 0;
        for r in 0..height {
            for col in 0..width {
                for c in 0..channels {
                    *t.at_mut(c, r, col) = raster[i];
                    i += 1;
                }
            }
        }
        Ok(t)
    }

    /// Raster index of `(channel, row, col)` (zero-based).
    pub fn raster_index(&self, c: usize, row: usize, col: usize) -> usize {
        (row * self.width + col) * self.channels + c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_raster_order() {
        let t = ImageTensor::from_vec(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.at(1, 0, 0), 3.0);
        assert_eq!(t.get(0, Pixel::new(1, 2)), 2.0);
        assert_eq!(t.to_raster(), vec![1.0, 3.0, 2.0, 4.0]);
        let back = ImageTensor::from_raster(2, 1, 2, &t.to_raster()).unwrap();
        assert_eq!(back, t);
        assert_eq!(t.raster_index(1, 0, 1), 3);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ImageTensor::from_vec(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(ImageTensor::from_vec(0, 2, 2, vec![]).is_err());
        assert!(ImageTensor::from_rows(&[&[1.0, 2.0], &[3.0]]).is_err());
    }

    #[test]
    fn finiteness_check() {
        let mut t = ImageTensor::zeros(1, 2, 2);
        assert!(t.ensure_finite("t").is_ok());
        t.data_mut()[3] = f64::NAN;
        assert!(t.ensure_finite("t").is_err());
    }
}
