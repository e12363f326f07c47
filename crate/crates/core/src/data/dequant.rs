//! Uniform dequantization of 8-bit data and the centred model space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::U8Image;
use crate::tensor::ImageTensor;

/// `log₂ 256`: bits per dimension added for uniform dequantization.
pub const BPD_OFFSET_8BIT: f64 = 8.0;

/// `x = (u + r)/256` with `r ∈ [0, 1)` drawn as a 32-bit fraction, so the
/// arithmetic is exact and `floor(256 x) = u` always holds.
pub fn dequantize(batch: &[&U8Image], seed: u64) -> (Vec<ImageTensor>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = batch
        .iter()
        .map(|im| {
            let data = im
                .data
                .iter()
                .map(|&u| (f64::from(u) + f64::from(rng.random::<u32>()) / 4294967296.0) / 256.0)
                .collect();
            ImageTensor::from_vec(im.channels, im.height, im.width, data).expect("shape checked by U8Image")
        })
        .collect();
    (out, BPD_OFFSET_8BIT)
}

/// Dequantized batch shifted to the model's centred space `[-0.5, 0.5)`.
pub fn dequantize_batch(batch: &[&U8Image], seed: u64) -> (Vec<ImageTensor>, f64) {
    let (mut xs, offset) = dequantize(batch, seed);
    for x in &mut xs {
        x.data_mut().iter_mut().for_each(|v| *v -= 0.5);
    }
    (xs, offset)
}

/// `floor(256 x)` clamped to the byte range.
pub fn quantize(x: &ImageTensor) -> Vec<u8> {
    x.data().iter().map(|v| (256.0 * v).floor().clamp(0.0, 255.0) as u8).collect()
}

/// Maps centred model-space values back to bytes; `0` becomes mid-gray 128.
pub fn denormalize(x: &ImageTensor) -> U8Image {
    let data = x
        .data()
        .iter()
        .map(|v| {
            let s = (v + 0.5) * 256.0;
            if s.is_finite() {
                s.floor().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    U8Image::new(x.channels(), x.height(), x.width(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_and_mid_gray() {
        let im = U8Image::new(1, 1, 2, vec![0, 255]).unwrap();
        let (xs, off) = dequantize(&[&im], 1);
        assert_eq!(off, 8.0);
        assert!(xs[0].data()[0] >= 0.0 && xs[0].data()[0] < 1.0 / 256.0);
        assert!(xs[0].data()[1] < 1.0);
        assert_eq!(denormalize(&ImageTensor::zeros(1, 2, 2)).data, vec![128; 4]);
    }

    proptest! {
        #[test]
        fn range_and_count_preservation(bytes in proptest::collection::vec(any::<u8>(), 1..64), seed in any::<u64>()) {
            let n = bytes.len();
            let im = U8Image::new(1, 1, n, bytes.clone()).unwrap();
            let (xs, _) = dequantize(&[&im], seed);
            prop_assert!(xs[0].data().iter().all(|v| (0.0..1.0).contains(v)));
            prop_assert_eq!(quantize(&xs[0]), bytes);
            let (again, _) = dequantize(&[&im], seed);
            prop_assert_eq!(&again[0], &xs[0]);
        }
    }
}
