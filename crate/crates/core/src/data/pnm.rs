//! Binary PGM (one channel) / PPM (three channels) output.

use std::io::Write;
use std::path::Path;

use super::dataset::U8Image;
use crate::{Error, Result};

/// Tiles equally shaped images into a grid with `cols` columns and a
/// one-pixel black gutter.
pub fn image_grid(images: &[U8Image], cols: usize) -> Result<U8Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidParameter("no images to tile".into()))?;
    let [c, h, w] = first.shape();
    if images.iter().any(|im| im.shape() != [c, h, w]) {
        return Err(Error::DimensionMismatch("grid images differ in shape".into()));
    }
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let (gh, gw) = (rows * (h + 1) + 1, cols * (w + 1) + 1);
    let mut data = vec![0u8; c * gh * gw];
    for (n, im) in images.iter().enumerate() {
        let (r0, c0) = (1 + (n / cols) * (h + 1), 1 + (n % cols) * (w + 1));
        for ch in 0..c {
            for i in 0..h {
                let src = &im.data[(ch * h + i) * w..(ch * h + i + 1) * w];
                let dst = (ch * gh + r0 + i) * gw + c0;
                data[dst..dst + w].copy_from_slice(src);
            }
        }
    }
    U8Image::new(c, gh, gw, data)
}

pub fn write_pnm(image: &U8Image, path: &Path) -> Result<()> {
    let [c, h, w] = image.shape();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::Shape(format!("PNM output needs 1 or 3 channels, got {c}"))),
    };
    let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..c {
            bytes.push(image.data[ch * plane + p]);
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}
