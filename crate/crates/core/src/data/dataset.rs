use crate::{Error, Result};

/// An 8-bit image in channel-major layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct U8Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl U8Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} bytes for a {channels}x{height}x{width} image",
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

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

/// Uniformly shaped collection of 8-bit images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    source: String,
    shape: [usize; 3],
    images: Vec<U8Image>,
    labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(source: impl Into<String>, images: Vec<U8Image>, labels: Option<Vec<u8>>) -> Result<Self> {
        let shape = images
            .first()
            .map(U8Image::shape)
            .ok_or_else(|| Error::InvalidParameter("dataset is empty".into()))?;
        if let Some(bad) = images.iter().position(|im| im.shape() != shape) {
            return Err(Error::DimensionMismatch(format!(
                "image {bad} has shape {:?}, expected {shape:?}",
                images[bad].shape()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != images.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} images",
                    l.len(),
                    images.len()
                )));
            }
        }
        Ok(Self {
            source: source.into(),
            shape,
            images,
            labels,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[U8Image] {
        &self.images
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// First `n` items.
    pub fn take(&self, n: usize) -> Result<Self> {
        Self::new(
            self.source.clone(),
            self.images.iter().take(n).cloned().collect(),
            self.labels.as_ref().map(|l| l.iter().take(n).copied().collect()),
        )
    }
}
