//! Flat parameter arena shared by the layers, the optimizer and checkpoints.

use std::ops::Range;

use crate::invconv::mask_project_in_place;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Free,
    /// Inverse-convolution weights; re-projected onto the mask after updates.
    MaskedKernel { channels: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    range: Range<usize>,
}

impl ParamEntry {
    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }

    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }
}

/// Every trainable array of a model, stored back to back.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], kind: ParamKind, init: Vec<f64>) -> ParamId {
        let len: usize = shape.iter().product();
        assert_eq!(init.len(), len, "initial value does not match shape");
        let start = self.data.len();
        self.data.extend(init);
        self.entries.push(ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            kind,
            range: start..start + len,
        });
        ParamId(self.entries.len() - 1)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[self.entries[id.0].range()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let r = self.entries[id.0].range();
        &mut self.data[r]
    }

    #[inline]
    pub fn range(&self, id: ParamId) -> Range<usize> {
        self.entries[id.0].range()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flags coordinates pinned by a kernel mask.
    pub fn frozen_mask(&self) -> Vec<bool> {
        let mut frozen = vec![false; self.data.len()];
        for e in &self.entries {
            if let ParamKind::MaskedKernel { k, .. } = e.kind {
                for (off, f) in frozen[e.range()].iter_mut().enumerate() {
                    *f = off % (k * k) == k * k - 1;
                }
            }
        }
        frozen
    }

    pub fn project_masks(&mut self) {
        for e in &self.entries {
            if let ParamKind::MaskedKernel { channels, k } = e.kind {
                mask_project_in_place(channels, k, &mut self.data[e.range()]);
            }
        }
    }
}
