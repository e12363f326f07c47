//! Pixel indexing, the pixel partial order, dependency windows, and the
//! anti-diagonal wavefront that orders every triangular solve in the crate.
//!
//! Pixels are 1-based `(row, col)` pairs. Under top-left padding the masked
//! convolution at pixel `p` reads only the `k × k` window ending at `p`, so a
//! pixel depends solely on pixels of strictly smaller `row + col`. Grouping
//! pixels by `d = row + col` therefore yields independent work sets that can
//! be processed concurrently, one diagonal after another.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

impl Pixel {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Wavefront index `row + col`.
    pub fn diagonal(self) -> usize {
        self.row + self.col
    }

    pub fn in_bounds(self, height: usize, width: usize) -> bool {
        self.row >= 1 && self.col >= 1 && self.row <= height && self.col <= width
    }
}

/// `p ≤ q` componentwise.
pub fn pixel_leq(p: Pixel, q: Pixel) -> bool {
    p.row <= q.row && p.col <= q.col
}

/// Every in-bounds `q ≠ p` with `0 ≤ p − q < (k, k)` componentwise, in raster
/// order. Positions in the (never materialised) top-left padding are absent.
pub fn delta_set(p: Pixel, k: usize, height: usize, width: usize) -> Vec<Pixel> {
    assert!(k >= 1, "kernel size must be positive");
    assert!(p.in_bounds(height, width), "pixel {p:?} out of bounds");
    let r0 = p.row.saturating_sub(k - 1).max(1);
    let c0 = p.col.saturating_sub(k - 1).max(1);
    let mut out = Vec::with_capacity(k * k - 1);
    for row in r0..=p.row {
        for col in c0..=p.col {
            let q = Pixel::new(row, col);
            if q != p {
                out.push(q);
            }
        }
    }
    out
}

/// Pixels grouped by anti-diagonal `d = row + col`, `d = 2 ..= height + width`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagonalSchedule {
    pub height: usize,
    pub width: usize,
    pub diagonals: Vec<Vec<Pixel>>,
}

impl DiagonalSchedule {
    pub fn len(&self) -> usize {
        self.diagonals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonals.is_empty()
    }

    /// Position of the diagonal holding `p` (0 for `(1, 1)`).
    pub fn diagonal_of(&self, p: Pixel) -> usize {
        p.diagonal() - 2
    }
}

pub fn build_schedule(height: usize, width: usize) -> DiagonalSchedule {
    assert!(height >= 1 && width >= 1, "extents must be positive");
    let diagonals = (2..=height + width)
        .map(|d| {
            diagonal_rows(d, height, width)
                .map(|row| Pixel::new(row, d - row))
                .collect()
        })
        .collect();
    DiagonalSchedule {
        height,
        width,
        diagonals,
    }
}

/// 1-based rows intersecting anti-diagonal `d`, ascending.
#[inline]
pub(crate) fn diagonal_rows(d: usize, height: usize, width: usize) -> RangeInclusive<usize> {
    let lo = if d > width { d - width } else { 1 };
    let hi = (d - 1).min(height);
    lo..=hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn px(r: usize, c: usize) -> Pixel {
        Pixel::new(r, c)
    }

    #[test]
    fn partial_order_examples() {
        assert!(pixel_leq(px(1, 1), px(3, 2)));
        assert!(!pixel_leq(px(2, 1), px(1, 3)));
        assert!(pixel_leq(px(2, 2), px(2, 2)));
    }

    #[test]
    fn delta_set_examples() {
        assert!(delta_set(px(1, 1), 3, 5, 5).is_empty());
        assert_eq!(
            delta_set(px(2, 2), 2, 4, 4),
            vec![px(1, 1), px(1, 2), px(2, 1)]
        );
        assert_eq!(delta_set(px(1, 3), 2, 4, 4), vec![px(1, 2)]);
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(build_schedule(1, 1).diagonals, vec![vec![px(1, 1)]]);
        assert_eq!(
            build_schedule(2, 2).diagonals,
            vec![vec![px(1, 1)], vec![px(1, 2), px(2, 1)], vec![px(2, 2)]]
        );
        for m in 1..=8 {
            let s = build_schedule(m, m);
            assert_eq!(s.len(), 2 * m - 1);
            assert_eq!(s.diagonals.iter().map(Vec::len).max(), Some(m));
        }
    }

    #[test]
    fn schedule_soundness_exhaustive() {
        for h in 1..=16 {
            for w in 1..=16 {
                let s = build_schedule(h, w);
                let mut seen = vec![0usize; h * w];
                for diag in &s.diagonals {
                    for p in diag {
                        seen[(p.row - 1) * w + p.col - 1] += 1;
                    }
                }
                assert!(seen.iter().all(|&n| n == 1), "{h}x{w} coverage");
                for k in 1..=5 {
                    for diag in &s.diagonals {
                        for &p in diag {
                            for q in delta_set(p, k, h, w) {
                                assert!(s.diagonal_of(q) < s.diagonal_of(p));
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn delta_cardinality_bound() {
        for k in 1..=5 {
            for row in 1..=9 {
                for col in 1..=9 {
                    let n = delta_set(px(row, col), k, 9, 9).len();
                    assert!(n < k * k);
                    assert_eq!(n == k * k - 1, row >= k && col >= k, "{row},{col},k={k}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn pixel_leq_is_partial_order(
            a in (1usize..20, 1usize..20),
            b in (1usize..20, 1usize..20),
            c in (1usize..20, 1usize..20),
        ) {
            let (p, q, r) = (px(a.0, a.1), px(b.0, b.1), px(c.0, c.1));
            prop_assert!(pixel_leq(p, p));
            if pixel_leq(p, q) && pixel_leq(q, p) {
                prop_assert_eq!(p, q);
            }
            if pixel_leq(p, q) && pixel_leq(q, r) {
                prop_assert!(pixel_leq(p, r));
            }
        }
    }
}
