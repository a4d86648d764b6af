//! Axis-aligned boxes in `(x, y, w, h)` pixel form.
//!
//! Origin is the top-left corner of the image and `y` grows downward, so
//! moving a box up decreases `y`. Boxes are continuous rectangles; the
//! discrete grid only appears in [`BoundingBox::rasterize`], where a cell
//! `(col, row)` belongs to a box iff its center `(col + 0.5, row + 0.5)`
//! lies in the half-open rectangle `[x, x + w) × [y, y + h)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox { x, y, w, h });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn width(&self) -> f64 {
        self.w
    }

    pub fn height(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Translates the box upward by `dy` pixels. Not clamped to the image.
    pub fn shift_up(&self, dy: f64) -> Self {
        debug_assert!(dy >= 0.0);
        Self {
            y: self.y - dy,
            ..*self
        }
    }

    /// Divides every coordinate by `factor`, for heatmaps stored below
    /// native resolution.
    pub fn scaled_down(&self, factor: u32) -> Self {
        if factor == 1 {
            return *self;
        }
        let f = f64::from(factor);
        Self {
            x: self.x / f,
            y: self.y / f,
            w: self.w / f,
            h: self.h / f,
        }
    }

    /// Grid cells whose centers fall inside the box, clipped to `dims`.
    pub fn rasterize(&self, dims: ImageDims) -> CellRect {
        let (col_start, col_end) = center_span(self.x, self.right(), dims.width);
        let (row_start, row_end) = center_span(self.y, self.bottom(), dims.height);
        CellRect {
            col_start,
            col_end,
            row_start,
            row_end,
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from([x, y, w, h]: [f64; 4]) -> Result<Self> {
        Self::new(x, y, w, h)
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// Intersection over union of the continuous rectangles.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Index range `[lo, hi)` of cells whose center `i + 0.5` is in `[start, end)`,
/// clipped to `[0, limit)`.
fn center_span(start: f64, end: f64, limit: u32) -> (usize, usize) {
    let lo = first_center_at_or_after(start);
    let hi = first_center_at_or_after(end);
    let limit = f64::from(limit);
    let lo = lo.clamp(0.0, limit);
    let hi = hi.clamp(lo, limit);
    (lo as usize, hi as usize)
}

/// Smallest integer `i` with `i + 0.5 >= v`.
fn first_center_at_or_after(v: f64) -> f64 {
    let mut i = (v - 0.5).ceil();
    // `v - 0.5` can round; settle on the exact predicate.
    if i + 0.5 < v {
        i += 1.0;
    }
    if (i - 1.0) + 0.5 >= v {
        i -= 1.0;
    }
    i
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawDims")]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

#[derive(Deserialize)]
struct RawDims {
    width: u32,
    height: u32,
}

impl TryFrom<RawDims> for ImageDims {
    type Error = Error;

    fn try_from(raw: RawDims) -> Result<Self> {
        Self::new(raw.width, raw.height)
    }
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDims { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn cells(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Grid dimensions after integer downscaling (rounded up).
    pub fn scaled_down(&self, factor: u32) -> Self {
        Self {
            width: self.width.div_ceil(factor),
            height: self.height.div_ceil(factor),
        }
    }
}

/// Half-open rectangle of grid cells. Possibly empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub col_start: usize,
    pub col_end: usize,
    pub row_start: usize,
    pub row_end: usize,
}

impl CellRect {
    pub fn is_empty(&self) -> bool {
        self.col_start >= self.col_end || self.row_start >= self.row_end
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.col_end - self.col_start) * (self.row_end - self.row_start)
        }
    }

    /// Cells in row-major order as `(col, row)`.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.col_start..self.col_end;
        (self.row_start..self.row_end).flat_map(move |r| cols.clone().map(move |c| (c, r)))
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn dims(w: u32, h: u32) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    /// Enumerates every cell center of the image against the box predicate.
    fn brute_cells(b: &BoundingBox, d: ImageDims) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for row in 0..d.height as usize {
            for col in 0..d.width as usize {
                let cx = col as f64 + 0.5;
                let cy = row as f64 + 0.5;
                if cx >= b.x() && cx < b.x() + b.width() && cy >= b.y() && cy < b.y() + b.height() {
                    out.insert((col, row));
                }
            }
        }
        out
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, -2.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(ImageDims::new(0, 4).is_err());
    }

    #[test]
    fn iou_examples() {
        let b = bb(3.0, 4.0, 7.5, 2.0);
        assert_eq!(iou(&b, &b), 1.0);
        assert_eq!(
            iou(&bb(0.0, 0.0, 10.0, 10.0), &bb(20.0, 20.0, 5.0, 5.0)),
            0.0
        );
        let third = iou(&bb(0.0, 0.0, 10.0, 10.0), &bb(5.0, 0.0, 10.0, 10.0));
        assert!((third - 50.0 / 150.0).abs() < 1e-15);
        // touching edges share no area
        assert_eq!(iou(&bb(0.0, 0.0, 1.0, 1.0), &bb(1.0, 0.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn shift_up_examples() {
        let b = bb(10.0, 50.0, 20.0, 30.0);
        assert_eq!(b.shift_up(0.0), b);
        assert_eq!(b.shift_up(10.0), bb(10.0, 40.0, 20.0, 30.0));
        assert_eq!(
            bb(10.0, 5.0, 20.0, 30.0).shift_up(10.0),
            bb(10.0, -5.0, 20.0, 30.0)
        );
    }

    #[test]
    fn rasterize_examples() {
        let cells: BTreeSet<_> = bb(0.0, 0.0, 2.0, 2.0)
            .rasterize(dims(4, 4))
            .cells()
            .collect();
        assert_eq!(cells, BTreeSet::from([(0, 0), (1, 0), (0, 1), (1, 1)]));

        assert!(bb(-5.0, -5.0, 3.0, 3.0).rasterize(dims(4, 4)).is_empty());

        let off = bb(0.4, 0.4, 1.0, 1.0);
        let cells: BTreeSet<_> = off.rasterize(dims(4, 4)).cells().collect();
        assert_eq!(cells, brute_cells(&off, dims(4, 4)));
        assert_eq!(cells, BTreeSet::from([(0, 0)]));
    }

    #[test]
    fn rasterize_clips_and_handles_far_boxes() {
        let r = bb(-1e12, 2.0, 3e12, 1.0).rasterize(dims(8, 8));
        assert_eq!(
            (r.col_start, r.col_end, r.row_start, r.row_end),
            (0, 8, 2, 3)
        );
        assert!(bb(100.0, 0.0, 1.0, 1.0).rasterize(dims(8, 8)).is_empty());
        // a box thinner than a cell that misses every center
        assert!(bb(0.6, 0.0, 0.3, 4.0).rasterize(dims(8, 8)).is_empty());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-20.0..60.0f64, -20.0..60.0f64, 0.01..50.0f64, 0.01..50.0f64)
            .prop_map(|(x, y, w, h)| bb(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            if a != b {
                prop_assert!(ab < 1.0);
            }
        }

        #[test]
        fn shift_composes(b in arb_box(), d1 in 0u32..100, d2 in 0u32..100) {
            let (d1, d2) = (f64::from(d1), f64::from(d2));
            let (two, one) = (b.shift_up(d1).shift_up(d2), b.shift_up(d1 + d2));
            prop_assert!((two.y() - one.y()).abs() <= 1e-12);
            prop_assert_eq!((two.x(), two.width(), two.height()), (one.x(), one.width(), one.height()));
        }

        #[test]
        fn rasterize_matches_center_enumeration(b in arb_box(), w in 1u32..48, h in 1u32..48) {
            let d = dims(w, h);
            let fast: BTreeSet<_> = b.rasterize(d).cells().collect();
            prop_assert_eq!(b.rasterize(d).len(), fast.len());
            prop_assert_eq!(fast, brute_cells(&b, d));
        }

        #[test]
        fn integer_boxes_rasterize_to_area(x in 0u32..20, y in 0u32..20, w in 1u32..20, h in 1u32..20) {
            let b = bb(x.into(), y.into(), w.into(), h.into());
            prop_assert_eq!(b.rasterize(dims(40, 40)).len(), (w * h) as usize);
        }
    }
}
