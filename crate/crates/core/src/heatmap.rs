//! Per-image, per-class confidence heatmaps.
//!
//! Every grid cell holds the summed confidence of the proposals whose
//! rasterized region covers it. Heat is accumulated in fixed point
//! (`round(conf * 2^56)`) so sums are exact and independent of the order
//! proposals arrive in. Accumulation goes through a 2D difference array and
//! two in-place prefix passes, which leaves a summed-area table answering any
//! rectangular region sum with four lookups.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, CellRect, ImageDims};
use crate::types::{CategoryId, Detection};

/// Number of fractional bits in the fixed-point heat representation.
pub const HEAT_FRACTION_BITS: u32 = 56;

const HEAT_SCALE: f64 = (1u64 << HEAT_FRACTION_BITS) as f64;

/// Fixed-point heat contributed by one proposal of confidence `conf`.
pub fn heat_units(conf: f64) -> u128 {
    debug_assert!((0.0..=1.0).contains(&conf));
    (conf * HEAT_SCALE).round() as u128
}

pub fn units_to_heat(units: u128) -> f64 {
    units as f64 / HEAT_SCALE
}

/// Heat summed over a clipped region together with the number of cells in it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionSum {
    pub units: u128,
    pub cells: u64,
}

impl RegionSum {
    /// Mean heat; 0 for an empty region.
    pub fn mean(&self) -> f64 {
        if self.cells == 0 {
            0.0
        } else {
            // integer quotient first so whole-unit means convert exactly
            let n = u128::from(self.cells);
            (self.units / n) as f64 / HEAT_SCALE + (self.units % n) as f64 / n as f64 / HEAT_SCALE
        }
    }

    /// Exact comparison of the two means, with empty regions at mean 0.
    pub fn cmp_mean(&self, other: &RegionSum) -> Ordering {
        match (self.cells, other.cells) {
            (0, 0) => Ordering::Equal,
            (0, _) => 0.cmp(&other.units),
            (_, 0) => self.units.cmp(&0),
            (a, b) => wide_mul(self.units, b).cmp(&wide_mul(other.units, a)),
        }
    }
}

/// `a * b` as a 192-bit value `(high, low)`.
fn wide_mul(a: u128, b: u64) -> (u128, u128) {
    let b = u128::from(b);
    let lo_part = (a & u128::from(u64::MAX)) * b;
    let hi_part = (a >> 64) * b;
    let (lo, carry) = lo_part.overflowing_add(hi_part << 64);
    ((hi_part >> 64) + u128::from(carry), lo)
}

/// Accumulates proposals into a difference array; [`seal`](Self::seal)
/// produces the queryable [`Heatmap`].
#[derive(Debug)]
pub struct HeatmapBuilder {
    image_dims: ImageDims,
    grid_dims: ImageDims,
    class_id: CategoryId,
    downscale: u32,
    // (height + 1) x (width + 1); row 0 and column 0 stay zero.
    table: Vec<i128>,
}

impl HeatmapBuilder {
    pub fn new(image_dims: ImageDims, class_id: CategoryId) -> Self {
        Self::with_downscale(image_dims, class_id, 1)
    }

    /// Grid at `1/downscale` of the image resolution. `downscale` of 0 is treated as 1.
    pub fn with_downscale(image_dims: ImageDims, class_id: CategoryId, downscale: u32) -> Self {
        let downscale = downscale.max(1);
        let grid_dims = image_dims.scaled_down(downscale);
        let len = (grid_dims.width as usize + 1) * (grid_dims.height as usize + 1);
        Self {
            image_dims,
            grid_dims,
            class_id,
            downscale,
            table: vec![0; len],
        }
    }

    pub fn class_id(&self) -> CategoryId {
        self.class_id
    }

    /// Adds `conf` to every cell covered by `bbox` (image coordinates).
    pub fn add(&mut self, bbox: &BoundingBox, conf: f64) {
        let rect = bbox.scaled_down(self.downscale).rasterize(self.grid_dims);
        if rect.is_empty() {
            return;
        }
        let u = heat_units(conf) as i128;
        let stride = self.grid_dims.width as usize + 1;
        let (gw, gh) = (
            self.grid_dims.width as usize,
            self.grid_dims.height as usize,
        );
        let CellRect {
            col_start,
            col_end,
            row_start,
            row_end,
        } = rect;
        // Corner updates shifted by one so the first prefix pass yields the grid
        // at offset (1, 1). Corners past the last row/column fall off the grid.
        self.table[(row_start + 1) * stride + col_start + 1] += u;
        if col_end < gw {
            self.table[(row_start + 1) * stride + col_end + 1] -= u;
        }
        if row_end < gh {
            self.table[(row_end + 1) * stride + col_start + 1] -= u;
            if col_end < gw {
                self.table[(row_end + 1) * stride + col_end + 1] += u;
            }
        }
    }

    pub fn add_detection(&mut self, det: &Detection) -> Result<()> {
        if det.class_id != self.class_id {
            return Err(Error::ClassMismatch {
                expected: self.class_id,
                found: det.class_id,
            });
        }
        self.add(&det.bbox, det.confidence());
        Ok(())
    }

    pub fn seal(mut self) -> Heatmap {
        let stride = self.grid_dims.width as usize + 1;
        // difference array -> grid, then grid -> summed-area table
        prefix_sum_2d(&mut self.table, stride);
        prefix_sum_2d(&mut self.table, stride);
        Heatmap {
            image_dims: self.image_dims,
            grid_dims: self.grid_dims,
            class_id: self.class_id,
            downscale: self.downscale,
            sat: self.table,
        }
    }
}

fn prefix_sum_2d(table: &mut [i128], stride: usize) {
    let rows = table.len() / stride;
    for r in 1..rows {
        let (above, rest) = table.split_at_mut(r * stride);
        let above = &above[(r - 1) * stride..];
        let row = &mut rest[..stride];
        let mut running = 0i128;
        for c in 1..stride {
            running += row[c];
            row[c] = above[c] + running;
        }
    }
}

/// A sealed heatmap. Immutable; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Heatmap {
    image_dims: ImageDims,
    grid_dims: ImageDims,
    class_id: CategoryId,
    downscale: u32,
    sat: Vec<i128>,
}

/// Builds the heatmap of `class_id` over `detections`, all of which must be
/// of that class.
pub fn build_heatmap(
    detections: &[Detection],
    dims: ImageDims,
    class_id: CategoryId,
) -> Result<Heatmap> {
    let mut builder = HeatmapBuilder::new(dims, class_id);
    for d in detections {
        builder.add_detection(d)?;
    }
    Ok(builder.seal())
}

impl Heatmap {
    pub fn image_dims(&self) -> ImageDims {
        self.image_dims
    }

    pub fn grid_dims(&self) -> ImageDims {
        self.grid_dims
    }

    pub fn class_id(&self) -> CategoryId {
        self.class_id
    }

    pub fn downscale(&self) -> u32 {
        self.downscale
    }

    fn stride(&self) -> usize {
        self.grid_dims.width as usize + 1
    }

    /// Prefix sum over cells `[0, col) x [0, row)`.
    fn sat_at(&self, col: usize, row: usize) -> i128 {
        self.sat[row * self.stride() + col]
    }

    fn rect_units(&self, rect: &CellRect) -> u128 {
        if rect.is_empty() {
            return 0;
        }
        let s = self.sat_at(rect.col_end, rect.row_end)
            - self.sat_at(rect.col_start, rect.row_end)
            - self.sat_at(rect.col_end, rect.row_start)
            + self.sat_at(rect.col_start, rect.row_start);
        debug_assert!(s >= 0);
        s as u128
    }

    /// Heat sum over the in-grid cells of `bbox` (image coordinates).
    pub fn region_sum(&self, bbox: &BoundingBox) -> RegionSum {
        let rect = bbox.scaled_down(self.downscale).rasterize(self.grid_dims);
        RegionSum {
            units: self.rect_units(&rect),
            cells: rect.len() as u64,
        }
    }

    /// Mean heat over the clipped region of `bbox`; 0 when nothing of it is in the image.
    pub fn region_mean(&self, bbox: &BoundingBox) -> f64 {
        self.region_sum(bbox).mean()
    }

    pub fn cell_units(&self, col: usize, row: usize) -> u128 {
        self.rect_units(&CellRect {
            col_start: col,
            col_end: col + 1,
            row_start: row,
            row_end: row + 1,
        })
    }

    pub fn cell(&self, col: usize, row: usize) -> f64 {
        units_to_heat(self.cell_units(col, row))
    }

    pub fn total_units(&self) -> u128 {
        let (w, h) = (
            self.grid_dims.width as usize,
            self.grid_dims.height as usize,
        );
        self.sat_at(w, h) as u128
    }

    pub fn total_mass(&self) -> f64 {
        units_to_heat(self.total_units())
    }

    /// Row-major copy of the grid in heat units.
    pub fn grid_units(&self) -> Vec<u128> {
        let (w, h) = (
            self.grid_dims.width as usize,
            self.grid_dims.height as usize,
        );
        let mut out = Vec::with_capacity(w * h);
        for row in 0..h {
            for col in 0..w {
                out.push(self.cell_units(col, row));
            }
        }
        out
    }

    /// 8-bit grayscale rendering with the maximum cell mapped to 255.
    pub fn render(&self) -> GrayRaster {
        let units = self.grid_units();
        let max = units.iter().copied().max().unwrap_or(0);
        let pixels = units
            .iter()
            .map(|&u| {
                if max == 0 {
                    0
                } else {
                    // round half up of 255 * u / max
                    ((2 * 255 * u + max) / (2 * max)) as u8
                }
            })
            .collect();
        GrayRaster {
            width: self.grid_dims.width,
            height: self.grid_dims.height,
            pixels,
        }
    }
}

/// Row-major 8-bit single-channel raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayRaster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl GrayRaster {
    pub fn get(&self, col: u32, row: u32) -> u8 {
        self.pixels[row as usize * self.width as usize + col as usize]
    }
}

pub fn render_heatmap(h: &Heatmap) -> GrayRaster {
    h.render()
}
