//! PNG output for heatmaps and detection overlays.

use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::filter::RemovalRecord;
use crate::geometry::{BoundingBox, ImageDims};
use crate::heatmap::GrayRaster;
use crate::types::Detection;

pub const KEPT_COLOR: [u8; 3] = [0, 220, 0];
pub const REMOVED_COLOR: [u8; 3] = [230, 0, 0];

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Encodes `raster` as an 8-bit grayscale PNG, written atomically.
pub fn save_heatmap_png(raster: &GrayRaster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_raw(raster.width, raster.height, raster.pixels.clone())
        .expect("raster buffer matches its dimensions");
    save_png(&image::DynamicImage::ImageLuma8(img), path)
}

fn save_png(img: &image::DynamicImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )
    .map_err(|e| image_err(path, e))?;
    crate::io::write_atomic(path, &bytes)
}

/// Draws kept boxes in green and removed boxes in red, each labelled with
/// its confidence, on top of `base`.
pub fn overlay_image(
    mut base: RgbImage,
    kept: &[Detection],
    removed: &[RemovalRecord],
) -> RgbImage {
    for d in kept {
        draw_labelled(&mut base, &d.bbox, d.confidence(), KEPT_COLOR);
    }
    for r in removed {
        draw_labelled(
            &mut base,
            &r.detection.bbox,
            r.detection.confidence(),
            REMOVED_COLOR,
        );
    }
    base
}

/// Loads `image_path` (or starts from a black canvas of `dims`) and writes the
/// overlay to `out_path` as PNG.
pub fn render_overlay(
    image_path: Option<&Path>,
    dims: ImageDims,
    kept: &[Detection],
    removed: &[RemovalRecord],
    out_path: impl AsRef<Path>,
) -> Result<()> {
    let base = match image_path {
        Some(p) => image::open(p).map_err(|e| image_err(p, e))?.to_rgb8(),
        None => RgbImage::new(dims.width, dims.height),
    };
    let img = overlay_image(base, kept, removed);
    save_png(&image::DynamicImage::ImageRgb8(img), out_path.as_ref())
}

fn draw_labelled(img: &mut RgbImage, b: &BoundingBox, conf: f64, color: [u8; 3]) {
    let Some(r) = pixel_rect(img, b) else { return };
    let (c0, r0, c1, r1) = r;
    for col in c0..=c1 {
        put(img, col as i64, r0 as i64, color);
        put(img, col as i64, r1 as i64, color);
    }
    for row in r0..=r1 {
        put(img, c0 as i64, row as i64, color);
        put(img, c1 as i64, row as i64, color);
    }
    let label = format!("{:.2}", conf);
    // above the box when there is room, otherwise inside its top edge
    let top = if r0 >= GLYPH_H + 2 {
        r0 as i64 - GLYPH_H as i64 - 1
    } else {
        r0 as i64 + 2
    };
    draw_text(img, c0 as i64 + 1, top, &label, color);
}

/// Inclusive pixel bounds of `b` clipped to the image, if any part is visible.
fn pixel_rect(img: &RgbImage, b: &BoundingBox) -> Option<(u32, u32, u32, u32)> {
    let (w, h) = (f64::from(img.width()), f64::from(img.height()));
    let x0 = b.x().max(0.0);
    let y0 = b.y().max(0.0);
    let x1 = b.right().min(w);
    let y1 = b.bottom().min(h);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    let last = |v: f64| (v.ceil() as u32).saturating_sub(1);
    Some((
        x0.floor() as u32,
        y0.floor() as u32,
        last(x1).max(x0 as u32),
        last(y1).max(y0 as u32),
    ))
}

fn put(img: &mut RgbImage, col: i64, row: i64, color: [u8; 3]) {
    if col >= 0 && row >= 0 && (col as u32) < img.width() && (row as u32) < img.height() {
        img.put_pixel(col as u32, row as u32, Rgb(color));
    }
}

const GLYPH_W: u32 = 3;
const GLYPH_H: u32 = 5;

/// 3x5 bitmaps, one row per entry, most significant of the low three bits on the left.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        _ => return None,
    })
}

fn draw_text(img: &mut RgbImage, left: i64, top: i64, text: &str, color: [u8; 3]) {
    let mut x = left;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (dy, bits) in rows.iter().enumerate() {
                for dx in 0..GLYPH_W {
                    if bits >> (GLYPH_W - 1 - dx) & 1 == 1 {
                        put(img, x + dx as i64, top + dy as i64, color);
                    }
                }
            }
        }
        x += GLYPH_W as i64 + 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{CategoryId, ImageId};

    fn det(x: f64, y: f64, w: f64, h: f64, c: f64) -> Detection {
        Detection::new(
            ImageId(1),
            CategoryId(1),
            BoundingBox::new(x, y, w, h).unwrap(),
            c,
        )
        .unwrap()
    }

    #[test]
    fn box_outline_colors() {
        let kept = [det(2.0, 10.0, 10.0, 6.0, 0.9)];
        let removed = [RemovalRecord {
            detection: det(20.0, 20.0, 8.0, 8.0, 0.1),
            mu1: 0.1,
            mu2: 0.2,
            shift_px: 1.0,
        }];
        let img = overlay_image(RgbImage::new(40, 40), &kept, &removed);
        assert_eq!(img.get_pixel(2, 15).0, KEPT_COLOR);
        assert_eq!(img.get_pixel(11, 12).0, KEPT_COLOR);
        assert_eq!(img.get_pixel(6, 13).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(27, 27).0, REMOVED_COLOR);
        assert_eq!(img.get_pixel(24, 27).0, REMOVED_COLOR);
    }

    #[test]
    fn offscreen_box_is_ignored() {
        let img = overlay_image(
            RgbImage::new(10, 10),
            &[det(50.0, 50.0, 5.0, 5.0, 0.5)],
            &[],
        );
        assert!(img.pixels().all(|p| p.0 == [0, 0, 0]));
    }

    #[test]
    fn heatmap_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.png");
        let raster = GrayRaster {
            width: 2,
            height: 2,
            pixels: vec![255, 0, 128, 0],
        };
        save_heatmap_png(&raster, &path).unwrap();
        let back = image::open(&path).unwrap().to_luma8();
        assert_eq!(back.into_raw(), raster.pixels);
    }

    #[test]
    fn missing_base_image_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = render_overlay(
            Some(&dir.path().join("nope.png")),
            ImageDims::new(4, 4).unwrap(),
            &[],
            &[],
            dir.path().join("out.png"),
        )
        .unwrap_err();
        assert!(err.is_io(), "{err}");
    }
}
