//! Reflection false-positive suppression for object detectors, plus a
//! COCO-style evaluation engine to measure its effect.
//!
//! The filter builds a confidence heatmap per (image, class), slides each
//! low-confidence proposal up by a small offset and drops it when the heat
//! above is higher than the heat under it. Reflections on water sit just below
//! the much hotter real object, so they fail the test; real objects don't.
//!
//! ```
//! use std::collections::HashMap;
//! use reflectguard::{hbsf, BoundingBox, CategoryId, Detection, FilterParams, ImageDims, ImageId};
//!
//! let boat = Detection::new(ImageId(1), CategoryId(1), BoundingBox::new(10.0, 10.0, 20.0, 20.0)?, 0.9)?;
//! let mirror = Detection::new(ImageId(1), CategoryId(1), BoundingBox::new(10.0, 30.0, 20.0, 20.0)?, 0.1)?;
//! let dims = HashMap::from([(ImageId(1), ImageDims::new(100, 100)?)]);
//! let out = hbsf(&[boat, mirror], &dims, &FilterParams::default())?;
//! assert_eq!(out.kept, vec![boat]);
//! assert_eq!(out.removed[0].detection, mirror);
//! # Ok::<(), reflectguard::Error>(())
//! ```

pub mod error;
pub mod eval;
pub mod filter;
pub mod geometry;
pub mod heatmap;
pub mod io;
#[cfg(feature = "render")]
pub mod render;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use eval::{map_summary, ApMode, EvalOptions, EvalReport, MeanIouRule};
pub use filter::{hbsf, FilterOutcome, FilterParams, RemovalRecord, ShiftBasis};
pub use geometry::{iou, BoundingBox, ImageDims};
pub use heatmap::{build_heatmap, Heatmap, HeatmapBuilder};
pub use types::{Category, CategoryId, Detection, GroundTruth, ImageId};
