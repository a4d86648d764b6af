//! Heatmap based sliding filter.
//!
//! For every (image, class) pair a heatmap is built from all proposals of the
//! pair. Each proposal is then compared against its own region moved upward:
//! a proposal whose shifted region carries strictly more mean heat than its
//! original region, and whose confidence is below the candidate threshold, is
//! judged a reflection of a stronger object above it and removed. Decisions
//! are made independently against the fixed heatmap, in a single pass.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, ImageDims};
use crate::heatmap::{Heatmap, HeatmapBuilder};
use crate::types::{CategoryId, Detection, ImageId};

/// Whose height the upward shift is a fraction of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftBasis {
    #[default]
    ImageHeight,
    BoxHeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub shift_fraction: f64,
    pub candidate_conf_threshold: f64,
    pub shift_basis: ShiftBasis,
    /// Integer heatmap downscale factor; 1 is native resolution.
    pub heatmap_downscale: u32,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            shift_fraction: 0.01,
            candidate_conf_threshold: 0.3,
            shift_basis: ShiftBasis::ImageHeight,
            heatmap_downscale: 1,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.shift_fraction.is_finite() && self.shift_fraction > 0.0) {
            return Err(Error::InvalidParams(format!(
                "shift_fraction must be > 0, got {}",
                self.shift_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.candidate_conf_threshold) {
            return Err(Error::InvalidParams(format!(
                "candidate_conf_threshold must be in [0, 1], got {}",
                self.candidate_conf_threshold
            )));
        }
        if self.heatmap_downscale == 0 {
            return Err(Error::InvalidParams(
                "heatmap_downscale must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Upward shift in pixels for a proposal in an image of `dims`.
    pub fn shift_px(&self, bbox: &BoundingBox, dims: ImageDims) -> f64 {
        let basis = match self.shift_basis {
            ShiftBasis::ImageHeight => f64::from(dims.height),
            ShiftBasis::BoxHeight => bbox.height(),
        };
        self.shift_fraction * basis
    }
}

/// A removed proposal with the two means that condemned it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalRecord {
    pub detection: Detection,
    pub mu1: f64,
    pub mu2: f64,
    pub shift_px: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    /// Surviving proposals in input order.
    pub kept: Vec<Detection>,
    /// Removed proposals in input order.
    pub removed: Vec<RemovalRecord>,
}

/// Decision for one proposal against a sealed heatmap; `Some` means remove.
pub fn judge(heatmap: &Heatmap, det: &Detection, params: &FilterParams) -> Option<RemovalRecord> {
    if det.confidence() >= params.candidate_conf_threshold {
        return None;
    }
    let shift_px = params.shift_px(&det.bbox, heatmap.image_dims());
    let here = heatmap.region_sum(&det.bbox);
    let above = heatmap.region_sum(&det.bbox.shift_up(shift_px));
    (above.cmp_mean(&here) == Ordering::Greater).then(|| RemovalRecord {
        detection: *det,
        mu1: here.mean(),
        mu2: above.mean(),
        shift_px,
    })
}

/// Indices of `detections` grouped by (image, class), groups in key order.
pub(crate) fn group_indices(
    detections: &[Detection],
) -> BTreeMap<(ImageId, CategoryId), Vec<usize>> {
    let mut groups: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for (i, d) in detections.iter().enumerate() {
        groups.entry((d.image_id, d.class_id)).or_default().push(i);
    }
    groups
}

/// Runs the filter over `detections`.
///
/// Groups are processed on the current rayon pool; the output does not
/// depend on the number of threads.
pub fn hbsf(
    detections: &[Detection],
    image_dims: &HashMap<ImageId, ImageDims>,
    params: &FilterParams,
) -> Result<FilterOutcome> {
    params.validate()?;
    if let Some(d) = detections
        .iter()
        .find(|d| !image_dims.contains_key(&d.image_id))
    {
        return Err(Error::MissingImageDims(d.image_id));
    }
    let groups: Vec<_> = group_indices(detections).into_iter().collect();

    let verdicts: Vec<Vec<(usize, RemovalRecord)>> = groups
        .par_iter()
        .map(|((image_id, class_id), members)| {
            let dims = image_dims[image_id];
            let mut builder =
                HeatmapBuilder::with_downscale(dims, *class_id, params.heatmap_downscale);
            for &i in members {
                builder.add(&detections[i].bbox, detections[i].confidence());
            }
            let heatmap = builder.seal();
            members
                .iter()
                .filter_map(|&i| judge(&heatmap, &detections[i], params).map(|r| (i, r)))
                .collect()
        })
        .collect();

    let mut removal: Vec<Option<RemovalRecord>> = vec![None; detections.len()];
    for (i, record) in verdicts.into_iter().flatten() {
        removal[i] = Some(record);
    }
    let mut outcome = FilterOutcome::default();
    for (det, verdict) in detections.iter().zip(removal) {
        match verdict {
            Some(record) => outcome.removed.push(record),
            None => outcome.kept.push(*det),
        }
    }
    Ok(outcome)
}

/// Plain confidence cutoff: keeps proposals with confidence `>= threshold`.
pub fn score_threshold(detections: &[Detection], threshold: f64) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| d.confidence() >= threshold)
        .copied()
        .collect()
}
