use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryId(pub u64);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One detector proposal. Serializes as a COCO results record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection")]
pub struct Detection {
    pub image_id: ImageId,
    #[serde(rename = "category_id")]
    pub class_id: CategoryId,
    pub bbox: BoundingBox,
    #[serde(rename = "score")]
    confidence: f64,
}

impl Detection {
    pub fn new(
        image_id: ImageId,
        class_id: CategoryId,
        bbox: BoundingBox,
        confidence: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidConfidence(confidence));
        }
        Ok(Self {
            image_id,
            class_id,
            bbox,
            confidence,
        })
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    /// Same proposal with its confidence multiplied by `factor` in `(0, 1]`.
    pub fn with_scaled_confidence(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.image_id,
            self.class_id,
            self.bbox,
            self.confidence * factor,
        )
    }
}

#[derive(Deserialize)]
struct RawDetection {
    image_id: ImageId,
    category_id: CategoryId,
    bbox: BoundingBox,
    score: f64,
}

impl TryFrom<RawDetection> for Detection {
    type Error = Error;

    fn try_from(raw: RawDetection) -> Result<Self> {
        Self::new(raw.image_id, raw.category_id, raw.bbox, raw.score)
    }
}

/// One annotated object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: ImageId,
    #[serde(rename = "category_id")]
    pub class_id: CategoryId,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
}
