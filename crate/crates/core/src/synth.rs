//! Synthetic scenes of objects above a waterline, their mirror reflections
//! below it, and jittered proposals on both.
//!
//! Generation is deterministic given the seed (ChaCha8). [`oracle_hbsf`] is a
//! plain per-pixel reimplementation of the filter used to cross-check
//! [`crate::filter::hbsf`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::filter::{FilterOutcome, FilterParams, RemovalRecord};
use crate::geometry::{BoundingBox, ImageDims};
use crate::types::{CategoryId, Detection, GroundTruth, ImageId};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalNoise {
    /// Maximum center displacement per axis, pixels.
    pub center_px: f64,
    /// Maximum relative change of width and height, percent.
    pub size_pct: f64,
    /// Maximum amount subtracted from the base confidence.
    pub conf: f64,
}

fn default_image_id() -> ImageId {
    ImageId(1)
}

fn default_category_id() -> CategoryId {
    CategoryId(1)
}

fn default_object_conf() -> f64 {
    0.9
}

fn default_proposals() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default = "default_image_id")]
    pub image_id: ImageId,
    #[serde(default = "default_category_id")]
    pub category_id: CategoryId,
    pub dims: ImageDims,
    pub waterline_y: f64,
    pub objects: Vec<BoundingBox>,
    #[serde(default = "default_object_conf")]
    pub object_conf: f64,
    pub reflection_conf_scale: f64,
    #[serde(default = "default_proposals")]
    pub proposals_per_object: usize,
    #[serde(default)]
    pub proposal_noise: ProposalNoise,
    /// Proposals scattered uniformly over the image with uniform confidence.
    #[serde(default)]
    pub clutter_proposals: usize,
    pub seed: u64,
}

/// Where a generated proposal came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalOrigin {
    Object(usize),
    Reflection(usize),
    Clutter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub ground_truths: Vec<GroundTruth>,
    pub detections: Vec<Detection>,
    /// Parallel to `detections`.
    pub origins: Vec<ProposalOrigin>,
}

/// Reflection of `b` about the horizontal line `y = waterline`.
pub fn mirror(b: &BoundingBox, waterline: f64) -> BoundingBox {
    BoundingBox::new(b.x(), 2.0 * waterline - b.bottom(), b.width(), b.height())
        .expect("mirroring keeps the size")
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(m));
        let (w, h) = (f64::from(self.dims.width), f64::from(self.dims.height));
        if !(self.waterline_y > 0.0 && self.waterline_y < h) {
            return bad(format!(
                "waterline_y {} must lie inside (0, {h})",
                self.waterline_y
            ));
        }
        if !(self.reflection_conf_scale > 0.0 && self.reflection_conf_scale < 1.0) {
            return bad(format!(
                "reflection_conf_scale {} must lie in (0, 1)",
                self.reflection_conf_scale
            ));
        }
        if !(0.0..=1.0).contains(&self.object_conf) {
            return bad(format!(
                "object_conf {} must lie in [0, 1]",
                self.object_conf
            ));
        }
        let n = self.proposal_noise;
        if !(n.center_px >= 0.0
            && (0.0..100.0).contains(&n.size_pct)
            && (0.0..=1.0).contains(&n.conf))
        {
            return bad(format!("proposal_noise {n:?} out of range"));
        }
        if !self.objects.is_empty() && self.proposals_per_object == 0 {
            return bad("proposals_per_object must be >= 1".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.bottom() > self.waterline_y {
                return bad(format!("object {i} extends below the waterline"));
            }
            let m = mirror(o, self.waterline_y);
            if m.x() < 0.0 || m.right() > w || m.y() < 0.0 || m.bottom() > h {
                return bad(format!("reflection of object {i} falls outside the image"));
            }
        }
        Ok(())
    }
}

fn symmetric(rng: &mut ChaCha8Rng, magnitude: f64) -> f64 {
    if magnitude > 0.0 {
        rng.gen_range(-magnitude..=magnitude)
    } else {
        0.0
    }
}

fn jitter_box(rng: &mut ChaCha8Rng, b: &BoundingBox, noise: &ProposalNoise) -> BoundingBox {
    let dx = symmetric(rng, noise.center_px);
    let dy = symmetric(rng, noise.center_px);
    let sw = 1.0 + symmetric(rng, noise.size_pct / 100.0);
    let sh = 1.0 + symmetric(rng, noise.size_pct / 100.0);
    let (w, h) = (b.width() * sw, b.height() * sh);
    let cx = b.x() + b.width() / 2.0 + dx;
    let cy = b.y() + b.height() / 2.0 + dy;
    BoundingBox::new(cx - w / 2.0, cy - h / 2.0, w, h).expect("size_pct < 100 keeps boxes positive")
}

fn jitter_conf(rng: &mut ChaCha8Rng, base: f64, noise: f64) -> f64 {
    let drop = if noise > 0.0 {
        rng.gen_range(0.0..=noise)
    } else {
        0.0
    };
    (base - drop).clamp(0.0, 1.0)
}

/// Builds the scene described by `spec`.
///
/// Proposals are emitted object by object: the object's proposals, then its
/// reflection's, then any clutter at the end.
pub fn generate(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut scene = SyntheticScene {
        ground_truths: Vec::new(),
        detections: Vec::new(),
        origins: Vec::new(),
    };
    let noise = &spec.proposal_noise;
    let push = |scene: &mut SyntheticScene, b: BoundingBox, conf: f64, origin| {
        scene
            .detections
            .push(Detection::new(spec.image_id, spec.category_id, b, conf).expect("conf clamped"));
        scene.origins.push(origin);
    };
    for (i, obj) in spec.objects.iter().enumerate() {
        scene.ground_truths.push(GroundTruth {
            image_id: spec.image_id,
            class_id: spec.category_id,
            bbox: *obj,
        });
        let reflection = mirror(obj, spec.waterline_y);
        for _ in 0..spec.proposals_per_object {
            let b = jitter_box(&mut rng, obj, noise);
            let c = jitter_conf(&mut rng, spec.object_conf, noise.conf);
            push(&mut scene, b, c, ProposalOrigin::Object(i));
        }
        for _ in 0..spec.proposals_per_object {
            let b = jitter_box(&mut rng, &reflection, noise);
            let c =
                jitter_conf(&mut rng, spec.object_conf, noise.conf) * spec.reflection_conf_scale;
            push(&mut scene, b, c, ProposalOrigin::Reflection(i));
        }
    }
    let (w, h) = (f64::from(spec.dims.width), f64::from(spec.dims.height));
    for _ in 0..spec.clutter_proposals {
        let bw = rng.gen_range(1.0..=(0.4 * w).max(1.0));
        let bh = rng.gen_range(1.0..=(0.4 * h).max(1.0));
        let b = BoundingBox::new(
            rng.gen_range(-0.1 * w..w),
            rng.gen_range(-0.1 * h..h),
            bw,
            bh,
        )
        .expect("positive size");
        let c = rng.gen_range(0.0..=1.0);
        push(&mut scene, b, c, ProposalOrigin::Clutter);
    }
    Ok(scene)
}

/// Randomized scene specs for property tests and benchmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFamily {
    pub width: RangeInclusive<u32>,
    pub height: RangeInclusive<u32>,
    pub objects: RangeInclusive<usize>,
    pub proposals_per_object: RangeInclusive<usize>,
    pub clutter: RangeInclusive<usize>,
    pub object_conf: RangeInclusive<f64>,
    pub reflection_conf_scale: RangeInclusive<f64>,
    pub center_px: RangeInclusive<f64>,
    pub size_pct: RangeInclusive<f64>,
    pub conf_noise: RangeInclusive<f64>,
    /// Largest vertical gap between an object's bottom and the waterline.
    pub max_gap_px: f64,
}

impl Default for SceneFamily {
    fn default() -> Self {
        Self {
            width: 16..=128,
            height: 16..=128,
            objects: 0..=6,
            proposals_per_object: 1..=8,
            clutter: 0..=40,
            object_conf: 0.2..=1.0,
            reflection_conf_scale: 0.05..=0.6,
            center_px: 0.0..=4.0,
            size_pct: 0.0..=20.0,
            conf_noise: 0.0..=0.5,
            max_gap_px: 3.0,
        }
    }
}

fn pick_f64(rng: &mut ChaCha8Rng, r: &RangeInclusive<f64>) -> f64 {
    if r.start() >= r.end() {
        *r.start()
    } else {
        rng.gen_range(r.clone())
    }
}

impl SceneFamily {
    pub fn sample(&self, seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ca1_ab1e);
        let width = rng.gen_range(self.width.clone());
        let height = rng.gen_range(self.height.clone());
        let (w, h) = (f64::from(width), f64::from(height));
        let waterline = (rng.gen_range(0.4..0.7) * h).round().max(1.0);
        // room for an object plus its mirror on either side of the waterline
        let room = waterline.min(h - waterline);
        let n_objects = if room < 2.0 {
            0
        } else {
            rng.gen_range(self.objects.clone())
        };
        let objects = (0..n_objects)
            .map(|_| {
                let bw = rng.gen_range(2.0..=(0.3 * w).max(2.0));
                let bh = rng.gen_range(1.0..=(0.8 * room).max(1.0));
                let gap = rng.gen_range(0.0..=self.max_gap_px).min(room - bh).max(0.0);
                let x = rng.gen_range(0.0..=(w - bw));
                BoundingBox::new(x, waterline - gap - bh, bw, bh).expect("positive size")
            })
            .collect();
        SceneSpec {
            image_id: ImageId(1),
            category_id: CategoryId(1),
            dims: ImageDims::new(width, height).expect("ranges are positive"),
            waterline_y: waterline,
            objects,
            object_conf: pick_f64(&mut rng, &self.object_conf),
            reflection_conf_scale: pick_f64(&mut rng, &self.reflection_conf_scale),
            proposals_per_object: rng.gen_range(self.proposals_per_object.clone()),
            proposal_noise: ProposalNoise {
                center_px: pick_f64(&mut rng, &self.center_px),
                size_pct: pick_f64(&mut rng, &self.size_pct),
                conf: pick_f64(&mut rng, &self.conf_noise),
            },
            clutter_proposals: rng.gen_range(self.clutter.clone()),
            seed,
        }
    }
}

/// The on-disk synth spec: `{"scenes": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSet {
    pub scenes: Vec<SceneSpec>,
}

/// Generated fixture for a whole scene set.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub annotations: Value,
    pub detections: Vec<Detection>,
    pub origins: Vec<ProposalOrigin>,
}

/// Generates every scene of `set`; image ids must be distinct.
pub fn generate_set(set: &SceneSet) -> Result<SyntheticDataset> {
    let mut seen = BTreeSet::new();
    for s in &set.scenes {
        if !seen.insert(s.image_id) {
            return Err(Error::InvalidScene(format!(
                "image_id {} used by more than one scene",
                s.image_id
            )));
        }
    }
    let scenes = set
        .scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            generate(s).map_err(|e| match e {
                Error::InvalidScene(m) => Error::InvalidScene(format!("scenes[{i}]: {m}")),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        annotations: annotations_json(&set.scenes, &scenes),
        detections: scenes
            .iter()
            .flat_map(|s| s.detections.iter().copied())
            .collect(),
        origins: scenes
            .iter()
            .flat_map(|s| s.origins.iter().copied())
            .collect(),
    })
}

/// COCO annotation JSON for a set of generated scenes.
pub fn annotations_json(specs: &[SceneSpec], scenes: &[SyntheticScene]) -> Value {
    let images: Vec<Value> = specs
        .iter()
        .map(|s| {
            json!({
                "id": s.image_id,
                "width": s.dims.width,
                "height": s.dims.height,
                "file_name": format!("synth_{:04}.png", s.image_id.0),
            })
        })
        .collect();
    let category_ids: BTreeSet<CategoryId> = specs.iter().map(|s| s.category_id).collect();
    let categories: Vec<Value> = category_ids
        .iter()
        .map(|&c| {
            let name = if c == CategoryId(1) {
                "boat".to_owned()
            } else {
                format!("class_{c}")
            };
            json!({"id": c, "name": name})
        })
        .collect();
    let annotations: Vec<Value> = scenes
        .iter()
        .flat_map(|s| &s.ground_truths)
        .enumerate()
        .map(|(i, g)| {
            json!({
                "id": i + 1,
                "image_id": g.image_id,
                "category_id": g.class_id,
                "bbox": g.bbox,
                "area": g.bbox.area(),
                "iscrowd": 0,
            })
        })
        .collect();
    json!({"images": images, "categories": categories, "annotations": annotations})
}

/// Per-pixel reference implementation of the sliding filter.
///
/// Builds each heatmap by visiting every covered pixel of every proposal and
/// sums regions pixel by pixel; means are compared exactly by
/// cross-multiplication. Native resolution only.
pub fn oracle_hbsf(
    detections: &[Detection],
    image_dims: &HashMap<ImageId, ImageDims>,
    params: &FilterParams,
) -> Result<FilterOutcome> {
    params.validate()?;
    if params.heatmap_downscale != 1 {
        return Err(Error::InvalidParams(
            "the oracle runs at native resolution only".into(),
        ));
    }
    let mut groups: BTreeMap<(ImageId, CategoryId), Vec<usize>> = BTreeMap::new();
    for (i, d) in detections.iter().enumerate() {
        if !image_dims.contains_key(&d.image_id) {
            return Err(Error::MissingImageDims(d.image_id));
        }
        groups.entry((d.image_id, d.class_id)).or_default().push(i);
    }

    let mut removed: Vec<Option<RemovalRecord>> = vec![None; detections.len()];
    for ((image_id, _), members) in &groups {
        let dims = image_dims[image_id];
        let (w, h) = (dims.width as usize, dims.height as usize);
        let mut grid = vec![0u128; w * h];
        for &i in members {
            let units = (detections[i].confidence() * (1u64 << 56) as f64).round() as u128;
            for_each_covered(&detections[i].bbox, w, h, |col, row| {
                grid[row * w + col] += units
            });
        }
        let region = |b: &BoundingBox| {
            let (mut sum, mut n) = (0u128, 0u128);
            for_each_covered(b, w, h, |col, row| {
                sum += grid[row * w + col];
                n += 1;
            });
            (sum, n)
        };
        for &i in members {
            let d = &detections[i];
            if d.confidence() >= params.candidate_conf_threshold {
                continue;
            }
            let shift_px = params.shift_px(&d.bbox, dims);
            let (s1, n1) = region(&d.bbox);
            let (s2, n2) = region(&d.bbox.shift_up(shift_px));
            let scale = (1u64 << 56) as f64;
            let mean = |s: u128, n: u128| match s.checked_div(n) {
                Some(q) => q as f64 / scale + (s % n) as f64 / n as f64 / scale,
                None => 0.0,
            };
            let greater = match (n1, n2) {
                (_, 0) => false,
                (0, _) => s2 > 0,
                _ => {
                    s2.checked_mul(n1).expect("oracle overflow")
                        > s1.checked_mul(n2).expect("oracle overflow")
                }
            };
            if greater {
                removed[i] = Some(RemovalRecord {
                    detection: *d,
                    mu1: mean(s1, n1),
                    mu2: mean(s2, n2),
                    shift_px,
                });
            }
        }
    }

    let mut out = FilterOutcome::default();
    for (d, r) in detections.iter().zip(removed) {
        match r {
            Some(r) => out.removed.push(r),
            None => out.kept.push(*d),
        }
    }
    Ok(out)
}

/// Calls `f(col, row)` for every in-image pixel whose center lies in `b`,
/// testing each candidate center directly.
fn for_each_covered(b: &BoundingBox, w: usize, h: usize, mut f: impl FnMut(usize, usize)) {
    let span = |lo: f64, hi: f64, limit: usize| {
        let start = (lo.floor() - 1.0).max(0.0).min(limit as f64) as usize;
        let end = (hi.ceil() + 1.0).max(0.0).min(limit as f64) as usize;
        start..end
    };
    for row in span(b.y(), b.bottom(), h) {
        let cy = row as f64 + 0.5;
        if cy < b.y() || cy >= b.bottom() {
            continue;
        }
        for col in span(b.x(), b.right(), w) {
            let cx = col as f64 + 0.5;
            if cx >= b.x() && cx < b.right() {
                f(col, row);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::hbsf;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn spec(objects: Vec<BoundingBox>) -> SceneSpec {
        SceneSpec {
            image_id: ImageId(1),
            category_id: CategoryId(1),
            dims: ImageDims::new(100, 100).unwrap(),
            waterline_y: 50.0,
            objects,
            object_conf: 0.9,
            reflection_conf_scale: 0.1,
            proposals_per_object: 1,
            proposal_noise: ProposalNoise::default(),
            clutter_proposals: 0,
            seed: 42,
        }
    }

    fn dims_of(s: &SceneSpec) -> HashMap<ImageId, ImageDims> {
        HashMap::from([(s.image_id, s.dims)])
    }

    #[test]
    fn empty_scene() {
        let s = generate(&spec(vec![])).unwrap();
        assert!(s.ground_truths.is_empty() && s.detections.is_empty() && s.origins.is_empty());
    }

    #[test]
    fn one_object_no_jitter() {
        let obj = bb(10.0, 30.0, 20.0, 20.0);
        let s = generate(&spec(vec![obj])).unwrap();
        assert_eq!(s.detections.len(), 2);
        assert_eq!(s.detections[0].bbox, obj);
        assert_eq!(s.detections[0].confidence(), 0.9);
        assert_eq!(s.detections[1].bbox, bb(10.0, 50.0, 20.0, 20.0));
        assert_eq!(s.detections[1].confidence(), 0.9 * 0.1);
        assert_eq!(
            s.origins,
            vec![ProposalOrigin::Object(0), ProposalOrigin::Reflection(0)]
        );
    }

    #[test]
    fn invalid_specs() {
        // below the waterline
        assert!(generate(&spec(vec![bb(10.0, 45.0, 10.0, 10.0)])).is_err());
        // mirror would leave the image: bottom at 2*50 - 0 = 100 is fine, wider image check
        let mut s = spec(vec![bb(0.0, 0.0, 10.0, 50.0)]);
        s.waterline_y = 60.0;
        assert!(generate(&s).is_err());
        let mut s = spec(vec![]);
        s.reflection_conf_scale = 1.0;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn same_seed_same_scene() {
        let fam = SceneFamily::default();
        for seed in 0..20 {
            let a = fam.sample(seed);
            assert_eq!(a, fam.sample(seed));
            assert_eq!(generate(&a).unwrap(), generate(&a).unwrap());
        }
    }

    #[test]
    fn family_samples_are_valid() {
        let fam = SceneFamily::default();
        for seed in 0..300 {
            let s = fam.sample(seed);
            s.validate().unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            assert!(generate(&s).unwrap().detections.len() <= 200);
        }
    }

    #[test]
    fn oracle_agrees_on_fixtures() {
        let params = FilterParams::default();
        let adjacent = [
            Detection::new(ImageId(1), CategoryId(1), bb(10.0, 10.0, 20.0, 20.0), 0.9).unwrap(),
            Detection::new(ImageId(1), CategoryId(1), bb(10.0, 30.0, 20.0, 20.0), 0.1).unwrap(),
        ];
        let dims = HashMap::from([(ImageId(1), ImageDims::new(100, 100).unwrap())]);
        let o = oracle_hbsf(&adjacent, &dims, &params).unwrap();
        assert_eq!(o.kept, vec![adjacent[0]]);
        assert_eq!(o, hbsf(&adjacent, &dims, &params).unwrap());

        let uniform: Vec<_> = (0..4)
            .map(|i| {
                Detection::new(
                    ImageId(1),
                    CategoryId(1),
                    bb(-1.0, -1.0, 102.0, 102.0),
                    0.05 * f64::from(i),
                )
                .unwrap()
            })
            .collect();
        assert!(oracle_hbsf(&uniform, &dims, &params)
            .unwrap()
            .removed
            .is_empty());
    }

    #[test]
    fn oracle_agrees_on_random_scenes() {
        let fam = SceneFamily::default();
        for seed in 0..60 {
            let s = fam.sample(seed);
            let scene = generate(&s).unwrap();
            let params = FilterParams::default();
            let a = hbsf(&scene.detections, &dims_of(&s), &params).unwrap();
            let b = oracle_hbsf(&scene.detections, &dims_of(&s), &params).unwrap();
            assert_eq!(a, b, "seed {seed}");
        }
    }

    #[test]
    fn coco_emission_loads_back() {
        let s = spec(vec![bb(10.0, 30.0, 20.0, 20.0)]);
        let scene = generate(&s).unwrap();
        let text = serde_json::to_string(&annotations_json(&[s], &[scene])).unwrap();
        let idx =
            crate::io::DatasetIndex::from_json(&text, std::path::Path::new("synth.json")).unwrap();
        assert_eq!(idx.annotations.len(), 1);
        assert_eq!(idx.categories[0].name, "boat");
    }
}
