//! Detection evaluation: greedy matching, precision/recall curves, AP in two
//! interpolation modes, TP/FP counts and score-thresholded mean IoU.
//!
//! Matching is COCO style. Proposals are visited in descending confidence,
//! ties broken by input order, and each claims the unmatched ground truth of
//! the same image and class with the highest IoU, provided that IoU reaches
//! the threshold. Ground truths are never re-matched.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::types::{Category, CategoryId, Detection, GroundTruth, ImageId};

/// The ten thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ApMode {
    /// Mean interpolated precision at recall 0, 0.01, ..., 1.
    #[default]
    #[serde(rename = "coco101")]
    Coco101,
    /// Area under the all-point interpolated curve.
    #[serde(rename = "voc")]
    VocAllPoint,
}

/// Which proposals count towards the mean IoU at a score threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanIouRule {
    /// Only proposals overlapping some ground truth (max IoU > 0).
    #[default]
    Overlapping,
    /// Every proposal above the score threshold.
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Per input detection: matched ground truth index and IoU, `None` for FP.
    pub detections: Vec<Option<(usize, f64)>>,
    /// Per ground truth: index of the detection that claimed it.
    pub ground_truths: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.detections.iter().filter(|m| m.is_some()).count()
    }

    pub fn fp(&self) -> usize {
        self.detections.len() - self.tp()
    }
}

/// Detection indices in evaluation order.
fn ranked(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // stable sort keeps input order among equal confidences
    order.sort_by(|&a, &b| dets[b].confidence().total_cmp(&dets[a].confidence()));
    order
}

/// Greedy matching at `iou_threshold`. Detections only ever match ground
/// truths of their own image and class.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_threshold: f64,
) -> MatchResult {
    let mut by_key: HashMap<(ImageId, CategoryId), Vec<usize>> = HashMap::new();
    for (g, gt) in gts.iter().enumerate() {
        by_key
            .entry((gt.image_id, gt.class_id))
            .or_default()
            .push(g);
    }
    let mut detections = vec![None; dets.len()];
    let mut ground_truths = vec![None; gts.len()];
    for d in ranked(dets) {
        let det = &dets[d];
        let Some(candidates) = by_key.get(&(det.image_id, det.class_id)) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for &g in candidates {
            if ground_truths[g].is_some() {
                continue;
            }
            let v = iou(&det.bbox, &gts[g].bbox);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best.filter(|&(_, v)| v >= iou_threshold) {
            ground_truths[g] = Some(d);
            detections[d] = Some((g, v));
        }
    }
    MatchResult {
        detections,
        ground_truths,
    }
}

/// Keeps the `max_dets` best-ranked detections per (image, class).
pub fn cap_per_image(dets: &[Detection], max_dets: usize) -> Vec<Detection> {
    let mut seen: HashMap<(ImageId, CategoryId), usize> = HashMap::new();
    let mut keep = vec![false; dets.len()];
    for d in ranked(dets) {
        let n = seen
            .entry((dets[d].image_id, dets[d].class_id))
            .or_default();
        if *n < max_dets {
            keep[d] = true;
            *n += 1;
        }
    }
    dets.iter()
        .zip(keep)
        .filter_map(|(d, k)| k.then_some(*d))
        .collect()
}

/// Cumulative precision/recall over the confidence-ranked detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub n_gt: usize,
    pub scores: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

impl PrCurve {
    pub fn from_match(dets: &[Detection], matched: &MatchResult, n_gt: usize) -> Self {
        let order = ranked(dets);
        let mut scores = Vec::with_capacity(order.len());
        let mut precision = Vec::with_capacity(order.len());
        let mut recall = Vec::with_capacity(order.len());
        let (mut tp, mut fp) = (0usize, 0usize);
        for d in order {
            if matched.detections[d].is_some() {
                tp += 1;
            } else {
                fp += 1;
            }
            scores.push(dets[d].confidence());
            precision.push(tp as f64 / (tp + fp) as f64);
            recall.push(if n_gt == 0 {
                0.0
            } else {
                tp as f64 / n_gt as f64
            });
        }
        Self {
            n_gt,
            scores,
            precision,
            recall,
        }
    }

    /// Precision made non-increasing in rank (max precision at any later point).
    fn envelope(&self) -> Vec<f64> {
        let mut env = self.precision.clone();
        for i in (0..env.len().saturating_sub(1)).rev() {
            env[i] = env[i].max(env[i + 1]);
        }
        env
    }

    /// `None` when there are no ground truths to recall.
    pub fn average_precision(&self, mode: ApMode) -> Option<f64> {
        if self.n_gt == 0 {
            return None;
        }
        let env = self.envelope();
        let ap = match mode {
            ApMode::Coco101 => {
                let total: f64 = (0..=100)
                    .map(|i| {
                        // numpy.linspace(0, 1, 101) sample points
                        let r = if i == 100 { 1.0 } else { f64::from(i) * 0.01 };
                        let k = self.recall.partition_point(|&x| x < r);
                        env.get(k).copied().unwrap_or(0.0)
                    })
                    .sum();
                total / 101.0
            }
            ApMode::VocAllPoint => {
                let mut ap = 0.0;
                let mut prev_recall = 0.0;
                for (&r, &p) in self.recall.iter().zip(&env) {
                    if r != prev_recall {
                        ap += (r - prev_recall) * p;
                        prev_recall = r;
                    }
                }
                // the closing point at recall 1 carries precision 0
                ap
            }
        };
        Some(ap)
    }
}

pub fn pr_curve(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> PrCurve {
    let matched = match_detections(dets, gts, iou_threshold);
    PrCurve::from_match(dets, &matched, gts.len())
}

/// AP of one class over all images; `None` when the class has no ground truth.
pub fn average_precision(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_threshold: f64,
    mode: ApMode,
) -> Option<f64> {
    pr_curve(dets, gts, iou_threshold).average_precision(mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanIou {
    pub score_threshold: f64,
    pub mean_iou: Option<f64>,
    pub qualifying: usize,
}

/// Mean over proposals with confidence `>= score_threshold` of their best IoU
/// against ground truths of the same image and class.
pub fn mean_iou_at_score(
    dets: &[Detection],
    gts: &[GroundTruth],
    score_threshold: f64,
    rule: MeanIouRule,
) -> MeanIou {
    let mut by_key: HashMap<(ImageId, CategoryId), Vec<&GroundTruth>> = HashMap::new();
    for gt in gts {
        by_key
            .entry((gt.image_id, gt.class_id))
            .or_default()
            .push(gt);
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for d in dets.iter().filter(|d| d.confidence() >= score_threshold) {
        let best = by_key
            .get(&(d.image_id, d.class_id))
            .into_iter()
            .flatten()
            .map(|gt| iou(&d.bbox, &gt.bbox))
            .fold(0.0, f64::max);
        if best > 0.0 || rule == MeanIouRule::All {
            sum += best;
            n += 1;
        }
    }
    MeanIou {
        score_threshold,
        mean_iou: (n > 0).then(|| sum / n as f64),
        qualifying: n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub mode: ApMode,
    /// Thresholds for TP/FP counts and per-threshold mAP rows.
    pub count_iou_thresholds: Vec<f64>,
    pub score_thresholds: Vec<f64>,
    pub mean_iou_rule: MeanIouRule,
    pub max_dets: Option<usize>,
    pub include_pr_curves: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: ApMode::Coco101,
            count_iou_thresholds: vec![0.5],
            score_thresholds: vec![0.05, 0.3, 0.5, 0.7],
            mean_iou_rule: MeanIouRule::Overlapping,
            max_dets: None,
            include_pr_curves: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCounts {
    pub iou_threshold: f64,
    pub ap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEval {
    pub category_id: CategoryId,
    pub name: String,
    pub n_gt: usize,
    pub n_det: usize,
    /// AP at each of [`EvalReport::ap_iou_thresholds`].
    pub ap: Vec<Option<f64>>,
    pub ap_50_95: Option<f64>,
    pub counts: Vec<ThresholdCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pr_curve_50: Option<PrCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub iou_threshold: f64,
    pub map: Option<f64>,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: ApMode,
    pub ap_iou_thresholds: Vec<f64>,
    pub map_50_95: Option<f64>,
    pub map_50: Option<f64>,
    pub map_75: Option<f64>,
    pub n_gt: usize,
    pub n_det: usize,
    pub totals: Vec<ThresholdSummary>,
    pub mean_iou_rule: MeanIouRule,
    pub mean_iou: Vec<MeanIou>,
    pub max_dets: Option<usize>,
    pub classes: Vec<ClassEval>,
}

impl EvalReport {
    pub fn totals_at(&self, iou_threshold: f64) -> Option<&ThresholdSummary> {
        self.totals
            .iter()
            .find(|t| t.iou_threshold == iou_threshold)
    }
}

/// Mean of the defined values; `None` when there are none.
fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn eval_class(
    category: &Category,
    dets: &[Detection],
    gts: &[GroundTruth],
    ap_thresholds: &[f64],
    opts: &EvalOptions,
) -> ClassEval {
    let ap: Vec<Option<f64>> = ap_thresholds
        .iter()
        .map(|&t| average_precision(dets, gts, t, opts.mode))
        .collect();
    let counts = opts
        .count_iou_thresholds
        .iter()
        .map(|&t| {
            let m = match_detections(dets, gts, t);
            ThresholdCounts {
                iou_threshold: t,
                ap: PrCurve::from_match(dets, &m, gts.len()).average_precision(opts.mode),
                tp: m.tp(),
                fp: m.fp(),
            }
        })
        .collect();
    ClassEval {
        category_id: category.id,
        name: category.name.clone(),
        n_gt: gts.len(),
        n_det: dets.len(),
        ap_50_95: if gts.is_empty() {
            None
        } else {
            mean_defined(ap.iter().copied())
        },
        ap,
        counts,
        pr_curve_50: opts.include_pr_curves.then(|| pr_curve(dets, gts, 0.5)),
    }
}

/// Full evaluation over every category in `categories`.
///
/// mAP figures average over categories that have ground truth; categories
/// without ground truth appear in the report with undefined AP.
pub fn map_summary(
    dets: &[Detection],
    gts: &[GroundTruth],
    categories: &[Category],
    opts: &EvalOptions,
) -> EvalReport {
    let capped;
    let dets = match opts.max_dets {
        Some(k) => {
            capped = cap_per_image(dets, k);
            &capped[..]
        }
        None => dets,
    };
    let mut cats: Vec<Category> = categories.to_vec();
    cats.sort_by_key(|c| c.id);
    cats.dedup_by_key(|c| c.id);
    // classes referenced by data but missing from `categories`
    let known: BTreeSet<CategoryId> = cats.iter().map(|c| c.id).collect();
    let extra: BTreeSet<CategoryId> = dets
        .iter()
        .map(|d| d.class_id)
        .chain(gts.iter().map(|g| g.class_id))
        .filter(|c| !known.contains(c))
        .collect();
    cats.extend(extra.into_iter().map(|id| Category {
        id,
        name: String::new(),
    }));
    cats.sort_by_key(|c| c.id);

    let mut dets_by: BTreeMap<CategoryId, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        dets_by.entry(d.class_id).or_default().push(*d);
    }
    let mut gts_by: BTreeMap<CategoryId, Vec<GroundTruth>> = BTreeMap::new();
    for g in gts {
        gts_by.entry(g.class_id).or_default().push(*g);
    }

    let ap_thresholds = coco_iou_thresholds();
    let classes: Vec<ClassEval> = cats
        .par_iter()
        .map(|c| {
            let d = dets_by.get(&c.id).map(Vec::as_slice).unwrap_or(&[]);
            let g = gts_by.get(&c.id).map(Vec::as_slice).unwrap_or(&[]);
            eval_class(c, d, g, &ap_thresholds, opts)
        })
        .collect();

    let map_at = |i: usize| mean_defined(classes.iter().map(|c| c.ap[i]));
    let totals = opts
        .count_iou_thresholds
        .iter()
        .enumerate()
        .map(|(i, &t)| ThresholdSummary {
            iou_threshold: t,
            map: mean_defined(classes.iter().map(|c| c.counts[i].ap)),
            tp: classes.iter().map(|c| c.counts[i].tp).sum(),
            fp: classes.iter().map(|c| c.counts[i].fp).sum(),
        })
        .collect();
    let mean_iou = opts
        .score_thresholds
        .iter()
        .map(|&s| mean_iou_at_score(dets, gts, s, opts.mean_iou_rule))
        .collect();

    EvalReport {
        mode: opts.mode,
        map_50_95: mean_defined(classes.iter().map(|c| c.ap_50_95)),
        map_50: map_at(0),
        map_75: map_at(5),
        ap_iou_thresholds: ap_thresholds,
        n_gt: gts.len(),
        n_det: dets.len(),
        totals,
        mean_iou_rule: opts.mean_iou_rule,
        mean_iou,
        max_dets: opts.max_dets,
        classes,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub before: Option<f64>,
    pub after: Option<f64>,
    pub delta: Option<f64>,
}

impl MetricDelta {
    fn new(before: Option<f64>, after: Option<f64>) -> Self {
        Self {
            before,
            after,
            delta: before.zip(after).map(|(b, a)| a - b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDelta {
    pub iou_threshold: f64,
    pub tp_before: usize,
    pub tp_after: usize,
    pub tp_delta: i64,
    /// `(before - after) / before * 100`; `None` when `before` is 0.
    pub tp_reduction_pct: Option<f64>,
    pub fp_before: usize,
    pub fp_after: usize,
    pub fp_delta: i64,
    pub fp_reduction_pct: Option<f64>,
}

pub fn reduction_pct(before: usize, after: usize) -> Option<f64> {
    (before > 0).then(|| (before as f64 - after as f64) / before as f64 * 100.0)
}

impl CountDelta {
    pub fn new(iou_threshold: f64, tp: (usize, usize), fp: (usize, usize)) -> Self {
        Self {
            iou_threshold,
            tp_before: tp.0,
            tp_after: tp.1,
            tp_delta: tp.1 as i64 - tp.0 as i64,
            tp_reduction_pct: reduction_pct(tp.0, tp.1),
            fp_before: fp.0,
            fp_after: fp.1,
            fp_delta: fp.1 as i64 - fp.0 as i64,
            fp_reduction_pct: reduction_pct(fp.0, fp.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub category_id: CategoryId,
    pub ap_50_95: MetricDelta,
    pub counts: Vec<CountDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub map_50_95: MetricDelta,
    pub map_50: MetricDelta,
    pub map_75: MetricDelta,
    pub counts: Vec<CountDelta>,
    pub classes: Vec<ClassDelta>,
}

impl ComparisonReport {
    pub fn counts_at(&self, iou_threshold: f64) -> Option<&CountDelta> {
        self.counts
            .iter()
            .find(|c| c.iou_threshold == iou_threshold)
    }
}

/// Deltas from `before` to `after`. Both reports must cover the same
/// categories and count thresholds.
pub fn compare_reports(before: &EvalReport, after: &EvalReport) -> Result<ComparisonReport> {
    let ids = |r: &EvalReport| r.classes.iter().map(|c| c.category_id).collect::<Vec<_>>();
    if ids(before) != ids(after) {
        return Err(Error::ReportMismatch(format!(
            "categories {:?} vs {:?}",
            ids(before).iter().map(|c| c.0).collect::<Vec<_>>(),
            ids(after).iter().map(|c| c.0).collect::<Vec<_>>()
        )));
    }
    let thresholds = |r: &EvalReport| r.totals.iter().map(|t| t.iou_threshold).collect::<Vec<_>>();
    if thresholds(before) != thresholds(after) {
        return Err(Error::ReportMismatch(format!(
            "count thresholds {:?} vs {:?}",
            thresholds(before),
            thresholds(after)
        )));
    }
    let counts = before
        .totals
        .iter()
        .zip(&after.totals)
        .map(|(b, a)| CountDelta::new(b.iou_threshold, (b.tp, a.tp), (b.fp, a.fp)))
        .collect();
    let classes = before
        .classes
        .iter()
        .zip(&after.classes)
        .map(|(b, a)| ClassDelta {
            category_id: b.category_id,
            ap_50_95: MetricDelta::new(b.ap_50_95, a.ap_50_95),
            counts: b
                .counts
                .iter()
                .zip(&a.counts)
                .map(|(cb, ca)| CountDelta::new(cb.iou_threshold, (cb.tp, ca.tp), (cb.fp, ca.fp)))
                .collect(),
        })
        .collect();
    Ok(ComparisonReport {
        map_50_95: MetricDelta::new(before.map_50_95, after.map_50_95),
        map_50: MetricDelta::new(before.map_50, after.map_50),
        map_75: MetricDelta::new(before.map_75, after.map_75),
        counts,
        classes,
    })
}
