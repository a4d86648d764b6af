use std::collections::BTreeMap;
use std::path::Path;

use reflectguard::eval::{
    compare_reports, map_summary, ComparisonReport, EvalOptions, EvalReport, ThresholdSummary,
};
use reflectguard::filter::{hbsf, score_threshold, FilterParams};
use reflectguard::heatmap::HeatmapBuilder;
use reflectguard::io::{self, DatasetIndex, DatasetStats, InputFile, Metadata, ReportDocument};
use reflectguard::render;
use reflectguard::synth::{generate_set, SceneSet};
use reflectguard::{ApMode, CategoryId, Detection, Error, ImageDims, ImageId, Result};
use serde::Serialize;

use crate::table;
use crate::{
    Command, CompareArgs, EvalArgs, EvalOptionArgs, FilterArgs, HeatmapArgs, OverlayArgs, SynthArgs,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Filter(a) => filter(a),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare(a),
        Command::Synth(a) => synth(a),
        Command::Heatmap(a) => heatmap(a),
        Command::Overlay(a) => overlay(a),
    }
}

fn filter(a: FilterArgs) -> Result<()> {
    let params = FilterParams {
        shift_fraction: a.params.shift_fraction,
        candidate_conf_threshold: a.params.conf_threshold,
        shift_basis: a.params.shift_basis.into(),
        heatmap_downscale: a.params.heatmap_downscale,
    };
    params.validate()?;
    let index = io::load_annotations(&a.annotations)?;
    let dets = io::load_detections(&a.detections, &index)?;
    let outcome = hbsf(&dets, &index.dims_map(), &params)?;

    io::save_detections(&outcome.kept, &a.out)?;
    if let Some(log) = &a.removal_log {
        io::save_removal_log(&outcome.removed, log)?;
    }

    let mut per_class: BTreeMap<CategoryId, (usize, usize)> = BTreeMap::new();
    for d in &dets {
        per_class.entry(d.class_id).or_default().0 += 1;
    }
    for r in &outcome.removed {
        per_class.entry(r.detection.class_id).or_default().1 += 1;
    }
    println!("input proposals: {}", dets.len());
    println!("removed: {}", outcome.removed.len());
    println!("kept: {}", outcome.kept.len());
    println!(
        "shift: {} x {}, candidates below confidence {}, heatmap downscale {}",
        params.shift_fraction,
        match params.shift_basis {
            reflectguard::ShiftBasis::ImageHeight => "image height",
            reflectguard::ShiftBasis::BoxHeight => "box height",
        },
        params.candidate_conf_threshold,
        params.heatmap_downscale
    );
    if !per_class.is_empty() {
        let rows = per_class
            .iter()
            .map(|(id, (n, removed))| {
                vec![
                    category_label(&index, *id),
                    n.to_string(),
                    removed.to_string(),
                ]
            })
            .collect();
        print!("{}", table::render(&["class", "input", "removed"], rows));
    }
    Ok(())
}

fn eval_options(a: &EvalOptionArgs, pr_curves: bool) -> Result<EvalOptions> {
    let in_unit = |v: &[f64], what: &str| {
        if v.iter().all(|t| (0.0..=1.0).contains(t)) {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "{what} must lie in [0, 1], got {v:?}"
            )))
        }
    };
    in_unit(&a.iou_thresholds, "IoU thresholds")?;
    in_unit(&a.score_thresholds, "score thresholds")?;
    if a.max_dets == Some(0) {
        return Err(Error::InvalidParams("max-dets must be at least 1".into()));
    }
    Ok(EvalOptions {
        mode: a.mode.into(),
        count_iou_thresholds: a.iou_thresholds.clone(),
        score_thresholds: a.score_thresholds.clone(),
        mean_iou_rule: a.mean_iou_rule.into(),
        max_dets: a.max_dets,
        include_pr_curves: pr_curves,
    })
}

#[derive(Serialize)]
struct EvalBody<'a> {
    dataset: DatasetStats,
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn eval(a: EvalArgs) -> Result<()> {
    let opts = eval_options(&a.opts, a.pr_curves)?;
    let index = io::load_annotations(&a.annotations)?;
    let dets = io::load_detections(&a.detections, &index)?;
    let report = map_summary(&dets, &index.ground_truths(), &index.categories, &opts);
    let doc = ReportDocument {
        metadata: Metadata::new(vec![
            InputFile::digest("detections", &a.detections)?,
            InputFile::digest("annotations", &a.annotations)?,
        ]),
        body: EvalBody {
            dataset: index.stats(),
            report: &report,
        },
    };
    io::save_report(&doc, &a.out)?;

    let stats = index.stats();
    println!(
        "dataset: {} images, {} categories, {} ground-truth boxes (small {}, medium {}, large {})",
        stats.images,
        stats.categories,
        stats.annotations,
        stats.sizes.small,
        stats.sizes.medium,
        stats.sizes.large
    );
    println!(
        "detections: {}  AP mode: {}",
        report.n_det,
        mode_name(report.mode)
    );
    print!("{}", table::summary(&[("all", &report)]));
    let rows = report
        .classes
        .iter()
        .map(|c| {
            vec![
                format!("{} ({})", c.name, c.category_id),
                c.n_gt.to_string(),
                c.n_det.to_string(),
                table::metric(c.ap_50_95),
                table::metric(c.ap[0]),
                table::metric(c.ap[5]),
            ]
        })
        .collect();
    print!(
        "{}",
        table::render(
            &["class", "GT", "dets", "AP[.50:.95]", "AP[.50]", "AP[.75]"],
            rows
        )
    );
    let rows = report
        .mean_iou
        .iter()
        .map(|m| {
            vec![
                m.score_threshold.to_string(),
                table::metric(m.mean_iou),
                m.qualifying.to_string(),
            ]
        })
        .collect();
    print!(
        "{}",
        table::render(&["score thr", "mean IoU", "proposals"], rows)
    );
    Ok(())
}

#[derive(Serialize)]
struct CompareRow {
    label: String,
    n_det: usize,
    map_50_95: Option<f64>,
    map_50: Option<f64>,
    map_75: Option<f64>,
    totals: Vec<ThresholdSummary>,
}

#[derive(Serialize)]
struct Comparison {
    label: String,
    #[serde(flatten)]
    report: ComparisonReport,
}

#[derive(Serialize)]
struct CompareBody {
    mode: ApMode,
    dataset: DatasetStats,
    rows: Vec<CompareRow>,
    comparisons: Vec<Comparison>,
}

fn compare(a: CompareArgs) -> Result<()> {
    let opts = eval_options(&a.opts, false)?;
    if let Some(s) = a.baseline_score {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidParams(format!(
                "baseline score {s} must lie in [0, 1]"
            )));
        }
    }
    let index = io::load_annotations(&a.annotations)?;
    let gts = index.ground_truths();
    let evaluate = |dets: &[Detection]| map_summary(dets, &gts, &index.categories, &opts);

    let before_dets = io::load_detections(&a.before, &index)?;
    let mut inputs = vec![
        InputFile::digest("before", &a.before)?,
        InputFile::digest("annotations", &a.annotations)?,
    ];
    let mut rows: Vec<(String, EvalReport)> = vec![("none".into(), evaluate(&before_dets))];
    if let Some(s) = a.baseline_score {
        rows.push((
            format!("score_thr[{s}]"),
            evaluate(&score_threshold(&before_dets, s)),
        ));
    }
    if let Some(after) = &a.after {
        let after_dets = io::load_detections(after, &index)?;
        inputs.insert(1, InputFile::digest("after", after)?);
        rows.push(("after".into(), evaluate(&after_dets)));
    }

    let base = &rows[0].1;
    let comparisons = rows[1..]
        .iter()
        .map(|(label, r)| {
            Ok(Comparison {
                label: label.clone(),
                report: compare_reports(base, r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let body = CompareBody {
        mode: opts.mode,
        dataset: index.stats(),
        rows: rows
            .iter()
            .map(|(label, r)| CompareRow {
                label: label.clone(),
                n_det: r.n_det,
                map_50_95: r.map_50_95,
                map_50: r.map_50,
                map_75: r.map_75,
                totals: r.totals.clone(),
            })
            .collect(),
        comparisons,
    };
    io::save_report(
        &ReportDocument {
            metadata: Metadata::new(inputs),
            body: &body,
        },
        &a.out,
    )?;

    let named: Vec<(&str, &EvalReport)> = rows.iter().map(|(l, r)| (l.as_str(), r)).collect();
    print!("{}", table::summary(&named));
    for c in &body.comparisons {
        for d in &c.report.counts {
            println!(
                "{} vs none @ IoU {}: FP {} -> {} ({} reduction), TP {} -> {} ({} reduction)",
                c.label,
                d.iou_threshold,
                d.fp_before,
                d.fp_after,
                table::pct(d.fp_reduction_pct),
                d.tp_before,
                d.tp_after,
                table::pct(d.tp_reduction_pct),
            );
        }
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let set: SceneSet = io::load_report(&a.spec)?;
    let data = generate_set(&set)?;
    let mut annotations =
        serde_json::to_string_pretty(&data.annotations).expect("json value serializes");
    annotations.push('\n');
    io::write_atomic(&a.out_annotations, annotations.as_bytes())?;
    io::save_detections(&data.detections, &a.out_detections)?;
    if let Some(labels) = &a.out_labels {
        io::save_report(&data.origins, labels)?;
    }
    println!(
        "scenes: {}  ground truth: {}  proposals: {}",
        set.scenes.len(),
        data.annotations["annotations"]
            .as_array()
            .map_or(0, Vec::len),
        data.detections.len()
    );
    Ok(())
}

fn image_dims(index: &DatasetIndex, annotations: &Path, id: ImageId) -> Result<ImageDims> {
    index
        .image(id)
        .map(|r| r.dims)
        .ok_or_else(|| Error::Validation {
            path: annotations.to_path_buf(),
            problems: vec![format!("image_id {id} is not listed in `images`")],
        })
}

fn heatmap(a: HeatmapArgs) -> Result<()> {
    if a.heatmap_downscale == 0 {
        return Err(Error::InvalidParams(
            "heatmap downscale must be at least 1".into(),
        ));
    }
    let index = io::load_annotations(&a.annotations)?;
    let (image_id, class_id) = (ImageId(a.image_id), CategoryId(a.class_id));
    let dims = image_dims(&index, &a.annotations, image_id)?;
    let dets = io::load_detections(&a.detections, &index)?;
    let mut builder = HeatmapBuilder::with_downscale(dims, class_id, a.heatmap_downscale);
    let mut n = 0;
    for d in dets
        .iter()
        .filter(|d| d.image_id == image_id && d.class_id == class_id)
    {
        builder.add_detection(d)?;
        n += 1;
    }
    let map = builder.seal();
    render::save_heatmap_png(&map.render(), &a.out)?;
    let grid = map.grid_dims();
    println!(
        "image {image_id} class {class_id}: {n} proposals, {}x{} heatmap, total heat {}",
        grid.width,
        grid.height,
        map.total_mass()
    );
    Ok(())
}

fn overlay(a: OverlayArgs) -> Result<()> {
    let index = io::load_annotations(&a.annotations)?;
    let image_id = ImageId(a.image_id);
    let dims = image_dims(&index, &a.annotations, image_id)?;
    let kept: Vec<Detection> = io::load_detections(&a.detections, &index)?
        .into_iter()
        .filter(|d| d.image_id == image_id)
        .collect();
    let removed = match &a.removal_log {
        Some(p) => io::load_removal_log(p)?
            .into_iter()
            .filter(|r| r.detection.image_id == image_id)
            .collect(),
        None => Vec::new(),
    };
    render::render_overlay(a.image.as_deref(), dims, &kept, &removed, &a.out)?;
    println!(
        "image {image_id}: {} kept, {} removed",
        kept.len(),
        removed.len()
    );
    Ok(())
}

fn category_label(index: &DatasetIndex, id: CategoryId) -> String {
    match index.categories.iter().find(|c| c.id == id) {
        Some(c) if !c.name.is_empty() => format!("{} ({id})", c.name),
        _ => id.to_string(),
    }
}

fn mode_name(mode: ApMode) -> &'static str {
    match mode {
        ApMode::Coco101 => "coco101",
        ApMode::VocAllPoint => "voc",
    }
}
