use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_reflectguard");

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("REFLECTGUARD_THREADS")
        .output()
        .expect("spawn reflectguard")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs the whole pipeline over the golden spec into `dir`.
fn pipeline(dir: &Path) {
    let p = |n: &str| dir.join(n);
    let spec = fixtures().join("golden_spec.json");
    ok(&[
        "synth",
        "--spec",
        s(&spec),
        "--out-annotations",
        s(&p("annotations.json")),
        "--out-detections",
        s(&p("detections.json")),
        "--out-labels",
        s(&p("labels.json")),
    ]);
    ok(&[
        "filter",
        "--detections",
        s(&p("detections.json")),
        "--annotations",
        s(&p("annotations.json")),
        "--out",
        s(&p("filtered.json")),
        "--removal-log",
        s(&p("removed.json")),
    ]);
    ok(&[
        "eval",
        "--detections",
        s(&p("filtered.json")),
        "--annotations",
        s(&p("annotations.json")),
        "--out",
        s(&p("eval.json")),
    ]);
    ok(&[
        "compare",
        "--before",
        s(&p("detections.json")),
        "--after",
        s(&p("filtered.json")),
        "--baseline-score",
        "0.3",
        "--annotations",
        s(&p("annotations.json")),
        "--out",
        s(&p("compare.json")),
    ]);
    ok(&[
        "heatmap",
        "--detections",
        s(&p("detections.json")),
        "--annotations",
        s(&p("annotations.json")),
        "--image-id",
        "1",
        "--class-id",
        "1",
        "--out",
        s(&p("heatmap.png")),
    ]);
    ok(&[
        "overlay",
        "--detections",
        s(&p("filtered.json")),
        "--removal-log",
        s(&p("removed.json")),
        "--annotations",
        s(&p("annotations.json")),
        "--image-id",
        "1",
        "--out",
        s(&p("overlay.png")),
    ]);
}

const GOLDEN_FILES: [&str; 9] = [
    "annotations.json",
    "detections.json",
    "labels.json",
    "filtered.json",
    "removed.json",
    "eval.json",
    "compare.json",
    "heatmap.png",
    "overlay.png",
];

#[test]
fn pipeline_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden_dir()).unwrap();
        for name in GOLDEN_FILES {
            fs::copy(dir.path().join(name), golden_dir().join(name)).unwrap();
        }
        return;
    }
    for name in GOLDEN_FILES {
        let got = fs::read(dir.path().join(name)).unwrap();
        let want = fs::read(golden_dir().join(name))
            .unwrap_or_else(|e| panic!("missing golden {name} ({e}); run with UPDATE_GOLDEN=1"));
        assert!(got == want, "{name} differs from the golden copy");
    }
}

#[test]
fn golden_filter_removes_only_reflections() {
    let golden = golden_dir();
    let labels: Vec<serde_json::Value> =
        serde_json::from_slice(&fs::read(golden.join("labels.json")).unwrap()).unwrap();
    let dets: Vec<serde_json::Value> =
        serde_json::from_slice(&fs::read(golden.join("detections.json")).unwrap()).unwrap();
    let removed: Vec<serde_json::Value> =
        serde_json::from_slice(&fs::read(golden.join("removed.json")).unwrap()).unwrap();
    let kept: Vec<serde_json::Value> =
        serde_json::from_slice(&fs::read(golden.join("filtered.json")).unwrap()).unwrap();
    assert_eq!(kept.len() + removed.len(), dets.len());
    let mut r = removed.iter().map(|x| &x["detection"]).peekable();
    let mut removed_reflections = 0;
    for (d, l) in dets.iter().zip(&labels) {
        if r.peek() == Some(&d) {
            r.next();
            assert!(l.get("object").is_none(), "object proposal removed: {d}");
            removed_reflections += usize::from(l.get("reflection").is_some());
        }
    }
    assert!(r.next().is_none());
    let reflections = labels
        .iter()
        .filter(|l| l.get("reflection").is_some())
        .count();
    assert!(
        removed_reflections * 10 >= reflections * 9,
        "{removed_reflections}/{reflections}"
    );
}

#[test]
fn filter_summary_lists_classes() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let out = ok(&[
        "filter",
        "--detections",
        s(&dir.path().join("detections.json")),
        "--annotations",
        s(&dir.path().join("annotations.json")),
        "--out",
        s(&dir.path().join("again.json")),
    ]);
    assert!(out.contains("input proposals: 66"), "{out}");
    assert!(out.contains("boat (1)"), "{out}");
    assert!(out.contains("heatmap downscale 1"), "{out}");
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const TINY_ANNOTATIONS: &str = r#"{
  "images": [{"id": 1, "width": 8, "height": 6, "file_name": "a.png"}],
  "categories": [{"id": 1, "name": "boat"}],
  "annotations": [{"id": 1, "image_id": 1, "category_id": 1, "bbox": [1, 1, 3, 2]}]
}"#;

#[test]
fn empty_detections() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write(dir.path(), "ann.json", TINY_ANNOTATIONS);
    let dets = write(dir.path(), "dets.json", "[]");
    let out = dir.path().join("out.json");
    let summary = ok(&[
        "filter",
        "--detections",
        s(&dets),
        "--annotations",
        s(&ann),
        "--out",
        s(&out),
    ]);
    assert_eq!(fs::read_to_string(&out).unwrap().trim(), "[]");
    assert!(summary.contains("removed: 0"));

    let png = dir.path().join("h.png");
    ok(&[
        "heatmap",
        "--detections",
        s(&dets),
        "--annotations",
        s(&ann),
        "--image-id",
        "1",
        "--class-id",
        "1",
        "--out",
        s(&png),
    ]);
    let img = image::open(&png).unwrap();
    assert_eq!(img.color(), image::ColorType::L8);
    assert_eq!((img.width(), img.height()), (8, 6));
    assert!(img.to_luma8().pixels().all(|p| p.0 == [0]));
}

#[test]
fn perfect_detections_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write(dir.path(), "ann.json", TINY_ANNOTATIONS);
    let dets = write(
        dir.path(),
        "dets.json",
        r#"[{"image_id": 1, "category_id": 1, "bbox": [1, 1, 3, 2], "score": 0.8}]"#,
    );
    let out = dir.path().join("eval.json");
    ok(&[
        "eval",
        "--detections",
        s(&dets),
        "--annotations",
        s(&ann),
        "--out",
        s(&out),
        "--mode",
        "voc",
    ]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    for k in ["map_50_95", "map_50", "map_75"] {
        assert_eq!(v[k], 1.0, "{k}");
    }
    assert_eq!(v["mode"], "voc");
    assert_eq!(v["dataset"]["annotations"], 1);
    assert_eq!(v["metadata"]["inputs"][0]["file_name"], "dets.json");
}

#[test]
fn compare_identical_inputs_has_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write(dir.path(), "ann.json", TINY_ANNOTATIONS);
    let dets = write(
        dir.path(),
        "dets.json",
        r#"[{"image_id": 1, "category_id": 1, "bbox": [1, 1, 3, 2], "score": 0.8}, {"image_id": 1, "category_id": 1, "bbox": [5, 3, 2, 2], "score": 0.1}]"#,
    );
    let out = dir.path().join("cmp.json");
    ok(&[
        "compare",
        "--before",
        s(&dets),
        "--after",
        s(&dets),
        "--annotations",
        s(&ann),
        "--out",
        s(&out),
    ]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let c = &v["comparisons"][0];
    assert_eq!(c["label"], "after");
    assert_eq!(c["map_50"]["delta"], 0.0);
    assert_eq!(c["counts"][0]["fp_delta"], 0);
    assert_eq!(c["counts"][0]["fp_reduction_pct"], 0.0);
}

#[test]
fn compare_needs_a_second_row() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write(dir.path(), "ann.json", TINY_ANNOTATIONS);
    let dets = write(dir.path(), "dets.json", "[]");
    let out = run(&[
        "compare",
        "--before",
        s(&dets),
        "--annotations",
        s(&ann),
        "--out",
        s(&dir.path().join("c.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validation_errors_exit_1_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write(dir.path(), "ann.json", TINY_ANNOTATIONS);
    let out = dir.path().join("out.json");

    let bad_json = write(dir.path(), "bad.json", "[{\"image_id\": 1,,}]");
    let r = run(&[
        "filter",
        "--detections",
        s(&bad_json),
        "--annotations",
        s(&ann),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("byte"));

    let bad_box = write(
        dir.path(),
        "box.json",
        r#"[{"image_id": 1, "category_id": 1, "bbox": [1, 1, 0, 2], "score": 0.5}]"#,
    );
    let r = run(&[
        "filter",
        "--detections",
        s(&bad_box),
        "--annotations",
        s(&ann),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("bbox"));

    let unknown_image = write(
        dir.path(),
        "img.json",
        r#"[{"image_id": 9, "category_id": 1, "bbox": [1, 1, 2, 2], "score": 0.5}]"#,
    );
    let r = run(&[
        "filter",
        "--detections",
        s(&unknown_image),
        "--annotations",
        s(&ann),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.status.code(), Some(1));

    let dets = write(dir.path(), "dets.json", "[]");
    let r = run(&[
        "filter",
        "--detections",
        s(&dets),
        "--annotations",
        s(&ann),
        "--out",
        s(&out),
        "--shift-fraction",
        "-1",
    ]);
    assert_eq!(r.status.code(), Some(1));
    let r = run(&["filter", "--bogus-flag"]);
    assert_eq!(r.status.code(), Some(1));

    assert!(!out.exists());
}

#[test]
fn io_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write(dir.path(), "ann.json", TINY_ANNOTATIONS);
    let dets = write(dir.path(), "dets.json", "[]");
    let missing = dir.path().join("missing.json");
    let out = dir.path().join("out.json");
    let r = run(&[
        "filter",
        "--detections",
        s(&missing),
        "--annotations",
        s(&ann),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());

    let unwritable = dir.path().join("no_such_dir").join("out.json");
    let r = run(&[
        "filter",
        "--detections",
        s(&dets),
        "--annotations",
        s(&ann),
        "--out",
        s(&unwritable),
    ]);
    assert_eq!(r.status.code(), Some(2));

    let r = run(&[
        "overlay",
        "--detections",
        s(&dets),
        "--annotations",
        s(&ann),
        "--image-id",
        "1",
        "--image",
        s(&missing),
        "--out",
        s(&dir.path().join("o.png")),
    ]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn threads_flag_and_env_agree() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let p = |n: &str| dir.path().join(n);
    let flagged = p("flag.json");
    ok(&[
        "--threads",
        "3",
        "filter",
        "--detections",
        s(&p("detections.json")),
        "--annotations",
        s(&p("annotations.json")),
        "--out",
        s(&flagged),
    ]);
    let via_env = p("env.json");
    let out = Command::new(BIN)
        .args([
            "filter",
            "--detections",
            s(&p("detections.json")),
            "--annotations",
            s(&p("annotations.json")),
            "--out",
            s(&via_env),
        ])
        .env("REFLECTGUARD_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        fs::read(&flagged).unwrap(),
        fs::read(p("filtered.json")).unwrap()
    );
    assert_eq!(
        fs::read(&via_env).unwrap(),
        fs::read(p("filtered.json")).unwrap()
    );
}

#[test]
fn synth_rejects_invalid_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "spec.json",
        r#"{"scenes": [{"dims": {"width": 50, "height": 50}, "waterline_y": 20, "objects": [[5, 10, 10, 15]], "reflection_conf_scale": 0.2, "seed": 1}]}"#,
    );
    let r = run(&[
        "synth",
        "--spec",
        s(&spec),
        "--out-annotations",
        s(&dir.path().join("a.json")),
        "--out-detections",
        s(&dir.path().join("d.json")),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("waterline"));
    assert!(!dir.path().join("a.json").exists());
}
