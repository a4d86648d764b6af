//! COCO annotation and results JSON in, filtered results, removal logs and
//! reports out.
//!
//! Ingestion is fail-closed: a file with any invalid record is rejected as a
//! whole, with every problem listed. Outputs are written through a temporary
//! file and renamed into place.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::filter::{FilterParams, RemovalRecord};
use crate::geometry::{BoundingBox, ImageDims};
use crate::types::{Category, CategoryId, Detection, GroundTruth, ImageId};

/// Problems beyond this count are summarized in one line.
const MAX_LISTED_PROBLEMS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: ImageId,
    pub file_name: String,
    pub dims: ImageDims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: Option<u64>,
    pub ground_truth: GroundTruth,
    /// The record's `area`, or the box area when absent.
    pub area: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeCounts {
    pub small: usize,
    pub medium: usize,
    pub large: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub images: usize,
    pub categories: usize,
    pub annotations: usize,
    /// COCO size buckets: area < 32², < 96², otherwise large.
    pub sizes: SizeCounts,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetIndex {
    pub images: Vec<ImageRecord>,
    pub categories: Vec<Category>,
    pub annotations: Vec<Annotation>,
}

impl DatasetIndex {
    pub fn dims_map(&self) -> HashMap<ImageId, ImageDims> {
        self.images.iter().map(|i| (i.id, i.dims)).collect()
    }

    pub fn ground_truths(&self) -> Vec<GroundTruth> {
        self.annotations.iter().map(|a| a.ground_truth).collect()
    }

    pub fn image(&self, id: ImageId) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn stats(&self) -> DatasetStats {
        let mut sizes = SizeCounts::default();
        for a in &self.annotations {
            if a.area < 32.0 * 32.0 {
                sizes.small += 1;
            } else if a.area < 96.0 * 96.0 {
                sizes.medium += 1;
            } else {
                sizes.large += 1;
            }
        }
        DatasetStats {
            images: self.images.len(),
            categories: self.categories.len(),
            annotations: self.annotations.len(),
            sizes,
        }
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let root = parse(text, path)?;
        let mut problems = Problems::default();
        let Some(root) = root.as_object() else {
            return Err(problems.fail_with(path, "top level: expected a JSON object"));
        };

        let mut index = DatasetIndex::default();
        let mut image_ids = HashSet::new();
        for (i, rec) in array_field(root, "images", &mut problems)
            .iter()
            .enumerate()
        {
            let mut r = Record::new(format!("images[{i}]"), rec, &mut problems);
            let (Some(id), Some(w), Some(h)) =
                (r.uint("id"), r.dims_part("width"), r.dims_part("height"))
            else {
                continue;
            };
            let file_name = r.string_or_empty("file_name");
            if !image_ids.insert(id) {
                r.problem("id", "duplicate image id");
                continue;
            }
            index.images.push(ImageRecord {
                id: ImageId(id),
                file_name,
                dims: ImageDims::new(w, h).expect("checked positive"),
            });
        }

        let mut category_ids = HashSet::new();
        for (i, rec) in array_field(root, "categories", &mut problems)
            .iter()
            .enumerate()
        {
            let mut r = Record::new(format!("categories[{i}]"), rec, &mut problems);
            let Some(id) = r.uint("id") else { continue };
            let name = r.string_or_empty("name");
            if !category_ids.insert(id) {
                r.problem("id", "duplicate category id");
                continue;
            }
            index.categories.push(Category {
                id: CategoryId(id),
                name,
            });
        }

        for (i, rec) in array_field(root, "annotations", &mut problems)
            .iter()
            .enumerate()
        {
            let mut r = Record::new(format!("annotations[{i}]"), rec, &mut problems);
            let id = r.optional_uint("id");
            if let Some(id) = id {
                r.label = format!("annotations[{i}] (id {id})");
            }
            let image_id = r.uint("image_id");
            let category_id = r.uint("category_id");
            let bbox = r.bbox("bbox");
            let area = r.optional_number("area");
            let (Some(image_id), Some(category_id), Some(bbox)) = (image_id, category_id, bbox)
            else {
                continue;
            };
            if !image_ids.contains(&image_id) {
                r.problem("image_id", &format!("unknown image id {image_id}"));
                continue;
            }
            if !category_ids.contains(&category_id) {
                r.problem("category_id", &format!("unknown category id {category_id}"));
                continue;
            }
            index.annotations.push(Annotation {
                id,
                ground_truth: GroundTruth {
                    image_id: ImageId(image_id),
                    class_id: CategoryId(category_id),
                    bbox,
                },
                area: area.unwrap_or_else(|| bbox.area()),
            });
        }

        problems.finish(path)?;
        Ok(index)
    }
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<DatasetIndex> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    DatasetIndex::from_json(&text, path)
}

/// Parses a COCO results array against `index`.
pub fn detections_from_json(
    text: &str,
    path: &Path,
    index: &DatasetIndex,
) -> Result<Vec<Detection>> {
    let root = parse(text, path)?;
    let mut problems = Problems::default();
    let Some(records) = root.as_array() else {
        return Err(problems.fail_with(path, "top level: expected a JSON array of results"));
    };
    let image_ids: HashSet<u64> = index.images.iter().map(|i| i.id.0).collect();
    let category_ids: HashSet<u64> = index.categories.iter().map(|c| c.id.0).collect();

    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let mut r = Record::new(format!("results[{i}]"), rec, &mut problems);
        let image_id = r.uint("image_id");
        let category_id = r.uint("category_id");
        let bbox = r.bbox("bbox");
        let score = r.number("score");
        if let Some(s) = score {
            if !(0.0..=1.0).contains(&s) {
                r.problem("score", &format!("{s} is outside [0, 1]"));
                continue;
            }
        }
        let (Some(image_id), Some(category_id), Some(bbox), Some(score)) =
            (image_id, category_id, bbox, score)
        else {
            continue;
        };
        if !image_ids.contains(&image_id) {
            r.problem("image_id", &format!("unknown image id {image_id}"));
            continue;
        }
        if !category_ids.contains(&category_id) {
            r.problem("category_id", &format!("unknown category id {category_id}"));
            continue;
        }
        out.push(
            Detection::new(ImageId(image_id), CategoryId(category_id), bbox, score)
                .expect("score checked"),
        );
    }
    problems.finish(path)?;
    Ok(out)
}

pub fn load_detections(path: impl AsRef<Path>, index: &DatasetIndex) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    detections_from_json(&text, path, index)
}

/// COCO results JSON, one compact array.
pub fn detections_to_json(dets: &[Detection]) -> String {
    serde_json::to_string(dets).expect("detections serialize")
}

pub fn save_detections(dets: &[Detection], path: impl AsRef<Path>) -> Result<()> {
    let mut text = detections_to_json(dets);
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn removal_log_to_json(records: &[RemovalRecord]) -> String {
    serde_json::to_string_pretty(records).expect("removal records serialize")
}

pub fn save_removal_log(records: &[RemovalRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut text = removal_log_to_json(records);
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_removal_log(path: impl AsRef<Path>) -> Result<Vec<RemovalRecord>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| json_error(&text, path, &e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub role: String,
    pub file_name: String,
    pub sha256: String,
}

impl InputFile {
    /// Records the base name and SHA-256 of `path`.
    pub fn digest(role: &str, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            role: role.to_owned(),
            file_name: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub inputs: Vec<InputFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_params: Option<FilterParams>,
}

impl Metadata {
    pub fn new(inputs: Vec<InputFile>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            inputs,
            filter_params: None,
        }
    }
}

/// A report body with provenance metadata in front of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument<T> {
    pub metadata: Metadata,
    #[serde(flatten)]
    pub body: T,
}

pub fn report_to_json<T: Serialize>(report: &T) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}

pub fn save_report<T: Serialize>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, report_to_json(report).as_bytes())
}

pub fn load_report<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| json_error(&text, path, &e))
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse(text: &str, path: &Path) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| json_error(text, path, &e))
}

fn json_error(text: &str, path: &Path, e: &serde_json::Error) -> Error {
    Error::Json {
        path: path.to_path_buf(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    }
}

/// Converts serde_json's 1-based line / byte column into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

#[derive(Default)]
struct Problems {
    list: Vec<String>,
    total: usize,
}

impl Problems {
    fn push(&mut self, p: String) {
        self.total += 1;
        if self.list.len() < MAX_LISTED_PROBLEMS {
            self.list.push(p);
        }
    }

    fn finish(mut self, path: &Path) -> Result<()> {
        if self.total == 0 {
            return Ok(());
        }
        if self.total > self.list.len() {
            self.list
                .push(format!("... and {} more", self.total - self.list.len()));
        }
        Err(Error::Validation {
            path: path.to_path_buf(),
            problems: self.list,
        })
    }

    fn fail_with(mut self, path: &Path, p: &str) -> Error {
        self.push(p.to_owned());
        self.finish(path).unwrap_err()
    }
}

fn array_field<'a>(
    root: &'a Map<String, Value>,
    field: &str,
    problems: &mut Problems,
) -> &'a [Value] {
    match root.get(field) {
        Some(Value::Array(a)) => a,
        Some(_) => {
            problems.push(format!("top level: field `{field}`: expected an array"));
            &[]
        }
        None => {
            problems.push(format!("top level: missing field `{field}`"));
            &[]
        }
    }
}

/// Field accessors for one JSON record that log problems under its label.
struct Record<'a> {
    label: String,
    obj: Option<&'a Map<String, Value>>,
    problems: &'a mut Problems,
}

impl<'a> Record<'a> {
    fn new(label: String, value: &'a Value, problems: &'a mut Problems) -> Self {
        let obj = value.as_object();
        if obj.is_none() {
            problems.push(format!("{label}: expected an object"));
        }
        Self {
            label,
            obj,
            problems,
        }
    }

    fn problem(&mut self, field: &str, what: &str) {
        self.problems
            .push(format!("{}: field `{field}`: {what}", self.label));
    }

    fn field(&mut self, name: &str) -> Option<&'a Value> {
        let obj = self.obj?;
        let v = obj.get(name);
        if v.is_none() {
            self.problem(name, "missing");
        }
        v
    }

    fn uint(&mut self, name: &str) -> Option<u64> {
        let v = self.field(name)?;
        let n = v.as_u64();
        if n.is_none() {
            self.problem(name, &format!("expected a non-negative integer, got {v}"));
        }
        n
    }

    fn optional_uint(&mut self, name: &str) -> Option<u64> {
        self.obj?.get(name)?;
        self.uint(name)
    }

    fn dims_part(&mut self, name: &str) -> Option<u32> {
        let n = self.uint(name)?;
        match u32::try_from(n) {
            Ok(v) if v > 0 => Some(v),
            _ => {
                self.problem(name, &format!("expected a positive pixel count, got {n}"));
                None
            }
        }
    }

    fn number(&mut self, name: &str) -> Option<f64> {
        let v = self.field(name)?;
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.problem(name, &format!("expected a finite number, got {v}"));
                None
            }
        }
    }

    fn optional_number(&mut self, name: &str) -> Option<f64> {
        self.obj?.get(name)?;
        self.number(name)
    }

    fn string_or_empty(&mut self, name: &str) -> String {
        match self.obj.and_then(|o| o.get(name)) {
            Some(Value::String(s)) => s.clone(),
            Some(other) => {
                self.problem(name, &format!("expected a string, got {other}"));
                String::new()
            }
            None => String::new(),
        }
    }

    fn bbox(&mut self, name: &str) -> Option<BoundingBox> {
        let v = self.field(name)?;
        let nums: Option<Vec<f64>> = v
            .as_array()
            .filter(|a| a.len() == 4)
            .and_then(|a| a.iter().map(Value::as_f64).collect());
        let Some(n) = nums.filter(|n| n.iter().all(|x| x.is_finite())) else {
            self.problem(
                name,
                &format!("expected [x, y, w, h] of 4 finite numbers, got {v}"),
            );
            return None;
        };
        match BoundingBox::new(n[0], n[1], n[2], n[3]) {
            Ok(b) => Some(b),
            Err(_) => {
                self.problem(name, &format!("width and height must be > 0, got {v}"));
                None
            }
        }
    }
}
