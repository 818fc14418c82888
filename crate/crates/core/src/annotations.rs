//! COCO to YOLO label conversion with per-split count validation.
//!
//! Directory convention for a converted dataset:
//!
//! ```text
//! <root>/data.yaml
//! <root>/images/<split>/<stem>.<ext>
//! <root>/labels/<split>/<stem>.txt
//! ```
//!
//! A label file has one `class cx cy w h` line per object, six decimals,
//! coordinates normalized by the image size.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const SPLITS: [&str; 3] = ["train", "validation", "test"];
pub const IMAGE_EXTENSIONS: [&str; 7] = ["jpg", "jpeg", "png", "bmp", "tif", "tiff", "webp"];

/// Slack allowed when checking that a box lies inside its image, in pixels.
const BBOX_SLACK_PX: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: i64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<i64>,
    pub image_id: i64,
    pub category_id: i64,
    /// `[x_min, y_min, width, height]` in pixels.
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: i64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

impl CocoDataset {
    pub fn validate(&self) -> Result<()> {
        let mut by_id = HashMap::with_capacity(self.images.len());
        for img in &self.images {
            if img.width == 0 || img.height == 0 {
                return Err(Error::Validation(format!(
                    "image {} ({}) has zero size",
                    img.id, img.file_name
                )));
            }
            if by_id.insert(img.id, img).is_some() {
                return Err(Error::Validation(format!("duplicate image id {}", img.id)));
            }
        }
        for (i, ann) in self.annotations.iter().enumerate() {
            let label = match ann.id {
                Some(id) => format!("annotation {id}"),
                None => format!("annotation #{i}"),
            };
            let Some(img) = by_id.get(&ann.image_id) else {
                return Err(Error::Validation(format!(
                    "{label} references missing image id {}",
                    ann.image_id
                )));
            };
            let [x, y, w, h] = ann.bbox;
            if ann.bbox.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Validation(format!(
                    "{label} has a negative or non-finite bbox {:?}",
                    ann.bbox
                )));
            }
            if x + w > img.width as f64 + BBOX_SLACK_PX || y + h > img.height as f64 + BBOX_SLACK_PX {
                return Err(Error::Validation(format!(
                    "{label} bbox {:?} exceeds image {} ({}x{})",
                    ann.bbox, img.file_name, img.width, img.height
                )));
            }
        }
        Ok(())
    }
}

pub fn parse_coco(document: &str) -> Result<CocoDataset> {
    let dataset: CocoDataset = serde_json::from_str(document)?;
    dataset.validate()?;
    Ok(dataset)
}

/// Bijection between COCO category ids and 0-based class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct IdMap {
    category_ids: Vec<i64>,
    names: Vec<String>,
    index: HashMap<i64, usize>,
}

impl IdMap {
    /// Categories sorted by id ascending, indexed from 0.
    pub fn from_categories(categories: &[CocoCategory]) -> Result<Self> {
        let mut sorted: Vec<_> = categories.iter().collect();
        sorted.sort_by_key(|c| c.id);
        Self::from_ordered(sorted.into_iter().map(|c| (c.id, c.name.clone())))
    }

    /// Uses the given order as class index order.
    pub fn from_ordered(pairs: impl IntoIterator<Item = (i64, String)>) -> Result<Self> {
        let mut map = IdMap {
            category_ids: Vec::new(),
            names: Vec::new(),
            index: HashMap::new(),
        };
        for (id, name) in pairs {
            if map.index.insert(id, map.category_ids.len()).is_some() {
                return Err(Error::Validation(format!("duplicate category id {id}")));
            }
            map.category_ids.push(id);
            map.names.push(name);
        }
        Ok(map)
    }

    pub fn class_index(&self, category_id: i64) -> Result<usize> {
        self.index
            .get(&category_id)
            .copied()
            .ok_or(Error::UnknownClass(category_id))
    }

    /// Index with an implicit background class at 0.
    pub fn one_indexed(&self, category_id: i64) -> Result<usize> {
        self.class_index(category_id).map(|i| i + 1)
    }

    pub fn category_id(&self, class_index: usize) -> Option<i64> {
        self.category_ids.get(class_index).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.category_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.category_ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YoloLabel<T> {
    pub class_index: usize,
    pub cx: T,
    pub cy: T,
    pub w: T,
    pub h: T,
}

impl<T: Real> YoloLabel<T> {
    pub fn to_line(&self) -> String {
        format!(
            "{} {:.6} {:.6} {:.6} {:.6}",
            self.class_index, self.cx, self.cy, self.w, self.h
        )
    }
}

fn unit<T: Real>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

pub fn coco_box_to_yolo<T: Real>(
    bbox: [T; 4],
    img_w: T,
    img_h: T,
    category_id: i64,
    id_map: &IdMap,
) -> Result<YoloLabel<T>> {
    if !(img_w > T::zero() && img_h > T::zero()) {
        return Err(Error::Validation(format!(
            "image dimensions must be positive, got {img_w}x{img_h}"
        )));
    }
    let class_index = id_map.class_index(category_id)?;
    let [x, y, w, h] = bbox;
    let two = T::lit(2.0);
    Ok(YoloLabel {
        class_index,
        cx: unit((x + w / two) / img_w),
        cy: unit((y + h / two) / img_h),
        w: unit(w / img_w),
        h: unit(h / img_h),
    })
}

/// Inverse of [`coco_box_to_yolo`]: back to `[x_min, y_min, width, height]`.
pub fn yolo_box_to_coco<T: Real>(label: &YoloLabel<T>, img_w: T, img_h: T) -> [T; 4] {
    let w = label.w * img_w;
    let h = label.h * img_h;
    let two = T::lit(2.0);
    [label.cx * img_w - w / two, label.cy * img_h - h / two, w, h]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitLayout {
    pub name: String,
    pub image_dir: PathBuf,
    pub label_dir: PathBuf,
    pub class_names: Vec<String>,
}

impl SplitLayout {
    /// `<root>/images/<split>` and `<root>/labels/<split>`.
    pub fn under(root: &Path, split: &str, class_names: Vec<String>) -> Self {
        SplitLayout {
            name: split.to_string(),
            image_dir: root.join("images").join(split),
            label_dir: root.join("labels").join(split),
            class_names,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConversionSummary {
    pub split: String,
    pub images: usize,
    pub label_files: usize,
    pub objects: usize,
    /// Object count per class index.
    pub per_class: Vec<usize>,
}

fn stem_of(file_name: &str) -> Result<String> {
    Path::new(file_name)
        .file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::Validation(format!("image file name {file_name:?} has no stem")))
}

/// Label file contents per image, in dataset image order.
pub fn label_files(dataset: &CocoDataset, id_map: &IdMap) -> Result<Vec<(String, String)>> {
    let mut per_image: HashMap<i64, Vec<&CocoAnnotation>> = HashMap::new();
    for ann in &dataset.annotations {
        per_image.entry(ann.image_id).or_default().push(ann);
    }
    let mut seen = HashSet::new();
    let mut files = Vec::with_capacity(dataset.images.len());
    for img in &dataset.images {
        let stem = stem_of(&img.file_name)?;
        if !seen.insert(stem.clone()) {
            return Err(Error::Validation(format!("duplicate image stem {stem:?}")));
        }
        let mut text = String::new();
        for ann in per_image.get(&img.id).map(Vec::as_slice).unwrap_or_default() {
            let label = coco_box_to_yolo(
                ann.bbox,
                img.width as f64,
                img.height as f64,
                ann.category_id,
                id_map,
            )?;
            let _ = writeln!(text, "{}", label.to_line());
        }
        files.push((stem, text));
    }
    Ok(files)
}

pub fn convert_split(dataset: &CocoDataset, layout: &SplitLayout, id_map: &IdMap) -> Result<ConversionSummary> {
    dataset.validate()?;
    let files = label_files(dataset, id_map)?;
    fs::create_dir_all(&layout.label_dir).map_err(|e| Error::io(&layout.label_dir, e))?;

    let mut per_class = vec![0usize; id_map.len()];
    for ann in &dataset.annotations {
        per_class[id_map.class_index(ann.category_id)?] += 1;
    }
    for (stem, text) in &files {
        let path = layout.label_dir.join(format!("{stem}.txt"));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(ConversionSummary {
        split: layout.name.clone(),
        images: dataset.images.len(),
        label_files: files.len(),
        objects: dataset.annotations.len(),
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitValidation {
    pub split: String,
    pub images: usize,
    pub labels: usize,
    /// Image stems without a label file.
    pub missing_labels: Vec<String>,
    /// Label stems without an image.
    pub orphan_labels: Vec<String>,
}

impl SplitValidation {
    pub fn passed(&self) -> bool {
        self.images == self.labels && self.missing_labels.is_empty() && self.orphan_labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub splits: Vec<SplitValidation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.splits.iter().all(SplitValidation::passed)
    }
}

fn stems(dir: &Path, keep: impl Fn(&str) -> bool) -> BTreeMap<String, ()> {
    let mut out = BTreeMap::new();
    let Ok(entries) = fs::read_dir(dir) else {
        return out;
    };
    for entry in entries.flatten() {
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if !keep(&ext) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), ());
        }
    }
    out
}

/// Compares image and label files per split. A missing directory counts as empty.
pub fn validate_counts(layouts: &[SplitLayout]) -> ValidationReport {
    let splits = layouts
        .iter()
        .map(|layout| {
            let images = stems(&layout.image_dir, |ext| IMAGE_EXTENSIONS.contains(&ext));
            let labels = stems(&layout.label_dir, |ext| ext == "txt");
            SplitValidation {
                split: layout.name.clone(),
                images: images.len(),
                labels: labels.len(),
                missing_labels: images.keys().filter(|s| !labels.contains_key(*s)).cloned().collect(),
                orphan_labels: labels.keys().filter(|s| !images.contains_key(*s)).cloned().collect(),
            }
        })
        .collect();
    ValidationReport { splits }
}

/// Dataset configuration listing class names in index order.
pub fn dataset_config(root: &Path, splits: &[&str], class_names: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "path: {}", root.display());
    for split in splits {
        let key = match *split {
            "validation" => "val",
            other => other,
        };
        let _ = writeln!(out, "{key}: images/{split}");
    }
    let _ = writeln!(out, "nc: {}", class_names.len());
    let _ = writeln!(out, "names:");
    for (i, name) in class_names.iter().enumerate() {
        let _ = writeln!(out, "  {i}: '{}'", name.replace('\'', "''"));
    }
    out
}
