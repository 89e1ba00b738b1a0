//! Dataset model: images, ground-truth boxes, the JSON manifest and
//! deterministic train/validation/test splitting.
//!
//! The manifest is a single JSON document:
//!
//! ```json
//! {
//!   "images": [{"id": "img-001", "path": "img-001.jpg", "width": 2604, "height": 4624}],
//!   "annotations": [{"id": "a1", "image_id": "img-001", "bbox": [10, 20, 30, 40], "category": "fish"}],
//!   "categories": ["fish"]
//! }
//! ```
//!
//! Boxes are `[x, y, w, h]` in pixels with a top-left origin. Identifiers may be
//! strings or integers; integers are read as their decimal string.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Tolerance used when checking that split ratios sum to one.
pub const RATIO_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{kind} '{id}': {reason}")]
    Integrity {
        kind: &'static str,
        id: String,
        reason: String,
    },
    #[error("manifest has no images")]
    EmptyManifest,
    #[error("invalid split ratios {0:?}: must be nonnegative and sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("split does not match manifest: {0}")]
    SplitMismatch(String),
}

impl DatasetError {
    fn integrity(kind: &'static str, id: &str, reason: impl Into<String>) -> Self {
        DatasetError::Integrity {
            kind,
            id: id.to_string(),
            reason: reason.into(),
        }
    }
}

/// Axis-aligned box in pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// All four values multiplied by `f`.
    pub fn scaled(&self, f: f64) -> BBox {
        BBox::new(self.x * f, self.y * f, self.w * f, self.h * f)
    }

    /// Overlap with `other`, or `None` when the interiors do not meet.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 > x0 && y1 > y0 {
            Some(BBox::new(x0, y0, x1 - x0, y1 - y0))
        } else {
            None
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        self.intersection(other).map_or(0.0, |b| b.area())
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter <= 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }

    /// True if the box lies inside `[0, width] x [0, height]`.
    pub fn within(&self, width: f64, height: f64) -> bool {
        const EPS: f64 = 1e-9;
        self.x >= -EPS && self.y >= -EPS && self.right() <= width + EPS && self.bottom() <= height + EPS
    }

    /// Clip to `[0, width] x [0, height]`; `None` when nothing positive remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<BBox> {
        self.intersection(&BBox::new(0.0, 0.0, width, height))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y, self.w, self.h].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x, y, w, h] = <[f64; 4]>::deserialize(deserializer)?;
        Ok(BBox { x, y, w, h })
    }
}

fn de_id<'de, D: Deserializer<'de>>(deserializer: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum RawId {
        Str(String),
        Int(i64),
    }
    Ok(match RawId::deserialize(deserializer)? {
        RawId::Str(s) => s,
        RawId::Int(i) => i.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    #[serde(deserialize_with = "de_id")]
    pub id: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(deserialize_with = "de_id")]
    pub id: String,
    #[serde(deserialize_with = "de_id")]
    pub image_id: String,
    pub bbox: BBox,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<String>,
}

impl DatasetManifest {
    /// Check referential integrity and box geometry. Errors name the first
    /// offending record.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut categories = HashSet::new();
        for c in &self.categories {
            if !categories.insert(c.as_str()) {
                return Err(DatasetError::integrity("category", c, "duplicate category"));
            }
        }

        let mut images = BTreeMap::new();
        for img in &self.images {
            if img.width == 0 || img.height == 0 {
                return Err(DatasetError::integrity(
                    "image",
                    &img.id,
                    format!("nonpositive size {}x{}", img.width, img.height),
                ));
            }
            if images.insert(img.id.as_str(), img).is_some() {
                return Err(DatasetError::integrity("image", &img.id, "duplicate id"));
            }
        }

        let mut seen = HashSet::new();
        for ann in &self.annotations {
            if !seen.insert(ann.id.as_str()) {
                return Err(DatasetError::integrity("annotation", &ann.id, "duplicate id"));
            }
            let img = images.get(ann.image_id.as_str()).ok_or_else(|| {
                DatasetError::integrity("annotation", &ann.id, format!("dangling image_id '{}'", ann.image_id))
            })?;
            let b = ann.bbox;
            if !b.is_finite() {
                return Err(DatasetError::integrity("annotation", &ann.id, "non-finite bbox"));
            }
            if b.w <= 0.0 || b.h <= 0.0 {
                return Err(DatasetError::integrity(
                    "annotation",
                    &ann.id,
                    format!("nonpositive box size {}x{}", b.w, b.h),
                ));
            }
            if b.x < 0.0 || b.y < 0.0 || b.right() > f64::from(img.width) || b.bottom() > f64::from(img.height) {
                return Err(DatasetError::integrity(
                    "annotation",
                    &ann.id,
                    format!(
                        "bbox [{}, {}, {}, {}] outside image {}x{}",
                        b.x, b.y, b.w, b.h, img.width, img.height
                    ),
                ));
            }
            if !categories.contains(ann.category.as_str()) {
                return Err(DatasetError::integrity(
                    "annotation",
                    &ann.id,
                    format!("unknown category '{}'", ann.category),
                ));
            }
        }
        Ok(())
    }

    pub fn image(&self, id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Annotations grouped by image id; images without boxes map to an empty list.
    pub fn annotations_by_image(&self) -> BTreeMap<&str, Vec<&Annotation>> {
        let mut out: BTreeMap<&str, Vec<&Annotation>> =
            self.images.iter().map(|i| (i.id.as_str(), Vec::new())).collect();
        for ann in &self.annotations {
            out.entry(ann.image_id.as_str()).or_default().push(ann);
        }
        out
    }

    pub fn annotations_for(&self, image_id: &str) -> Vec<Annotation> {
        self.annotations
            .iter()
            .filter(|a| a.image_id == image_id)
            .cloned()
            .collect()
    }

    pub fn count_for(&self, image_id: &str) -> usize {
        self.annotations.iter().filter(|a| a.image_id == image_id).count()
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        write_json(path, self)
    }
}

/// Read and validate a manifest.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let manifest: DatasetManifest = read_json(path)?;
    manifest.validate()?;
    Ok(manifest)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

/// Image-to-split mapping together with the inputs that reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub assignment: BTreeMap<String, Split>,
}

impl SplitAssignment {
    /// Ids assigned to `split`, in lexicographic order.
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// (train, val, test) sizes.
    pub fn sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.assignment.values().filter(|v| **v == s).count();
        (count(Split::Train), count(Split::Val), count(Split::Test))
    }

    /// Check that the assignment covers exactly the manifest's images.
    pub fn check_against(&self, manifest: &DatasetManifest) -> Result<(), DatasetError> {
        let ids: BTreeSet<&str> = manifest.images.iter().map(|i| i.id.as_str()).collect();
        let assigned: BTreeSet<&str> = self.assignment.keys().map(String::as_str).collect();
        if let Some(missing) = ids.difference(&assigned).next() {
            return Err(DatasetError::SplitMismatch(format!("image '{missing}' unassigned")));
        }
        if let Some(extra) = assigned.difference(&ids).next() {
            return Err(DatasetError::SplitMismatch(format!("unknown image '{extra}'")));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let split: SplitAssignment = read_json(path)?;
        validate_ratios(split.ratios)?;
        Ok(split)
    }
}

fn validate_ratios(ratios: [f64; 3]) -> Result<(), DatasetError> {
    let ok = ratios.iter().all(|r| r.is_finite() && *r >= 0.0)
        && (ratios.iter().sum::<f64>() - 1.0).abs() <= RATIO_TOLERANCE;
    if ok {
        Ok(())
    } else {
        Err(DatasetError::InvalidRatios(ratios))
    }
}

/// Number of images a ratio claims out of `n`; the small offset absorbs
/// products like `0.29 * 100 = 28.999999999999996`.
pub fn split_size(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio + 1e-9).floor() as usize).min(n)
}

/// Seeded split: ids are sorted, shuffled with a ChaCha stream seeded by
/// `seed`, then cut into `floor(n*train)`, `floor(n*val)` and the remainder.
pub fn split_dataset(manifest: &DatasetManifest, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment, DatasetError> {
    validate_ratios(ratios)?;
    if manifest.images.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    let mut ids: Vec<&str> = manifest.images.iter().map(|i| i.id.as_str()).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let n_train = split_size(n, ratios[0]);
    let n_val = split_size(n, ratios[1]).min(n - n_train);
    let assignment = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id.to_string(), split)
        })
        .collect();
    Ok(SplitAssignment {
        seed,
        ratios,
        assignment,
    })
}
