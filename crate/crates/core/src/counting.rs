//! Per-image counting: scaled grid, one backend call per tile, confidence
//! filtering, optional cross-tile NMS, and aggregation.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Annotation, BBox, DatasetManifest, ImageRecord};
use crate::detect::{BackendInput, Concurrency, DetectError, Detection, DetectorBackend, TileRequest};
use crate::tiling::{
    self, extract_tile_pixels, grid_scaled, project_annotations, Tile, TileGrid, TilingError, DEFAULT_KEEP_FRACTION,
};
use crate::transforms::{self, Transform, TransformError};

#[derive(Debug, Error)]
pub enum CountError {
    #[error("invalid count config: {0}")]
    Config(String),
    #[error("image {image_id}, tile r{row} c{col}: {source}")]
    Backend {
        image_id: String,
        row: u32,
        col: u32,
        #[source]
        source: DetectError,
    },
    #[error("image {image_id}, tile r{row} c{col}: backend returned {detail}")]
    InvalidDetection {
        image_id: String,
        row: u32,
        col: u32,
        detail: String,
    },
    #[error("image {0}: backend needs pixels but no raster path is known")]
    NoRaster(String),
    #[error("image {image_id}: raster is {actual:?} after transforms, manifest says {expected:?}")]
    RasterSize {
        image_id: String,
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("count file {path}: {detail}")]
    Csv { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountConfig {
    /// Tiling scale: tile side is `ceil(min(w, h) * scale)`.
    pub scale: f64,
    /// Minimum score for a detection to count.
    pub confidence: f64,
    /// IoU threshold for cross-tile NMS; `None` disables it.
    #[serde(default)]
    pub dedup_iou: Option<f64>,
}

impl CountConfig {
    pub fn new(scale: f64, confidence: f64) -> Self {
        CountConfig {
            scale,
            confidence,
            dedup_iou: None,
        }
    }

    pub fn validate(&self) -> Result<(), CountError> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(CountError::Config(format!("scale {} outside (0, 1]", self.scale)));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(CountError::Config(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        if let Some(iou) = self.dedup_iou {
            if !(iou > 0.0 && iou < 1.0) {
                return Err(CountError::Config(format!("dedup_iou {iou} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Where to find pixels for an image, and what to do to them first.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterSource {
    pub path: PathBuf,
    pub transforms: Vec<Transform>,
}

/// One image as the counting pipeline sees it. `record` holds the dimensions
/// after any transforms in `raster`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageInput {
    pub record: ImageRecord,
    pub annotations: Option<Vec<Annotation>>,
    pub raster: Option<RasterSource>,
}

impl ImageInput {
    /// Build from a manifest entry; relative image paths resolve against `root`.
    pub fn from_manifest(manifest: &DatasetManifest, record: &ImageRecord, root: &Path) -> Self {
        ImageInput {
            record: record.clone(),
            annotations: Some(manifest.annotations_for(&record.id)),
            raster: Some(RasterSource {
                path: root.join(&record.path),
                transforms: Vec::new(),
            }),
        }
    }

    /// Apply `t` to the record dimensions, the annotations and the pending
    /// raster transforms. The new image id is `id~tag` unless `rename` is false.
    pub fn transformed(&self, t: &Transform, rename: bool) -> Result<ImageInput, TransformError> {
        let (w, h) = (self.record.width, self.record.height);
        let (nw, nh) = t.output_dims(w, h);
        let id = if rename {
            format!("{}~{}", self.record.id, t.tag())
        } else {
            self.record.id.clone()
        };
        let annotations = match &self.annotations {
            Some(anns) => Some(
                transforms::apply_to_annotations(t, anns, w, h)?
                    .into_iter()
                    .map(|a| Annotation {
                        image_id: id.clone(),
                        ..a
                    })
                    .collect(),
            ),
            None => None,
        };
        let raster = self.raster.as_ref().map(|r| {
            let mut r = r.clone();
            r.transforms.push(*t);
            r
        });
        Ok(ImageInput {
            record: ImageRecord {
                id,
                path: self.record.path.clone(),
                width: nw,
                height: nh,
            },
            annotations,
            raster,
        })
    }

    pub fn truth(&self) -> Option<usize> {
        self.annotations.as_ref().map(Vec::len)
    }
}

/// Raw backend output for every tile of one image, before thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct TiledDetections {
    pub image_id: String,
    pub truth: Option<usize>,
    pub grid: TileGrid,
    pub tiles: Vec<(Tile, Vec<Detection>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileCount {
    #[serde(flatten)]
    pub tile: Tile,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountResult {
    pub image_id: String,
    pub predicted: usize,
    pub truth: Option<usize>,
    pub per_tile: Vec<TileCount>,
    /// Surviving detections in image coordinates.
    pub detections: Vec<Detection>,
}

impl CountResult {
    pub fn abs_error(&self) -> Option<usize> {
        self.truth.map(|t| t.abs_diff(self.predicted))
    }

    /// `100 * |predicted - truth| / truth`; `None` without truth or when truth is zero.
    pub fn pct_error(&self) -> Option<f64> {
        match self.truth {
            Some(t) if t > 0 => Some(100.0 * t.abs_diff(self.predicted) as f64 / t as f64),
            _ => None,
        }
    }
}

/// Keep detections scoring at least `threshold`, in order.
pub fn filter_by_confidence(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    dets.iter().filter(|d| d.score >= threshold).copied().collect()
}

fn nms_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.y.total_cmp(&b.bbox.y))
        .then(a.bbox.w.total_cmp(&b.bbox.w))
        .then(a.bbox.h.total_cmp(&b.bbox.h))
}

/// Greedy NMS: visit boxes by (score desc, x, y, w, h) and drop any box whose
/// IoU with an already kept box is at least `iou_threshold`.
pub fn global_nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(nms_order);
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        if kept.iter().all(|k| k.bbox.iou(&d.bbox) < iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

fn load_pixels(input: &ImageInput) -> Result<image::RgbImage, CountError> {
    let source = input
        .raster
        .as_ref()
        .ok_or_else(|| CountError::NoRaster(input.record.id.clone()))?;
    let mut img = tiling::load_raster(&source.path)?;
    for t in &source.transforms {
        img = transforms::apply_to_image(t, &img)?;
    }
    let expected = (input.record.width, input.record.height);
    if img.dimensions() != expected {
        return Err(CountError::RasterSize {
            image_id: input.record.id.clone(),
            expected,
            actual: img.dimensions(),
        });
    }
    Ok(img)
}

/// Run the backend on every tile of the scaled grid.
pub fn detect_tiles(
    input: &ImageInput,
    backend: &dyn DetectorBackend,
    scale: f64,
) -> Result<TiledDetections, CountError> {
    let rec = &input.record;
    let grid = grid_scaled(&rec.id, rec.width, rec.height, scale)?;
    let tiles: Vec<Tile> = grid.tiles().collect();

    let projected = match (backend.input(), &input.annotations) {
        (BackendInput::Truth, Some(anns)) => Some(project_annotations(anns, &grid, DEFAULT_KEEP_FRACTION)?),
        _ => None,
    };
    let (pixels, tile_dir) = if backend.input() == BackendInput::Pixels {
        let dir = tempfile::tempdir().map_err(|source| CountError::Io {
            path: std::env::temp_dir(),
            source,
        })?;
        (Some(load_pixels(input)?), Some(dir))
    } else {
        (None, None)
    };

    let run_tile = |(i, tile): (usize, &Tile)| -> Result<(Tile, Vec<Detection>), CountError> {
        let tile_path = match (&pixels, &tile_dir) {
            (Some(img), Some(dir)) => {
                let path = dir.path().join(tiling::tile_file_name(&rec.id, tile));
                extract_tile_pixels(img, tile)
                    .save(&path)
                    .map_err(|source| TilingError::Image {
                        path: path.clone(),
                        source,
                    })?;
                Some(path)
            }
            _ => None,
        };
        let request = TileRequest {
            image_id: &rec.id,
            image_width: rec.width,
            image_height: rec.height,
            tile: *tile,
            truth: projected.as_ref().map(|p| &p[i]),
            tile_path: tile_path.as_deref(),
        };
        let raw = backend.detect(&request).map_err(|source| CountError::Backend {
            image_id: rec.id.clone(),
            row: tile.row,
            col: tile.col,
            source,
        })?;
        let mut dets = Vec::with_capacity(raw.len());
        for d in raw {
            match d.clipped_to(tile.side) {
                Ok(Some(d)) => dets.push(d),
                Ok(None) => {}
                Err(detail) => {
                    return Err(CountError::InvalidDetection {
                        image_id: rec.id.clone(),
                        row: tile.row,
                        col: tile.col,
                        detail,
                    })
                }
            }
        }
        Ok((*tile, dets))
    };

    let per_tile = match backend.concurrency() {
        Concurrency::Concurrent => tiles
            .par_iter()
            .enumerate()
            .map(run_tile)
            .collect::<Result<Vec<_>, _>>()?,
        Concurrency::Serial => tiles.iter().enumerate().map(run_tile).collect::<Result<Vec<_>, _>>()?,
    };
    Ok(TiledDetections {
        image_id: rec.id.clone(),
        truth: input.truth(),
        grid,
        tiles: per_tile,
    })
}

/// Threshold, map to image coordinates, optionally deduplicate, and count.
pub fn aggregate(raw: &TiledDetections, confidence: f64, dedup_iou: Option<f64>) -> CountResult {
    let mut per_tile = Vec::with_capacity(raw.tiles.len());
    let mut global = Vec::new();
    for (tile, dets) in &raw.tiles {
        let kept = filter_by_confidence(dets, confidence);
        per_tile.push(TileCount {
            tile: *tile,
            count: kept.len(),
        });
        let (ox, oy) = (f64::from(tile.origin_x), f64::from(tile.origin_y));
        global.extend(kept.into_iter().map(|d| Detection {
            bbox: d.bbox.translate(ox, oy),
            score: d.score,
        }));
    }
    if let Some(iou) = dedup_iou {
        global = global_nms(&global, iou);
    }
    CountResult {
        image_id: raw.image_id.clone(),
        predicted: global.len(),
        truth: raw.truth,
        per_tile,
        detections: global,
    }
}

/// Count one image. Truth, when present, is the number of annotations on the
/// whole image, not of the tiled projection.
pub fn count_image(
    input: &ImageInput,
    backend: &dyn DetectorBackend,
    cfg: &CountConfig,
) -> Result<CountResult, CountError> {
    cfg.validate()?;
    let raw = detect_tiles(input, backend, cfg.scale)?;
    Ok(aggregate(&raw, cfg.confidence, cfg.dedup_iou))
}

/// Count several images; results come back in input order.
pub fn count_images(
    inputs: &[ImageInput],
    backend: &dyn DetectorBackend,
    cfg: &CountConfig,
) -> Result<Vec<CountResult>, CountError> {
    cfg.validate()?;
    match backend.concurrency() {
        Concurrency::Concurrent => inputs.par_iter().map(|i| count_image(i, backend, cfg)).collect(),
        Concurrency::Serial => inputs.iter().map(|i| count_image(i, backend, cfg)).collect(),
    }
}

/// One line of the count summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub image_id: String,
    pub truth: Option<u64>,
    pub predicted: u64,
    pub abs_err: Option<u64>,
    pub pct_err: Option<f64>,
}

impl From<&CountResult> for CountRow {
    fn from(r: &CountResult) -> Self {
        CountRow {
            image_id: r.image_id.clone(),
            truth: r.truth.map(|t| t as u64),
            predicted: r.predicted as u64,
            abs_err: r.abs_error().map(|e| e as u64),
            pct_err: r.pct_error(),
        }
    }
}

/// Write `image_id,truth,predicted,abs_err,pct_err`.
pub fn write_count_csv(results: &[CountResult], path: &Path) -> Result<(), CountError> {
    let csv_err = |e: csv::Error| CountError::Csv {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in results {
        w.serialize(CountRow::from(r)).map_err(csv_err)?;
    }
    w.flush().map_err(|source| CountError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_count_csv(path: &Path) -> Result<Vec<CountRow>, CountError> {
    let csv_err = |e: csv::Error| CountError::Csv {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<CountRow>, _>>().map_err(csv_err)
}

/// Full per-image results as pretty JSON.
pub fn write_count_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CountError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, text).map_err(|source| CountError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Boxes of the truth set that a perfect detector can see at `scale`, i.e.
/// those retained by the tile projection.
pub fn visible_truth(input: &ImageInput, scale: f64) -> Result<Vec<BBox>, CountError> {
    let rec = &input.record;
    let grid = grid_scaled(&rec.id, rec.width, rec.height, scale)?;
    let anns = input.annotations.as_deref().unwrap_or(&[]);
    Ok(project_annotations(anns, &grid, DEFAULT_KEEP_FRACTION)?
        .into_iter()
        .flat_map(|t| {
            let (ox, oy) = (f64::from(t.tile.origin_x), f64::from(t.tile.origin_y));
            t.boxes.into_iter().map(move |b| b.translate(ox, oy))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{OracleBackend, OracleConfig};
    use proptest::prelude::*;

    fn det(x: f64, y: f64, w: f64, h: f64, score: f64) -> Detection {
        Detection::new(BBox::new(x, y, w, h), score)
    }

    fn input(width: u32, height: u32, boxes: &[BBox]) -> ImageInput {
        ImageInput {
            record: ImageRecord {
                id: "img".into(),
                path: "img.png".into(),
                width,
                height,
            },
            annotations: Some(
                boxes
                    .iter()
                    .enumerate()
                    .map(|(i, b)| Annotation {
                        id: format!("a{i}"),
                        image_id: "img".into(),
                        bbox: *b,
                        category: "fish".into(),
                    })
                    .collect(),
            ),
            raster: None,
        }
    }

    #[test]
    fn confidence_filter() {
        let d = [
            det(0., 0., 1., 1., 0.9),
            det(0., 0., 1., 1., 0.5),
            det(0., 0., 1., 1., 0.3),
        ];
        assert_eq!(filter_by_confidence(&d, 0.45).len(), 2);
        assert_eq!(filter_by_confidence(&d, 0.0).len(), 3);
        assert_eq!(filter_by_confidence(&d, 0.5), vec![d[0], d[1]]);
    }

    #[test]
    fn nms_cases() {
        let a = det(0., 0., 10., 10., 0.9);
        let b = det(0., 0., 10., 10., 0.8);
        assert_eq!(global_nms(&[b, a], 0.5), vec![a]);
        let c = det(50., 50., 10., 10., 0.8);
        assert_eq!(global_nms(&[a, c], 0.5).len(), 2);
        // chain: a~b and b~c overlap, a and c do not
        let a = det(0., 0., 10., 10., 0.9);
        let b = det(3., 0., 10., 10., 0.8);
        let c = det(6., 0., 10., 10., 0.7);
        assert!(a.bbox.iou(&b.bbox) >= 0.5 && b.bbox.iou(&c.bbox) >= 0.5 && a.bbox.iou(&c.bbox) < 0.5);
        assert_eq!(global_nms(&[c, b, a], 0.5), vec![a, c]);
    }

    #[test]
    fn perfect_oracle_is_lossless_for_interior_boxes() {
        let boxes = [
            BBox::new(10.0, 10.0, 20.0, 20.0),
            BBox::new(700.0, 50.0, 15.0, 30.0),
            BBox::new(100.0, 900.0, 40.0, 40.0),
        ];
        let inp = input(1600, 1200, &boxes);
        let backend = OracleBackend::new(OracleConfig::perfect()).unwrap();
        let r = count_image(&inp, &backend, &CountConfig::new(0.5, 0.5)).unwrap();
        assert_eq!(r.predicted, 3);
        assert_eq!(r.truth, Some(3));
        assert_eq!(r.per_tile.iter().map(|t| t.count).sum::<usize>(), 3);
        let mut got: Vec<BBox> = r.detections.iter().map(|d| d.bbox).collect();
        got.sort_by(|a, b| a.x.total_cmp(&b.x));
        let mut want = boxes.to_vec();
        want.sort_by(|a, b| a.x.total_cmp(&b.x));
        assert_eq!(got, want);
    }

    #[test]
    fn half_split_box_is_lost() {
        // tile side 600 at scale 0.5; second box straddles x = 600 evenly
        let boxes = [BBox::new(10.0, 10.0, 20.0, 20.0), BBox::new(590.0, 100.0, 20.0, 20.0)];
        let inp = input(1200, 1200, &boxes);
        let backend = OracleBackend::new(OracleConfig::perfect()).unwrap();
        let r = count_image(&inp, &backend, &CountConfig::new(0.5, 0.0)).unwrap();
        assert_eq!(r.truth, Some(2));
        assert_eq!(r.predicted, 1);
    }

    #[test]
    fn percentage_error() {
        let r = CountResult {
            image_id: "x".into(),
            predicted: 105,
            truth: Some(100),
            per_tile: vec![],
            detections: vec![],
        };
        assert_eq!(r.pct_error(), Some(5.0));
        assert_eq!(r.abs_error(), Some(5));
    }

    #[test]
    fn config_errors() {
        assert!(CountConfig::new(0.0, 0.5).validate().is_err());
        assert!(CountConfig::new(0.5, 1.5).validate().is_err());
        assert!(CountConfig {
            scale: 0.5,
            confidence: 0.5,
            dedup_iou: Some(1.0)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn missing_truth_reports_tile() {
        let mut inp = input(100, 100, &[]);
        inp.annotations = None;
        let backend = OracleBackend::new(OracleConfig::perfect()).unwrap();
        let err = count_image(&inp, &backend, &CountConfig::new(1.0, 0.5)).unwrap_err();
        assert!(err.to_string().contains("r0 c0"), "{err}");
    }

    #[test]
    fn csv_round_trip() {
        let results = vec![
            CountResult {
                image_id: "a".into(),
                predicted: 12,
                truth: Some(10),
                per_tile: vec![],
                detections: vec![],
            },
            CountResult {
                image_id: "b".into(),
                predicted: 3,
                truth: None,
                per_tile: vec![],
                detections: vec![],
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counts.csv");
        write_count_csv(&results, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "image_id,truth,predicted,abs_err,pct_err");
        let rows = read_count_csv(&path).unwrap();
        assert_eq!(rows[0].pct_err, Some(20.0));
        assert_eq!(rows[1].truth, None);
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        proptest::collection::vec(
            (0u8..20, 0u8..20, 2u8..12, 2u8..12, 0u8..=10).prop_map(|(x, y, w, h, s)| {
                det(
                    f64::from(x),
                    f64::from(y),
                    f64::from(w),
                    f64::from(h),
                    f64::from(s) / 10.0,
                )
            }),
            0..8,
        )
    }

    proptest! {
        #[test]
        fn nms_matches_subset_oracle(dets in arb_dets(), t in 0.1f64..0.9) {
            let greedy = global_nms(&dets, t);
            let mut order = dets.clone();
            order.sort_by(nms_order);
            // the greedy result is the unique subset S where a box is in S
            // iff it overlaps no earlier member of S
            let n = order.len();
            let mut fixed_points = Vec::new();
            for mask in 0u32..(1 << n) {
                let ok = (0..n).all(|i| {
                    let blocked = (0..i).any(|j| mask & (1 << j) != 0 && order[j].bbox.iou(&order[i].bbox) >= t);
                    (mask & (1 << i) != 0) == !blocked
                });
                if ok {
                    fixed_points.push((0..n).filter(|i| mask & (1 << i) != 0).map(|i| order[i]).collect::<Vec<_>>());
                }
            }
            prop_assert_eq!(fixed_points.len(), 1);
            prop_assert_eq!(&fixed_points[0], &greedy);
        }

        #[test]
        fn raising_confidence_never_adds(c1 in 0.0f64..1.0, c2 in 0.0f64..1.0, seed: u64) {
            let boxes: Vec<BBox> = (0..30).map(|i| BBox::new(f64::from(i % 6) * 150.0 + 5.0, f64::from(i / 6) * 150.0 + 5.0, 20.0, 20.0)).collect();
            let inp = input(900, 750, &boxes);
            let cfg = OracleConfig { recall: 0.8, fp_per_tile: 3.0, score_range: [0.2, 1.0], fp_score_range: [0.0, 0.9], jitter_px: 2.0, seed };
            let backend = OracleBackend::new(cfg).unwrap();
            let raw = detect_tiles(&inp, &backend, 0.3).unwrap();
            let (lo, hi) = if c1 < c2 { (c1, c2) } else { (c2, c1) };
            prop_assert!(aggregate(&raw, hi, None).predicted <= aggregate(&raw, lo, None).predicted);
            let r = aggregate(&raw, lo, None);
            prop_assert_eq!(r.predicted, r.per_tile.iter().map(|t| t.count).sum::<usize>());
            prop_assert_eq!(&r, &count_image(&inp, &backend, &CountConfig::new(0.3, lo)).unwrap());
        }
    }
}
