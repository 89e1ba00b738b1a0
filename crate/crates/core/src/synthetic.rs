//! Synthetic datasets with boxes that never straddle a tile boundary at the
//! requested scales, so a perfect detector recovers every count exactly.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Annotation, BBox, DatasetManifest, ImageRecord};
use crate::tiling::scaled_side;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("image {0}: could not place a box clear of every tile boundary")]
    Placement(String),
    #[error("cannot write {path}: {detail}")]
    Write { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub images: usize,
    /// Image sizes, picked uniformly per image.
    pub sizes: Vec<[u32; 2]>,
    /// Inclusive range of boxes per image.
    pub boxes: [usize; 2],
    /// Inclusive range of box side lengths.
    pub box_size: [u32; 2],
    /// Boxes lie inside one tile for each of these scales, also after
    /// halving the image.
    pub interior_scales: Vec<f64>,
    /// Minimum gap in pixels between a box and any tile edge.
    pub margin: u32,
    pub seed: u64,
    pub prefix: String,
    pub category: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            images: 10,
            sizes: vec![[1600, 1600]],
            boxes: [5, 40],
            box_size: [12, 40],
            interior_scales: vec![0.4],
            margin: 3,
            seed: 0,
            prefix: "syn".into(),
            category: "larva".into(),
        }
    }
}

fn clear_of_edges(lo: f64, len: f64, side: f64, margin: f64) -> bool {
    let k = (lo / side).floor();
    lo - k * side >= margin && lo + len <= (k + 1.0) * side - margin
}

fn interior(b: &BBox, sides: &[(f64, f64)], margin: f64) -> bool {
    sides.iter().all(|&(side, factor)| {
        let s = b.scaled(factor);
        clear_of_edges(s.x, s.w, side, margin) && clear_of_edges(s.y, s.h, side, margin)
    })
}

pub fn generate(cfg: &SyntheticConfig) -> Result<DatasetManifest, SyntheticError> {
    if cfg.sizes.is_empty() || cfg.sizes.iter().any(|s| s[0] == 0 || s[1] == 0) {
        return Err(SyntheticError::Config("sizes must be nonempty and positive".into()));
    }
    if cfg.boxes[0] > cfg.boxes[1] || cfg.box_size[0] == 0 || cfg.box_size[0] > cfg.box_size[1] {
        return Err(SyntheticError::Config(
            "box ranges must satisfy lo <= hi and sizes > 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut manifest = DatasetManifest {
        images: Vec::new(),
        annotations: Vec::new(),
        categories: vec![cfg.category.clone()],
    };
    let margin = f64::from(cfg.margin);
    for i in 0..cfg.images {
        let [width, height] = cfg.sizes[rng.random_range(0..cfg.sizes.len())];
        let id = format!("{}{:04}", cfg.prefix, i);
        // every grid the boxes must respect, in full-resolution and halved coordinates
        let mut sides = Vec::new();
        for &s in &cfg.interior_scales {
            let full = scaled_side(width, height, s).map_err(|e| SyntheticError::Config(e.to_string()))?;
            sides.push((f64::from(full), 1.0));
            let (hw, hh) = (
                ((f64::from(width) * 0.5).round() as u32).max(1),
                ((f64::from(height) * 0.5).round() as u32).max(1),
            );
            let half = scaled_side(hw, hh, s).map_err(|e| SyntheticError::Config(e.to_string()))?;
            sides.push((f64::from(half), 0.5));
        }
        let n = rng.random_range(cfg.boxes[0]..=cfg.boxes[1]);
        for j in 0..n {
            let mut placed = None;
            for _ in 0..10_000 {
                let w = rng.random_range(cfg.box_size[0]..=cfg.box_size[1]).min(width);
                let h = rng.random_range(cfg.box_size[0]..=cfg.box_size[1]).min(height);
                let x = rng.random_range(0..=width - w);
                let y = rng.random_range(0..=height - h);
                let b = BBox::new(f64::from(x), f64::from(y), f64::from(w), f64::from(h));
                if interior(&b, &sides, margin) {
                    placed = Some(b);
                    break;
                }
            }
            let bbox = placed.ok_or_else(|| SyntheticError::Placement(id.clone()))?;
            manifest.annotations.push(Annotation {
                id: format!("{id}-{j}"),
                image_id: id.clone(),
                bbox,
                category: cfg.category.clone(),
            });
        }
        manifest.images.push(ImageRecord {
            id: id.clone(),
            path: format!("{id}.png").into(),
            width,
            height,
        });
    }
    Ok(manifest)
}

/// Dark background with each box filled in a light shade.
pub fn render(record: &ImageRecord, annotations: &[Annotation]) -> RgbImage {
    let mut img = RgbImage::from_pixel(record.width, record.height, Rgb([24, 28, 32]));
    for a in annotations {
        let b = a.bbox;
        for y in b.y as u32..(b.bottom().ceil() as u32).min(record.height) {
            for x in b.x as u32..(b.right().ceil() as u32).min(record.width) {
                img.put_pixel(x, y, Rgb([230, 220, 170]));
            }
        }
    }
    img
}

/// Write `manifest.json` into `dir`, and a PNG per image if `rasters` is set.
pub fn write_dataset(manifest: &DatasetManifest, dir: &Path, rasters: bool) -> Result<PathBuf, SyntheticError> {
    let werr = |path: &Path, e: &dyn std::fmt::Display| SyntheticError::Write {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(|e| werr(dir, &e))?;
    let path = dir.join("manifest.json");
    manifest.write(&path).map_err(|e| werr(&path, &e))?;
    if rasters {
        for rec in &manifest.images {
            let out = dir.join(&rec.path);
            render(rec, &manifest.annotations_for(&rec.id))
                .save(&out)
                .map_err(|e| werr(&out, &e))?;
        }
    }
    Ok(path)
}
