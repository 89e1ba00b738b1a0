//! Synthetic detector with a known best (confidence, scale) pair.
//!
//! True boxes are scored in `[conf_opt, 1)` and false positives in
//! `[0, conf_opt)`, so thresholds below `conf_opt` admit extra boxes and
//! thresholds above it lose true ones. Independently, with probability
//! `miss_slope * |scale - scale_opt|` (the scale read back from the tile side)
//! each true box is disturbed: dropped or reported twice, with equal odds. The
//! disturbance has zero mean, so it only ever adds count error and cannot
//! offset the bias of a wrong threshold. At exactly (`conf_opt`, `scale_opt`)
//! every count is exact, provided the boxes sit inside tiles at that scale.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::oracle::{fp_size_range, random_box, tile_rng, uniform};
use super::{BackendInput, Concurrency, DetectError, Detection, DetectorBackend, TileRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    pub conf_opt: f64,
    pub scale_opt: f64,
    pub miss_slope: f64,
    pub fp_per_tile: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            conf_opt: 0.45,
            scale_opt: 0.40,
            miss_slope: 4.0,
            fp_per_tile: 9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedBackend {
    cfg: PlantedConfig,
}

impl PlantedBackend {
    pub fn new(cfg: PlantedConfig) -> Result<Self, DetectError> {
        if !(cfg.conf_opt > 0.0 && cfg.conf_opt < 1.0) {
            return Err(DetectError::Config(format!("conf_opt {} outside (0, 1)", cfg.conf_opt)));
        }
        if !(cfg.scale_opt > 0.0 && cfg.scale_opt <= 1.0) {
            return Err(DetectError::Config(format!(
                "scale_opt {} outside (0, 1]",
                cfg.scale_opt
            )));
        }
        if !(cfg.miss_slope >= 0.0 && cfg.miss_slope.is_finite()) {
            return Err(DetectError::Config("miss_slope must be >= 0".into()));
        }
        Ok(PlantedBackend { cfg })
    }

    /// Disturbance probability for a tile of `side` px on a `width x height` image.
    pub fn miss_probability(&self, side: u32, width: u32, height: u32) -> f64 {
        let shorter = f64::from(width.min(height));
        let scale = f64::from(side) / shorter;
        // ceil() can push the implied scale up by under one pixel's worth
        let off = ((scale - self.cfg.scale_opt).abs() - 1.0 / shorter).max(0.0);
        (self.cfg.miss_slope * off).min(1.0)
    }
}

impl DetectorBackend for PlantedBackend {
    fn name(&self) -> &str {
        "planted"
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }

    fn input(&self) -> BackendInput {
        BackendInput::Truth
    }

    fn detect(&self, request: &TileRequest<'_>) -> Result<Vec<Detection>, DetectError> {
        let truth = request
            .truth
            .ok_or_else(|| DetectError::MissingTruth(self.name().into()))?;
        let tile = request.tile;
        let side = f64::from(tile.side);
        let miss = self.miss_probability(tile.side, request.image_width, request.image_height);
        let mut rng = tile_rng("planted", self.cfg.seed, request.image_id, tile.row, tile.col);

        let mut out = Vec::with_capacity(truth.boxes.len() + self.cfg.fp_per_tile);
        for b in &truth.boxes {
            let u = rng.random::<f64>();
            let score = uniform(&mut rng, [self.cfg.conf_opt, 1.0]);
            if u < 0.5 * miss {
                continue;
            }
            out.push(Detection { bbox: *b, score });
            if u < miss {
                out.push(Detection {
                    bbox: b.translate(1.0, 1.0).clip(side, side).unwrap_or(*b),
                    score,
                });
            }
        }
        let sizes = fp_size_range(truth);
        for _ in 0..self.cfg.fp_per_tile {
            let bbox = random_box(&mut rng, side, sizes);
            let score = uniform(&mut rng, [0.0, self.cfg.conf_opt]).min(self.cfg.conf_opt.next_down());
            out.push(Detection { bbox, score });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BBox;
    use crate::tiling::{Tile, TileAnnotations};

    #[test]
    fn exact_at_planted_point() {
        let backend = PlantedBackend::new(PlantedConfig::default()).unwrap();
        // 1600 px image at scale 0.4 gives 640 px tiles
        assert_eq!(backend.miss_probability(640, 1600, 1600), 0.0);
        assert!((backend.miss_probability(720, 1600, 1600) - 4.0 * (0.05 - 1.0 / 1600.0)).abs() < 1e-12);

        let truth = TileAnnotations {
            tile: Tile {
                row: 0,
                col: 0,
                origin_x: 0,
                origin_y: 0,
                side: 640,
            },
            boxes: vec![BBox::new(1.0, 1.0, 10.0, 10.0); 50],
            source_ids: vec![String::new(); 50],
        };
        let req = TileRequest {
            image_id: "img",
            image_width: 1600,
            image_height: 1600,
            tile: truth.tile,
            truth: Some(&truth),
            tile_path: None,
        };
        let dets = backend.detect(&req).unwrap();
        let above = dets.iter().filter(|d| d.score >= 0.45).count();
        assert_eq!(above, 50);
        assert_eq!(dets.len(), 59);
    }
}
