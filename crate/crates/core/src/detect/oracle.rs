use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendInput, Concurrency, DetectError, Detection, DetectorBackend, TileRequest};
use crate::dataset::BBox;
use crate::tiling::TileAnnotations;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Probability that each ground-truth box is reported.
    pub recall: f64,
    /// Mean number of false positives per tile (Poisson).
    pub fp_per_tile: f64,
    pub score_range: [f64; 2],
    pub fp_score_range: [f64; 2],
    /// Maximum centre shift per axis, in pixels.
    pub jitter_px: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            recall: 1.0,
            fp_per_tile: 0.0,
            score_range: [1.0, 1.0],
            fp_score_range: [0.0, 0.5],
            jitter_px: 0.0,
            seed: 0,
        }
    }
}

impl OracleConfig {
    /// A detector that reports every truth box unchanged with score 1.
    pub fn perfect() -> Self {
        OracleConfig::default()
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        let range_ok = |r: [f64; 2]| 0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0;
        if !(0.0..=1.0).contains(&self.recall) {
            return Err(DetectError::Config(format!("recall {} outside [0, 1]", self.recall)));
        }
        if !(self.fp_per_tile >= 0.0 && self.fp_per_tile.is_finite()) {
            return Err(DetectError::Config(format!(
                "fp_per_tile {} must be >= 0",
                self.fp_per_tile
            )));
        }
        if !range_ok(self.score_range) || !range_ok(self.fp_score_range) {
            return Err(DetectError::Config("score ranges must be ordered within [0, 1]".into()));
        }
        if !(self.jitter_px >= 0.0 && self.jitter_px.is_finite()) {
            return Err(DetectError::Config(format!(
                "jitter_px {} must be >= 0",
                self.jitter_px
            )));
        }
        Ok(())
    }
}

/// Random stream for one tile, independent of evaluation order.
pub(crate) fn tile_rng(domain: &str, seed: u64, image_id: &str, row: u32, col: u32) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(domain.as_bytes());
    hasher.update(seed.to_le_bytes());
    hasher.update((image_id.len() as u64).to_le_bytes());
    hasher.update(image_id.as_bytes());
    hasher.update(row.to_le_bytes());
    hasher.update(col.to_le_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

/// Random box inside the tile with width and height drawn from `size_range`.
pub(crate) fn random_box(rng: &mut ChaCha8Rng, side: f64, size_range: [f64; 2]) -> BBox {
    let w = uniform(rng, size_range).clamp(f64::MIN_POSITIVE, side);
    let h = uniform(rng, size_range).clamp(f64::MIN_POSITIVE, side);
    let x = (side - w) * rng.random::<f64>();
    let y = (side - h) * rng.random::<f64>();
    BBox::new(x, y, w, h)
}

/// Size range for synthetic false positives: the span of truth box sides in
/// the tile, or `[4, side/4]` px when there are none.
pub(crate) fn fp_size_range(truth: &TileAnnotations) -> [f64; 2] {
    let side = f64::from(truth.tile.side);
    if truth.boxes.is_empty() {
        let hi = (side / 4.0).max(1.0);
        return [4.0f64.min(hi), hi];
    }
    let lo = truth.boxes.iter().map(|b| b.w.min(b.h)).fold(f64::MAX, f64::min);
    let hi = truth.boxes.iter().map(|b| b.w.max(b.h)).fold(0.0, f64::max);
    [lo, hi]
}

/// Simulated detections for one tile.
///
/// Each truth box is reported with probability `recall`, its centre shifted by
/// up to `jitter_px` and kept inside the tile; then a Poisson number of false
/// positives is added. The random stream is keyed by (seed, image, row, col).
pub fn oracle_detect(image_id: &str, truth: &TileAnnotations, cfg: &OracleConfig) -> Vec<Detection> {
    let tile = truth.tile;
    let side = f64::from(tile.side);
    let mut rng = tile_rng("oracle", cfg.seed, image_id, tile.row, tile.col);
    let mut out = Vec::with_capacity(truth.boxes.len());

    for b in &truth.boxes {
        // draw everything for every box so streams stay aligned across configs
        let keep = rng.random::<f64>() < cfg.recall;
        let dx = uniform(&mut rng, [-cfg.jitter_px, cfg.jitter_px]);
        let dy = uniform(&mut rng, [-cfg.jitter_px, cfg.jitter_px]);
        let score = uniform(&mut rng, cfg.score_range);
        if !keep {
            continue;
        }
        let bbox = if cfg.jitter_px > 0.0 {
            let x = (b.x + dx).clamp(0.0, (side - b.w).max(0.0));
            let y = (b.y + dy).clamp(0.0, (side - b.h).max(0.0));
            BBox::new(x, y, b.w, b.h)
        } else {
            *b
        };
        out.push(Detection { bbox, score });
    }

    if cfg.fp_per_tile > 0.0 {
        let n = Poisson::new(cfg.fp_per_tile).expect("validated rate").sample(&mut rng) as usize;
        let sizes = fp_size_range(truth);
        for _ in 0..n {
            let bbox = random_box(&mut rng, side, sizes);
            let score = uniform(&mut rng, cfg.fp_score_range);
            out.push(Detection { bbox, score });
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct OracleBackend {
    cfg: OracleConfig,
}

impl OracleBackend {
    pub fn new(cfg: OracleConfig) -> Result<Self, DetectError> {
        cfg.validate()?;
        Ok(OracleBackend { cfg })
    }
}

impl DetectorBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
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
        Ok(oracle_detect(request.image_id, truth, &self.cfg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiling::Tile;

    fn tile_with(boxes: Vec<BBox>, row: u32, col: u32) -> TileAnnotations {
        let side = 640;
        TileAnnotations {
            tile: Tile {
                row,
                col,
                origin_x: col * side,
                origin_y: row * side,
                side,
            },
            source_ids: (0..boxes.len()).map(|i| format!("a{i}")).collect(),
            boxes,
        }
    }

    fn some_boxes() -> Vec<BBox> {
        vec![
            BBox::new(10.0, 10.0, 20.0, 12.0),
            BBox::new(300.0, 200.0, 18.0, 25.0),
            BBox::new(600.0, 610.0, 30.0, 30.0),
        ]
    }

    #[test]
    fn perfect_detector_returns_truth() {
        let t = tile_with(some_boxes(), 0, 0);
        let d = oracle_detect("img", &t, &OracleConfig::perfect());
        assert_eq!(d.len(), 3);
        for (det, b) in d.iter().zip(&t.boxes) {
            assert_eq!(det.bbox, *b);
            assert_eq!(det.score, 1.0);
        }
    }

    #[test]
    fn zero_recall_is_empty() {
        let t = tile_with(some_boxes(), 0, 0);
        let cfg = OracleConfig {
            recall: 0.0,
            ..OracleConfig::default()
        };
        assert!(oracle_detect("img", &t, &cfg).is_empty());
    }

    #[test]
    fn false_positive_rate_and_determinism() {
        let cfg = OracleConfig {
            fp_per_tile: 2.0,
            seed: 99,
            ..OracleConfig::default()
        };
        let mut extra = 0usize;
        for i in 0..10_000u32 {
            let t = tile_with(vec![BBox::new(5.0, 5.0, 10.0, 10.0)], i / 100, i % 100);
            let d = oracle_detect("img", &t, &cfg);
            assert_eq!(d[0].bbox, t.boxes[0]);
            for fp in &d[1..] {
                assert!(fp.bbox.within(640.0, 640.0));
                assert!((0.0..=0.5).contains(&fp.score));
            }
            extra += d.len() - 1;
        }
        let mean = extra as f64 / 10_000.0;
        assert!((mean - 2.0).abs() <= 0.04, "mean extra {mean}");

        let t = tile_with(some_boxes(), 3, 4);
        assert_eq!(oracle_detect("img", &t, &cfg), oracle_detect("img", &t, &cfg));
    }

    #[test]
    fn recall_law() {
        let cfg = OracleConfig {
            recall: 0.7,
            seed: 5,
            jitter_px: 3.0,
            score_range: [0.3, 0.9],
            ..OracleConfig::default()
        };
        let mut total = 0usize;
        let mut kept = 0usize;
        for i in 0..2_000u32 {
            let t = tile_with(some_boxes().into_iter().chain(some_boxes()).collect(), i, 0);
            total += t.boxes.len();
            let d = oracle_detect(&format!("img{}", i % 7), &t, &cfg);
            for det in &d {
                assert!(det.bbox.within(640.0, 640.0));
                assert!((0.3..=0.9).contains(&det.score));
            }
            kept += d.len();
        }
        assert!(total >= 10_000);
        let frac = kept as f64 / total as f64;
        assert!((frac - 0.7).abs() <= 0.02, "recall {frac}");
    }

    #[test]
    fn order_independent_streams() {
        let cfg = OracleConfig {
            recall: 0.5,
            fp_per_tile: 1.0,
            seed: 1,
            ..OracleConfig::default()
        };
        let tiles: Vec<_> = (0..20).map(|i| tile_with(some_boxes(), i / 5, i % 5)).collect();
        let forward: Vec<_> = tiles.iter().map(|t| oracle_detect("x", t, &cfg)).collect();
        let mut backward: Vec<_> = tiles.iter().rev().map(|t| oracle_detect("x", t, &cfg)).collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn config_validation() {
        assert!(OracleBackend::new(OracleConfig {
            recall: 1.5,
            ..OracleConfig::default()
        })
        .is_err());
        assert!(OracleBackend::new(OracleConfig {
            score_range: [0.8, 0.2],
            ..OracleConfig::default()
        })
        .is_err());
        assert!(OracleBackend::new(OracleConfig {
            fp_per_tile: -1.0,
            ..OracleConfig::default()
        })
        .is_err());
    }
}
