//! The detector boundary.
//!
//! Every source of scored boxes implements [`DetectorBackend`] and is built by
//! name from a [`BackendRegistry`]. The built-in backends are:
//!
//! | name      | input  | notes                                                        |
//! |-----------|--------|--------------------------------------------------------------|
//! | `oracle`  | truth  | seeded synthetic detector with recall, jitter, false positives |
//! | `planted` | truth  | synthetic detector whose count error vanishes at one (conf, scale) |
//! | `store`   | stored | precomputed detections read from a JSON file                 |
//! | `adapter` | pixels | external process speaking line-delimited JSON                |

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::BBox;
use crate::tiling::{Tile, TileAnnotations};

mod adapter;
pub(crate) mod oracle;
mod planted;
mod registry;
mod store;

pub use adapter::{external_detect, AdapterBackend, AdapterConfig, AdapterProcess};
pub use oracle::{oracle_detect, OracleBackend, OracleConfig};
pub use planted::{PlantedBackend, PlantedConfig};
pub use registry::{BackendFactory, BackendRegistry, BackendSpec};
pub use store::{load_detection_store, DetectionStore, Provenance, StoreBackend, StoreEntry, TileKey};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("adapter did not reply within {0} ms")]
    Timeout(u64),
    #[error("adapter process exited{}", .0.as_deref().map(|s| format!(" ({s})")).unwrap_or_default())]
    ProcessExited(Option<String>),
    #[error("adapter protocol violation: {0}")]
    Protocol(String),
    #[error("cannot start adapter '{command}': {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed detection store {path}: {source}")]
    Parse {
        path: std::path::PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("detection store record {record}: {detail}")]
    Record { record: String, detail: String },
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("unknown backend '{0}'")]
    UnknownBackend(String),
    #[error("backend '{0}' needs ground-truth tile annotations")]
    MissingTruth(String),
    #[error("backend '{0}' needs a tile image path")]
    MissingTilePath(String),
}

/// A scored box in tile-local coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "WireBox", into = "WireBox")]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

/// Flat `{"x", "y", "w", "h", "score"}` form used on the wire and in stores.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub(crate) struct WireBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    score: f64,
}

impl From<WireBox> for Detection {
    fn from(b: WireBox) -> Self {
        Detection {
            bbox: BBox::new(b.x, b.y, b.w, b.h),
            score: b.score,
        }
    }
}

impl From<Detection> for WireBox {
    fn from(d: Detection) -> Self {
        WireBox {
            x: d.bbox.x,
            y: d.bbox.y,
            w: d.bbox.w,
            h: d.bbox.h,
            score: d.score,
        }
    }
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Self {
        Detection { bbox, score }
    }

    /// Clip into the tile square. Fails on a non-finite box or an out-of-range
    /// score; returns `Ok(None)` when nothing of the box is left.
    pub fn clipped_to(self, side: u32) -> Result<Option<Detection>, String> {
        if !self.bbox.is_finite() {
            return Err("non-finite box".into());
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        let s = f64::from(side);
        Ok(self.bbox.clip(s, s).map(|bbox| Detection {
            bbox,
            score: self.score,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concurrency {
    /// Calls must not overlap.
    Serial,
    /// Calls may run in parallel from several threads.
    Concurrent,
}

/// What the counting pipeline must prepare before calling a backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendInput {
    /// Ground-truth boxes projected into the tile.
    Truth,
    /// The tile written to disk as PNG.
    Pixels,
    /// Nothing: results are looked up by (image, side, row, col).
    Stored,
}

/// Everything a backend may look at for one tile.
#[derive(Debug, Clone, Copy)]
pub struct TileRequest<'a> {
    pub image_id: &'a str,
    pub image_width: u32,
    pub image_height: u32,
    pub tile: Tile,
    pub truth: Option<&'a TileAnnotations>,
    pub tile_path: Option<&'a Path>,
}

pub trait DetectorBackend: Send + Sync {
    fn name(&self) -> &str;

    fn concurrency(&self) -> Concurrency;

    fn input(&self) -> BackendInput;

    /// Detections for one tile, in tile-local coordinates. Must be
    /// deterministic for fixed inputs and backend state.
    fn detect(&self, request: &TileRequest<'_>) -> Result<Vec<Detection>, DetectError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_wire_format() {
        let d = Detection::new(BBox::new(10.0, 10.0, 20.0, 20.0), 0.9);
        let text = serde_json::to_string(&d).unwrap();
        assert_eq!(text, r#"{"x":10.0,"y":10.0,"w":20.0,"h":20.0,"score":0.9}"#);
        assert_eq!(serde_json::from_str::<Detection>(&text).unwrap(), d);
    }

    #[test]
    fn clipping_into_tile() {
        let d = Detection::new(BBox::new(30.0, -5.0, 20.0, 20.0), 0.5);
        assert_eq!(
            d.clipped_to(40).unwrap(),
            Some(Detection::new(BBox::new(30.0, 0.0, 10.0, 15.0), 0.5))
        );
        assert_eq!(
            Detection::new(BBox::new(50.0, 0.0, 5.0, 5.0), 0.5)
                .clipped_to(40)
                .unwrap(),
            None
        );
        assert!(Detection::new(BBox::new(0.0, 0.0, 5.0, 5.0), 1.3)
            .clipped_to(40)
            .is_err());
    }
}
