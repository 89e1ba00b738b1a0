//! Precomputed detections keyed by tile.
//!
//! File layout:
//!
//! ```json
//! {
//!   "provenance": {"model": "yolov8n", "run_id": "2024-05-01"},
//!   "entries": [
//!     {"image_id": "img-001", "side": 782, "row": 0, "col": 1,
//!      "detections": [{"x": 10, "y": 12, "w": 20, "h": 18, "score": 0.91}]}
//!   ]
//! }
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{BackendInput, Concurrency, DetectError, Detection, DetectorBackend, TileRequest};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    #[serde(default)]
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileKey {
    pub image_id: String,
    pub side: u32,
    pub row: u32,
    pub col: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub image_id: String,
    pub side: u32,
    pub row: u32,
    pub col: u32,
    pub detections: Vec<Detection>,
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    provenance: Provenance,
    entries: Vec<StoreEntry>,
}

#[derive(Debug, Clone, Default)]
pub struct DetectionStore {
    pub provenance: Provenance,
    entries: HashMap<TileKey, Vec<Detection>>,
}

impl DetectionStore {
    pub fn new(provenance: Provenance) -> Self {
        DetectionStore {
            provenance,
            entries: HashMap::new(),
        }
    }

    /// Add a tile's detections; boxes are clipped to the tile and validated.
    pub fn insert(&mut self, entry: StoreEntry) -> Result<(), DetectError> {
        let record = format!("{}/s{}/r{}/c{}", entry.image_id, entry.side, entry.row, entry.col);
        if entry.side == 0 {
            return Err(DetectError::Record {
                record,
                detail: "side must be positive".into(),
            });
        }
        let mut detections = Vec::with_capacity(entry.detections.len());
        for (i, d) in entry.detections.into_iter().enumerate() {
            match d.clipped_to(entry.side) {
                Ok(Some(d)) => detections.push(d),
                Ok(None) => {}
                Err(detail) => {
                    return Err(DetectError::Record {
                        record: format!("{record} detection {i}"),
                        detail,
                    })
                }
            }
        }
        let key = TileKey {
            image_id: entry.image_id,
            side: entry.side,
            row: entry.row,
            col: entry.col,
        };
        if self.entries.insert(key, detections).is_some() {
            return Err(DetectError::Record {
                record,
                detail: "duplicate tile entry".into(),
            });
        }
        Ok(())
    }

    /// Detections for a tile; empty when the tile is absent.
    pub fn lookup(&self, image_id: &str, side: u32, row: u32, col: u32) -> &[Detection] {
        let key = TileKey {
            image_id: image_id.to_string(),
            side,
            row,
            col,
        };
        self.entries.get(&key).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, key: &TileKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn detection_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// Write the store with entries sorted by key.
    pub fn write(&self, path: &Path) -> Result<(), DetectError> {
        let mut keys: Vec<&TileKey> = self.entries.keys().collect();
        keys.sort();
        let file = StoreFile {
            provenance: self.provenance.clone(),
            entries: keys
                .into_iter()
                .map(|k| StoreEntry {
                    image_id: k.image_id.clone(),
                    side: k.side,
                    row: k.row,
                    col: k.col,
                    detections: self.entries[k].clone(),
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&file).expect("serializable") + "\n";
        fs::write(path, text).map_err(|source| DetectError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn load_detection_store(path: &Path) -> Result<DetectionStore, DetectError> {
    let text = fs::read_to_string(path).map_err(|source| DetectError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: StoreFile = serde_json::from_str(&text).map_err(|source| DetectError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let mut store = DetectionStore::new(file.provenance);
    for entry in file.entries {
        store.insert(entry)?;
    }
    Ok(store)
}

#[derive(Debug, Clone)]
pub struct StoreBackend {
    store: Arc<DetectionStore>,
}

impl StoreBackend {
    pub fn new(store: DetectionStore) -> Self {
        StoreBackend { store: Arc::new(store) }
    }

    pub fn store(&self) -> &DetectionStore {
        &self.store
    }
}

impl DetectorBackend for StoreBackend {
    fn name(&self) -> &str {
        "store"
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }

    fn input(&self) -> BackendInput {
        BackendInput::Stored
    }

    fn detect(&self, request: &TileRequest<'_>) -> Result<Vec<Detection>, DetectError> {
        let t = request.tile;
        Ok(self.store.lookup(request.image_id, t.side, t.row, t.col).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        fs::write(&path, text).unwrap();
        (dir, path)
    }

    const ONE_TILE: &str = r#"{
        "provenance": {"model": "yolov8n", "run_id": "r1"},
        "entries": [
            {"image_id": "a", "side": 640, "row": 0, "col": 1, "detections": [
                {"x": 1, "y": 2, "w": 3, "h": 4, "score": 0.9},
                {"x": 10, "y": 20, "w": 30, "h": 40, "score": 0.5},
                {"x": 630, "y": 0, "w": 30, "h": 40, "score": 0.2}
            ]}
        ]
    }"#;

    #[test]
    fn lookup_and_absence() {
        let (_d, path) = write(ONE_TILE);
        let store = load_detection_store(&path).unwrap();
        assert_eq!(store.provenance.model, "yolov8n");
        let found = store.lookup("a", 640, 0, 1);
        assert_eq!(found.len(), 3);
        // clipped on ingestion
        assert_eq!(found[2].bbox.w, 10.0);
        assert!(store.lookup("a", 640, 1, 1).is_empty());
        assert!(store.lookup("b", 640, 0, 1).is_empty());
    }

    #[test]
    fn score_out_of_range_names_record() {
        let (_d, path) = write(&ONE_TILE.replace("0.9", "1.3"));
        let err = load_detection_store(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("a/s640/r0/c1 detection 0"), "{msg}");
        assert!(msg.contains("1.3"), "{msg}");
    }

    #[test]
    fn malformed_and_duplicates() {
        let (_d, path) = write("{\"entries\": 3}");
        assert!(matches!(load_detection_store(&path), Err(DetectError::Parse { .. })));
        let mut doc: serde_json::Value = serde_json::from_str(ONE_TILE).unwrap();
        let entries = doc["entries"].as_array_mut().unwrap();
        let mut copy = entries[0].clone();
        copy["detections"] = serde_json::json!([]);
        entries.push(copy);
        let (_d, path) = write(&doc.to_string());
        assert!(load_detection_store(&path)
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
    }

    #[test]
    fn write_round_trip() {
        let (_d, path) = write(ONE_TILE);
        let store = load_detection_store(&path).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("again.json");
        store.write(&out).unwrap();
        let again = load_detection_store(&out).unwrap();
        assert_eq!(again.lookup("a", 640, 0, 1), store.lookup("a", 640, 0, 1));
        assert_eq!(again.provenance, store.provenance);
    }
}
