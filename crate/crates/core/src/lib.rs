//! Tiled object-detection counting.
//!
//! High-resolution images are split into square tiles, a pluggable detector
//! runs on each tile, and the surviving detections are summed into a count.
//! Around that pipeline sit the pieces needed to run an experiment end to end:
//!
//! * [`dataset`]: manifest format, validation and seeded train/val/test splits.
//! * [`tiling`]: fixed-size and scale-factor grids, the 60% retention rule,
//!   padded tile extraction.
//! * [`transforms`]: flips, rotations and downscaling for images and boxes.
//! * [`detect`]: the detector boundary and its backends (synthetic oracle,
//!   precomputed detection files, external line-delimited JSON processes),
//!   all selectable by name through a [`detect::BackendRegistry`].
//! * [`counting`]: per-image counting with confidence filtering and optional NMS.
//! * [`evalstat`]: MAE/MAPE/RMSE/R², min-max ranking, one-way ANOVA, the
//!   studentized range distribution, Tukey HSD and compact letter displays.
//! * [`tune`]: coarse-to-fine search over (confidence, tiling scale).

pub mod counting;
pub mod dataset;
pub mod detect;
pub mod evalstat;
pub mod report;
pub mod synthetic;
pub mod tiling;
pub mod transforms;
pub mod tune;

pub use counting::{count_image, CountConfig, CountResult, ImageInput};
pub use dataset::{Annotation, BBox, DatasetManifest, ImageRecord, Split, SplitAssignment};
pub use detect::{BackendRegistry, Detection, DetectorBackend};
pub use tiling::{Tile, TileGrid, TileSpec};
pub use tune::{tune, TuneResult, TuneSpace};

/// Version string embedded in run records and rendered artifacts.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
