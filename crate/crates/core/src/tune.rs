//! Coarse-to-fine search over (confidence threshold, tiling scale).
//!
//! Each round evaluates a full grid on the training images (downscaled, plus
//! augmented variants), min-max normalizes MAE/MAPE/RMSE across the round's
//! combinations and keeps the smallest sum. The next round re-grids around the
//! winner with a finer step.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counting::{aggregate, detect_tiles, CountConfig, CountError, ImageInput, TiledDetections};
use crate::detect::oracle::tile_rng;
use crate::detect::{Concurrency, DetectorBackend};
use crate::evalstat::rank::min_max_sums;
use crate::evalstat::{metric_summary, EvalPair, EvalSeries, StatsError};
use crate::transforms::{Transform, TransformError};

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("invalid tuning setup: {0}")]
    Config(String),
    #[error("round {round}: {source}")]
    Count {
        round: usize,
        #[source]
        source: CountError,
        partial: Box<TuneAudit>,
    },
    #[error("round {round}: {source}")]
    Stats {
        round: usize,
        #[source]
        source: StatsError,
        partial: Box<TuneAudit>,
    },
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TuneError {
    /// Rounds completed before the failure, if any were attempted.
    pub fn partial(&self) -> Option<&TuneAudit> {
        match self {
            TuneError::Count { partial, .. } | TuneError::Stats { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

fn snap(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

/// Inclusive range `lo, lo + step, ...` up to `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl AxisRange {
    pub fn new(lo: f64, hi: f64, step: f64) -> Self {
        AxisRange { lo, hi, step }
    }

    pub fn single(v: f64) -> Self {
        AxisRange {
            lo: v,
            hi: v,
            step: 1.0,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| snap(self.lo + i as f64 * self.step)).collect()
    }

    fn check(&self, name: &str, min_open: bool) -> Result<(), TuneError> {
        let bad = |why: &str| {
            Err(TuneError::Config(format!(
                "{name} range [{}, {}] step {}: {why}",
                self.lo, self.hi, self.step
            )))
        };
        if !(self.lo.is_finite() && self.hi.is_finite() && self.step.is_finite()) {
            return bad("not finite");
        }
        if self.lo > self.hi {
            return bad("lo > hi");
        }
        if self.step <= 0.0 {
            return bad("step must be positive");
        }
        if self.hi > 1.0 || self.lo < 0.0 || (min_open && self.lo == 0.0) {
            return bad("outside the valid range");
        }
        Ok(())
    }

    fn refined(&self, best: f64, bounds: &AxisRange, factor: f64) -> AxisRange {
        AxisRange {
            lo: snap((best - self.step).max(bounds.lo)),
            hi: snap((best + self.step).min(bounds.hi)),
            step: self.step / factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneSpace {
    pub conf: AxisRange,
    pub scale: AxisRange,
}

impl Default for TuneSpace {
    fn default() -> Self {
        TuneSpace {
            conf: AxisRange::new(0.1, 0.9, 0.1),
            scale: AxisRange::new(0.2, 1.0, 0.1),
        }
    }
}

impl TuneSpace {
    pub fn validate(&self) -> Result<(), TuneError> {
        self.conf.check("confidence", false)?;
        self.scale.check("scale", true)
    }

    pub fn is_single_cell(&self) -> bool {
        self.conf.values().len() == 1 && self.scale.values().len() == 1
    }
}

/// A transform sampled once per training image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    FlipH,
    FlipV,
    Rot90Cw,
    /// Rotation by an angle drawn uniformly from `[-max_degrees, max_degrees]`.
    RotContent {
        max_degrees: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocess {
    /// Applied to every training image first; `None` keeps full resolution.
    pub downscale: Option<f64>,
    pub augmentations: Vec<Augmentation>,
    pub seed: u64,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            downscale: Some(0.5),
            augmentations: vec![
                Augmentation::FlipH,
                Augmentation::FlipV,
                Augmentation::Rot90Cw,
                Augmentation::RotContent { max_degrees: 10.0 },
            ],
            seed: 0,
        }
    }
}

impl Preprocess {
    pub fn none() -> Self {
        Preprocess {
            downscale: None,
            augmentations: Vec::new(),
            seed: 0,
        }
    }

    /// The original (downscaled) image followed by one sample of each augmentation.
    pub fn variants(&self, input: &ImageInput) -> Result<Vec<ImageInput>, TransformError> {
        let base = match self.downscale {
            Some(factor) => input.transformed(&Transform::Downscale { factor }, false)?,
            None => input.clone(),
        };
        let mut out = Vec::with_capacity(1 + self.augmentations.len());
        for (i, aug) in self.augmentations.iter().enumerate() {
            let t = match *aug {
                Augmentation::FlipH => Transform::FlipH,
                Augmentation::FlipV => Transform::FlipV,
                Augmentation::Rot90Cw => Transform::Rot90Cw,
                Augmentation::RotContent { max_degrees } => {
                    let mut rng = tile_rng("augment", self.seed, &input.record.id, i as u32, 0);
                    let angle = if max_degrees > 0.0 {
                        rng.random_range(-max_degrees..=max_degrees)
                    } else {
                        0.0
                    };
                    Transform::rot_content(angle)
                }
            };
            t.validate()?;
            out.push(base.transformed(&t, true)?);
        }
        out.insert(0, base);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneOptions {
    pub space: TuneSpace,
    /// Rounds including the coarse one.
    pub rounds: usize,
    pub refine_factor: f64,
    pub preprocess: Preprocess,
    pub dedup_iou: Option<f64>,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            space: TuneSpace::default(),
            rounds: 2,
            refine_factor: 2.0,
            preprocess: Preprocess::default(),
            dedup_iou: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub conf: f64,
    pub scale: f64,
    pub mae: f64,
    pub mape: f64,
    pub rmse: f64,
    pub normalized_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRound {
    pub round: usize,
    pub space: TuneSpace,
    /// Confidence-major grid order.
    pub evaluations: Vec<Evaluation>,
    pub best: Evaluation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TuneAudit {
    pub model: String,
    pub variants: usize,
    pub rounds: Vec<TuneRound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub model: String,
    pub best: CountConfig,
    /// Training images times (1 + augmentations).
    pub variants: usize,
    pub options: TuneOptions,
    pub rounds: Vec<TuneRound>,
}

fn percent(v: f64) -> String {
    let p = (v * 1000.0).round() / 10.0;
    if p.fract() == 0.0 {
        format!("{p:.0}%")
    } else {
        format!("{p:.1}%")
    }
}

impl TuneResult {
    /// `| model | conf% | scale% |`
    pub fn table_row(&self) -> String {
        format!(
            "| {} | {} | {} |",
            self.model,
            percent(self.best.confidence),
            percent(self.best.scale)
        )
    }

    pub fn evaluation_count(&self) -> usize {
        self.rounds.iter().map(|r| r.evaluations.len()).sum()
    }

    pub fn write_json(&self, path: &Path) -> Result<(), TuneError> {
        let text = serde_json::to_string_pretty(self).expect("serializable") + "\n";
        fs::write(path, text).map_err(|source| TuneError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Flat `round,conf,scale,mae,mape,rmse,normalized_sum`.
    pub fn write_csv(&self, path: &Path) -> Result<(), TuneError> {
        write_rounds_csv(&self.rounds, path)
    }
}

pub fn write_rounds_csv(rounds: &[TuneRound], path: &Path) -> Result<(), TuneError> {
    #[derive(Serialize)]
    struct Row {
        round: usize,
        conf: f64,
        scale: f64,
        mae: f64,
        mape: f64,
        rmse: f64,
        normalized_sum: f64,
    }
    let io = |e: csv::Error| TuneError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rounds {
        for e in &r.evaluations {
            w.serialize(Row {
                round: r.round,
                conf: e.conf,
                scale: e.scale,
                mae: e.mae,
                mape: e.mape,
                rmse: e.rmse,
                normalized_sum: e.normalized_sum,
            })
            .map_err(io)?;
        }
    }
    w.flush().map_err(|source| TuneError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn pick_best(evals: &[Evaluation]) -> Evaluation {
    let mut best = evals[0];
    for e in &evals[1..] {
        let better = e.normalized_sum < best.normalized_sum
            || (e.normalized_sum == best.normalized_sum && (e.conf, e.scale) < (best.conf, best.scale));
        if better {
            best = *e;
        }
    }
    best
}

fn run_round(
    variants: &[ImageInput],
    backend: &dyn DetectorBackend,
    space: &TuneSpace,
    dedup_iou: Option<f64>,
) -> Result<Result<Vec<Evaluation>, StatsError>, CountError> {
    let confs = space.conf.values();
    let scales = space.scale.values();
    let detect = |(v, s): (&ImageInput, f64)| detect_tiles(v, backend, s);
    let jobs: Vec<(&ImageInput, f64)> = scales
        .iter()
        .flat_map(|&s| variants.iter().map(move |v| (v, s)))
        .collect();
    let raw: Vec<TiledDetections> = match backend.concurrency() {
        Concurrency::Concurrent => jobs.par_iter().map(|&j| detect(j)).collect::<Result<_, _>>()?,
        Concurrency::Serial => jobs.iter().map(|&j| detect(j)).collect::<Result<_, _>>()?,
    };

    let mut metrics = Vec::with_capacity(confs.len() * scales.len());
    for &conf in &confs {
        for (si, &scale) in scales.iter().enumerate() {
            let per_scale = &raw[si * variants.len()..(si + 1) * variants.len()];
            let pairs = per_scale
                .iter()
                .map(|r| {
                    let c = aggregate(r, conf, dedup_iou);
                    EvalPair {
                        image_id: c.image_id,
                        truth: c.truth.unwrap_or(0) as u64,
                        predicted: c.predicted as u64,
                    }
                })
                .collect();
            let s = match metric_summary(&EvalSeries::new(backend.name(), pairs)) {
                Ok(s) => s,
                Err(e) => return Ok(Err(e)),
            };
            metrics.push((conf, scale, [s.mae, s.mape, s.rmse]));
        }
    }
    let values: Vec<[f64; 3]> = metrics.iter().map(|m| m.2).collect();
    Ok(Ok(metrics
        .iter()
        .zip(min_max_sums(&values))
        .map(|(&(conf, scale, [mae, mape, rmse]), (_, normalized_sum))| Evaluation {
            conf,
            scale,
            mae,
            mape,
            rmse,
            normalized_sum,
        })
        .collect()))
}

/// Search the space on `train`. Images without annotations count as truth 0,
/// which the metrics reject.
pub fn tune(
    model: &str,
    train: &[ImageInput],
    backend: &dyn DetectorBackend,
    opts: &TuneOptions,
) -> Result<TuneResult, TuneError> {
    if train.is_empty() {
        return Err(TuneError::Config("no training images".into()));
    }
    if opts.rounds == 0 {
        return Err(TuneError::Config("rounds must be at least 1".into()));
    }
    if opts.refine_factor.is_nan() || opts.refine_factor < 2.0 {
        return Err(TuneError::Config(format!(
            "refine_factor {} below 2",
            opts.refine_factor
        )));
    }
    opts.space.validate()?;
    if let Some(f) = opts.preprocess.downscale {
        Transform::Downscale { factor: f }.validate()?;
    }

    let mut variants = Vec::new();
    for input in train {
        variants.extend(opts.preprocess.variants(input)?);
    }
    let rounds = if opts.space.is_single_cell() { 1 } else { opts.rounds };

    let mut audit = TuneAudit {
        model: model.to_string(),
        variants: variants.len(),
        rounds: Vec::new(),
    };
    let mut space = opts.space;
    for round in 1..=rounds {
        let evaluations = match run_round(&variants, backend, &space, opts.dedup_iou) {
            Ok(Ok(e)) => e,
            Ok(Err(source)) => {
                return Err(TuneError::Stats {
                    round,
                    source,
                    partial: Box::new(audit),
                })
            }
            Err(source) => {
                return Err(TuneError::Count {
                    round,
                    source,
                    partial: Box::new(audit),
                })
            }
        };
        let best = pick_best(&evaluations);
        log::info!(
            "{model} round {round}: {} combinations, best conf {} scale {} (sum {:.4})",
            evaluations.len(),
            best.conf,
            best.scale,
            best.normalized_sum
        );
        audit.rounds.push(TuneRound {
            round,
            space,
            evaluations,
            best,
        });
        space = TuneSpace {
            conf: space.conf.refined(best.conf, &opts.space.conf, opts.refine_factor),
            scale: space.scale.refined(best.scale, &opts.space.scale, opts.refine_factor),
        };
    }

    let best = audit.rounds.last().expect("at least one round").best;
    Ok(TuneResult {
        model: model.to_string(),
        best: CountConfig {
            scale: best.scale,
            confidence: best.conf,
            dedup_iou: opts.dedup_iou,
        },
        variants: audit.variants,
        options: opts.clone(),
        rounds: audit.rounds,
    })
}
