//! Run configuration: one JSON file plus command-line overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use larvacount::counting::CountConfig;
use larvacount::detect::BackendSpec;
use larvacount::evalstat::metrics::R2Mode;
use larvacount::tiling::TileSpec;
use larvacount::tune::TuneOptions;
use serde::{Deserialize, Serialize};

use crate::failure::{Failure, ResultExt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitParams {
    pub ratios: [f64; 3],
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    /// Model name to counts CSV.
    pub counts: BTreeMap<String, PathBuf>,
    pub alpha: f64,
    pub r2: R2Mode,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            counts: BTreeMap::new(),
            alpha: 0.05,
            r2: R2Mode::Identity,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    /// Directory image paths resolve against; defaults to the manifest's.
    pub image_root: Option<PathBuf>,
    /// An existing split file.
    pub splits: Option<PathBuf>,
    /// Or parameters to draw one.
    pub split: Option<SplitParams>,
    /// Which split `count` and `tune` read; all images when unset.
    pub subset: Option<String>,
    pub backend: Option<BackendSpec>,
    pub model: Option<String>,
    pub count: Option<CountConfig>,
    pub tiling: Option<TileSpec>,
    pub dump_tiles: bool,
    pub tune: Option<TuneOptions>,
    pub eval: EvalParams,
    pub metrics: Option<PathBuf>,
    /// Tuning results listed in the report.
    pub tune_results: Vec<PathBuf>,
    pub seed: u64,
}

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Read a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).config_err(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).config_err(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.manifest,
            &mut self.image_root,
            &mut self.splits,
            &mut self.metrics,
        ]
        .into_iter()
        .flatten()
        {
            absolutize(base, p);
        }
        for p in self.eval.counts.values_mut() {
            absolutize(base, p);
        }
        for p in &mut self.tune_results {
            absolutize(base, p);
        }
        if let Some(spec) = &mut self.backend {
            if spec.kind == "store" {
                if let Some(serde_json::Value::String(s)) = spec.params.get_mut("path") {
                    let mut p = PathBuf::from(&*s);
                    absolutize(base, &mut p);
                    *s = p.to_string_lossy().into_owned();
                }
            }
        }
    }

    pub fn require_manifest(&self) -> Result<&Path, Failure> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Failure::config("no manifest given (--manifest or \"manifest\")"))
    }

    pub fn require_backend(&self) -> Result<BackendSpec, Failure> {
        let mut spec = self
            .backend
            .clone()
            .ok_or_else(|| Failure::config("no backend given (--backend or \"backend\")"))?;
        // seeded synthetic backends follow the run seed unless told otherwise
        if matches!(spec.kind.as_str(), "oracle" | "planted") && !spec.params.contains_key("seed") {
            spec.params.insert("seed".into(), self.seed.into());
        }
        Ok(spec)
    }

    pub fn model_name(&self) -> String {
        self.model
            .clone()
            .or_else(|| self.backend.as_ref().map(|b| b.kind.clone()))
            .unwrap_or_else(|| "model".into())
    }

    pub fn image_root(&self) -> PathBuf {
        match (&self.image_root, &self.manifest) {
            (Some(r), _) => r.clone(),
            (None, Some(m)) => m.parent().map(Path::to_path_buf).unwrap_or_default(),
            (None, None) => PathBuf::new(),
        }
    }
}

/// Parse `key=value`; the value is JSON when it parses as JSON, else a string.
pub fn parse_param(s: &str) -> Result<(String, serde_json::Value), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got '{s}'"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// Parse `name=path`.
pub fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=path, got '{s}'"))?;
    Ok((k.to_string(), PathBuf::from(v)))
}
