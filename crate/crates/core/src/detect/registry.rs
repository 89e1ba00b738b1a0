use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{
    load_detection_store, AdapterBackend, AdapterConfig, DetectError, DetectorBackend, OracleBackend, OracleConfig,
    PlantedBackend, PlantedConfig, StoreBackend,
};

/// Builds a backend from its JSON parameters.
pub type BackendFactory = fn(&Value) -> Result<Box<dyn DetectorBackend>, DetectError>;

/// Backend selection as written in a run config:
/// `{"kind": "oracle", "recall": 0.9, "seed": 3}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub kind: String,
    #[serde(flatten)]
    pub params: Map<String, Value>,
}

impl BackendSpec {
    pub fn new(kind: impl Into<String>, params: Value) -> Self {
        let params = match params {
            Value::Object(map) => map,
            _ => Map::new(),
        };
        BackendSpec {
            kind: kind.into(),
            params,
        }
    }
}

#[derive(Clone, Default)]
pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

fn params<T: for<'de> Deserialize<'de>>(kind: &str, value: &Value) -> Result<T, DetectError> {
    serde_json::from_value(value.clone()).map_err(|e| DetectError::Config(format!("{kind}: {e}")))
}

fn build_oracle(value: &Value) -> Result<Box<dyn DetectorBackend>, DetectError> {
    let cfg: OracleConfig = params("oracle", value)?;
    Ok(Box::new(OracleBackend::new(cfg)?))
}

fn build_planted(value: &Value) -> Result<Box<dyn DetectorBackend>, DetectError> {
    let cfg: PlantedConfig = params("planted", value)?;
    Ok(Box::new(PlantedBackend::new(cfg)?))
}

fn build_store(value: &Value) -> Result<Box<dyn DetectorBackend>, DetectError> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct StoreParams {
        path: PathBuf,
    }
    let p: StoreParams = params("store", value)?;
    Ok(Box::new(StoreBackend::new(load_detection_store(&p.path)?)))
}

fn build_adapter(value: &Value) -> Result<Box<dyn DetectorBackend>, DetectError> {
    let cfg: AdapterConfig = params("adapter", value)?;
    Ok(Box::new(AdapterBackend::new(&cfg)?))
}

impl BackendRegistry {
    /// A registry with no backends.
    pub fn empty() -> Self {
        Self::default()
    }

    /// `oracle`, `planted`, `store` and `adapter`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("oracle", build_oracle);
        r.register("planted", build_planted);
        r.register("store", build_store);
        r.register("adapter", build_adapter);
        r
    }

    /// Register or replace a factory.
    pub fn register(&mut self, name: &str, factory: BackendFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, spec: &BackendSpec) -> Result<Box<dyn DetectorBackend>, DetectError> {
        let factory = self
            .factories
            .get(&spec.kind)
            .ok_or_else(|| DetectError::UnknownBackend(spec.kind.clone()))?;
        factory(&Value::Object(spec.params.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{BackendInput, Concurrency, Detection, TileRequest};
    use serde_json::json;

    struct Nothing;

    impl DetectorBackend for Nothing {
        fn name(&self) -> &str {
            "nothing"
        }
        fn concurrency(&self) -> Concurrency {
            Concurrency::Concurrent
        }
        fn input(&self) -> BackendInput {
            BackendInput::Stored
        }
        fn detect(&self, _: &TileRequest<'_>) -> Result<Vec<Detection>, DetectError> {
            Ok(vec![])
        }
    }

    #[test]
    fn builtins_by_name() {
        let r = BackendRegistry::with_builtins();
        assert_eq!(r.names().collect::<Vec<_>>(), ["adapter", "oracle", "planted", "store"]);
        let b = r
            .build(&BackendSpec::new("oracle", json!({"recall": 0.5, "seed": 3})))
            .unwrap();
        assert_eq!(b.name(), "oracle");
        let b = r.build(&BackendSpec::new("planted", json!({}))).unwrap();
        assert_eq!(b.input(), BackendInput::Truth);
    }

    #[test]
    fn bad_specs() {
        let r = BackendRegistry::with_builtins();
        assert!(matches!(
            r.build(&BackendSpec::new("yolo", json!({}))),
            Err(DetectError::UnknownBackend(_))
        ));
        assert!(matches!(
            r.build(&BackendSpec::new("oracle", json!({"recal": 1.0}))),
            Err(DetectError::Config(_))
        ));
        assert!(r
            .build(&BackendSpec::new("store", json!({"path": "/does/not/exist.json"})))
            .is_err());
    }

    #[test]
    fn custom_registration() {
        let mut r = BackendRegistry::empty();
        r.register("nothing", |_| Ok(Box::new(Nothing)));
        assert_eq!(
            r.build(&BackendSpec::new("nothing", json!(null))).unwrap().name(),
            "nothing"
        );
    }

    #[test]
    fn spec_json_shape() {
        let spec: BackendSpec = serde_json::from_value(json!({"kind": "oracle", "recall": 0.9})).unwrap();
        assert_eq!(spec.kind, "oracle");
        assert_eq!(spec.params["recall"], json!(0.9));
        assert_eq!(
            serde_json::to_value(&spec).unwrap(),
            json!({"kind": "oracle", "recall": 0.9})
        );
    }
}
