//! Errors carrying the process exit code.

use std::fmt::Display;

use larvacount::counting::CountError;
use larvacount::tune::TuneError;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: i32, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }

    pub fn config(msg: impl Display) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn validation(msg: impl Display) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // library errors often repeat their source in their own message
        let mut text = String::new();
        for cause in self.error.chain() {
            let part = cause.to_string();
            if text.ends_with(&part) {
                continue;
            }
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&part);
        }
        f.write_str(&text)
    }
}

pub trait ResultExt<T> {
    fn with_code<C: Display>(self, code: i32, context: impl FnOnce() -> C) -> Result<T, Failure>;

    fn config_err<C: Display>(self, context: impl FnOnce() -> C) -> Result<T, Failure>
    where
        Self: Sized,
    {
        self.with_code(EXIT_CONFIG, context)
    }

    fn validation_err<C: Display>(self, context: impl FnOnce() -> C) -> Result<T, Failure>
    where
        Self: Sized,
    {
        self.with_code(EXIT_VALIDATION, context)
    }

    fn io_err<C: Display>(self, context: impl FnOnce() -> C) -> Result<T, Failure>
    where
        Self: Sized,
    {
        self.with_code(EXIT_OTHER, context)
    }
}

impl<T, E> ResultExt<T> for Result<T, E>
where
    E: std::error::Error + Send + Sync + 'static,
{
    fn with_code<C: Display>(self, code: i32, context: impl FnOnce() -> C) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            error: anyhow::Error::new(e).context(context().to_string()),
        })
    }
}

pub fn count_code(e: &CountError) -> i32 {
    match e {
        CountError::Config(_) => EXIT_CONFIG,
        CountError::Backend { .. } | CountError::InvalidDetection { .. } => EXIT_BACKEND,
        CountError::NoRaster(_) | CountError::RasterSize { .. } | CountError::Tiling(_) | CountError::Transform(_) => {
            EXIT_VALIDATION
        }
        CountError::Io { .. } | CountError::Csv { .. } => EXIT_OTHER,
    }
}

pub fn tune_code(e: &TuneError) -> i32 {
    match e {
        TuneError::Config(_) | TuneError::Transform(_) => EXIT_CONFIG,
        TuneError::Count { source, .. } => count_code(source),
        TuneError::Stats { .. } => EXIT_VALIDATION,
        TuneError::Io { .. } => EXIT_OTHER,
    }
}
