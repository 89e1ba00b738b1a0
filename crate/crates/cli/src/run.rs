//! Run directories, run records and the run log.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::{Level, LevelFilter, Log, Metadata, Record};
use serde::Serialize;

use crate::config::RunConfig;
use crate::failure::{Failure, ResultExt};

/// Logs to stderr and, once a run starts, to the run's `log.txt`.
pub struct RunLogger {
    level: LevelFilter,
    file: Mutex<Option<File>>,
}

/// Log target for records that go to log.txt but not stderr.
pub const FILE_ONLY: &str = "larvacount::file";

static LOGGER: std::sync::OnceLock<RunLogger> = std::sync::OnceLock::new();

pub fn init_logging(level: LevelFilter) {
    let logger = LOGGER.get_or_init(|| RunLogger {
        level,
        file: Mutex::new(None),
    });
    if log::set_logger(logger).is_ok() {
        // the file always gets info and above
        log::set_max_level(level.max(LevelFilter::Info));
    }
}

fn attach_log_file(path: &Path) -> std::io::Result<()> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    if let Some(logger) = LOGGER.get() {
        *logger.file.lock().expect("log lock") = Some(file);
    }
    Ok(())
}

impl Log for RunLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= Level::Info || metadata.level() <= self.level
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = format!("{:<5} {}", record.level(), record.args());
        if record.level() <= self.level && record.target() != FILE_ONLY {
            eprintln!("{line}");
        }
        if record.level() <= Level::Info {
            if let Some(f) = self.file.lock().expect("log lock").as_mut() {
                let _ = writeln!(f, "{line}");
            }
        }
    }

    fn flush(&self) {
        if let Some(f) = self.file.lock().expect("log lock").as_mut() {
            let _ = f.flush();
        }
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    version: &'a str,
    command: &'a str,
    seed: u64,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    config: &'a str,
    artifacts: Vec<&'a str>,
}

#[derive(Serialize)]
struct IndexEntry<'a> {
    run_id: &'a str,
    created: String,
    command: &'a str,
    status: &'a str,
}

pub struct RunDir {
    pub id: String,
    pub dir: PathBuf,
    root: PathBuf,
    command: String,
    artifacts: Vec<String>,
}

/// `{UTC timestamp}-s{seed}`, with a numeric suffix if that directory exists.
pub fn default_run_id(root: &Path, seed: u64) -> String {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-s{seed}");
    let mut id = base.clone();
    let mut n = 2;
    while root.join(&id).exists() {
        id = format!("{base}-{n}");
        n += 1;
    }
    id
}

impl RunDir {
    pub fn create(root: &Path, id: &str, command: &str) -> Result<Self, Failure> {
        if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
            return Err(Failure::config(format!("invalid run id '{id}'")));
        }
        let dir = root.join(id);
        if dir.exists() {
            return Err(Failure::config(format!(
                "run directory {} already exists",
                dir.display()
            )));
        }
        fs::create_dir_all(&dir).config_err(|| format!("cannot create run directory {}", dir.display()))?;
        attach_log_file(&dir.join("log.txt")).io_err(|| "cannot open log.txt")?;
        log::info!("run {id}: {command}");
        Ok(RunDir {
            id: id.to_string(),
            dir,
            root: root.to_path_buf(),
            command: command.to_string(),
            artifacts: Vec::new(),
        })
    }

    /// Path for an artifact, registering it; parent directories are created.
    pub fn artifact(&mut self, name: &str) -> Result<PathBuf, Failure> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).io_err(|| format!("cannot create {}", parent.display()))?;
        }
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, Failure> {
        let path = self.artifact(name)?;
        let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
        fs::write(&path, text).io_err(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf, Failure> {
        let path = self.artifact(name)?;
        fs::write(&path, text).io_err(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    /// Write the config snapshot, `run.json` and the index line.
    pub fn finish(mut self, cfg: &RunConfig, outcome: &Result<(), Failure>) -> Result<(), Failure> {
        self.write_json("config.json", cfg)?;
        let status = if outcome.is_ok() { "complete" } else { "failed" };
        let mut artifacts: Vec<&str> = self
            .artifacts
            .iter()
            .map(String::as_str)
            .filter(|a| *a != "config.json")
            .collect();
        artifacts.sort_unstable();
        let record = RunRecord {
            version: larvacount::VERSION,
            command: &self.command,
            seed: cfg.seed,
            status,
            error: outcome.as_ref().err().map(|f| f.to_string()),
            config: "config.json",
            artifacts,
        };
        let text = serde_json::to_string_pretty(&record).expect("serializable") + "\n";
        let path = self.dir.join("run.json");
        fs::write(&path, text).io_err(|| format!("cannot write {}", path.display()))?;

        let entry = IndexEntry {
            run_id: &self.id,
            created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            command: &self.command,
            status,
        };
        let index = self.root.join("index.jsonl");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index)
            .io_err(|| format!("cannot open {}", index.display()))?;
        writeln!(f, "{}", serde_json::to_string(&entry).expect("serializable"))
            .io_err(|| "cannot append index.jsonl")?;
        log::logger().flush();
        Ok(())
    }
}
