//! External detector processes speaking line-delimited JSON on stdin/stdout.
//!
//! Request, one line per tile:
//! `{"request_id": 7, "image_id": "img-001", "tile": {"row": 0, "col": 1, "side": 640, "origin_x": 640, "origin_y": 0}, "tile_path": "/tmp/img-001_r0_c1.png"}`
//!
//! Response, one line:
//! `{"request_id": 7, "boxes": [{"x": 10, "y": 10, "w": 20, "h": 20, "score": 0.9}]}`
//!
//! A process handles one request at a time. [`AdapterBackend`] runs a pool of
//! processes to serve tiles in parallel.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendInput, Concurrency, DetectError, Detection, DetectorBackend, TileRequest};
use crate::tiling::Tile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    /// Program and arguments.
    pub command: Vec<String>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_workers() -> usize {
    1
}

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Serialize)]
struct Request<'a> {
    request_id: u64,
    image_id: &'a str,
    tile: &'a Tile,
    tile_path: &'a Path,
}

#[derive(Deserialize)]
struct Response {
    request_id: u64,
    boxes: Vec<Detection>,
}

pub struct AdapterProcess {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    dead: bool,
}

impl AdapterProcess {
    pub fn spawn(command: &[String]) -> Result<Self, DetectError> {
        let display = command.join(" ");
        let (program, args) = command
            .split_first()
            .ok_or_else(|| DetectError::Config("adapter command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| DetectError::Spawn {
                command: display.clone(),
                source,
            })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Ok(AdapterProcess {
            command: display,
            child,
            stdin,
            lines: rx,
            next_id: 0,
            dead: false,
        })
    }

    fn exit_status(&mut self) -> Option<String> {
        match self.child.try_wait() {
            Ok(Some(status)) => Some(status.to_string()),
            _ => None,
        }
    }

    fn kill(&mut self) {
        self.dead = true;
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn exited(&mut self) -> DetectError {
        self.dead = true;
        // give a process that just closed stdout a moment to be reaped
        for _ in 0..20 {
            if let Some(status) = self.exit_status() {
                return DetectError::ProcessExited(Some(status));
            }
            thread::sleep(Duration::from_millis(5));
        }
        DetectError::ProcessExited(None)
    }

    /// Send one request and wait for its response.
    pub fn request(
        &mut self,
        image_id: &str,
        tile: &Tile,
        tile_path: &Path,
        timeout: Duration,
    ) -> Result<Vec<Detection>, DetectError> {
        if self.dead {
            return Err(DetectError::ProcessExited(Some(format!(
                "{} is no longer running",
                self.command
            ))));
        }
        let request_id = self.next_id;
        self.next_id += 1;
        let mut line = serde_json::to_string(&Request {
            request_id,
            image_id,
            tile,
            tile_path,
        })
        .expect("serializable");
        line.push('\n');

        let Some(stdin) = self.stdin.as_mut() else {
            return Err(self.exited());
        };
        if stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()).is_err() {
            return Err(self.exited());
        }

        let reply = loop {
            match self.lines.recv_timeout(timeout) {
                Ok(Ok(reply)) if reply.trim().is_empty() => continue,
                Ok(Ok(reply)) => break reply,
                Ok(Err(_)) | Err(RecvTimeoutError::Disconnected) => return Err(self.exited()),
                Err(RecvTimeoutError::Timeout) => {
                    // a late reply would desynchronize ids, so the process is retired
                    self.kill();
                    return Err(DetectError::Timeout(timeout.as_millis() as u64));
                }
            }
        };

        let response: Response = serde_json::from_str(reply.trim())
            .map_err(|e| DetectError::Protocol(format!("unparseable response {:?}: {e}", reply.trim())))?;
        if response.request_id != request_id {
            return Err(DetectError::Protocol(format!(
                "response id {} does not match request id {request_id}",
                response.request_id
            )));
        }
        let mut out = Vec::with_capacity(response.boxes.len());
        for (i, d) in response.boxes.into_iter().enumerate() {
            match d.clipped_to(tile.side) {
                Ok(Some(d)) => out.push(d),
                Ok(None) => {}
                Err(detail) => return Err(DetectError::Protocol(format!("box {i}: {detail}"))),
            }
        }
        Ok(out)
    }
}

impl Drop for AdapterProcess {
    fn drop(&mut self) {
        self.stdin = None;
        // closing stdin asks a well-behaved adapter to exit
        for _ in 0..20 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// One request/response exchange with an adapter process.
pub fn external_detect(
    adapter: &mut AdapterProcess,
    image_id: &str,
    tile: &Tile,
    tile_path: &Path,
    timeout: Duration,
) -> Result<Vec<Detection>, DetectError> {
    adapter.request(image_id, tile, tile_path, timeout)
}

pub struct AdapterBackend {
    workers: Vec<Mutex<AdapterProcess>>,
    timeout: Duration,
    cursor: AtomicUsize,
}

impl AdapterBackend {
    pub fn new(cfg: &AdapterConfig) -> Result<Self, DetectError> {
        if cfg.workers == 0 {
            return Err(DetectError::Config("adapter needs at least one worker".into()));
        }
        let workers = (0..cfg.workers)
            .map(|_| AdapterProcess::spawn(&cfg.command).map(Mutex::new))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AdapterBackend {
            workers,
            timeout: Duration::from_millis(cfg.timeout_ms),
            cursor: AtomicUsize::new(0),
        })
    }
}

impl DetectorBackend for AdapterBackend {
    fn name(&self) -> &str {
        "adapter"
    }

    fn concurrency(&self) -> Concurrency {
        if self.workers.len() > 1 {
            Concurrency::Concurrent
        } else {
            Concurrency::Serial
        }
    }

    fn input(&self) -> BackendInput {
        BackendInput::Pixels
    }

    fn detect(&self, request: &TileRequest<'_>) -> Result<Vec<Detection>, DetectError> {
        let path = request
            .tile_path
            .ok_or_else(|| DetectError::MissingTilePath(self.name().into()))?;
        let n = self.workers.len();
        let start = self.cursor.fetch_add(1, Ordering::Relaxed);
        let mut guard = (0..n)
            .find_map(|i| self.workers[(start + i) % n].try_lock().ok())
            .map_or_else(|| self.workers[start % n].lock(), Ok)
            .map_err(|_| DetectError::ProcessExited(Some("adapter worker poisoned".into())))?;
        guard.request(request.image_id, &request.tile, path, self.timeout)
    }
}
