//! File-based request/response protocol shared by the external frame
//! generator and the external flow estimator.
//!
//! A request lives in `<root>/<req_id>/`. The client writes its inputs, then
//! `request.json` (atomically, via rename). The backend writes its results and
//! finally an empty `DONE` marker. One writer per request directory.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{write_flo, FlowField};
use crate::media::{load_image, save_image};

pub const REQUEST_FILE: &str = "request.json";
pub const DONE_MARKER: &str = "DONE";

/// A backend exchange directory plus polling policy.
#[derive(Debug, Clone)]
pub struct Exchange {
    pub root: PathBuf,
    pub timeout: Duration,
    pub poll_interval: Duration,
}

impl Exchange {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            timeout: Duration::from_secs(600),
            poll_interval: Duration::from_millis(20),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Creates an empty request directory, removing leftovers from earlier runs.
    pub fn open_request(&self, req_id: &str) -> Result<PathBuf> {
        if !self.root.is_dir() {
            return Err(Error::MissingFile(self.root.clone()));
        }
        let dir = self.root.join(req_id);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    /// Publishes the request descriptor; the backend may start as soon as this returns.
    pub fn submit<T: Serialize>(&self, dir: &Path, request: &T) -> Result<()> {
        let body = serde_json::to_vec_pretty(request).expect("request serializes");
        let tmp = dir.join(format!("{REQUEST_FILE}.tmp"));
        std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        let dst = dir.join(REQUEST_FILE);
        std::fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))
    }

    /// Blocks until the backend marks `dir` done or the timeout elapses.
    pub fn wait(&self, dir: &Path) -> Result<()> {
        let start = Instant::now();
        let marker = dir.join(DONE_MARKER);
        loop {
            if marker.exists() {
                return Ok(());
            }
            if start.elapsed() >= self.timeout {
                return Err(Error::BackendTimeout {
                    dir: dir.to_path_buf(),
                    waited_ms: start.elapsed().as_millis() as u64,
                });
            }
            std::thread::sleep(self.poll_interval);
        }
    }
}

/// 64-bit FNV-1a, used to derive deterministic request ids from content.
pub fn fnv1a(chunks: &[&[u8]]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for chunk in chunks {
        for &b in *chunk {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
    }
    hash
}

pub(crate) fn pixel_bytes(values: impl Iterator<Item = f32>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn mark_done(dir: &Path) -> Result<()> {
    let p = dir.join(DONE_MARKER);
    std::fs::write(&p, b"").map_err(|e| Error::io(&p, e))
}

fn read_request(dir: &Path) -> Result<serde_json::Value> {
    let p = dir.join(REQUEST_FILE);
    let body = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_slice(&body).map_err(|e| Error::Malformed {
        path: p,
        reason: e.to_string(),
    })
}

/// Offline stand-in for an image-to-video backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubFrameMode {
    /// Emit `T` copies of the source.
    CopySource,
    /// Emit only `T - 1` copies.
    DropLast,
}

/// Serves one pending frame-generation request.
pub fn serve_frame_request(dir: &Path, mode: StubFrameMode) -> Result<()> {
    let request = read_request(dir)?;
    let frames = request["T"].as_u64().unwrap_or(0) as usize;
    let source = load_image(dir.join("source.png"))?;
    let count = match mode {
        StubFrameMode::CopySource => frames,
        StubFrameMode::DropLast => frames.saturating_sub(1),
    };
    for t in 1..=count {
        save_image(&source, dir.join(format!("frame_{t:03}.png")))?;
    }
    mark_done(dir)
}

/// Offline stand-in for a learned flow estimator.
#[derive(Debug, Clone, PartialEq)]
pub enum StubFlowMode {
    Zero,
    /// Return this field regardless of the inputs.
    Echo(FlowField),
    /// Return a zero field at half the requested resolution.
    HalfResolution,
}

/// Serves one pending flow-estimation request.
pub fn serve_flow_request(dir: &Path, mode: &StubFlowMode) -> Result<()> {
    let request = read_request(dir)?;
    let h = request["height"].as_u64().unwrap_or(1) as usize;
    let w = request["width"].as_u64().unwrap_or(1) as usize;
    let flow = match mode {
        StubFlowMode::Zero => FlowField::zeros(h, w),
        StubFlowMode::Echo(f) => f.clone(),
        StubFlowMode::HalfResolution => FlowField::zeros((h / 2).max(1), (w / 2).max(1)),
    };
    write_flo(&flow, dir.join("flow.flo"))?;
    mark_done(dir)
}

/// Background thread answering every request that appears under a root.
pub struct StubServer {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

/// Which stub protocol a [`StubServer`] speaks.
#[derive(Debug, Clone)]
pub enum StubKind {
    Frames(StubFrameMode),
    Flow(StubFlowMode),
}

impl StubServer {
    pub fn spawn(root: impl Into<PathBuf>, kind: StubKind) -> Self {
        let root = root.into();
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = std::thread::spawn(move || {
            while !flag.load(Ordering::Relaxed) {
                if let Ok(entries) = std::fs::read_dir(&root) {
                    let mut dirs: Vec<PathBuf> = entries.flatten().map(|e| e.path()).collect();
                    dirs.sort();
                    for dir in dirs {
                        if dir.join(REQUEST_FILE).exists() && !dir.join(DONE_MARKER).exists() {
                            let outcome = match &kind {
                                StubKind::Frames(mode) => serve_frame_request(&dir, *mode),
                                StubKind::Flow(mode) => serve_flow_request(&dir, mode),
                            };
                            if let Err(e) = outcome {
                                log::warn!("stub backend failed on {}: {e}", dir.display());
                            }
                        }
                    }
                }
                std::thread::sleep(Duration::from_millis(5));
            }
        });
        Self {
            stop,
            handle: Some(handle),
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
