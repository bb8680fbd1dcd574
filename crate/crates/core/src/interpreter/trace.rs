//! Execution traces: per-step records, their assets on disk, and the
//! `trace.jsonl` file tying them together.
//!
//! ```text
//! <outdir>/<session_id>/trace.jsonl
//! <outdir>/<session_id>/steps/<i>/{input,roi,roi_warped,annulus,bg,fg,prep,output}.png
//! <outdir>/<session_id>/steps/<i>/prompts.json
//! ```
//!
//! `trace.jsonl` holds one `session` line, one `step` line per executed step
//! and a final `end` line. Asset paths inside records are relative to the
//! session directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dispatch::Stage;
use super::InterpreterError;
use crate::image::{Dims, ImageBuffer, RasterMask};
use crate::layout::Layout;
use crate::program::{AtomicInstruction, EditProgram};

pub const TRACE_FILE: &str = "trace.jsonl";

/// Image assets a step can produce, in the order they are written.
pub const IMAGE_ASSETS: [&str; 5] = ["input", "bg", "fg", "prep", "output"];
/// Mask assets a step can produce.
pub const MASK_ASSETS: [&str; 3] = ["roi", "roi_warped", "annulus"];

pub fn step_dir(index: usize) -> PathBuf {
    PathBuf::from("steps").join(index.to_string())
}

pub fn asset_path(index: usize, name: &str) -> PathBuf {
    step_dir(index).join(format!("{name}.png"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub path: PathBuf,
    pub population: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub instruction: AtomicInstruction,
    pub stages: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_roi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    /// Prompt sent at each call site, keyed by call (`text_roi`, `inpaint`, ...).
    pub prompts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout_before: Option<Layout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout_after: Option<Layout>,
    /// `[sx, sy, tx, ty]` of the relocation, when there was one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<[f64; 4]>,
    pub masks: BTreeMap<String, MaskRecord>,
    pub images: BTreeMap<String, PathBuf>,
    /// Wall-clock milliseconds per stage.
    pub timings_ms: BTreeMap<String, f64>,
}

impl StepRecord {
    pub fn mask_population(&self, name: &str) -> Option<usize> {
        self.masks.get(name).map(|m| m.population)
    }

    pub fn referenced_paths(&self) -> impl Iterator<Item = &PathBuf> {
        self.masks.values().map(|m| &m.path).chain(self.images.values())
    }
}

/// In-memory intermediates of one step, persisted next to its record.
#[derive(Debug, Clone, Default)]
pub struct StepArtifacts {
    pub images: BTreeMap<&'static str, ImageBuffer>,
    pub masks: BTreeMap<&'static str, RasterMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TraceStatus {
    Completed {
        final_image: PathBuf,
    },
    Failed {
        failed_at: usize,
        error: String,
    },
    /// Stopped on request before the end; `next_step` runs next.
    Partial {
        next_step: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub session_id: String,
    pub dir: PathBuf,
    pub program: EditProgram,
    pub canvas: Dims,
    pub input_fingerprint: String,
    pub steps: Vec<StepRecord>,
    pub status: TraceStatus,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Session {
        session_id: String,
        program: EditProgram,
        canvas: Dims,
        input_fingerprint: String,
    },
    Step(StepRecord),
    End(TraceStatus),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> InterpreterError {
    InterpreterError::Trace(format!("{}: {e}", path.display()))
}

impl ExecutionTrace {
    pub fn is_complete(&self) -> bool {
        matches!(self.status, TraceStatus::Completed { .. })
    }

    /// Index of the first step without a record.
    pub fn next_step(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn trace_path(&self) -> PathBuf {
        self.dir.join(TRACE_FILE)
    }

    pub fn step(&self, index: usize) -> Result<&StepRecord, InterpreterError> {
        self.steps
            .iter()
            .find(|s| s.index == index)
            .ok_or(InterpreterError::IndexOutOfRange {
                index,
                len: self.steps.len(),
            })
    }

    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![Line::Session {
            session_id: self.session_id.clone(),
            program: self.program.clone(),
            canvas: self.canvas,
            input_fingerprint: self.input_fingerprint.clone(),
        }];
        lines.extend(self.steps.iter().cloned().map(Line::Step));
        lines.push(Line::End(self.status.clone()));
        let mut out = String::new();
        for l in &lines {
            out.push_str(&serde_json::to_string(l).expect("trace lines serialize"));
            out.push('\n');
        }
        out
    }

    /// Write `trace.jsonl` through a temporary file and a rename. Fails if a
    /// record points at a file that does not exist.
    pub fn persist(&self) -> Result<(), InterpreterError> {
        for rec in &self.steps {
            for p in rec.referenced_paths() {
                if !self.dir.join(p).is_file() {
                    return Err(InterpreterError::Trace(format!(
                        "step {} references missing file {}",
                        rec.index,
                        p.display()
                    )));
                }
            }
        }
        fs::create_dir_all(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        let path = self.trace_path();
        let tmp = self.dir.join(format!(".{TRACE_FILE}.tmp"));
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .and_then(|_| f.sync_all())
            .map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
    }

    /// Load from a session directory or directly from its `trace.jsonl`.
    pub fn load(path: &Path) -> Result<Self, InterpreterError> {
        let (dir, file) = if path.is_dir() {
            (path.to_path_buf(), path.join(TRACE_FILE))
        } else {
            (
                path.parent().map(Path::to_path_buf).unwrap_or_default(),
                path.to_path_buf(),
            )
        };
        let text = fs::read_to_string(&file).map_err(|e| io_err(&file, e))?;
        let mut header = None;
        let mut steps = Vec::new();
        let mut status = None;
        for (n, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line: Line = serde_json::from_str(raw).map_err(|e| io_err(&file, format!("line {}: {e}", n + 1)))?;
            match line {
                Line::Session {
                    session_id,
                    program,
                    canvas,
                    input_fingerprint,
                } => header = Some((session_id, program, canvas, input_fingerprint)),
                Line::Step(r) => steps.push(r),
                Line::End(s) => status = Some(s),
            }
        }
        let (session_id, program, canvas, input_fingerprint) =
            header.ok_or_else(|| io_err(&file, "missing session line"))?;
        let status = status.unwrap_or(TraceStatus::Partial {
            next_step: steps.len() + 1,
        });
        Ok(ExecutionTrace {
            session_id,
            dir,
            program,
            canvas,
            input_fingerprint,
            steps,
            status,
        })
    }
}

/// Write a step's assets and prompts under `session_dir`. The step input
/// is written separately, before the step runs.
pub fn write_step_assets(
    session_dir: &Path,
    record: &StepRecord,
    artifacts: &StepArtifacts,
) -> Result<(), InterpreterError> {
    let dir = session_dir.join(step_dir(record.index));
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    for (name, img) in &artifacts.images {
        let p = session_dir.join(asset_path(record.index, name));
        img.save(&p).map_err(|e| io_err(&p, e))?;
    }
    for (name, m) in &artifacts.masks {
        let p = session_dir.join(asset_path(record.index, name));
        m.save(&p).map_err(|e| io_err(&p, e))?;
    }
    let p = dir.join("prompts.json");
    let json = serde_json::to_string_pretty(&record.prompts).expect("prompts serialize");
    fs::write(&p, json).map_err(|e| io_err(&p, e))
}
