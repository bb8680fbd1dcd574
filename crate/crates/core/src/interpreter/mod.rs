//! Program interpreter: runs each step's stage plan against the gateway,
//! threading the image state from one step to the next, and records every
//! intermediate in an [`ExecutionTrace`].

pub mod dispatch;
pub mod trace;

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use dispatch::{dispatch, DispatchPlan, Stage};
pub use trace::{ExecutionTrace, MaskRecord, StepArtifacts, StepRecord, TraceStatus};

use crate::affine::{derive_affine, warp_image, warp_mask, AffineTransform};
use crate::config::SessionConfig;
use crate::gateway::{BackendError, Gateway, FUSION_PROMPT};
use crate::image::{Dims, ImageBuffer, RasterMask};
use crate::layout::{move_box, resize_box, BoundingBox, Direction, Layout, ResizeSense};
use crate::mask::{annular_mask, blackout, pre_composite, rasterize_box, MaskError};
use crate::planner::prompts::{add_entity_prompt, REMOVAL_PROMPT};
use crate::planner::{extract_entity, extract_text_roi, request_layout_edit, PlannerError};
use crate::program::{serialize_program, validate_program, AtomicInstruction, Category, EditProgram, ProgramError};

#[derive(Debug, Error)]
pub enum InterpreterError {
    #[error("step {step} ({stage}): {source}")]
    Backend {
        step: usize,
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("step {step}: {source}")]
    Planner {
        step: usize,
        #[source]
        source: PlannerError,
    },
    #[error("step {step} ({stage}): {source}")]
    Mask {
        step: usize,
        stage: Stage,
        #[source]
        source: MaskError,
    },
    #[error("step {step}: no region found for {roi:?}")]
    RoiNotFound { step: usize, roi: String },
    #[error("step {step}: layout change failed: {message}")]
    Layout { step: usize, message: String },
    #[error("step {step} ({stage}): intermediate is {got:?}, expected {expected:?}")]
    StageContractViolation {
        step: usize,
        stage: Stage,
        expected: Dims,
        got: Dims,
    },
    #[error("invalid program: {0}")]
    InvalidProgram(#[from] ProgramError),
    #[error("missing intermediate {}", .0.display())]
    MissingIntermediate(PathBuf),
    #[error("step {index} out of range (program has {len} steps)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("trace error: {0}")]
    Trace(String),
}

impl InterpreterError {
    /// Step the error is attributed to, if any.
    pub fn step(&self) -> Option<usize> {
        match self {
            InterpreterError::Backend { step, .. }
            | InterpreterError::Planner { step, .. }
            | InterpreterError::Mask { step, .. }
            | InterpreterError::RoiNotFound { step, .. }
            | InterpreterError::Layout { step, .. }
            | InterpreterError::StageContractViolation { step, .. } => Some(*step),
            _ => None,
        }
    }
}

/// New state plus everything needed to persist the step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub output: ImageBuffer,
    pub record: StepRecord,
    pub artifacts: StepArtifacts,
}

struct StepContext<'a> {
    state: &'a ImageBuffer,
    step: &'a AtomicInstruction,
    gw: &'a Gateway,
    cfg: &'a SessionConfig,
    plan: DispatchPlan,
    text_roi: Option<String>,
    entity: Option<String>,
    prompts: BTreeMap<String, String>,
    roi: Option<RasterMask>,
    roi_warped: Option<RasterMask>,
    annulus: Option<RasterMask>,
    bg: Option<ImageBuffer>,
    fg: Option<ImageBuffer>,
    prep: Option<ImageBuffer>,
    result: Option<ImageBuffer>,
    layout_before: Option<Layout>,
    layout_after: Option<Layout>,
    transform: Option<AffineTransform<f64>>,
}

impl<'a> StepContext<'a> {
    fn backend(&self, stage: Stage, e: BackendError) -> InterpreterError {
        let step = self.step.index;
        match e {
            BackendError::DimensionMismatch { expected, got, .. } => InterpreterError::StageContractViolation {
                step,
                stage,
                expected,
                got,
            },
            BackendError::RoiNotFound(roi) => InterpreterError::RoiNotFound { step, roi },
            source => InterpreterError::Backend { step, stage, source },
        }
    }

    fn planner(&self, e: PlannerError) -> InterpreterError {
        match e {
            PlannerError::Backend(b) => self.backend(Stage::Localize, b),
            source => InterpreterError::Planner {
                step: self.step.index,
                source,
            },
        }
    }

    fn mask(&self, stage: Stage) -> impl Fn(MaskError) -> InterpreterError + '_ {
        move |source| InterpreterError::Mask {
            step: self.step.index,
            stage,
            source,
        }
    }

    fn layout_err(&self, message: impl ToString) -> InterpreterError {
        InterpreterError::Layout {
            step: self.step.index,
            message: message.to_string(),
        }
    }

    fn canvas(&self) -> Dims {
        self.state.dims()
    }

    fn require<'b, T>(&self, stage: Stage, what: &str, v: &'b Option<T>) -> Result<&'b T, InterpreterError> {
        v.as_ref().ok_or_else(|| {
            InterpreterError::Trace(format!(
                "step {} ({stage}) needs {what}, which no earlier stage produced",
                self.step.index
            ))
        })
    }

    fn segment_nonempty(&self, stage: Stage, img: &ImageBuffer, roi: &str) -> Result<RasterMask, InterpreterError> {
        let m = self.gw.segment(img, roi).map_err(|e| self.backend(stage, e))?;
        if m.is_empty() {
            return Err(InterpreterError::RoiNotFound {
                step: self.step.index,
                roi: roi.to_string(),
            });
        }
        Ok(m)
    }

    fn localize(&mut self) -> Result<(), InterpreterError> {
        if self.step.category == Category::Add {
            // Nothing to segment yet: the new object's box comes from the layout planner.
            let layout = self
                .gw
                .enumerate_layout(self.state)
                .map_err(|e| self.backend(Stage::Localize, e))?;
            let resp = request_layout_edit(&layout, self.step, self.gw, self.canvas()).map_err(|e| self.planner(e))?;
            self.prompts.insert("layout".into(), resp.prompt);
            let added = resp
                .parsed
                .entries
                .last()
                .expect("add placement appends one entry")
                .clone();
            self.roi = Some(rasterize_box(&added.bbox, self.canvas()));
            self.text_roi = Some(added.name);
            self.layout_before = Some(layout);
            self.layout_after = Some(resp.parsed);
            return Ok(());
        }
        let resp = extract_text_roi(self.step, self.gw).map_err(|e| self.planner(e))?;
        self.prompts.insert("text_roi".into(), resp.prompt);
        self.roi = Some(self.segment_nonempty(Stage::Localize, self.state, &resp.parsed)?);
        self.text_roi = Some(resp.parsed);
        Ok(())
    }

    fn inpaint(&mut self) -> Result<(), InterpreterError> {
        let stage = Stage::InpaintRoI;
        let prompt = match self.step.category {
            Category::Add | Category::Replace => {
                let resp = extract_entity(self.step, self.gw).map_err(|e| self.planner(e))?;
                self.prompts.insert("entity".into(), resp.prompt);
                let p = add_entity_prompt(&resp.parsed);
                self.entity = Some(resp.parsed);
                p
            }
            _ => REMOVAL_PROMPT.to_string(),
        };
        let roi = self.require(stage, "R", &self.roi)?;
        let blacked = blackout(self.state, roi).map_err(self.mask(stage))?;
        let out = self
            .gw
            .inpaint(&blacked, Some(roi), &prompt)
            .map_err(|e| self.backend(stage, e))?;
        self.prompts.insert("inpaint".into(), prompt);
        if self.plan.stages.contains(&Stage::PreComposite) {
            self.bg = Some(out);
        } else {
            self.result = Some(out);
        }
        Ok(())
    }

    fn edit(&mut self) -> Result<(), InterpreterError> {
        let stage = Stage::EditRoI;
        let out = self
            .gw
            .attr_edit(self.state, &self.step.text)
            .map_err(|e| self.backend(stage, e))?;
        self.prompts.insert("edit".into(), self.step.text.clone());
        if self.step.category == Category::ActionChange {
            // The edited frame is re-segmented to find where the actor now is.
            let roi = self.require(stage, "text RoI", &self.text_roi)?.clone();
            self.roi_warped = Some(self.segment_nonempty(stage, &out, &roi)?);
            self.fg = Some(out);
        } else {
            self.result = Some(out);
        }
        Ok(())
    }

    fn edited_box(&mut self, name: &str, src: BoundingBox) -> Result<BoundingBox, InterpreterError> {
        let canvas = self.canvas();
        let layout = Layout::single(name, src);
        let dst = if self.cfg.deterministic_layout {
            match self.step.category {
                Category::Move => {
                    let dir = Direction::from_instruction(&self.step.text)
                        .ok_or_else(|| self.layout_err(format!("no direction in {:?}", self.step.text)))?;
                    move_box(&src, dir, self.cfg.move_step, canvas)
                }
                _ => {
                    let factor = match ResizeSense::from_instruction(&self.step.text) {
                        Some(ResizeSense::Enlarge) => self.cfg.resize_factor,
                        Some(ResizeSense::Shrink) => 1.0 / self.cfg.resize_factor,
                        None => return Err(self.layout_err(format!("no resize sense in {:?}", self.step.text))),
                    };
                    resize_box(&src, factor, canvas).map_err(|e| self.layout_err(e))?
                }
            }
        } else {
            let resp = request_layout_edit(&layout, self.step, self.gw, canvas).map_err(|e| self.planner(e))?;
            self.prompts.insert("layout".into(), resp.prompt);
            *resp.parsed.get(name).expect("name multiset checked by the planner")
        };
        self.layout_before = Some(layout);
        self.layout_after = Some(Layout::single(name, dst));
        Ok(dst)
    }

    fn layout_change(&mut self) -> Result<(), InterpreterError> {
        let stage = Stage::LayoutChange;
        let roi = self.require(stage, "R", &self.roi)?.clone();
        let name = self.require(stage, "text RoI", &self.text_roi)?.clone();
        let (x0, y0, x1, y1) = roi.bounds().expect("localized regions are non-empty");
        let src = BoundingBox::new(x0 as i32, y0 as i32, x1 as i32, y1 as i32).map_err(|e| self.layout_err(e))?;
        let dst = self.edited_box(&name, src)?;
        let t = derive_affine::<f64>(&src, &dst);
        let warped = warp_image(self.state, &roi, &t);
        if warped.off_canvas {
            log::warn!("step {}: {name:?} left the canvas entirely", self.step.index);
        }
        self.roi_warped = Some(warp_mask(&roi, &t));
        self.fg = Some(warped.image);
        self.transform = Some(t);
        Ok(())
    }

    fn pre_composite(&mut self) -> Result<(), InterpreterError> {
        let stage = Stage::PreComposite;
        let bg = self.require(stage, "I_bg", &self.bg)?;
        let fg = self.require(stage, "foreground", &self.fg)?;
        let r = self.require(stage, "R'", &self.roi_warped)?;
        self.prep = Some(pre_composite(bg, fg, r).map_err(self.mask(stage))?);
        Ok(())
    }

    fn composite(&mut self) -> Result<(), InterpreterError> {
        let stage = Stage::Composite;
        let r = self.require(stage, "R'", &self.roi_warped)?;
        let prep = self.require(stage, "I_prep", &self.prep)?;
        let ann = annular_mask(r, self.cfg.morphology).map_err(self.mask(stage))?;
        let blacked = blackout(prep, &ann).map_err(self.mask(stage))?;
        let out = self
            .gw
            .fuse(&blacked, Some(&ann), FUSION_PROMPT)
            .map_err(|e| self.backend(stage, e))?;
        self.prompts.insert("fusion".into(), FUSION_PROMPT.to_string());
        self.annulus = Some(ann);
        self.result = Some(out);
        Ok(())
    }

    fn global(&mut self) -> Result<(), InterpreterError> {
        let out = self
            .gw
            .global_transform(self.state, &self.step.text)
            .map_err(|e| self.backend(Stage::Global, e))?;
        self.prompts.insert("global".into(), self.step.text.clone());
        self.result = Some(out);
        Ok(())
    }

    fn run(&mut self, stage: Stage) -> Result<(), InterpreterError> {
        match stage {
            Stage::Localize => self.localize(),
            Stage::InpaintRoI => self.inpaint(),
            Stage::EditRoI => self.edit(),
            Stage::LayoutChange => self.layout_change(),
            Stage::PreComposite => self.pre_composite(),
            Stage::Composite => self.composite(),
            Stage::Global => self.global(),
        }
    }

    fn finish(self, timings_ms: BTreeMap<String, f64>) -> Result<StepOutcome, InterpreterError> {
        let last = *self.plan.stages.last().expect("plans are non-empty");
        let output = self
            .result
            .ok_or_else(|| InterpreterError::Trace(format!("step {} produced no image", self.step.index)))?;
        if output.dims() != self.state.dims() {
            return Err(InterpreterError::StageContractViolation {
                step: self.step.index,
                stage: last,
                expected: self.state.dims(),
                got: output.dims(),
            });
        }
        let index = self.step.index;
        let mut artifacts = StepArtifacts::default();
        for (name, img) in [("bg", self.bg), ("fg", self.fg), ("prep", self.prep)] {
            if let Some(img) = img {
                artifacts.images.insert(name, img);
            }
        }
        artifacts.images.insert("output", output.clone());
        for (name, m) in [
            ("roi", self.roi),
            ("roi_warped", self.roi_warped),
            ("annulus", self.annulus),
        ] {
            if let Some(m) = m {
                artifacts.masks.insert(name, m);
            }
        }
        let record = StepRecord {
            index,
            instruction: self.step.clone(),
            stages: self.plan.stages.to_vec(),
            text_roi: self.text_roi,
            entity: self.entity,
            prompts: self.prompts,
            layout_before: self.layout_before,
            layout_after: self.layout_after,
            transform: self.transform.map(|t| [t.sx, t.sy, t.tx, t.ty]),
            masks: artifacts
                .masks
                .iter()
                .map(|(name, m)| {
                    let rec = MaskRecord {
                        path: trace::asset_path(index, name),
                        population: m.population(),
                    };
                    (name.to_string(), rec)
                })
                .collect(),
            images: std::iter::once("input")
                .chain(artifacts.images.keys().copied())
                .map(|name| (name.to_string(), trace::asset_path(index, name)))
                .collect(),
            timings_ms,
        };
        Ok(StepOutcome {
            output,
            record,
            artifacts,
        })
    }
}

/// Run one atomic instruction on `state`. Nothing is written to disk; the
/// record lists `input` although the caller persists that image.
pub fn execute_step(
    state: &ImageBuffer,
    step: &AtomicInstruction,
    gw: &Gateway,
    cfg: &SessionConfig,
) -> Result<StepOutcome, InterpreterError> {
    let plan = dispatch(step.category);
    let mut cx = StepContext {
        state,
        step,
        gw,
        cfg,
        plan,
        text_roi: None,
        entity: None,
        prompts: BTreeMap::new(),
        roi: None,
        roi_warped: None,
        annulus: None,
        bg: None,
        fg: None,
        prep: None,
        result: None,
        layout_before: None,
        layout_after: None,
        transform: None,
    };
    let mut timings = BTreeMap::new();
    for &stage in plan.stages {
        let start = Instant::now();
        cx.run(stage)?;
        let ms = (start.elapsed().as_secs_f64() * 1e6).round() / 1e3;
        timings.insert(stage.name().to_string(), ms);
    }
    cx.finish(timings)
}

/// Final image and the persisted trace of a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub image: ImageBuffer,
    pub trace: ExecutionTrace,
}

/// Deterministic id from the input image and the program.
pub fn default_session_id(img: &ImageBuffer, program: &EditProgram) -> String {
    let mut h = Sha256::new();
    h.update(img.fingerprint().as_bytes());
    h.update(serialize_program(program).as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

fn check_program(p: &EditProgram) -> Result<(), InterpreterError> {
    let report = validate_program(p);
    if report.is_valid() {
        Ok(())
    } else {
        Err(ProgramError::Invalid(report).into())
    }
}

fn trace_io(e: impl std::fmt::Display) -> InterpreterError {
    InterpreterError::Trace(e.to_string())
}

/// Drop assets of steps `>= from` so a rerun leaves no stale files.
fn clear_steps_from(trace: &ExecutionTrace, from: usize) -> Result<(), InterpreterError> {
    for i in from..=trace.program.len() {
        let d = trace.dir.join(trace::step_dir(i));
        if d.is_dir() {
            fs::remove_dir_all(&d).map_err(trace_io)?;
        }
    }
    Ok(())
}

/// Execute steps `from..=until` and persist the trace, also on failure.
fn drive(
    trace: &mut ExecutionTrace,
    mut state: ImageBuffer,
    from: usize,
    until: usize,
    gw: &Gateway,
    cfg: &SessionConfig,
) -> Result<ImageBuffer, InterpreterError> {
    check_program(&trace.program)?;
    trace.steps.retain(|s| s.index < from);
    for i in from..=until {
        let step = trace.program.steps[i - 1].clone();
        log::info!("step {i}/{}: [{}] {}", trace.program.len(), step.category, step.text);
        // Written first so a failed step can be retried from disk.
        let input = trace.dir.join(trace::asset_path(i, "input"));
        fs::create_dir_all(input.parent().expect("asset paths have a parent")).map_err(trace_io)?;
        state.save(&input).map_err(trace_io)?;
        let outcome = execute_step(&state, &step, gw, cfg).and_then(|o| {
            trace::write_step_assets(&trace.dir, &o.record, &o.artifacts)?;
            Ok(o)
        });
        match outcome {
            Ok(o) => {
                trace.steps.push(o.record);
                state = o.output;
            }
            Err(e) => {
                trace.status = TraceStatus::Failed {
                    failed_at: i,
                    error: e.to_string(),
                };
                trace.persist()?;
                return Err(e);
            }
        }
    }
    let len = trace.program.len();
    trace.status = if until == len {
        TraceStatus::Completed {
            final_image: trace::asset_path(len, "output"),
        }
    } else {
        TraceStatus::Partial { next_step: until + 1 }
    };
    trace.persist()?;
    Ok(state)
}

/// Left fold of [`execute_step`] over the program, persisted under
/// `<outdir>/<session_id>`.
pub fn run_program(
    img: &ImageBuffer,
    program: &EditProgram,
    gw: &Gateway,
    cfg: &SessionConfig,
    session_id: Option<&str>,
) -> Result<RunOutcome, InterpreterError> {
    check_program(program)?;
    if img.dims() != cfg.canvas {
        log::warn!(
            "input is {}x{}, session canvas is {}x{}; using the input size",
            img.width(),
            img.height(),
            cfg.canvas.width,
            cfg.canvas.height
        );
    }
    let id = session_id
        .map(str::to_string)
        .unwrap_or_else(|| default_session_id(img, program));
    let mut trace = ExecutionTrace {
        dir: cfg.outdir.join(&id),
        session_id: id,
        program: program.clone(),
        canvas: img.dims(),
        input_fingerprint: img.fingerprint(),
        steps: Vec::new(),
        status: TraceStatus::Partial { next_step: 1 },
    };
    clear_steps_from(&trace, 1)?;
    let image = drive(&mut trace, img.clone(), 1, program.len(), gw, cfg)?;
    Ok(RunOutcome { image, trace })
}

fn load_intermediate(trace: &ExecutionTrace, rel: PathBuf) -> Result<ImageBuffer, InterpreterError> {
    let p = trace.dir.join(&rel);
    if !p.is_file() {
        return Err(InterpreterError::MissingIntermediate(p));
    }
    ImageBuffer::load(&p).map_err(|e| InterpreterError::Trace(format!("{}: {e}", p.display())))
}

/// State before step `from`: its recorded input, or the preceding output.
fn state_before(trace: &ExecutionTrace, from: usize) -> Result<ImageBuffer, InterpreterError> {
    if from == 1 {
        load_intermediate(trace, trace::asset_path(1, "input"))
    } else {
        load_intermediate(trace, trace::asset_path(from - 1, "output"))
    }
}

/// Continue a persisted session at step `from` (1-based). `from = len + 1`
/// returns the stored final image without calling any backend.
pub fn resume(
    mut trace: ExecutionTrace,
    from: usize,
    gw: &Gateway,
    cfg: &SessionConfig,
) -> Result<RunOutcome, InterpreterError> {
    let len = trace.program.len();
    if from == 0 || from > len + 1 {
        return Err(InterpreterError::IndexOutOfRange { index: from, len });
    }
    if from > trace.next_step() {
        return Err(InterpreterError::MissingIntermediate(
            trace.dir.join(trace::asset_path(from - 1, "output")),
        ));
    }
    let state = state_before(&trace, from)?;
    if from == len + 1 {
        return Ok(RunOutcome { image: state, trace });
    }
    clear_steps_from(&trace, from)?;
    let image = drive(&mut trace, state, from, len, gw, cfg)?;
    Ok(RunOutcome { image, trace })
}

/// Result of [`advance`].
#[derive(Debug, Clone)]
pub enum Advance {
    AlreadyComplete(ExecutionTrace),
    Ran { step: usize, outcome: RunOutcome },
}

/// Execute exactly the next unrecorded step of a persisted session.
pub fn advance(mut trace: ExecutionTrace, gw: &Gateway, cfg: &SessionConfig) -> Result<Advance, InterpreterError> {
    if trace.is_complete() {
        return Ok(Advance::AlreadyComplete(trace));
    }
    let step = trace.next_step();
    if step > trace.program.len() {
        return Err(InterpreterError::Trace(
            "every step has a record but the trace is not marked complete".into(),
        ));
    }
    let state = state_before(&trace, step)?;
    clear_steps_from(&trace, step)?;
    let image = drive(&mut trace, state, step, step, gw, cfg)?;
    Ok(Advance::Ran {
        step,
        outcome: RunOutcome { image, trace },
    })
}
