use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use editprog_core::config::{ConfigLayer, SessionConfig};
use editprog_core::gateway::server::serve;
use editprog_core::interpreter::{advance, dispatch, resume, run_program, Advance, RunOutcome, StepRecord};
use editprog_core::planner::plan;
use editprog_core::program::{deserialize_program, serialize_program, EditProgram};
use editprog_core::{testkit, ExecutionTrace, Gateway, ImageBuffer};
use serde::Deserialize;

use crate::args::{ConfigArgs, ProgramSource};
use crate::exit::Failure;

pub const PROGRAM_FILE: &str = "program.json";
pub const OUTPUT_FILE: &str = "output.png";

/// Defaults, then the config file, then `IEAP_*`, then flags.
pub fn resolve_config(args: &ConfigArgs) -> Result<SessionConfig, Failure> {
    let mut layers = Vec::new();
    if let Some(path) = &args.config {
        layers.push(ConfigLayer::from_file(path)?);
    }
    layers.push(ConfigLayer::from_process_env()?);
    let mut flags = ConfigLayer {
        k1: args.k1,
        k2: args.k2,
        move_step: args.move_step,
        resize_factor: args.resize_factor,
        deterministic_layout: args.deterministic_layout.then_some(true),
        outdir: args.outdir.clone(),
        fixtures: args.fixtures.clone(),
        ..ConfigLayer::default()
    };
    for b in &args.backends {
        flags.set_backend(b)?;
    }
    layers.push(flags);
    Ok(SessionConfig::resolve(&layers)?)
}

fn load_image(path: &Path) -> Result<ImageBuffer, Failure> {
    ImageBuffer::load(path).map_err(|e| Failure::io(e).context(format!("cannot load image {}", path.display())))
}

fn load_program(path: &Path) -> Result<EditProgram, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::io(e).context(format!("cannot read {}", path.display())))?;
    deserialize_program(&text).map_err(|e| Failure::from(e).context(format!("bad program {}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes).map_err(|e| Failure::io(e).context(format!("cannot write {}", path.display())))
}

/// Program from a file, or from the planner when only an instruction is given.
fn obtain_program(source: &ProgramSource, gw: &Gateway, image: Option<&ImageBuffer>) -> Result<EditProgram, Failure> {
    match (&source.program, &source.instruction) {
        (Some(path), _) => load_program(path),
        (None, Some(instruction)) => Ok(plan(instruction, gw, image)?.parsed),
        (None, None) => Err(Failure::plan(anyhow::anyhow!(
            "one of --instruction or --program is required"
        ))),
    }
}

pub fn cmd_plan(
    cfg: &SessionConfig,
    source: &ProgramSource,
    image: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let gw = cfg.build_gateway()?;
    let image = image.map(load_image).transpose()?;
    let program = obtain_program(source, &gw, image.as_ref())?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.outdir.join(PROGRAM_FILE));
    write_file(&out, serialize_program(&program).as_bytes())?;
    println!("{}", program.to_numbered_list().trim_end());
    log::info!("wrote {}", out.display());
    Ok(())
}

fn print_timings(rec: &StepRecord) {
    println!(
        "step {} [{}] {}",
        rec.index, rec.instruction.category, rec.instruction.text
    );
    for stage in &rec.stages {
        if let Some(ms) = rec.timings_ms.get(stage.name()) {
            println!("  {:<13}{ms:>10.3} ms", stage.name());
        }
    }
}

fn finish(outcome: &RunOutcome) -> Result<PathBuf, Failure> {
    let out = outcome.trace.dir.join(OUTPUT_FILE);
    outcome
        .image
        .save(&out)
        .map_err(|e| Failure::io(e).context(format!("cannot write {}", out.display())))?;
    Ok(out)
}

pub fn cmd_run(
    cfg: &SessionConfig,
    image: &Path,
    source: &ProgramSource,
    session: Option<&str>,
    dry_run: bool,
) -> Result<(), Failure> {
    let gw = cfg.build_gateway()?;
    let img = load_image(image)?;
    let program = obtain_program(source, &gw, Some(&img))?;
    if dry_run {
        for step in &program.steps {
            println!("{}. {} | {}", step.index, dispatch(step.category), step.text);
        }
        return Ok(());
    }
    let outcome = run_program(&img, &program, &gw, cfg, session)?;
    for rec in &outcome.trace.steps {
        print_timings(rec);
    }
    let out = finish(&outcome)?;
    println!("output: {}", out.display());
    Ok(())
}

/// One session of a batch manifest.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Job {
    image: PathBuf,
    #[serde(default)]
    instruction: Option<String>,
    #[serde(default)]
    program: Option<PathBuf>,
    #[serde(default)]
    session: Option<String>,
}

fn run_job(job: &Job, base: &Path, gw: &Gateway, cfg: &SessionConfig) -> Result<PathBuf, Failure> {
    let source = ProgramSource {
        instruction: job.instruction.clone(),
        program: job.program.as_ref().map(|p| base.join(p)),
    };
    let img = load_image(&base.join(&job.image))?;
    let program = obtain_program(&source, gw, Some(&img))?;
    let outcome = run_program(&img, &program, gw, cfg, job.session.as_deref())?;
    finish(&outcome)
}

/// Run every manifest entry on `workers` threads sharing one gateway.
/// Relative paths resolve against the manifest's directory.
pub fn cmd_batch(cfg: &SessionConfig, manifest: &Path, workers: usize) -> Result<(), Failure> {
    let text = fs::read_to_string(manifest)
        .map_err(|e| Failure::io(e).context(format!("cannot read {}", manifest.display())))?;
    let jobs: Vec<Job> = serde_json::from_str(&text)
        .map_err(|e| Failure::plan(e).context(format!("bad manifest {}", manifest.display())))?;
    let base = manifest.parent().unwrap_or(Path::new("")).to_path_buf();
    let gw = cfg.build_gateway()?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<PathBuf, Failure>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let r = run_job(job, &base, &gw, cfg);
                results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let mut worst: Option<Failure> = None;
    for (i, r) in results.into_inner().expect("workers joined").into_iter().enumerate() {
        match r.expect("every job ran") {
            Ok(out) => println!("{}: ok {}", i + 1, out.display()),
            Err(e) => {
                println!("{}: failed ({:?}) {e}", i + 1, e.kind);
                if worst.as_ref().is_none_or(|w| (e.kind as u8) > (w.kind as u8)) {
                    worst = Some(e);
                }
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

fn load_trace(path: &Path) -> Result<ExecutionTrace, Failure> {
    ExecutionTrace::load(path).map_err(Failure::from)
}

pub fn cmd_step(cfg: &SessionConfig, trace: &Path, from: Option<usize>) -> Result<(), Failure> {
    let trace = load_trace(trace)?;
    let gw = cfg.build_gateway()?;
    let outcome = match from {
        Some(from) => {
            let outcome = resume(trace, from, &gw, cfg)?;
            for rec in outcome.trace.steps.iter().filter(|r| r.index >= from) {
                print_timings(rec);
            }
            outcome
        }
        None => match advance(trace, &gw, cfg)? {
            Advance::AlreadyComplete(t) => {
                println!("session {} already complete ({} steps)", t.session_id, t.program.len());
                return Ok(());
            }
            Advance::Ran { step, outcome } => {
                print_timings(outcome.trace.step(step)?);
                outcome
            }
        },
    };
    if outcome.trace.is_complete() {
        println!("output: {}", finish(&outcome)?.display());
    } else {
        println!("next step: {}", outcome.trace.next_step());
    }
    Ok(())
}

const MASK_LABELS: [(&str, &str); 3] = [("roi", "R"), ("roi_warped", "R'"), ("annulus", "M_ann")];

fn print_step(trace: &ExecutionTrace, rec: &StepRecord) {
    let stages: Vec<&str> = rec.stages.iter().map(|s| s.name()).collect();
    println!(
        "step {} [{}] {}",
        rec.index, rec.instruction.category, rec.instruction.text
    );
    println!("  stages: {}", stages.join(", "));
    if let Some(r) = &rec.text_roi {
        println!("  text roi: {r}");
    }
    if let Some(e) = &rec.entity {
        println!("  entity: {e}");
    }
    if let Some([sx, sy, tx, ty]) = rec.transform {
        println!("  transform: sx={sx} sy={sy} tx={tx} ty={ty}");
    }
    for (label, layout) in [
        ("layout before", &rec.layout_before),
        ("layout after", &rec.layout_after),
    ] {
        if let Some(l) = layout {
            println!("  {label}: {l}");
        }
    }
    for (name, label) in MASK_LABELS {
        if let Some(m) = rec.masks.get(name) {
            println!(
                "  mask {label}: population {} at {}",
                m.population,
                trace.dir.join(&m.path).display()
            );
        }
    }
    for (name, path) in &rec.images {
        println!("  image {name}: {}", trace.dir.join(path).display());
    }
    for (site, prompt) in &rec.prompts {
        println!("  prompt {site}:");
        for line in prompt.lines() {
            println!("    {line}");
        }
    }
}

pub fn cmd_inspect(trace: &Path, index: Option<usize>) -> Result<(), Failure> {
    let trace = load_trace(trace)?;
    println!("session {} ({} steps)", trace.session_id, trace.program.len());
    println!(
        "status: {}",
        serde_json::to_string(&trace.status).expect("status serializes")
    );
    match index {
        Some(i) => print_step(&trace, trace.step(i)?),
        None => {
            for rec in &trace.steps {
                print_step(&trace, rec);
            }
        }
    }
    Ok(())
}

pub fn cmd_serve(cfg: &SessionConfig, addr: &str, workers: usize) -> Result<(), Failure> {
    let gw = Arc::new(cfg.build_gateway()?);
    let handle = serve(gw, addr, workers.max(1)).map_err(|e| Failure::io(e).context(format!("cannot bind {addr}")))?;
    println!("serving on {}", handle.base_url());
    handle.wait();
    Ok(())
}

pub fn cmd_demo(dir: &Path) -> Result<(), Failure> {
    testkit::write_demo(dir)?;
    println!("scene: {}", dir.join("scene.png").display());
    println!("fixtures: {}", dir.join("fixtures").display());
    for (instruction, _) in testkit::multi_step_cases() {
        println!("instruction: {instruction}");
    }
    Ok(())
}
