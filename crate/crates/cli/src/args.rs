use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "editprog",
    version,
    about = "Plan, run and inspect multi-step image edit programs"
)]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Optional only together with `--print-config`.
    #[command(subcommand)]
    pub command: Option<Command>,
}

/// Flags that override the config file and environment.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML or JSON session config.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Serve one backend kind from a URL or the in-process mock.
    #[arg(long = "backend", global = true, value_name = "KIND=URL|mock")]
    pub backends: Vec<String>,

    #[arg(long, global = true)]
    pub k1: Option<u32>,

    #[arg(long, global = true)]
    pub k2: Option<u32>,

    /// Pixels per deterministic move.
    #[arg(long, global = true)]
    pub move_step: Option<i32>,

    /// Scale per deterministic enlarge; shrink uses its reciprocal.
    #[arg(long, global = true)]
    pub resize_factor: Option<f64>,

    /// Edit move/resize layouts with the built-in rules instead of the LLM.
    #[arg(long, global = true)]
    pub deterministic_layout: bool,

    #[arg(long, global = true, value_name = "DIR")]
    pub outdir: Option<PathBuf>,

    /// Directory of recorded LLM answers and segmentation masks for the mocks.
    #[arg(long, global = true, value_name = "DIR")]
    pub fixtures: Option<PathBuf>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ProgramSource {
    /// Free-form edit instruction, decomposed by the planner.
    #[arg(long, conflicts_with = "program")]
    pub instruction: Option<String>,

    /// Canonical program JSON, bypassing the planner.
    #[arg(long, alias = "from-file", value_name = "PATH")]
    pub program: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose an instruction into a program and save it.
    Plan {
        #[command(flatten)]
        source: ProgramSource,

        /// Image shown to vision-capable planners.
        #[arg(long)]
        image: Option<PathBuf>,

        /// Where to write the program; defaults to `<outdir>/program.json`.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Execute a program on an image and persist the trace.
    Run {
        #[arg(long, required_unless_present = "batch")]
        image: Option<PathBuf>,

        #[command(flatten)]
        source: ProgramSource,

        /// Session directory name under the outdir.
        #[arg(long)]
        session: Option<String>,

        /// Print dispatch plans without executing any step.
        #[arg(long)]
        dry_run: bool,

        /// JSON list of `{image, instruction | program, session?}` jobs.
        #[arg(long, value_name = "PATH", conflicts_with_all = ["image", "instruction", "program"])]
        batch: Option<PathBuf>,

        /// Concurrent sessions in batch mode.
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    /// Advance a stored session by one step, or rerun it from a step.
    Step {
        /// Session directory or its trace.jsonl.
        #[arg(long)]
        trace: PathBuf,

        /// Rerun every step from this index to the end.
        #[arg(long)]
        from: Option<usize>,
    },
    /// Report prompts, mask statistics and assets of a stored session.
    Inspect {
        #[arg(long)]
        trace: PathBuf,

        /// 1-based step; all steps when omitted.
        #[arg(long)]
        index: Option<usize>,
    },
    /// Expose the configured backends over the HTTP wire protocol.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8700")]
        addr: String,

        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    /// Write the synthetic demo scene and its mock fixtures.
    Demo {
        #[arg(value_name = "DIR")]
        dir: PathBuf,
    },
}
