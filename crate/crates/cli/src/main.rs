//! `lazybatch` command-line driver.

mod metrics;

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lazybatch::{compile, parse_program, print_program, AnalysisReport, GatherMode, Model, Program, Scheduler, Size, Toggles};
use metrics::RunConfig;

#[derive(Parser)]
#[command(name = "lazybatch", version, about = "Hybrid static and dynamic auto-batching")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one batch, check it against the reference interpreter and emit metrics.
    Run(RunArgs),
    /// Ablation table over the optimization progression.
    Compare(RunArgs),
    /// Invocation counts per kernel signature.
    Profile(RunArgs),
    /// Compile-time analysis report.
    Analyze(SourceArgs),
    /// Generated kernel signatures.
    Kernels(SourceArgs),
    /// Parse a program and print it in canonical form.
    Fmt(SourceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedArg {
    Depth,
    Agenda,
}

#[derive(Clone, Copy, ValueEnum)]
enum GatherArg {
    Fused,
    Explicit,
}

#[derive(Clone, Copy, ValueEnum)]
enum SizeArg {
    Small,
    Large,
}

impl From<SizeArg> for Size {
    fn from(s: SizeArg) -> Size {
        match s {
            SizeArg::Small => Size::Small,
            SizeArg::Large => Size::Large,
        }
    }
}

#[derive(Args)]
struct ToggleArgs {
    #[arg(long)]
    no_coarsen: bool,
    #[arg(long)]
    no_ghost: bool,
    #[arg(long)]
    no_phases: bool,
    #[arg(long)]
    no_hoist: bool,
    #[arg(long)]
    no_hfuse: bool,
}

impl ToggleArgs {
    fn toggles(&self) -> Toggles {
        Toggles {
            coarsen: !self.no_coarsen,
            ghost: !self.no_ghost,
            phases: !self.no_phases,
            hoist: !self.no_hoist,
            horizontal_fuse: !self.no_hfuse,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_parser = parse_model)]
    model: Model,
    #[arg(long, value_enum, default_value = "small")]
    size: SizeArg,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    batch: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "depth")]
    scheduler: SchedArg,
    #[arg(long, value_enum, default_value = "fused")]
    gather: GatherArg,
    #[command(flatten)]
    toggles: ToggleArgs,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        let scheduler = match self.scheduler {
            SchedArg::Depth => Scheduler::Depth,
            SchedArg::Agenda => Scheduler::Agenda,
        };
        let gather = match self.gather {
            GatherArg::Fused => GatherMode::Fused,
            GatherArg::Explicit => GatherMode::Explicit,
        };
        RunConfig {
            model: self.model,
            size: self.size.into(),
            batch_size: self.batch as usize,
            seed: self.seed,
            options: metrics::default_options(scheduler, gather, self.toggles.toggles(), self.seed),
            out: self.out.as_ref().map(|p| p.display().to_string()),
        }
    }
}

#[derive(Args)]
struct SourceArgs {
    /// A zoo model.
    #[arg(long, value_parser = parse_model, conflicts_with = "file", required_unless_present = "file")]
    model: Option<Model>,
    /// A program source file.
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "small")]
    size: SizeArg,
    #[command(flatten)]
    toggles: ToggleArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SourceArgs {
    fn program(&self) -> Result<Program> {
        match (&self.model, &self.file) {
            (Some(m), _) => Ok(m.program(self.size.into())),
            (None, Some(path)) => {
                let src = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Ok(parse_program(&src)?)
            }
            (None, None) => anyhow::bail!("pass --model or --file"),
        }
    }
}

fn parse_model(s: &str) -> Result<Model, String> {
    s.parse()
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
                r => r.context("writing stdout"),
            }
        }
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Run(a) => {
            let report = metrics::run(&a.config())?;
            emit(&a.out, &json(&report))?;
            if !report.equivalence {
                eprintln!("error: batched outputs differ from the reference interpreter");
            }
            Ok(report.equivalence)
        }
        Cmd::Compare(a) => {
            let rows = metrics::compare(&a.config())?;
            emit(&None, metrics::table(&rows).trim_end())?;
            if a.out.is_some() {
                emit(&a.out, &json(&rows))?;
            }
            Ok(true)
        }
        Cmd::Profile(a) => {
            let report = metrics::profile(&a.config())?;
            emit(&a.out, &json(&report))?;
            Ok(true)
        }
        Cmd::Analyze(a) => {
            let c = compile(&a.program()?, a.toggles.toggles())?;
            emit(&a.out, &json(&AnalysisReport::new(&c)))?;
            Ok(true)
        }
        Cmd::Kernels(a) => {
            let c = compile(&a.program()?, a.toggles.toggles())?;
            emit(&a.out, &json(&c.kernels.sigs))?;
            Ok(true)
        }
        Cmd::Fmt(a) => {
            let text = print_program(&a.program()?);
            emit(&a.out, text.trim_end())?;
            Ok(true)
        }
    }
}
