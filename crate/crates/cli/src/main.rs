//! `dpca`: runs the dynamic-PCA pipeline stage by stage or end to end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! degeneracy. Failures print one JSON object on standard error.

mod config;
mod manifest;
mod stages;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpca_core::panel::Stage;
use dpca_core::{Error, ErrorKind, Result};

use config::{CommonArgs, Config};
use manifest::Run;
use stages::Ctx;

#[derive(Debug, Parser)]
#[command(name = "dpca", version, about = "Dynamic PCA for hour-by-day air-quality panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse raw observations into the canonical grid and missingness report.
    Ingest(CommonArgs),
    /// Fill short gaps in a grid.
    Impute(CommonArgs),
    /// Build per-hour spatially aggregated panels.
    Sao(CommonArgs),
    /// Apply the log or log-difference transform to SAO panels.
    Transform(CommonArgs),
    /// Rolling normality, outlier and correlation diagnostics.
    Diagnose(CommonArgs),
    /// Sliding-window PCA per hour.
    Dpca(CommonArgs),
    /// Hourly and overall EV tables from DPCA output.
    Summarize(CommonArgs),
    /// Static PCA on pooled partitions of the NSAO panels.
    CompareStatic(CommonArgs),
    /// Hourly mean EV1 for every aggregator and transform.
    CompareTransforms(CommonArgs),
    /// Generate synthetic observations with planted structure.
    Synth(CommonArgs),
    /// Run every stage from raw observations.
    Pipeline(CommonArgs),
}

impl Command {
    fn parts(&self) -> (&'static str, &CommonArgs) {
        match self {
            Command::Ingest(a) => ("ingest", a),
            Command::Impute(a) => ("impute", a),
            Command::Sao(a) => ("sao", a),
            Command::Transform(a) => ("transform", a),
            Command::Diagnose(a) => ("diagnose", a),
            Command::Dpca(a) => ("dpca", a),
            Command::Summarize(a) => ("summarize", a),
            Command::CompareStatic(a) => ("compare-static", a),
            Command::CompareTransforms(a) => ("compare-transforms", a),
            Command::Synth(a) => ("synth", a),
            Command::Pipeline(a) => ("pipeline", a),
        }
    }
}

fn execute(name: &str, ctx: &Ctx, run: &mut Run) -> Result<()> {
    match name {
        "ingest" => stages::ingest(ctx, run).map(drop),
        "impute" => stages::impute(ctx, run, None).map(drop),
        "sao" => stages::sao(ctx, run, None).map(drop),
        "transform" => {
            let saos = stages::read_panels(ctx, run, Stage::Sao)?;
            stages::transform_panels(ctx, run, &saos, ctx.cfg.transform).map(drop)
        }
        "diagnose" => {
            let panels = stages::read_panels(ctx, run, ctx.cfg.transform)?;
            stages::diagnose(ctx, run, &panels)
        }
        "dpca" => {
            let panels = stages::read_panels(ctx, run, ctx.cfg.transform)?;
            stages::dpca(ctx, run, &panels).map(drop)
        }
        "summarize" => stages::summarize(ctx, run, None),
        "compare-static" => {
            let panels = stages::read_panels(ctx, run, Stage::Nsao)?;
            stages::compare_static(ctx, run, &panels, true)
        }
        "compare-transforms" => stages::compare_transforms(ctx, run, None),
        "synth" => stages::synth(ctx, run),
        "pipeline" => stages::pipeline(ctx, run),
        other => unreachable!("unknown command {other}"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let (name, args) = cli.command.parts();
    let cfg = Config::resolve(args)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let ctx = Ctx {
        cfg,
        input: args.input.clone(),
    };
    let mut record = Run::new(name, &args.out_dir)?;
    pool.install(|| execute(name, &ctx, &mut record))?;
    record.finish(&ctx.cfg)
}

fn report(kind: &str, code: u8, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": kind, "exit_code": code, "message": message });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            return report("config", 2, first.trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = match e.kind() {
                ErrorKind::Config => ("config", 2),
                ErrorKind::Data => ("data", 3),
                ErrorKind::Numerical => ("numerical", 4),
            };
            report(kind, code, &e.to_string())
        }
    }
}
