//! `eparvi` command-line runner.
//!
//! Exit codes: 0 on success, 2 for bad configs, arguments or missing input
//! files (nothing is written), 1 for failures during a run (a manifest with
//! `status = "failed"` is left behind).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eparvi::experiment::{execute, ExperimentConfig, RunOptions, RunStatus};
use eparvi::export::{export_to_file, ExportKind, ExportRequest};
use eparvi::io::{read_positions_file, write_jsonl};
use eparvi::metrics::report;
use eparvi::targets::{catalogue, TargetSpec};
use eparvi::{Error, Points};

#[derive(Parser)]
#[command(name = "eparvi", version, about = "Electrostatics-based particle variational inference")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config.
    Run(RunArgs),
    /// List built-in targets with their dimension and parameters.
    ListTargets {
        #[arg(long)]
        json: bool,
    },
    /// MMD² against a reference sample and/or average NLL under a target.
    Metrics(MetricsArgs),
    /// Derived data for plotting from a finished run directory.
    Export(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory (default: `output.dir` from the config, else `runs/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use `mesh.full_scale_counts` instead of `mesh.counts`.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    snapshot_stride: Option<usize>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Position CSV; its last snapshot is evaluated.
    #[arg(long)]
    samples: PathBuf,
    /// Position CSV whose last snapshot is the MMD² reference.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Target id for average NLL (default parameters).
    #[arg(long)]
    target: Option<String>,
    /// Append the report to this JSONL file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    run: PathBuf,
    /// marginals, density-grid or lv-predictive
    #[arg(long)]
    kind: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    resolution: usize,
    /// Two comma-separated dimensions spanned by density-grid.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    axes: Option<Vec<usize>>,
    /// Comma-separated values for every coordinate of density-grid.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    fixed: Option<Vec<f64>>,
    #[arg(long)]
    bins: Option<usize>,
}

/// An error paired with its exit code.
struct Failure {
    code: u8,
    error: Error,
}

fn usage(error: Error) -> Failure {
    Failure { code: 2, error }
}

fn runtime(error: Error) -> Failure {
    Failure { code: 1, error }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::ListTargets { json } => cmd_list_targets(json),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Export(args) => cmd_export(args),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, Failure> {
    let cfg = ExperimentConfig::from_file(&args.config).map_err(usage)?;
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let base = std::path::absolute(&base).map_err(|e| usage(Error::io(&base, e)))?;
    let opts = RunOptions {
        seed: args.seed,
        full_scale: args.full_scale,
        snapshot_stride: args.snapshot_stride,
    };
    // Everything that can be checked without running is checked here, so a
    // bad config never leaves a run directory behind.
    let resolved = cfg.resolve(&opts).map_err(usage)?;
    resolved.target.build(Some(&base)).map_err(usage)?;
    if let Some(r) = &resolved.metrics.reference {
        let p = if r.is_relative() { base.join(r) } else { r.clone() };
        if !p.is_file() {
            return Err(usage(Error::Config(format!(
                "metrics.reference {} does not exist",
                p.display()
            ))));
        }
    }
    let out = match (&args.out, &cfg.output.dir) {
        (Some(o), _) => o.clone(),
        (None, Some(d)) if d.is_relative() => base.join(d),
        (None, Some(d)) => d.clone(),
        (None, None) => PathBuf::from("runs").join(cfg.name()),
    };
    let manifest = execute(&cfg, Some(&base), &out, &opts).map_err(runtime)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    for c in &manifest.checks {
        println!("check {}: {} ({})", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
    }
    if let Some(n) = manifest.particles_in_region {
        println!(
            "{} particles in region, {} discarded",
            n,
            manifest.particles_discarded.unwrap_or(0)
        );
    }
    debug_assert_eq!(manifest.status, RunStatus::Complete);
    println!("run `{}` complete in {:.2}s -> {}", manifest.name, manifest.wall_time_s, out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_list_targets(json: bool) -> Result<ExitCode, Failure> {
    let cat = catalogue();
    if json {
        let text = serde_json::to_string_pretty(&cat).map_err(|e| runtime(e.into()))?;
        println!("{text}");
        return Ok(ExitCode::SUCCESS);
    }
    for t in &cat {
        println!("{:<18} dim={} scale={:?} gradient={}", t.id, t.dim, t.scale, t.has_gradient);
        println!("    {}", t.description);
        for p in &t.params {
            println!("    {} ({}, default {})", p.name, p.kind, p.default);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn last_snapshot(path: &Path) -> Result<Points, Failure> {
    if !path.is_file() {
        return Err(usage(Error::Data(format!("{} does not exist", path.display()))));
    }
    let snaps = read_positions_file(path).map_err(usage)?;
    snaps
        .into_iter()
        .last()
        .map(|s| s.positions)
        .ok_or_else(|| usage(Error::Data(format!("{} has no rows", path.display()))))
}

fn cmd_metrics(args: MetricsArgs) -> Result<ExitCode, Failure> {
    if args.reference.is_none() && args.target.is_none() {
        return Err(usage(Error::Config("metrics needs --reference and/or --target".into())));
    }
    let samples = last_snapshot(&args.samples)?;
    let reference = args.reference.as_deref().map(last_snapshot).transpose()?;
    let target = match &args.target {
        Some(id) => Some(TargetSpec::from_id(id).and_then(|s| s.build(None)).map_err(usage)?),
        None => None,
    };
    if let Some(t) = &target {
        if t.dim() != samples.dim() {
            return Err(usage(Error::DimensionMismatch {
                expected: t.dim(),
                actual: samples.dim(),
            }));
        }
    }
    let rep = report(&samples, reference.as_ref(), target.as_deref()).map_err(usage)?;
    let line = serde_json::to_string(&rep).map_err(|e| runtime(e.into()))?;
    println!("{line}");
    if let Some(out) = &args.out {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(out)
            .map_err(|e| runtime(Error::io(out, e)))?;
        write_jsonl(file, &[rep]).map_err(runtime)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_export(args: ExportArgs) -> Result<ExitCode, Failure> {
    let kind: ExportKind = args.kind.parse().map_err(usage)?;
    if !args.run.is_dir() {
        return Err(usage(Error::Data(format!("run directory {} does not exist", args.run.display()))));
    }
    let mut req = ExportRequest::new(kind);
    req.resolution = args.resolution;
    if let Some(a) = args.axes {
        req.axes = (a[0], a[1]);
    }
    req.fixed = args.fixed;
    if let Some(b) = args.bins {
        req.bins = b;
    }
    export_to_file(&args.run, &req, &args.out).map_err(|e| match e {
        Error::Config(_) | Error::DimensionMismatch { .. } | Error::Io { .. } => usage(e),
        other => runtime(other),
    })?;
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}
