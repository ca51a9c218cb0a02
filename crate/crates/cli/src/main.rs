//! `abl`: run stratified boundary-layer LES cases and post-process the
//! checkpoints they write.
//!
//! Exit codes: 0 on success, 1 for configuration or input problems, 2 when
//! the solver aborts at runtime.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use abl_core::config::RunConfig;
use abl_core::{checkpoint, output, runner, AblError};

#[derive(Parser)]
#[command(name = "abl", version, about = "Stratified boundary-layer LES driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured case to its end time.
    Run {
        /// Configuration file.
        config: PathBuf,
        /// Continue from the newest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Size of the worker thread pool (default: one per core).
        #[arg(long, value_name = "N")]
        threads: Option<usize>,
    },
    /// Recompute diagnostic files from a checkpoint.
    ///
    /// Without flags this regenerates profiles.csv, bulk.json, and the
    /// spectra planes named in the embedded configuration. Flags narrow
    /// the output: --profiles for the profile/bulk pair, --spectra for
    /// spectra at explicit heights.
    Post {
        /// Checkpoint file; outputs land next to it.
        checkpoint: PathBuf,
        /// Emit spectra at a height, e.g. --spectra z=100. Repeatable.
        #[arg(long, value_name = "z=HEIGHT")]
        spectra: Vec<String>,
        /// Emit profiles.csv and bulk.json.
        #[arg(long)]
        profiles: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_class(&err))
        }
    }
}

/// 1 for bad inputs (configuration, unreadable or mismatched files), 2 for
/// solver aborts.
fn exit_class(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<AblError>() {
        Some(
            AblError::Config { .. }
            | AblError::Checkpoint(_)
            | AblError::VersionMismatch { .. }
            | AblError::Io(_),
        )
        | None => 1,
        Some(_) => 2,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            resume,
            threads,
        } => cmd_run(&config, resume, threads),
        Command::Post {
            checkpoint,
            spectra,
            profiles,
        } => cmd_post(&checkpoint, &spectra, profiles),
    }
}

fn cmd_run(config: &Path, resume: bool, threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building the thread pool")?;
    }
    let cfg = RunConfig::from_file(config)
        .with_context(|| format!("loading {}", config.display()))?;
    let summary = runner::run(&cfg, resume, &mut |line| println!("{line}"))?;
    let bulk = &summary.bulk;
    println!(
        "window means: u_tau = {:.4} m/s, qstar = {:.5} K m/s, z_i = {:.1} m, z_j = {:.1} m",
        bulk.u_tau, bulk.qstar, bulk.z_i, bulk.z_j
    );
    Ok(())
}

fn cmd_post(path: &Path, spectra: &[String], profiles: bool) -> Result<()> {
    let chk = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let sim = chk.config.simulation()?;
    let out_dir = match path.parent() {
        Some(p) if p.as_os_str().is_empty() => Path::new("."),
        Some(p) => p,
        None => Path::new("."),
    };
    println!(
        "snapshot: t = {:.1} s, step {}, {} window samples",
        chk.state.t,
        chk.state.step,
        chk.stats.as_ref().map_or(0, |s| s.samples)
    );

    let narrowed = profiles || !spectra.is_empty();
    if profiles || !narrowed {
        let (prof, bulk) = runner::snapshot_diagnostics(
            &sim,
            &chk.state,
            chk.stats.as_ref(),
            chk.config.output.zi_gradient_threshold,
        )?;
        let prof_path = out_dir.join("profiles.csv");
        let bulk_path = out_dir.join("bulk.json");
        output::write_profiles(&prof_path, &prof)?;
        output::write_bulk(&bulk_path, &bulk)?;
        println!("wrote {}", prof_path.display());
        println!("wrote {}", bulk_path.display());
    }

    let planes: Vec<(String, f64)> = if !spectra.is_empty() {
        spectra.iter().map(|s| parse_plane(s)).collect::<Result<_, _>>()?
    } else if !narrowed {
        chk.config.output.slice_planes.clone()
    } else {
        Vec::new()
    };
    for written in output::write_spectra(out_dir, &sim.grid, &chk.state, &planes)? {
        println!("wrote {}", written.display());
    }
    Ok(())
}

fn parse_plane(arg: &str) -> Result<(String, f64), AblError> {
    let coord = arg
        .strip_prefix("z=")
        .and_then(|v| v.parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or_else(|| AblError::config("--spectra", format!("expected z=<height>, got {arg:?}")))?;
    Ok(("z".to_string(), coord))
}
