//! The run loop: time stepping, statistics accumulation, periodic output,
//! and checkpointing, plus the snapshot diagnostics shared with `post`.
//!
//! Every scheduling decision is a pure function of the current simulated
//! time, so a run resumed from a checkpoint takes the same steps and emits
//! the same rows as one that was never interrupted.

use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::diagnostics::{self, BulkQuantities, ProfileSet, StatsAccumulator};
use crate::dynamics::{DtControl, Simulation, State, StepInfo};
use crate::error::AblError;
use crate::grid::Grid;
use crate::ops;
use crate::output::{self, TimeseriesRow};

/// What a completed run produced, for callers that report or test on it.
#[derive(Debug)]
pub struct RunSummary {
    pub state: State,
    pub stats: StatsAccumulator,
    /// Profiles backing the final `profiles.csv`.
    pub profiles: ProfileSet,
    /// Quantities backing the final `bulk.json`.
    pub bulk: BulkQuantities,
    /// Steps taken by this invocation (excludes steps replayed from disk).
    pub steps_taken: u64,
    pub resumed_from: Option<PathBuf>,
}

/// Smallest multiple of `interval` strictly past `t`. A small relative slack
/// keeps a time that landed on a multiple, up to rounding, from retriggering.
fn next_multiple(t: f64, interval: f64) -> f64 {
    (((t + 1e-9 * interval) / interval).floor() + 1.0) * interval
}

fn due(t: f64, event: f64, interval: f64) -> bool {
    t + 1e-9 * interval >= event
}

/// Advances the configured case to its end time, emitting time series,
/// profile, bulk, spectra, and checkpoint files under the output directory.
///
/// With `resume`, the newest checkpoint in the output directory is loaded
/// and the run continues from it; time-series rows past the checkpoint are
/// dropped so the file reads as one uninterrupted record. Without a usable
/// checkpoint the run starts fresh, clearing stale checkpoints and rows
/// left by a previous run of the same directory.
///
/// On a NoStableSolution or CflViolation abort the current state is flushed
/// to a final checkpoint before the error is handed back.
pub fn run(
    cfg: &RunConfig,
    resume: bool,
    log: &mut dyn FnMut(&str),
) -> Result<RunSummary, AblError> {
    let mut sim = cfg.simulation()?;
    let out_dir = PathBuf::from(&cfg.output.dir);
    fs::create_dir_all(&out_dir)?;
    let ts_path = out_dir.join("timeseries.csv");

    let duration = cfg.duration_seconds();
    let (w0, w1) = cfg.stats_window();
    let plan = &cfg.output;
    let time_eps = 1e-9 * duration.max(1.0);

    let mut stats = StatsAccumulator::new(sim.grid.nz);
    let mut resumed_from = None;
    let mut state = if resume {
        match checkpoint::latest_in(&out_dir)? {
            Some(path) => {
                let chk = checkpoint::load(&path)?;
                if chk.config.config_hash() != cfg.config_hash() {
                    return Err(AblError::config(
                        "resume",
                        format!("{} was written by a different configuration", path.display()),
                    ));
                }
                if let Some(s) = chk.stats {
                    stats = s;
                }
                output::truncate_timeseries(&ts_path, chk.state.t)?;
                log(&format!(
                    "resuming from {} (t = {:.1} s, step {})",
                    path.display(),
                    chk.state.t,
                    chk.state.step
                ));
                resumed_from = Some(path);
                chk.state
            }
            None => {
                log("no checkpoint found, starting from the initial state");
                cfg.initial_state(&sim)?
            }
        }
    } else {
        cfg.initial_state(&sim)?
    };

    if resumed_from.is_none() {
        scrub_outputs(&out_dir)?;
        let wall = sim.diagnose_closure(&state)?.0;
        let (u_tau, qstar, l_mo) = wall
            .map(|w| (w.u_tau, w.qstar, w.l_mo))
            .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        output::append_timeseries(
            &ts_path,
            &TimeseriesRow {
                t: state.t,
                u_tau,
                qstar,
                l_mo,
                theta_b: sim.surface.value(state.t),
                dt: 0.0,
                cfl: 0.0,
            },
        )?;
    }

    let base_ctl = cfg.dt_control();
    let cutoff_frac = cfg.sgs.mfev_upper_cutoff;
    let mut next_ts = next_multiple(state.t, plan.timeseries_interval);
    let mut next_prof = next_multiple(state.t, plan.profile_interval);
    let mut next_chk = next_multiple(state.t, plan.checkpoint_interval);
    let mut steps_taken = 0u64;

    let mut advance = || -> Result<(), AblError> {
        while state.t < duration - time_eps {
            if let Some(frac) = cutoff_frac {
                let zi = instantaneous_zi(&sim.grid, &state, plan.zi_gradient_threshold);
                sim.cutoff_height = Some(frac * zi);
            }

            let mut t_next = duration.min(next_ts).min(next_prof).min(next_chk);
            if w0 > state.t + time_eps {
                t_next = t_next.min(w0);
            }
            if w1 > state.t + time_eps {
                t_next = t_next.min(w1);
            }
            let ctl = match base_ctl {
                DtControl::Auto { cap } => DtControl::Auto {
                    cap: cap.min((t_next - state.t).max(sim.stepper.dt_min)),
                },
                DtControl::Fixed(dt) if state.t + dt > duration => {
                    DtControl::Fixed(duration - state.t)
                }
                fixed => fixed,
            };
            let info = sim.step(&mut state, ctl)?;
            steps_taken += 1;

            if state.t >= w0 - time_eps && state.t <= w1 + time_eps {
                let (wall, sgs_state) = sim.diagnose_closure(&state)?;
                stats.accumulate(&sim.grid, &state, &sgs_state, &sim.sgs_params, wall.as_ref());
            }
            if due(state.t, next_ts, plan.timeseries_interval) {
                output::append_timeseries(&ts_path, &row_from(&sim, &state, &info))?;
                next_ts = next_multiple(state.t, plan.timeseries_interval);
            }
            if due(state.t, next_prof, plan.profile_interval) {
                emit_snapshot(&out_dir, &sim, &state, &stats, plan.zi_gradient_threshold)?;
                log(&format!(
                    "t = {:.1} s, step {}, dt = {:.3} s, cfl = {:.2}",
                    state.t, state.step, info.dt, info.cfl
                ));
                next_prof = next_multiple(state.t, plan.profile_interval);
            }
            if due(state.t, next_chk, plan.checkpoint_interval) {
                save_checkpoint(&out_dir, &state, cfg, &stats)?;
                next_chk = next_multiple(state.t, plan.checkpoint_interval);
            }
        }
        Ok(())
    };

    if let Err(abort) = advance() {
        let _ = save_checkpoint(&out_dir, &state, cfg, &stats);
        return Err(abort);
    }

    let (profiles, bulk) = emit_snapshot(&out_dir, &sim, &state, &stats, plan.zi_gradient_threshold)?;
    output::write_spectra(&out_dir, &sim.grid, &state, &plan.slice_planes)?;
    save_checkpoint(&out_dir, &state, cfg, &stats)?;
    log(&format!("done: t = {:.1} s after {steps_taken} steps", state.t));

    Ok(RunSummary {
        state,
        stats,
        profiles,
        bulk,
        steps_taken,
        resumed_from,
    })
}

/// Profiles and bulk quantities for a snapshot. Window statistics are used
/// when they hold at least one sample; otherwise the snapshot itself is
/// accumulated once, so early and post-processed output share one path.
pub fn snapshot_diagnostics(
    sim: &Simulation,
    state: &State,
    stats: Option<&StatsAccumulator>,
    zi_threshold: f64,
) -> Result<(ProfileSet, BulkQuantities), AblError> {
    let single;
    let acc = match stats {
        Some(s) if s.samples > 0 => s,
        _ => {
            let (wall, sgs_state) = sim.diagnose_closure(state)?;
            let mut a = StatsAccumulator::new(sim.grid.nz);
            a.accumulate(&sim.grid, state, &sgs_state, &sim.sgs_params, wall.as_ref());
            single = a;
            &single
        }
    };
    let profiles = acc.profiles(&sim.grid, sim.phys.g, sim.phys.theta0);
    let bulk = diagnostics::bulk_quantities(
        &sim.grid,
        &profiles,
        acc.mean_u_tau(),
        acc.mean_qstar(),
        sim.consts.kappa,
        sim.phys.g,
        sim.phys.theta0,
        zi_threshold,
        acc.samples,
    );
    Ok((profiles, bulk))
}

fn emit_snapshot(
    dir: &Path,
    sim: &Simulation,
    state: &State,
    stats: &StatsAccumulator,
    zi_threshold: f64,
) -> Result<(ProfileSet, BulkQuantities), AblError> {
    let (profiles, bulk) = snapshot_diagnostics(sim, state, Some(stats), zi_threshold)?;
    output::write_profiles(&dir.join("profiles.csv"), &profiles)?;
    output::write_bulk(&dir.join("bulk.json"), &bulk)?;
    Ok((profiles, bulk))
}

fn save_checkpoint(
    dir: &Path,
    state: &State,
    cfg: &RunConfig,
    stats: &StatsAccumulator,
) -> Result<PathBuf, AblError> {
    let path = dir.join(checkpoint::file_name(state.step));
    let with_stats = (stats.samples > 0).then_some(stats);
    checkpoint::save(&path, state, cfg.seed, cfg, with_stats)?;
    Ok(path)
}

fn row_from(sim: &Simulation, state: &State, info: &StepInfo) -> TimeseriesRow {
    let (u_tau, qstar, l_mo) = match &info.wall {
        Some(w) => (w.u_tau, w.qstar, w.l_mo),
        None => (f64::NAN, f64::NAN, f64::NAN),
    };
    TimeseriesRow {
        t: state.t,
        u_tau,
        qstar,
        l_mo,
        theta_b: sim.surface.value(state.t),
        dt: info.dt,
        cfl: info.cfl,
    }
}

/// Boundary-layer depth detected on the instantaneous mean wind, used to
/// place the optional upper cutoff of the mean-field viscosity. Depends on
/// the state alone, which keeps resumed runs on the original trajectory.
fn instantaneous_zi(grid: &Grid, state: &State, threshold: f64) -> f64 {
    let um = ops::plane_average(&state.u);
    let vm = ops::plane_average(&state.v);
    let z: Vec<f64> = (0..grid.nz).map(|k| grid.z_center(k)).collect();
    let speed: Vec<f64> = (0..grid.nz).map(|k| um[k].hypot(vm[k])).collect();
    let jet = diagnostics::llj_height(&z, &speed);
    diagnostics::boundary_layer_depth(&z, &speed, grid.dz, jet.z_j, threshold).z_i
}

/// Removes checkpoints and the time series left by a previous run, so a
/// fresh start cannot splice new rows onto a stale record or hand a later
/// `--resume` a checkpoint from a run that got further.
fn scrub_outputs(dir: &Path) -> Result<(), AblError> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name == "timeseries.csv" || (name.starts_with("checkpoint_") && name.ends_with(".bin"))
        {
            fs::remove_file(entry.path())?;
        }
    }
    Ok(())
}
