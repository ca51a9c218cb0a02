//! Run configuration.
//!
//! A run is described by a sectioned TOML file. Only `case` is mandatory;
//! every other key falls back to the selected case's default, so the
//! smallest useful file is
//!
//! ```toml
//! case = "gabls1"
//! seed = 1
//! ```
//!
//! Keys from the file are merged over the case defaults table by table and
//! the result is validated as a whole. The canonical form of the resolved
//! configuration (not the input file) is what gets hashed into checkpoints,
//! so reordering keys or dropping a key that matches its default does not
//! invalidate a resume.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cases;
use crate::dynamics::{
    BottomBc, DtControl, PhysicsParams, Simulation, State, SurfaceTemp, TimeStepper,
};
use crate::error::AblError;
use crate::grid::Grid;
use crate::sgs::{SgsModel, SgsParams};
use crate::wall::SimilarityConstants;

/// Benchmark selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// Stably stratified boundary layer under prescribed surface cooling.
    #[serde(rename = "gabls1")]
    Gabls1,
    /// Neutral boundary layer driven by a constant streamwise body force.
    #[serde(rename = "neutral")]
    Neutral,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::Gabls1 => "gabls1",
            Case::Neutral => "neutral",
        })
    }
}

/// `[grid]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    /// Height of the lowest computational face (m). Zero puts the wall on
    /// the grid; a positive value offsets the resolved domain above it.
    pub z_bottom: f64,
}

/// `[physics]` section: body forces, fluid constants, and the scalar
/// boundary settings tied to the case physics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    /// Coriolis parameter (1/s).
    pub f: f64,
    /// Geostrophic wind components (m/s).
    pub u_g: f64,
    pub v_g: f64,
    pub g: f64,
    /// Reference potential temperature (K).
    pub theta0: f64,
    pub nu_mol: f64,
    pub alpha_mol: f64,
    /// Potential-temperature gradient imposed at the domain top (K/m).
    pub top_theta_gradient: f64,
    /// Target friction velocity of the neutral channel forcing (m/s);
    /// the body force is u_tau^2 / Lz. Neutral case only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_tau_target: Option<f64>,
}

/// `[wall]` section: roughness, similarity constants, and the surface
/// temperature rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallSection {
    /// Roughness length (m).
    pub z0: f64,
    pub kappa: f64,
    pub beta_m: f64,
    pub beta_h: f64,
    /// Sampling height for the wall model in units of z0. Unset means the
    /// first cell-center level.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling_height_over_z0: Option<f64>,
    /// Surface temperature at t = 0 (K).
    pub theta_surface: f64,
    /// Surface cooling rate (K per hour).
    pub cooling_rate: f64,
}

/// `[time]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub duration_hours: f64,
    pub cfl_target: f64,
    pub diff_target: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Fixed step size (s). Unset means adaptive stepping.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

/// `[output]` section: where results go and how often they are written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPlan {
    pub dir: String,
    /// Seconds of simulated time between profile snapshots.
    pub profile_interval: f64,
    pub timeseries_interval: f64,
    pub checkpoint_interval: f64,
    /// Slice planes for spectra, as (axis, coordinate) pairs. Only the
    /// "z" axis is supported; each entry produces a spectra file.
    pub slice_planes: Vec<(String, f64)>,
    /// Statistics window bounds in simulated hours.
    pub stats_start_hours: f64,
    pub stats_end_hours: f64,
    /// Mean-shear magnitude below which the wind is taken as constant
    /// when detecting the boundary-layer top (1/s).
    pub zi_gradient_threshold: f64,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: Case,
    pub seed: u64,
    pub grid: GridSection,
    pub physics: PhysicsSection,
    pub wall: WallSection,
    pub sgs: SgsParams,
    pub time: TimeSection,
    pub output: OutputPlan,
}

impl RunConfig {
    /// Defaults for the stable benchmark: a 400 m cube under a 8 m/s
    /// geostrophic wind, cooled at 0.25 K/h for nine hours, with
    /// statistics over the final hour.
    pub fn gabls1() -> RunConfig {
        RunConfig {
            case: Case::Gabls1,
            seed: 1,
            grid: GridSection {
                nx: 64,
                ny: 64,
                nz: 64,
                lx: 400.0,
                ly: 400.0,
                lz: 400.0,
                z_bottom: 0.0,
            },
            physics: PhysicsSection {
                f: 1.39e-4,
                u_g: 8.0,
                v_g: 0.0,
                g: 9.81,
                theta0: 263.5,
                nu_mol: 0.0,
                alpha_mol: 0.0,
                top_theta_gradient: 0.01,
                u_tau_target: None,
            },
            wall: WallSection {
                z0: 0.1,
                kappa: 0.4,
                beta_m: 4.8,
                beta_h: 7.2,
                sampling_height_over_z0: None,
                theta_surface: 265.0,
                cooling_rate: 0.25,
            },
            sgs: SgsParams {
                model: SgsModel::MfevTkeDrd,
                ..SgsParams::default()
            },
            time: TimeSection {
                duration_hours: 9.0,
                cfl_target: 0.5,
                diff_target: 0.25,
                dt_min: 1e-6,
                dt_max: 5.0,
                dt: None,
            },
            output: OutputPlan {
                dir: "out".into(),
                profile_interval: 600.0,
                timeseries_interval: 10.0,
                checkpoint_interval: 3600.0,
                slice_planes: vec![("z".into(), 100.0)],
                stats_start_hours: 8.0,
                stats_end_hours: 9.0,
                zi_gradient_threshold: 0.002,
            },
        }
    }

    /// Defaults for the neutral benchmark: a 3 km x 3 km x 1 km channel
    /// started from the logarithmic wind profile of its 0.45 m/s friction
    /// velocity and run for 1000 s, with statistics over the second half.
    /// The window ends long before the interior drifts from the
    /// logarithmic state, which is what the case is meant to probe.
    pub fn neutral() -> RunConfig {
        RunConfig {
            case: Case::Neutral,
            seed: 1,
            grid: GridSection {
                nx: 48,
                ny: 48,
                nz: 32,
                lx: 3000.0,
                ly: 3000.0,
                lz: 1000.0,
                z_bottom: 0.0,
            },
            physics: PhysicsSection {
                f: 0.0,
                u_g: 0.0,
                v_g: 0.0,
                g: 9.81,
                theta0: 300.0,
                nu_mol: 0.0,
                alpha_mol: 0.0,
                top_theta_gradient: 0.0,
                u_tau_target: Some(0.45),
            },
            wall: WallSection {
                z0: 0.1,
                kappa: 0.4,
                beta_m: 4.8,
                beta_h: 7.2,
                sampling_height_over_z0: None,
                theta_surface: 300.0,
                cooling_rate: 0.0,
            },
            sgs: SgsParams {
                model: SgsModel::MfevSmg,
                ..SgsParams::default()
            },
            time: TimeSection {
                duration_hours: 1000.0 / 3600.0,
                cfl_target: 0.5,
                diff_target: 0.25,
                dt_min: 1e-6,
                dt_max: 5.0,
                dt: None,
            },
            output: OutputPlan {
                dir: "out".into(),
                profile_interval: 100.0,
                timeseries_interval: 10.0,
                checkpoint_interval: 500.0,
                slice_planes: vec![("z".into(), 100.0)],
                stats_start_hours: 500.0 / 3600.0,
                stats_end_hours: 1000.0 / 3600.0,
                zi_gradient_threshold: 0.002,
            },
        }
    }

    /// Parses a configuration file's text: reads `case`, merges the given
    /// keys over that case's defaults, and validates the result.
    pub fn from_str(text: &str) -> Result<RunConfig, AblError> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| AblError::config("config", e.message().to_string()))?;
        let case: Case = match user.get("case") {
            Some(v) => v.clone().try_into().map_err(|_| {
                AblError::config("case", "expected \"gabls1\" or \"neutral\"")
            })?,
            None => {
                return Err(AblError::config(
                    "case",
                    "missing; expected \"gabls1\" or \"neutral\"",
                ))
            }
        };
        let defaults = match case {
            Case::Gabls1 => RunConfig::gabls1(),
            Case::Neutral => RunConfig::neutral(),
        };
        let mut base = match toml::Value::try_from(&defaults) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("defaults always serialize to a table"),
        };
        merge_tables(&mut base, user);
        let cfg: RunConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| AblError::config("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and resolves a configuration file. The environment variable
    /// `ABL_OUTPUT_DIR`, when set, overrides `output.dir`.
    pub fn from_file(path: &Path) -> Result<RunConfig, AblError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = RunConfig::from_str(&text)?;
        if let Ok(dir) = std::env::var("ABL_OUTPUT_DIR") {
            if !dir.is_empty() {
                cfg.output.dir = dir;
            }
        }
        Ok(cfg)
    }

    /// Checks every key, reporting the first violation by its dotted name.
    pub fn validate(&self) -> Result<(), AblError> {
        let g = &self.grid;
        ensure(g.nx >= 4, "grid.nx", "need at least 4 cells")?;
        ensure(g.ny >= 4, "grid.ny", "need at least 4 cells")?;
        ensure(g.nz >= 4, "grid.nz", "need at least 4 cells")?;
        ensure(g.lx > 0.0, "grid.lx", "must be positive")?;
        ensure(g.ly > 0.0, "grid.ly", "must be positive")?;
        ensure(g.lz > 0.0, "grid.lz", "must be positive")?;
        ensure(
            g.z_bottom >= 0.0 && g.z_bottom < g.lz,
            "grid.z_bottom",
            "must lie in [0, lz)",
        )?;
        let grid = Grid::new(g.nx, g.ny, g.nz, g.lx, g.ly, g.lz, g.z_bottom)?;

        let p = &self.physics;
        ensure(p.g > 0.0, "physics.g", "must be positive")?;
        ensure(p.theta0 > 0.0, "physics.theta0", "must be positive")?;
        ensure(p.nu_mol >= 0.0, "physics.nu_mol", "must be nonnegative")?;
        ensure(p.alpha_mol >= 0.0, "physics.alpha_mol", "must be nonnegative")?;
        match (self.case, p.u_tau_target) {
            (Case::Gabls1, Some(_)) => {
                return Err(AblError::config(
                    "physics.u_tau_target",
                    "only used by the neutral case",
                ))
            }
            (Case::Neutral, Some(ut)) => {
                ensure(ut > 0.0, "physics.u_tau_target", "must be positive")?
            }
            _ => {}
        }

        let w = &self.wall;
        ensure(w.z0 > 0.0, "wall.z0", "must be positive")?;
        ensure(w.kappa > 0.0, "wall.kappa", "must be positive")?;
        ensure(w.beta_m >= 0.0, "wall.beta_m", "must be nonnegative")?;
        ensure(w.beta_h >= 0.0, "wall.beta_h", "must be nonnegative")?;
        ensure(w.theta_surface > 0.0, "wall.theta_surface", "must be positive")?;
        ensure(
            w.cooling_rate >= 0.0,
            "wall.cooling_rate",
            "surface warming (unstable stratification) is not supported",
        )?;
        if let Some(s) = w.sampling_height_over_z0 {
            let z = s * w.z0;
            ensure(
                z >= grid.z_center(0),
                "wall.sampling_height_over_z0",
                format!(
                    "sampling height {z} m is below the first cell center {} m",
                    grid.z_center(0)
                ),
            )?;
            ensure(
                z <= grid.z_center(grid.nz - 1),
                "wall.sampling_height_over_z0",
                "sampling height is above the last cell center",
            )?;
        }

        let s = &self.sgs;
        ensure(s.c_k > 0.0, "sgs.c_k", "must be positive")?;
        ensure(
            s.c_eps_base > 0.74,
            "sgs.c_eps_base",
            "must exceed 0.74 so the dissipation coefficient stays positive at vanishing length scale",
        )?;
        ensure(s.c_s_global >= 0.0, "sgs.c_s_global", "must be nonnegative")?;
        ensure(s.pr_t > 0.0, "sgs.pr_t", "must be positive")?;
        if let Some(c) = s.mfev_upper_cutoff {
            ensure(
                c > 0.0 && c.is_finite(),
                "sgs.mfev_upper_cutoff",
                "must be a positive fraction of the boundary-layer depth",
            )?;
        }
        if self.case == Case::Neutral && s.model.uses_tke() {
            return Err(AblError::config(
                "sgs.model",
                "the neutral case supports MFEV_SMG and GLOBAL_SMG",
            ));
        }

        let t = &self.time;
        ensure(t.duration_hours > 0.0, "time.duration_hours", "must be positive")?;
        ensure(
            t.cfl_target > 0.0 && t.cfl_target <= 1.0,
            "time.cfl_target",
            "must lie in (0, 1]",
        )?;
        ensure(
            t.diff_target > 0.0 && t.diff_target <= 1.0,
            "time.diff_target",
            "must lie in (0, 1]",
        )?;
        ensure(t.dt_min > 0.0, "time.dt_min", "must be positive")?;
        ensure(t.dt_max >= t.dt_min, "time.dt_max", "must be at least dt_min")?;
        if let Some(dt) = t.dt {
            ensure(dt > 0.0, "time.dt", "must be positive")?;
        }

        let o = &self.output;
        ensure(!o.dir.is_empty(), "output.dir", "must not be empty")?;
        ensure(
            o.profile_interval > 0.0,
            "output.profile_interval",
            "must be positive",
        )?;
        ensure(
            o.timeseries_interval > 0.0,
            "output.timeseries_interval",
            "must be positive",
        )?;
        ensure(
            o.checkpoint_interval > 0.0,
            "output.checkpoint_interval",
            "must be positive",
        )?;
        for (axis, coord) in &o.slice_planes {
            ensure(
                axis == "z",
                "output.slice_planes",
                format!("unsupported axis `{axis}`; only \"z\" slices are available"),
            )?;
            ensure(
                *coord >= g.z_bottom && *coord <= g.lz,
                "output.slice_planes",
                format!("coordinate {coord} m is outside the domain"),
            )?;
        }
        ensure(
            o.stats_start_hours >= 0.0,
            "output.stats_start_hours",
            "must be nonnegative",
        )?;
        ensure(
            o.stats_end_hours > o.stats_start_hours,
            "output.stats_end_hours",
            "must exceed stats_start_hours",
        )?;
        ensure(
            o.stats_end_hours <= t.duration_hours,
            "output.stats_end_hours",
            "must not exceed duration_hours",
        )?;
        ensure(
            o.zi_gradient_threshold > 0.0,
            "output.zi_gradient_threshold",
            "must be positive",
        )?;
        Ok(())
    }

    /// The resolved configuration as normalized TOML text.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of everything that shapes the trajectory and its outputs.
    /// The output directory is excluded so a relocated resume still
    /// matches its checkpoint.
    pub fn config_hash(&self) -> u64 {
        let mut c = self.clone();
        c.output.dir = String::new();
        fnv1a(c.canonical().as_bytes())
    }

    pub fn duration_seconds(&self) -> f64 {
        self.time.duration_hours * 3600.0
    }

    /// Statistics window bounds in seconds.
    pub fn stats_window(&self) -> (f64, f64) {
        (
            self.output.stats_start_hours * 3600.0,
            self.output.stats_end_hours * 3600.0,
        )
    }

    /// Step-size policy for the run loop.
    pub fn dt_control(&self) -> DtControl {
        match self.time.dt {
            Some(dt) => DtControl::Fixed(dt),
            None => DtControl::Auto {
                cap: self.time.dt_max,
            },
        }
    }

    /// Builds the configured simulation.
    pub fn simulation(&self) -> Result<Simulation, AblError> {
        self.validate()?;
        let g = &self.grid;
        let grid = Grid::new(g.nx, g.ny, g.nz, g.lx, g.ly, g.lz, g.z_bottom)?;
        let p = &self.physics;
        let phys = PhysicsParams {
            f: p.f,
            u_g: p.u_g,
            v_g: p.v_g,
            g: p.g,
            theta0: p.theta0,
            nu_mol: p.nu_mol,
            alpha_mol: p.alpha_mol,
        };
        let mut sim = Simulation::new(grid, phys);
        sim.sgs_params = self.sgs;
        sim.consts = SimilarityConstants {
            kappa: self.wall.kappa,
            beta_m: self.wall.beta_m,
            beta_h: self.wall.beta_h,
        };
        sim.z0 = self.wall.z0;
        sim.z_sample = match self.wall.sampling_height_over_z0 {
            Some(s) => s * self.wall.z0,
            None => sim.grid.z_center(0),
        };
        sim.bottom = BottomBc::MoninObukhov;
        sim.stepper = TimeStepper {
            cfl_target: self.time.cfl_target,
            diff_target: self.time.diff_target,
            dt_min: self.time.dt_min,
            dt_max: self.time.dt_max,
        };
        sim.top_theta_gradient = p.top_theta_gradient;
        match self.case {
            Case::Gabls1 => {
                sim.surface = SurfaceTemp::LinearCooling {
                    start: self.wall.theta_surface,
                    rate: self.wall.cooling_rate,
                };
                sim.solve_energy = true;
                sim.forcing_x = 0.0;
            }
            Case::Neutral => {
                sim.surface = SurfaceTemp::Constant(self.wall.theta_surface);
                sim.solve_energy = false;
                let ut = self.physics.u_tau_target.unwrap_or(0.45);
                sim.forcing_x = ut * ut / self.grid.lz;
            }
        }
        Ok(sim)
    }

    /// Builds the seeded initial state for the configured case.
    pub fn initial_state(&self, sim: &Simulation) -> Result<State, AblError> {
        match self.case {
            Case::Gabls1 => Ok(cases::init_gabls(sim, self.seed)),
            Case::Neutral => {
                let ut = self.physics.u_tau_target.unwrap_or(0.45);
                cases::init_neutral(sim, ut, self.seed)
            }
        }
    }
}

/// Recursively overlays `over` onto `base`; scalar and array values
/// replace, tables merge key by key.
fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (key, val) in over {
        let merged = match (base.remove(&key), val) {
            (Some(toml::Value::Table(mut b)), toml::Value::Table(o)) => {
                merge_tables(&mut b, o);
                toml::Value::Table(b)
            }
            (_, v) => v,
        };
        base.insert(key, merged);
    }
}

fn ensure(ok: bool, key: &str, reason: impl Into<String>) -> Result<(), AblError> {
    if ok {
        Ok(())
    } else {
        Err(AblError::config(key, reason))
    }
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
