//! Momentum and heat dynamics and the time stepper.
//!
//! Spatial discretization is second order on the staggered mesh: skew
//! advection for momentum (the mean of divergence and advective forms),
//! flux-form advection for scalars, and conservative diffusion whose
//! bottom z-face fluxes are the wall traction and surface heat flux. The
//! plane-averaged wind and temperature additionally diffuse against the
//! mean-field viscosity profile. Time integration is a three-stage
//! low-storage Runge-Kutta scheme with a pressure projection after every
//! stage; the wall model and the SGS state are refreshed at each stage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::AblError;
use crate::grid::{Grid, ScalarField};
use crate::ops::{self, FaceBc};
use crate::poisson::PoissonPlan;
use crate::sgs::{self, SgsParams, SgsState};
use crate::wall::{self, SimilarityConstants, WallScales};

/// Low-storage Runge-Kutta coefficients (Williamson's three-stage scheme).
const RK_A: [f64; 3] = [0.0, -5.0 / 9.0, -153.0 / 128.0];
const RK_B: [f64; 3] = [1.0 / 3.0, 15.0 / 16.0, 8.0 / 15.0];
const RK_C: [f64; 3] = [0.0, 1.0 / 3.0, 3.0 / 4.0];

/// Body forces and fluid constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PhysicsParams {
    /// Coriolis parameter (1/s).
    pub f: f64,
    /// Geostrophic wind components (m/s).
    pub u_g: f64,
    pub v_g: f64,
    /// Gravitational acceleration (m/s^2).
    pub g: f64,
    /// Boussinesq reference temperature (K).
    pub theta0: f64,
    /// Molecular kinematic viscosity (m^2/s).
    pub nu_mol: f64,
    /// Molecular thermal diffusivity (m^2/s).
    pub alpha_mol: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            f: 1.39e-4,
            u_g: 8.0,
            v_g: 0.0,
            g: 9.81,
            theta0: 263.5,
            nu_mol: 0.0,
            alpha_mol: 0.0,
        }
    }
}

/// Time-step controller settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TimeStepper {
    /// Advective CFL target.
    pub cfl_target: f64,
    /// Diffusion-number target for the explicit viscous terms.
    pub diff_target: f64,
    /// Abort threshold: a stable step below this is treated as a blow-up.
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Default for TimeStepper {
    fn default() -> Self {
        TimeStepper {
            cfl_target: 0.5,
            diff_target: 0.25,
            dt_min: 1e-6,
            dt_max: 5.0,
        }
    }
}

/// Prescribed surface temperature history for the wall model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum SurfaceTemp {
    Constant(f64),
    /// Linear cooling from `start` at `rate` kelvin per hour.
    LinearCooling { start: f64, rate: f64 },
}

impl SurfaceTemp {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            SurfaceTemp::Constant(v) => v,
            SurfaceTemp::LinearCooling { start, rate } => start - rate * t / 3600.0,
        }
    }
}

/// Lower boundary treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BottomBc {
    /// Similarity-law traction and surface heat flux from the wall model.
    MoninObukhov,
    /// Zero stress and zero heat flux; used by verification problems.
    FreeSlip,
}

/// Prognostic fields. The SGS energy `e` is allocated even for models that
/// do not transport it so checkpoints have one layout.
#[derive(Debug, Clone)]
pub struct State {
    pub t: f64,
    pub step: u64,
    pub u: ScalarField,
    pub v: ScalarField,
    pub w: ScalarField,
    pub theta: ScalarField,
    pub e: ScalarField,
}

impl State {
    pub fn new(grid: &Grid) -> State {
        State {
            t: 0.0,
            step: 0,
            u: ScalarField::centers(grid),
            v: ScalarField::centers(grid),
            w: ScalarField::wfaces(grid),
            theta: ScalarField::centers(grid),
            e: ScalarField::centers(grid),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.u.all_finite()
            && self.v.all_finite()
            && self.w.all_finite()
            && self.theta.all_finite()
            && self.e.all_finite()
    }
}

/// How `Simulation::step` picks its time step.
#[derive(Debug, Clone, Copy)]
pub enum DtControl {
    /// Use the stability limits, capped by `cap` (for hitting end times).
    Auto { cap: f64 },
    /// Use exactly this step; error if it violates the stability limits.
    Fixed(f64),
}

/// Per-step report.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub dt: f64,
    /// Advective CFL number actually realized by this dt.
    pub cfl: f64,
    /// Wall scales from the first stage (None for a free-slip floor).
    pub wall: Option<WallScales>,
    pub nu_t_star: f64,
    /// Cells where the SGS energy was clipped back to zero.
    pub e_clipped: u64,
    /// Max |div u| after the final projection.
    pub max_div: f64,
}

fn interior_face_flux(nu_te: &[f64], mean: &[f64], dzi: f64, scale: f64) -> Vec<f64> {
    let nz = mean.len();
    let mut flux = vec![0.0; nz + 1];
    for k in 1..nz {
        flux[k] = scale * nu_te[k] * (mean[k] - mean[k - 1]) * dzi;
    }
    flux
}

/// Per-level tendency of the plane-averaged field under the mean-field
/// viscosity: d/dz(nu_T d<q>/dz) with zero flux through both boundary
/// faces (wall traction and the lid carry those).
fn mean_field_tendency(nu_te: &[f64], mean: &[f64], dzi: f64, scale: f64) -> Vec<f64> {
    let flux = interior_face_flux(nu_te, mean, dzi, scale);
    (0..mean.len())
        .map(|k| (flux[k + 1] - flux[k]) * dzi)
        .collect()
}

/// Momentum tendencies on the staggered mesh. Advection is the skew form,
/// diffusion acts with nu_mol + gamma nu_t on the total strain, and the
/// plane-averaged wind feels the mean-field viscosity separately. The
/// bottom z-face momentum flux is the wall traction when given (the
/// traction is the complete surface stress, so no mean-field flux is added
/// there); otherwise the floor is stress-free, as is the lid.
#[allow(clippy::too_many_arguments)]
pub fn momentum_rhs(
    grid: &Grid,
    u: &ScalarField,
    v: &ScalarField,
    w: &ScalarField,
    theta: &ScalarField,
    sgs: &SgsState,
    phys: &PhysicsParams,
    u_mean: &[f64],
    v_mean: &[f64],
    traction: Option<(&[f64], &[f64])>,
    forcing_x: f64,
) -> (ScalarField, ScalarField, ScalarField) {
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    let n = grid.plane_len();
    let (dxi, dyi, dzi) = (1.0 / grid.dx, 1.0 / grid.dy, 1.0 / grid.dz);
    let nu_mol = phys.nu_mol;

    let mf_u = mean_field_tendency(&sgs.nu_te, u_mean, dzi, 1.0);
    let mf_v = mean_field_tendency(&sgs.nu_te, v_mean, dzi, 1.0);

    let mut rhs_u = ScalarField::centers(grid);
    let mut rhs_v = ScalarField::centers(grid);
    let mut rhs_w = ScalarField::wfaces(grid);

    rhs_u
        .data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(k, out)| {
            let ul = u.level(k);
            let vl = v.level(k);
            let wlo = w.level(k);
            let whi = w.level(k + 1);
            let nut = sgs.nu_t.level(k);
            let gam = sgs.gamma[k];
            let mf = mf_u[k];
            let dudz = |c: usize| -> f64 {
                if k == 0 {
                    (-3.0 * ul[c] + 4.0 * u.level(1)[c] - u.level(2)[c]) * 0.5 * dzi
                } else if k == nz - 1 {
                    (3.0 * ul[c] - 4.0 * u.level(nz - 2)[c] + u.level(nz - 3)[c]) * 0.5 * dzi
                } else {
                    (u.level(k + 1)[c] - u.level(k - 1)[c]) * 0.5 * dzi
                }
            };
            for j in 0..ny {
                let jp = ops::wrap_up(j, ny);
                let jm = ops::wrap_dn(j, ny);
                for i in 0..nx {
                    let ip = ops::wrap_up(i, nx);
                    let im = ops::wrap_dn(i, nx);
                    let c = j * nx + i;
                    let ce = j * nx + ip;
                    let cw = j * nx + im;
                    let cn = jp * nx + i;
                    let cnw = jp * nx + im;
                    let cs = jm * nx + i;
                    let csw = jm * nx + im;

                    // Skew advection: divergence form first.
                    let uc_r = 0.5 * (ul[c] + ul[ce]);
                    let uc_l = 0.5 * (ul[cw] + ul[c]);
                    let vx_n = 0.5 * (vl[cnw] + vl[cn]);
                    let vx_s = 0.5 * (vl[cw] + vl[c]);
                    let uy_n = 0.5 * (ul[c] + ul[cn]);
                    let uy_s = 0.5 * (ul[cs] + ul[c]);
                    let f_lo = if k == 0 {
                        0.0
                    } else {
                        0.5 * (wlo[cw] + wlo[c]) * 0.5 * (u.level(k - 1)[c] + ul[c])
                    };
                    let f_hi = if k + 1 == nz {
                        0.0
                    } else {
                        0.5 * (whi[cw] + whi[c]) * 0.5 * (ul[c] + u.level(k + 1)[c])
                    };
                    let div_form = (uc_r * uc_r - uc_l * uc_l) * dxi
                        + (vx_n * uy_n - vx_s * uy_s) * dyi
                        + (f_hi - f_lo) * dzi;

                    // And the advective form.
                    let v4 = 0.25 * (vl[cw] + vl[c] + vl[cnw] + vl[cn]);
                    let w4 = 0.25 * (wlo[cw] + wlo[c] + whi[cw] + whi[c]);
                    let adv_form = ul[c] * (ul[ce] - ul[cw]) * 0.5 * dxi
                        + v4 * (ul[cn] - ul[cs]) * 0.5 * dyi
                        + w4 * dudz(c);

                    let adv = 0.5 * (div_form + adv_form);

                    // Diffusion, flux form. x: normal stresses at the two
                    // adjacent centers.
                    let nu_r = nu_mol + gam * nut[c];
                    let nu_l = nu_mol + gam * nut[cw];
                    let d1 = (2.0 * nu_r * (ul[ce] - ul[c]) * dxi
                        - 2.0 * nu_l * (ul[c] - ul[cw]) * dxi)
                        * dxi;

                    // y: shear stress on the two vertical edges.
                    let s_n = 0.5 * ((ul[cn] - ul[c]) * dyi + (vl[cn] - vl[cnw]) * dxi);
                    let s_s = 0.5 * ((ul[c] - ul[cs]) * dyi + (vl[c] - vl[cw]) * dxi);
                    let nu_n = nu_mol + gam * 0.25 * (nut[cw] + nut[c] + nut[cnw] + nut[cn]);
                    let nu_s = nu_mol + gam * 0.25 * (nut[csw] + nut[cs] + nut[cw] + nut[c]);
                    let d2 = (2.0 * nu_n * s_n - 2.0 * nu_s * s_s) * dyi;

                    // z: shear stress on the two horizontal faces; the
                    // bottom face is the traction, the lid is stress-free.
                    let f3_lo = if k == 0 {
                        match traction {
                            Some((tx, _)) => tx[c],
                            None => 0.0,
                        }
                    } else {
                        let udn = u.level(k - 1);
                        let ndn = sgs.nu_t.level(k - 1);
                        let s = 0.5 * ((ul[c] - udn[c]) * dzi + (wlo[c] - wlo[cw]) * dxi);
                        let nu_e = nu_mol
                            + 0.25
                                * (sgs.gamma[k - 1] * (ndn[cw] + ndn[c])
                                    + gam * (nut[cw] + nut[c]));
                        2.0 * nu_e * s
                    };
                    let f3_hi = if k + 1 == nz {
                        0.0
                    } else {
                        let uup = u.level(k + 1);
                        let nup = sgs.nu_t.level(k + 1);
                        let s = 0.5 * ((uup[c] - ul[c]) * dzi + (whi[c] - whi[cw]) * dxi);
                        let nu_e = nu_mol
                            + 0.25
                                * (gam * (nut[cw] + nut[c])
                                    + sgs.gamma[k + 1] * (nup[cw] + nup[c]));
                        2.0 * nu_e * s
                    };
                    let d3 = (f3_hi - f3_lo) * dzi;

                    let coriolis = phys.f * (v4 - phys.v_g);
                    out[c] = -adv + d1 + d2 + d3 + coriolis + forcing_x + mf;
                }
            }
        });

    rhs_v
        .data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(k, out)| {
            let ul = u.level(k);
            let vl = v.level(k);
            let wlo = w.level(k);
            let whi = w.level(k + 1);
            let nut = sgs.nu_t.level(k);
            let gam = sgs.gamma[k];
            let mf = mf_v[k];
            let dvdz = |c: usize| -> f64 {
                if k == 0 {
                    (-3.0 * vl[c] + 4.0 * v.level(1)[c] - v.level(2)[c]) * 0.5 * dzi
                } else if k == nz - 1 {
                    (3.0 * vl[c] - 4.0 * v.level(nz - 2)[c] + v.level(nz - 3)[c]) * 0.5 * dzi
                } else {
                    (v.level(k + 1)[c] - v.level(k - 1)[c]) * 0.5 * dzi
                }
            };
            for j in 0..ny {
                let jp = ops::wrap_up(j, ny);
                let jm = ops::wrap_dn(j, ny);
                for i in 0..nx {
                    let ip = ops::wrap_up(i, nx);
                    let im = ops::wrap_dn(i, nx);
                    let c = j * nx + i;
                    let ce = j * nx + ip;
                    let cw = j * nx + im;
                    let cn = jp * nx + i;
                    let cs = jm * nx + i;
                    let cse = jm * nx + ip;
                    let csw = jm * nx + im;

                    let vc_n = 0.5 * (vl[c] + vl[cn]);
                    let vc_s = 0.5 * (vl[cs] + vl[c]);
                    let uy_e = 0.5 * (ul[cse] + ul[ce]);
                    let uy_w = 0.5 * (ul[cs] + ul[c]);
                    let vx_e = 0.5 * (vl[c] + vl[ce]);
                    let vx_w = 0.5 * (vl[cw] + vl[c]);
                    let f_lo = if k == 0 {
                        0.0
                    } else {
                        0.5 * (wlo[cs] + wlo[c]) * 0.5 * (v.level(k - 1)[c] + vl[c])
                    };
                    let f_hi = if k + 1 == nz {
                        0.0
                    } else {
                        0.5 * (whi[cs] + whi[c]) * 0.5 * (vl[c] + v.level(k + 1)[c])
                    };
                    let div_form = (uy_e * vx_e - uy_w * vx_w) * dxi
                        + (vc_n * vc_n - vc_s * vc_s) * dyi
                        + (f_hi - f_lo) * dzi;

                    let u4 = 0.25 * (ul[cs] + ul[c] + ul[cse] + ul[ce]);
                    let w4 = 0.25 * (wlo[cs] + wlo[c] + whi[cs] + whi[c]);
                    let adv_form = u4 * (vl[ce] - vl[cw]) * 0.5 * dxi
                        + vl[c] * (vl[cn] - vl[cs]) * 0.5 * dyi
                        + w4 * dvdz(c);

                    let adv = 0.5 * (div_form + adv_form);

                    let s_e = 0.5 * ((vl[ce] - vl[c]) * dxi + (ul[ce] - ul[cse]) * dyi);
                    let s_w = 0.5 * ((vl[c] - vl[cw]) * dxi + (ul[c] - ul[cs]) * dyi);
                    let nu_e = nu_mol + gam * 0.25 * (nut[cs] + nut[c] + nut[cse] + nut[ce]);
                    let nu_w = nu_mol + gam * 0.25 * (nut[csw] + nut[cw] + nut[cs] + nut[c]);
                    let d1 = (2.0 * nu_e * s_e - 2.0 * nu_w * s_w) * dxi;

                    let nu_n = nu_mol + gam * nut[c];
                    let nu_s = nu_mol + gam * nut[cs];
                    let d2 = (2.0 * nu_n * (vl[cn] - vl[c]) * dyi
                        - 2.0 * nu_s * (vl[c] - vl[cs]) * dyi)
                        * dyi;

                    let f3_lo = if k == 0 {
                        match traction {
                            Some((_, ty)) => ty[c],
                            None => 0.0,
                        }
                    } else {
                        let vdn = v.level(k - 1);
                        let ndn = sgs.nu_t.level(k - 1);
                        let s = 0.5 * ((vl[c] - vdn[c]) * dzi + (wlo[c] - wlo[cs]) * dyi);
                        let nu_f = nu_mol
                            + 0.25
                                * (sgs.gamma[k - 1] * (ndn[cs] + ndn[c])
                                    + gam * (nut[cs] + nut[c]));
                        2.0 * nu_f * s
                    };
                    let f3_hi = if k + 1 == nz {
                        0.0
                    } else {
                        let vup = v.level(k + 1);
                        let nup = sgs.nu_t.level(k + 1);
                        let s = 0.5 * ((vup[c] - vl[c]) * dzi + (whi[c] - whi[cs]) * dyi);
                        let nu_f = nu_mol
                            + 0.25
                                * (gam * (nut[cs] + nut[c])
                                    + sgs.gamma[k + 1] * (nup[cs] + nup[c]));
                        2.0 * nu_f * s
                    };
                    let d3 = (f3_hi - f3_lo) * dzi;

                    let coriolis = -phys.f * (u4 - phys.u_g);
                    out[c] = -adv + d1 + d2 + d3 + coriolis + mf;
                }
            }
        });

    rhs_w
        .data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(k, out)| {
            // w is pinned to zero on the boundary faces.
            if k == 0 || k == nz {
                return;
            }
            let wl = w.level(k);
            let w_dn = w.level(k - 1);
            let w_up = w.level(k + 1);
            let u_dn = u.level(k - 1);
            let u_up = u.level(k);
            let v_dn = v.level(k - 1);
            let v_up = v.level(k);
            let th_dn = theta.level(k - 1);
            let th_up = theta.level(k);
            let nut_dn = sgs.nu_t.level(k - 1);
            let nut_up = sgs.nu_t.level(k);
            let gam_dn = sgs.gamma[k - 1];
            let gam_up = sgs.gamma[k];
            for j in 0..ny {
                let jp = ops::wrap_up(j, ny);
                let jm = ops::wrap_dn(j, ny);
                for i in 0..nx {
                    let ip = ops::wrap_up(i, nx);
                    let im = ops::wrap_dn(i, nx);
                    let c = j * nx + i;
                    let ce = j * nx + ip;
                    let cw = j * nx + im;
                    let cn = jp * nx + i;
                    let cs = jm * nx + i;

                    let uz_e = 0.5 * (u_dn[ce] + u_up[ce]);
                    let uz_w = 0.5 * (u_dn[c] + u_up[c]);
                    let wx_e = 0.5 * (wl[c] + wl[ce]);
                    let wx_w = 0.5 * (wl[cw] + wl[c]);
                    let vz_n = 0.5 * (v_dn[cn] + v_up[cn]);
                    let vz_s = 0.5 * (v_dn[c] + v_up[c]);
                    let wy_n = 0.5 * (wl[c] + wl[cn]);
                    let wy_s = 0.5 * (wl[cs] + wl[c]);
                    let wc_hi = 0.5 * (wl[c] + w_up[c]);
                    let wc_lo = 0.5 * (w_dn[c] + wl[c]);
                    let div_form = (uz_e * wx_e - uz_w * wx_w) * dxi
                        + (vz_n * wy_n - vz_s * wy_s) * dyi
                        + (wc_hi * wc_hi - wc_lo * wc_lo) * dzi;

                    let u4 = 0.25 * (u_dn[c] + u_up[c] + u_dn[ce] + u_up[ce]);
                    let v4 = 0.25 * (v_dn[c] + v_up[c] + v_dn[cn] + v_up[cn]);
                    let adv_form = u4 * (wl[ce] - wl[cw]) * 0.5 * dxi
                        + v4 * (wl[cn] - wl[cs]) * 0.5 * dyi
                        + wl[c] * (w_up[c] - w_dn[c]) * 0.5 * dzi;

                    let adv = 0.5 * (div_form + adv_form);

                    let s_e = 0.5 * ((u_up[ce] - u_dn[ce]) * dzi + (wl[ce] - wl[c]) * dxi);
                    let s_w = 0.5 * ((u_up[c] - u_dn[c]) * dzi + (wl[c] - wl[cw]) * dxi);
                    let nu_e = nu_mol
                        + 0.25 * (gam_dn * (nut_dn[c] + nut_dn[ce]) + gam_up * (nut_up[c] + nut_up[ce]));
                    let nu_w = nu_mol
                        + 0.25 * (gam_dn * (nut_dn[cw] + nut_dn[c]) + gam_up * (nut_up[cw] + nut_up[c]));
                    let d1 = (2.0 * nu_e * s_e - 2.0 * nu_w * s_w) * dxi;

                    let s_n = 0.5 * ((v_up[cn] - v_dn[cn]) * dzi + (wl[cn] - wl[c]) * dyi);
                    let s_s = 0.5 * ((v_up[c] - v_dn[c]) * dzi + (wl[c] - wl[cs]) * dyi);
                    let nu_n = nu_mol
                        + 0.25 * (gam_dn * (nut_dn[c] + nut_dn[cn]) + gam_up * (nut_up[c] + nut_up[cn]));
                    let nu_s = nu_mol
                        + 0.25 * (gam_dn * (nut_dn[cs] + nut_dn[c]) + gam_up * (nut_up[cs] + nut_up[c]));
                    let d2 = (2.0 * nu_n * s_n - 2.0 * nu_s * s_s) * dyi;

                    let f_hi = 2.0 * (nu_mol + gam_up * nut_up[c]) * (w_up[c] - wl[c]) * dzi;
                    let f_lo = 2.0 * (nu_mol + gam_dn * nut_dn[c]) * (wl[c] - w_dn[c]) * dzi;
                    let d3 = (f_hi - f_lo) * dzi;

                    let buoy = phys.g * (0.5 * (th_dn[c] + th_up[c]) - phys.theta0) / phys.theta0;
                    out[c] = -adv + d1 + d2 + d3 + buoy;
                }
            }
        });

    (rhs_u, rhs_v, rhs_w)
}

/// Temperature tendency: flux-form advection, diffusion with alpha_mol +
/// gamma nu_t/Pr_t, the mean-field diffusion of the plane-averaged profile,
/// a prescribed diffusive flux through the floor (the wall model's surface
/// heat flux) and a prescribed gradient at the lid.
#[allow(clippy::too_many_arguments)]
pub fn energy_rhs(
    grid: &Grid,
    u: &ScalarField,
    v: &ScalarField,
    w: &ScalarField,
    theta: &ScalarField,
    sgs: &SgsState,
    theta_mean: &[f64],
    alpha_mol: f64,
    pr_t: f64,
    bottom_flux: f64,
    top_gradient: f64,
) -> ScalarField {
    let n = grid.plane_len();
    let dzi = 1.0 / grid.dz;

    let mut kdiff = sgs.nu_t.clone();
    kdiff
        .data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(k, lev)| {
            let gp = sgs.gamma[k] / pr_t;
            lev.iter_mut().for_each(|x| *x = alpha_mol + gp * *x);
        });

    let adv = ops::scalar_advection(grid, u, v, w, theta);
    let dif = ops::scalar_diffusion(
        grid,
        theta,
        &kdiff,
        FaceBc::Flux(bottom_flux),
        FaceBc::Gradient(top_gradient),
    );
    let mf = mean_field_tendency(&sgs.nu_te, theta_mean, dzi, 1.0 / pr_t);

    let mut out = ScalarField::centers(grid);
    out.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(k, lev)| {
            let al = adv.level(k);
            let dl = dif.level(k);
            let m = mf[k];
            for c in 0..lev.len() {
                lev[c] = -al[c] + dl[c] + m;
            }
        });
    out
}

/// A case wired up and ready to advance: grid, physics, SGS model, wall
/// model, boundary data, and the pressure solver.
pub struct Simulation {
    pub grid: Grid,
    pub phys: PhysicsParams,
    pub sgs_params: SgsParams,
    pub consts: SimilarityConstants,
    /// Aerodynamic roughness length (m).
    pub z0: f64,
    /// Height where the wall model samples the resolved flow (m).
    pub z_sample: f64,
    pub bottom: BottomBc,
    pub surface: SurfaceTemp,
    /// Constant streamwise body force (pressure-gradient forcing for the
    /// neutral channel); zero for geostrophically forced cases.
    pub forcing_x: f64,
    /// Whether the temperature equation is advanced.
    pub solve_energy: bool,
    pub stepper: TimeStepper,
    /// Imposed d(theta)/dz at the lid (K/m).
    pub top_theta_gradient: f64,
    /// Optional ceiling for the mean-field treatment: above this height
    /// gamma reverts to 1 and nu_T to 0.
    pub cutoff_height: Option<f64>,
    poisson: PoissonPlan,
}

/// Everything one RK stage needs that depends on the current fields.
struct StagePrep {
    u_mean: Vec<f64>,
    v_mean: Vec<f64>,
    theta_mean: Vec<f64>,
    wall: Option<WallScales>,
    traction: Option<(Vec<f64>, Vec<f64>)>,
    bottom_heat_flux: f64,
    sgs: SgsState,
}

impl Simulation {
    pub fn new(grid: Grid, phys: PhysicsParams) -> Simulation {
        Simulation {
            poisson: PoissonPlan::new(&grid),
            z_sample: grid.z_center(0),
            grid,
            phys,
            sgs_params: SgsParams::default(),
            consts: SimilarityConstants::default(),
            z0: 0.1,
            bottom: BottomBc::MoninObukhov,
            surface: SurfaceTemp::Constant(phys.theta0),
            forcing_x: 0.0,
            solve_energy: true,
            stepper: TimeStepper::default(),
            top_theta_gradient: 0.0,
            cutoff_height: None,
        }
    }

    /// Project the velocity onto the divergence-free space. Returns the
    /// infinity norm of the divergence after the correction. A field whose
    /// divergence is already at the roundoff floor is left untouched, so
    /// the projection is idempotent.
    pub fn project(
        &self,
        u: &mut ScalarField,
        v: &mut ScalarField,
        w: &mut ScalarField,
    ) -> Result<f64, AblError> {
        let div = ops::divergence(&self.grid, u, v, w);
        let d0 = div.max_abs();
        let rate = ops::max_advective_rate(&self.grid, u, v, w);
        if d0 <= 1e-13 * rate {
            return Ok(d0);
        }
        let phi = self.poisson.solve(&div)?;
        ops::subtract_gradient(&self.grid, &phi, u, v, w);
        let res = ops::divergence(&self.grid, u, v, w);
        Ok(res.max_abs())
    }

    /// Wall scales and SGS state diagnosed from the instantaneous fields,
    /// exactly as a step starting from this state would see them.
    pub fn diagnose_closure(
        &self,
        state: &State,
    ) -> Result<(Option<WallScales>, SgsState), AblError> {
        let prep = self.prepare_stage(state, state.t)?;
        Ok((prep.wall, prep.sgs))
    }

    fn prepare_stage(&self, state: &State, t_stage: f64) -> Result<StagePrep, AblError> {
        let grid = &self.grid;
        let u_mean = ops::plane_average(&state.u);
        let v_mean = ops::plane_average(&state.v);
        let theta_mean = ops::plane_average(&state.theta);
        let e_field = self.sgs_params.model.uses_tke().then_some(&state.e);

        let (wall_scales, traction, heat, phi_m) = match self.bottom {
            BottomBc::FreeSlip => (None, None, 0.0, 1.0),
            BottomBc::MoninObukhov => {
                let (k_lo, w_hi) = self.sample_levels();
                let n = grid.plane_len();
                let (nx, ny) = (grid.nx, grid.ny);
                let lerp = |f: &ScalarField, c: usize| -> f64 {
                    (1.0 - w_hi) * f.level(k_lo)[c] + w_hi * f.level(k_lo + 1)[c]
                };
                let mut us = vec![0.0; n];
                let mut vs = vec![0.0; n];
                for c in 0..n {
                    us[c] = lerp(&state.u, c);
                    vs[c] = lerp(&state.v, c);
                }
                // Mean of the local horizontal speed at cell centers.
                let mut speed_sum = 0.0;
                for j in 0..ny {
                    for i in 0..nx {
                        let c = j * nx + i;
                        let ce = j * nx + ops::wrap_up(i, nx);
                        let cn = ops::wrap_up(j, ny) * nx + i;
                        let uc = 0.5 * (us[c] + us[ce]);
                        let vc = 0.5 * (vs[c] + vs[cn]);
                        speed_sum += uc.hypot(vc);
                    }
                }
                let u_bulk = speed_sum / n as f64;
                let th_s = (1.0 - w_hi) * theta_mean[k_lo] + w_hi * theta_mean[k_lo + 1];
                let dth = if self.solve_energy {
                    th_s - self.surface.value(t_stage)
                } else {
                    0.0
                };
                let ws = wall::solve_friction_scales(
                    u_bulk,
                    dth,
                    self.z_sample,
                    self.z0,
                    self.phys.g,
                    self.phys.theta0,
                    &self.consts,
                )?;
                let (tx, ty) = wall::localize_traction(&us, &vs, ws.u_tau, u_bulk);
                let phi_m = self.consts.phi_m(self.z_sample / ws.l_mo);
                let heat = -ws.qstar;
                (Some(ws), Some((tx, ty)), heat, phi_m)
            }
        };

        let sgs_state = sgs::compute_sgs_state(
            grid,
            &state.u,
            &state.v,
            &state.w,
            e_field,
            &u_mean,
            &v_mean,
            &theta_mean,
            wall_scales.as_ref(),
            self.z_sample,
            self.consts.kappa,
            phi_m,
            &self.sgs_params,
            self.phys.g,
            self.phys.theta0,
            self.cutoff_height,
        );

        Ok(StagePrep {
            u_mean,
            v_mean,
            theta_mean,
            wall: wall_scales,
            traction,
            bottom_heat_flux: heat,
            sgs: sgs_state,
        })
    }

    fn sample_levels(&self) -> (usize, f64) {
        let t = ((self.z_sample - self.grid.z_center(0)) / self.grid.dz)
            .clamp(0.0, (self.grid.nz - 1) as f64);
        let k_lo = (t.floor() as usize).min(self.grid.nz - 2);
        (k_lo, (t - k_lo as f64).clamp(0.0, 1.0))
    }

    /// Upper bound on the effective diffusivity entering any explicit term.
    fn diffusivity_bound(&self, sgs_state: &SgsState) -> f64 {
        let n = self.grid.plane_len();
        let mut fluct: f64 = 0.0;
        for (k, lev) in sgs_state.nu_t.data.chunks(n).enumerate() {
            let m = lev.iter().fold(0.0_f64, |a, &x| a.max(x));
            fluct = fluct.max(sgs_state.gamma[k] * m);
        }
        let scalar_boost = (1.0 / self.sgs_params.pr_t).max(1.0);
        let tke_boost = if self.sgs_params.model.uses_tke() { 2.0 } else { 1.0 };
        let mean = sgs_state.nu_te.iter().fold(0.0_f64, |a, &x| a.max(x));
        self.phys.nu_mol.max(self.phys.alpha_mol)
            + fluct * scalar_boost.max(tke_boost)
            + mean * scalar_boost
    }

    /// Advance one step. Each stage rebuilds the wall scales and SGS state
    /// from the current fields, assembles the tendencies, advances the
    /// low-storage registers, and re-projects the velocity.
    pub fn step(&self, state: &mut State, ctl: DtControl) -> Result<StepInfo, AblError> {
        let grid = &self.grid;
        let t0 = state.t;
        let first = self.prepare_stage(state, t0)?;

        let adv_rate = ops::max_advective_rate(grid, &state.u, &state.v, &state.w);
        let diff_rate = self.diffusivity_bound(&first.sgs)
            * 2.0
            * (1.0 / (grid.dx * grid.dx) + 1.0 / (grid.dy * grid.dy) + 1.0 / (grid.dz * grid.dz));
        let dt_adv = if adv_rate > 0.0 {
            self.stepper.cfl_target / adv_rate
        } else {
            f64::INFINITY
        };
        let dt_diff = if diff_rate > 0.0 {
            self.stepper.diff_target / diff_rate
        } else {
            f64::INFINITY
        };
        let stable = dt_adv.min(dt_diff);

        let dt = match ctl {
            DtControl::Auto { cap } => {
                let dt = cap.min(stable).min(self.stepper.dt_max);
                if dt < self.stepper.dt_min {
                    return Err(AblError::CflViolation {
                        required: dt,
                        dt_min: self.stepper.dt_min,
                        t: t0,
                    });
                }
                dt
            }
            DtControl::Fixed(dt) => {
                if dt > stable * (1.0 + 1e-9) {
                    return Err(AblError::CflViolation {
                        required: stable,
                        dt_min: dt,
                        t: t0,
                    });
                }
                dt
            }
        };

        let uses_tke = self.sgs_params.model.uses_tke();
        let mut du = ScalarField::centers(grid);
        let mut dv = ScalarField::centers(grid);
        let mut dw = ScalarField::wfaces(grid);
        let mut dth = ScalarField::centers(grid);
        let mut de = ScalarField::centers(grid);

        let wall_out = first.wall.clone();
        let nu_t_star = first.sgs.nu_t_star;
        let mut prep_slot = Some(first);
        let mut e_clipped = 0u64;
        let mut max_div = 0.0;

        for s in 0..3 {
            let prep = match prep_slot.take() {
                Some(p) => p,
                None => self.prepare_stage(state, t0 + RK_C[s] * dt)?,
            };
            let traction = prep
                .traction
                .as_ref()
                .map(|(tx, ty)| (tx.as_slice(), ty.as_slice()));
            let (ru, rv, rw) = momentum_rhs(
                grid,
                &state.u,
                &state.v,
                &state.w,
                &state.theta,
                &prep.sgs,
                &self.phys,
                &prep.u_mean,
                &prep.v_mean,
                traction,
                self.forcing_x,
            );
            rk_advance(&mut state.u, &mut du, &ru, RK_A[s], RK_B[s], dt);
            rk_advance(&mut state.v, &mut dv, &rv, RK_A[s], RK_B[s], dt);
            rk_advance(&mut state.w, &mut dw, &rw, RK_A[s], RK_B[s], dt);

            if self.solve_energy {
                let rth = energy_rhs(
                    grid,
                    &state.u,
                    &state.v,
                    &state.w,
                    &state.theta,
                    &prep.sgs,
                    &prep.theta_mean,
                    self.phys.alpha_mol,
                    self.sgs_params.pr_t,
                    prep.bottom_heat_flux,
                    self.top_theta_gradient,
                );
                rk_advance(&mut state.theta, &mut dth, &rth, RK_A[s], RK_B[s], dt);
            }
            if uses_tke {
                let re = sgs::tke_rhs(
                    grid,
                    &state.e,
                    &state.u,
                    &state.v,
                    &state.w,
                    &prep.sgs.gamma,
                    &prep.sgs.q2_fluct,
                    &prep.sgs.nu_t,
                    &state.theta,
                    &prep.theta_mean,
                    &prep.sgs.length,
                    &self.sgs_params,
                    self.phys.nu_mol,
                    self.phys.g,
                    self.phys.theta0,
                );
                rk_advance(&mut state.e, &mut de, &re, RK_A[s], RK_B[s], dt);
                for x in state.e.data.iter_mut() {
                    if *x < 0.0 {
                        *x = 0.0;
                        e_clipped += 1;
                    }
                }
            }

            max_div = self.project(&mut state.u, &mut state.v, &mut state.w)?;
        }

        state.t = t0 + dt;
        state.step += 1;

        Ok(StepInfo {
            dt,
            cfl: dt * adv_rate,
            wall: wall_out,
            nu_t_star,
            e_clipped,
            max_div,
        })
    }
}

/// One low-storage register update: dq <- a dq + dt rhs, q <- q + b dq.
fn rk_advance(q: &mut ScalarField, dq: &mut ScalarField, rhs: &ScalarField, a: f64, b: f64, dt: f64) {
    q.data
        .par_iter_mut()
        .zip(dq.data.par_iter_mut())
        .zip(rhs.data.par_iter())
        .for_each(|((qv, dv), &rv)| {
            *dv = a * *dv + dt * rv;
            *qv += b * *dv;
        });
}
