//! Subgrid-scale closures.
//!
//! The resolved strain is split into its horizontal mean and the
//! fluctuation about it. The fluctuating part is modeled with an isotropic
//! eddy viscosity nu_t (Smagorinsky, or prognostic SGS energy) weighted by
//! the isotropy factor gamma; the mean part is handled by a separate
//! mean-field eddy viscosity profile nu_T(z) whose wall value is anchored
//! to the friction velocity so that the surface stress carried by the SGS
//! model matches the wall model exactly. A plain global Smagorinsky model
//! (no splitting) is kept as a baseline.

use crate::error::AblError;
use crate::grid::{Grid, MeanStrain, ScalarField, StrainField};
use crate::ops;
use crate::wall::WallScales;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Closure selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SgsModel {
    /// Mean-field viscosity + Smagorinsky fluctuations.
    #[serde(rename = "MFEV_SMG")]
    MfevSmg,
    /// Mean-field viscosity + SGS energy transport, length scale Delta.
    #[serde(rename = "MFEV_TKE_SMG")]
    MfevTkeSmg,
    /// Mean-field viscosity + SGS energy transport with the
    /// stratification-reduced length scale.
    #[serde(rename = "MFEV_TKE_DRD")]
    MfevTkeDrd,
    /// Conventional Smagorinsky on the total strain, no splitting.
    #[serde(rename = "GLOBAL_SMG")]
    GlobalSmg,
}

impl SgsModel {
    pub fn uses_tke(self) -> bool {
        matches!(self, SgsModel::MfevTkeSmg | SgsModel::MfevTkeDrd)
    }

    pub fn uses_mean_field(self) -> bool {
        !matches!(self, SgsModel::GlobalSmg)
    }
}

impl fmt::Display for SgsModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SgsModel::MfevSmg => "MFEV_SMG",
            SgsModel::MfevTkeSmg => "MFEV_TKE_SMG",
            SgsModel::MfevTkeDrd => "MFEV_TKE_DRD",
            SgsModel::GlobalSmg => "GLOBAL_SMG",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SgsModel {
    type Err = AblError;

    fn from_str(s: &str) -> Result<Self, AblError> {
        match s {
            "MFEV_SMG" => Ok(SgsModel::MfevSmg),
            "MFEV_TKE_SMG" => Ok(SgsModel::MfevTkeSmg),
            "MFEV_TKE_DRD" => Ok(SgsModel::MfevTkeDrd),
            "GLOBAL_SMG" => Ok(SgsModel::GlobalSmg),
            other => Err(AblError::config(
                "sgs.model",
                format!("unknown model `{other}`"),
            )),
        }
    }
}

/// SGS model constants. Doubles as the `[sgs]` section of the run
/// configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgsParams {
    pub model: SgsModel,
    /// Eddy-viscosity coefficient of the SGS energy closure.
    pub c_k: f64,
    /// Dissipation coefficient at L = Delta; also fixes the derived
    /// Smagorinsky constant.
    pub c_eps_base: f64,
    /// Smagorinsky constant of the global baseline model.
    pub c_s_global: f64,
    /// Turbulent Prandtl number for all SGS diffusivities.
    pub pr_t: f64,
    /// Optional fraction of the boundary-layer depth above which the
    /// splitting is disabled (gamma = 1, nu_T = 0).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mfev_upper_cutoff: Option<f64>,
}

impl Default for SgsParams {
    fn default() -> Self {
        SgsParams {
            model: SgsModel::MfevSmg,
            c_k: 0.1,
            c_eps_base: 0.93,
            c_s_global: 0.135,
            pr_t: 1.0,
            mfev_upper_cutoff: None,
        }
    }
}

impl SgsParams {
    /// Smagorinsky constant implied by the energy-closure coefficients,
    /// C_s = (C_k sqrt(C_k/C_eps))^(1/2); about 0.1811 for the defaults.
    pub fn c_smagorinsky(&self) -> f64 {
        (self.c_k * (self.c_k / self.c_eps_base).sqrt()).sqrt()
    }

    /// Dissipation coefficient as a function of the SGS length scale.
    /// Linear in L/Delta and equal to `c_eps_base` at L = Delta; with the
    /// default base this is 0.19 + 0.74 L/Delta.
    pub fn c_eps(&self, l: f64, delta: f64) -> f64 {
        (self.c_eps_base - 0.74) + 0.74 * l / delta
    }
}

/// Result of splitting the strain into horizontal-mean and fluctuating
/// parts.
#[derive(Debug, Clone)]
pub struct StrainSplit {
    /// Per-level mean tensor.
    pub s_mean: MeanStrain,
    /// Pointwise fluctuation tensor S - <S>.
    pub s_fluct: StrainField,
    /// Pointwise invariant 2 S'_ij S'_ij (the Smagorinsky argument squared
    /// and the shear-production kernel).
    pub q2_fluct: ScalarField,
    /// Per-level <S> = sqrt(2 <S_ij><S_ij>).
    pub mean_s: Vec<f64>,
    /// Per-level S' = sqrt(2 <S'_ij S'_ij>).
    pub fluct_s: Vec<f64>,
    /// Per-level isotropy factor S'/(S' + <S>), zero when both vanish.
    pub gamma: Vec<f64>,
}

/// Split a cell-centered strain field about its horizontal mean and form
/// the isotropy factor from the per-level invariants.
pub fn strain_split(grid: &Grid, s: &StrainField) -> StrainSplit {
    let s_mean = ops::mean_strain(s);
    let mut s_fluct = s.clone();
    let n = grid.plane_len();
    let nz = grid.nz;

    for (comp, means) in [
        (&mut s_fluct.xx, &s_mean.xx),
        (&mut s_fluct.yy, &s_mean.yy),
        (&mut s_fluct.zz, &s_mean.zz),
        (&mut s_fluct.xy, &s_mean.xy),
        (&mut s_fluct.xz, &s_mean.xz),
        (&mut s_fluct.yz, &s_mean.yz),
    ] {
        comp.data
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(k, lev)| {
                let m = means[k];
                lev.iter_mut().for_each(|x| *x -= m);
            });
    }

    let q2_fluct = strain_sq_invariant(grid, &s_fluct);
    let fluct_s: Vec<f64> = (0..nz)
        .map(|k| ops::plane_mean(q2_fluct.level(k)).max(0.0).sqrt())
        .collect();
    let mean_s: Vec<f64> = (0..nz).map(|k| s_mean.magnitude(k)).collect();
    let gamma: Vec<f64> = (0..nz)
        .map(|k| {
            let denom = fluct_s[k] + mean_s[k];
            if denom > 0.0 {
                fluct_s[k] / denom
            } else {
                0.0
            }
        })
        .collect();

    StrainSplit {
        s_mean,
        s_fluct,
        q2_fluct,
        mean_s,
        fluct_s,
        gamma,
    }
}

/// Pointwise invariant 2 S_ij S_ij of a symmetric tensor field.
pub fn strain_sq_invariant(grid: &Grid, s: &StrainField) -> ScalarField {
    let mut out = ScalarField::centers(grid);
    let n = grid.plane_len();
    out.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(k, lev)| {
            let xx = s.xx.level(k);
            let yy = s.yy.level(k);
            let zz = s.zz.level(k);
            let xy = s.xy.level(k);
            let xz = s.xz.level(k);
            let yz = s.yz.level(k);
            for c in 0..lev.len() {
                let diag = xx[c] * xx[c] + yy[c] * yy[c] + zz[c] * zz[c];
                let off = xy[c] * xy[c] + xz[c] * xz[c] + yz[c] * yz[c];
                lev[c] = 2.0 * (diag + 2.0 * off);
            }
        });
    out
}

/// Smagorinsky viscosity from a precomputed squared invariant:
/// nu_t = (C_s Delta)^2 sqrt(q2).
pub fn smagorinsky_nut_from_q2(q2: &ScalarField, delta: f64, c_s: f64) -> ScalarField {
    let coef = (c_s * delta) * (c_s * delta);
    let mut out = q2.clone();
    out.data.par_iter_mut().for_each(|x| *x = coef * x.max(0.0).sqrt());
    out
}

/// Smagorinsky viscosity nu_t = (C_s Delta)^2 sqrt(2 S_ij S_ij) on the
/// given (total or fluctuating) strain tensor.
pub fn smagorinsky_nut(grid: &Grid, s: &StrainField, delta: f64, c_s: f64) -> ScalarField {
    smagorinsky_nut_from_q2(&strain_sq_invariant(grid, s), delta, c_s)
}

/// Mean-field eddy viscosity profile.
#[derive(Debug, Clone)]
pub struct MfevProfile {
    /// Wall value nu_T(z1) = u_tau kappa z1 / phi_m(z1).
    pub nu_t_star: f64,
    /// Mixing length kappa z1 / phi_m(z1).
    pub ell: f64,
    /// nu_T at each level of the input mean strain.
    pub nu_te: Vec<f64>,
}

/// Evaluate the mean-field viscosity nu_T = ell^2 sqrt(2 <S_ij><S_ij>) at
/// every level of `s_mean`, with ell = kappa z1 / phi_m(z1) fixed by the
/// wall model. With log-law shear at z1 the profile value there reduces to
/// nu_t_star, and the SGS flux -nu_T d<u>/dz at z1 is exactly u_tau^2.
pub fn mfev_profile(s_mean: &MeanStrain, u_tau: f64, phi_m_z1: f64, z1: f64, kappa: f64) -> MfevProfile {
    let ell = kappa * z1 / phi_m_z1;
    let nu_t_star = u_tau * ell;
    let nu_te = (0..s_mean.xx.len())
        .map(|k| ell * ell * s_mean.magnitude(k))
        .collect();
    MfevProfile {
        nu_t_star,
        ell,
        nu_te,
    }
}

/// SGS length scale field: Delta for the plain energy closure, reduced to
/// 0.76 sqrt(e)/N under stable stratification (N^2 from the plane-mean
/// temperature gradient), never above Delta.
pub fn tke_length_scale(
    grid: &Grid,
    e: &ScalarField,
    theta_mean: &[f64],
    drd: bool,
    g: f64,
    theta0: f64,
) -> ScalarField {
    let mut out = ScalarField::centers(grid);
    let delta = grid.delta;
    if !drd {
        out.fill(delta);
        return out;
    }
    let dthdz = ops::ddz_profile(theta_mean, grid.dz);
    let n = grid.plane_len();
    out.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(k, lev)| {
            let n2 = g / theta0 * dthdz[k];
            let el = e.level(k);
            if n2 <= 0.0 {
                lev.iter_mut().for_each(|x| *x = delta);
            } else {
                let ninv = 1.0 / n2.sqrt();
                for c in 0..lev.len() {
                    lev[c] = (0.76 * el[c].max(0.0).sqrt() * ninv).min(delta);
                }
            }
        });
    out
}

/// Eddy viscosity of the SGS energy closure, nu_t = C_k L sqrt(e).
pub fn tke_nut(e: &ScalarField, l: &ScalarField, c_k: f64) -> ScalarField {
    let mut out = e.clone();
    out.data
        .par_iter_mut()
        .zip(l.data.par_iter())
        .for_each(|(x, &ll)| *x = c_k * ll * x.max(0.0).sqrt());
    out
}

/// Full right-hand side of the SGS energy transport equation: advection,
/// shear production against the fluctuating strain, buoyancy exchange
/// through the SGS heat flux of the temperature fluctuation, dissipation,
/// and diffusion with zero-flux vertical boundaries.
#[allow(clippy::too_many_arguments)]
pub fn tke_rhs(
    grid: &Grid,
    e: &ScalarField,
    u: &ScalarField,
    v: &ScalarField,
    w: &ScalarField,
    gamma: &[f64],
    q2_fluct: &ScalarField,
    nu_t: &ScalarField,
    theta: &ScalarField,
    theta_mean: &[f64],
    l: &ScalarField,
    params: &SgsParams,
    nu_mol: f64,
    g: f64,
    theta0: f64,
) -> ScalarField {
    let n = grid.plane_len();
    let nz = grid.nz;
    let dzi = 1.0 / grid.dz;
    let delta = grid.delta;

    let adv = ops::scalar_advection(grid, u, v, w, e);

    // Diffusivity nu_mol + 2 gamma nu_t.
    let mut kdiff = nu_t.clone();
    kdiff
        .data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(k, lev)| {
            let gam = gamma[k];
            lev.iter_mut().for_each(|x| *x = nu_mol + 2.0 * gam * *x);
        });
    let diff = ops::scalar_diffusion(grid, e, &kdiff, ops::FaceBc::Flux(0.0), ops::FaceBc::Flux(0.0));

    let mut out = ScalarField::centers(grid);
    out.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(k, lev)| {
            let gam = gamma[k];
            let q2 = q2_fluct.level(k);
            let nut = nu_t.level(k);
            let el = e.level(k);
            let ll = l.level(k);
            let al = adv.level(k);
            let dl = diff.level(k);
            let thl = theta.level(k);
            let buoy_coef = g / theta0 * gam / params.pr_t;
            for c in 0..lev.len() {
                let production = gam * nut[c] * q2[c];
                // tau_theta_z = -nu_theta d(theta')/dz with theta' the
                // deviation from the plane mean.
                let dthp_dz = if k == 0 {
                    (-3.0 * (thl[c] - theta_mean[0])
                        + 4.0 * (theta.level(1)[c] - theta_mean[1])
                        - (theta.level(2)[c] - theta_mean[2]))
                        * 0.5
                        * dzi
                } else if k == nz - 1 {
                    (3.0 * (thl[c] - theta_mean[nz - 1])
                        - 4.0 * (theta.level(nz - 2)[c] - theta_mean[nz - 2])
                        + (theta.level(nz - 3)[c] - theta_mean[nz - 3]))
                        * 0.5
                        * dzi
                } else {
                    ((theta.level(k + 1)[c] - theta_mean[k + 1])
                        - (theta.level(k - 1)[c] - theta_mean[k - 1]))
                        * 0.5
                        * dzi
                };
                let buoyancy = -buoy_coef * nut[c] * dthp_dz;
                let ev = el[c].max(0.0);
                // L = 0.76 sqrt(e)/N collapses with e; the dissipation limit
                // e^{3/2}/L -> N e / 0.76 vanishes there, so guard the 0/0.
                let dissipation = if ll[c] > 0.0 {
                    params.c_eps(ll[c], delta) * ev * ev.sqrt() / ll[c]
                } else {
                    0.0
                };
                lev[c] = -al[c] + production + buoyancy - dissipation + dl[c];
            }
        });
    out
}

/// Everything the momentum/energy assembly needs from the SGS model for
/// one evaluation of the right-hand side.
#[derive(Debug, Clone)]
pub struct SgsState {
    /// Pointwise fluctuating eddy viscosity at cell centers.
    pub nu_t: ScalarField,
    /// Isotropy factor per center level.
    pub gamma: Vec<f64>,
    /// Mean-field viscosity on z-faces (length nz+1). The boundary faces
    /// are zero: their fluxes are prescribed by the wall traction and the
    /// stress-free lid instead.
    pub nu_te: Vec<f64>,
    /// Wall value of the mean-field viscosity.
    pub nu_t_star: f64,
    /// Mean-field mixing length kappa z1/phi_m.
    pub ell: f64,
    /// Per-level mean strain tensor at centers.
    pub s_mean: MeanStrain,
    /// Per-level invariants <S> and S'.
    pub mean_s: Vec<f64>,
    pub fluct_s: Vec<f64>,
    /// Fluctuating strain tensor and its squared invariant.
    pub s_fluct: StrainField,
    pub q2_fluct: ScalarField,
    /// SGS length scale (Delta except for the reduced stable closure).
    pub length: ScalarField,
}

impl SgsState {
    /// A state with no turbulent viscosity at all: gamma = 1, nu_t = 0,
    /// nu_T = 0. Molecular-only dynamics and manufactured solutions use it.
    pub fn inert(grid: &Grid) -> SgsState {
        SgsState {
            nu_t: ScalarField::centers(grid),
            gamma: vec![1.0; grid.nz],
            nu_te: vec![0.0; grid.nz + 1],
            nu_t_star: 0.0,
            ell: 0.0,
            s_mean: MeanStrain::zeros(grid.nz),
            mean_s: vec![0.0; grid.nz],
            fluct_s: vec![0.0; grid.nz],
            s_fluct: StrainField::centers(grid),
            q2_fluct: ScalarField::centers(grid),
            length: ScalarField::centers(grid),
        }
    }
}

/// Build the SGS state for one stage: strain split, eddy viscosity for the
/// selected model, and the mean-field profile on the z-faces.
#[allow(clippy::too_many_arguments)]
pub fn compute_sgs_state(
    grid: &Grid,
    u: &ScalarField,
    v: &ScalarField,
    w: &ScalarField,
    e: Option<&ScalarField>,
    u_mean: &[f64],
    v_mean: &[f64],
    theta_mean: &[f64],
    wall: Option<&WallScales>,
    z1: f64,
    kappa: f64,
    phi_m_z1: f64,
    params: &SgsParams,
    g: f64,
    theta0: f64,
    cutoff_height: Option<f64>,
) -> SgsState {
    let s_total = ops::strain_rate(grid, u, v, w);
    let split = strain_split(grid, &s_total);
    let nz = grid.nz;

    let (nu_t, length) = match params.model {
        SgsModel::GlobalSmg => {
            let q2_total = strain_sq_invariant(grid, &s_total);
            let nu_t = smagorinsky_nut_from_q2(&q2_total, grid.delta, params.c_s_global);
            let mut l = ScalarField::centers(grid);
            l.fill(grid.delta);
            (nu_t, l)
        }
        SgsModel::MfevSmg => {
            let nu_t =
                smagorinsky_nut_from_q2(&split.q2_fluct, grid.delta, params.c_smagorinsky());
            let mut l = ScalarField::centers(grid);
            l.fill(grid.delta);
            (nu_t, l)
        }
        SgsModel::MfevTkeSmg | SgsModel::MfevTkeDrd => {
            let e = e.expect("TKE model requires the SGS energy field");
            let drd = params.model == SgsModel::MfevTkeDrd;
            let l = tke_length_scale(grid, e, theta_mean, drd, g, theta0);
            let nu_t = tke_nut(e, &l, params.c_k);
            (nu_t, l)
        }
    };

    let mut gamma = split.gamma.clone();
    let mut nu_te = vec![0.0; nz + 1];
    let mut nu_t_star = 0.0;
    let mut ell = 0.0;

    match wall {
        Some(wall) if params.model.uses_mean_field() => {
            // Mean shear on interior z-faces from the plane-averaged wind.
            let mut shear = MeanStrain::zeros(nz + 1);
            let dzi = 1.0 / grid.dz;
            for k in 1..nz {
                shear.xz[k] = 0.5 * (u_mean[k] - u_mean[k - 1]) * dzi;
                shear.yz[k] = 0.5 * (v_mean[k] - v_mean[k - 1]) * dzi;
            }
            let prof = mfev_profile(&shear, wall.u_tau, phi_m_z1, z1, kappa);
            nu_te = prof.nu_te;
            nu_te[0] = 0.0;
            nu_te[nz] = 0.0;
            nu_t_star = prof.nu_t_star;
            ell = prof.ell;
        }
        _ => {
            if !params.model.uses_mean_field() {
                gamma.iter_mut().for_each(|g| *g = 1.0);
            }
        }
    }

    if let Some(zc) = cutoff_height {
        for (k, g) in gamma.iter_mut().enumerate() {
            if grid.z_center(k) > zc {
                *g = 1.0;
            }
        }
        for k in 0..=nz {
            if grid.z_face(k) > zc {
                nu_te[k] = 0.0;
            }
        }
    }

    SgsState {
        nu_t,
        gamma,
        nu_te,
        nu_t_star,
        ell,
        s_mean: split.s_mean,
        mean_s: split.mean_s,
        fluct_s: split.fluct_s,
        s_fluct: split.s_fluct,
        q2_fluct: split.q2_fluct,
        length,
    }
}

/// SGS flux tensors assembled from their definition, for diagnostics and
/// budget output: tau_ij = -2 nu_T <S_ij> - 2 gamma nu_t S_ij and the heat
/// flux tau_th = -(nu_T/Pr_t) d<theta>/dz e_z - (gamma nu_t/Pr_t) grad
/// theta. `nu_te_centers` is the mean-field viscosity at the cell-center
/// levels of `s`.
#[allow(clippy::too_many_arguments)]
pub fn sgs_fluxes(
    grid: &Grid,
    s: &StrainField,
    s_mean: &MeanStrain,
    nu_te_centers: &[f64],
    nu_t: &ScalarField,
    gamma: &[f64],
    theta: &ScalarField,
    theta_mean: &[f64],
    pr_t: f64,
) -> (StrainField, [ScalarField; 3]) {
    let n = grid.plane_len();
    let nz = grid.nz;
    let (dxi, dyi, dzi) = (1.0 / grid.dx, 1.0 / grid.dy, 1.0 / grid.dz);
    let mut tau = StrainField::centers(grid);
    let dthdz_mean = ops::ddz_profile(theta_mean, grid.dz);

    for (out, comp, means) in [
        (&mut tau.xx, &s.xx, &s_mean.xx),
        (&mut tau.yy, &s.yy, &s_mean.yy),
        (&mut tau.zz, &s.zz, &s_mean.zz),
        (&mut tau.xy, &s.xy, &s_mean.xy),
        (&mut tau.xz, &s.xz, &s_mean.xz),
        (&mut tau.yz, &s.yz, &s_mean.yz),
    ] {
        out.data
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(k, lev)| {
                let sl = comp.level(k);
                let nut = nu_t.level(k);
                let gam = gamma[k];
                let mean_part = 2.0 * nu_te_centers[k] * means[k];
                for c in 0..lev.len() {
                    lev[c] = -mean_part - 2.0 * gam * nut[c] * sl[c];
                }
            });
    }

    let mut tx = ScalarField::centers(grid);
    let mut ty = ScalarField::centers(grid);
    let mut tz = ScalarField::centers(grid);
    let (nx, ny) = (grid.nx, grid.ny);
    tx.data
        .par_chunks_mut(n)
        .zip(ty.data.par_chunks_mut(n))
        .zip(tz.data.par_chunks_mut(n))
        .enumerate()
        .for_each(|(k, ((lx, ly), lz))| {
            let thl = theta.level(k);
            let nut = nu_t.level(k);
            let coef = gamma[k] / pr_t;
            let mean_part = nu_te_centers[k] / pr_t * dthdz_mean[k];
            for j in 0..ny {
                let jp = ops::wrap_up(j, ny);
                let jm = ops::wrap_dn(j, ny);
                for i in 0..nx {
                    let ip = ops::wrap_up(i, nx);
                    let im = ops::wrap_dn(i, nx);
                    let c = j * nx + i;
                    let dthdx = (thl[j * nx + ip] - thl[j * nx + im]) * 0.5 * dxi;
                    let dthdy = (thl[jp * nx + i] - thl[jm * nx + i]) * 0.5 * dyi;
                    let dthdz = if k == 0 {
                        (-3.0 * thl[c] + 4.0 * theta.level(1)[c] - theta.level(2)[c]) * 0.5 * dzi
                    } else if k == nz - 1 {
                        (3.0 * thl[c] - 4.0 * theta.level(nz - 2)[c] + theta.level(nz - 3)[c])
                            * 0.5
                            * dzi
                    } else {
                        (theta.level(k + 1)[c] - theta.level(k - 1)[c]) * 0.5 * dzi
                    };
                    lx[c] = -coef * nut[c] * dthdx;
                    ly[c] = -coef * nut[c] * dthdy;
                    lz[c] = -mean_part - coef * nut[c] * dthdz;
                }
            }
        });

    (tau, [tx, ty, tz])
}
