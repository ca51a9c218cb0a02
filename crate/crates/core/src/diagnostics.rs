//! Plane and time statistics, bulk quantities, stability profiles, jet and
//! boundary-layer-depth detection, and ring-averaged horizontal spectra.
//!
//! Fluctuations are always taken against the instantaneous horizontal
//! plane mean and then averaged in time with uniform sample weights, so a
//! statistics window over a quasi-steady stretch of the run gives the
//! usual plane-time Reynolds averages.

use std::f64::consts::SQRT_2;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::dynamics::State;
use crate::error::AblError;
use crate::grid::Grid;
use crate::ops;
use crate::sgs::{self, SgsParams, SgsState};
use crate::wall::WallScales;

/// Gradient magnitude below which the mean wind is considered constant
/// when detecting the boundary-layer top (1/s).
pub const ZI_DEFAULT_THRESHOLD: f64 = 0.002;

/// Time-averaged per-level statistics, plus the stability diagnostics
/// derived from the averaged profiles.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileSet {
    /// Cell-center heights (m).
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Mean horizontal speed sqrt(<u>^2 + <v>^2).
    pub speed: Vec<f64>,
    /// Wind direction atan2(<v>, <u>), degrees counterclockwise from +x.
    pub direction_deg: Vec<f64>,
    pub uu: Vec<f64>,
    pub vv: Vec<f64>,
    pub ww: Vec<f64>,
    pub uw: Vec<f64>,
    pub vw: Vec<f64>,
    pub uv: Vec<f64>,
    pub wth: Vec<f64>,
    pub uth: Vec<f64>,
    pub vth: Vec<f64>,
    /// SGS counterparts of the resolved fluxes above.
    pub sgs_uw: Vec<f64>,
    pub sgs_vw: Vec<f64>,
    pub sgs_uv: Vec<f64>,
    pub sgs_wth: Vec<f64>,
    pub sgs_uth: Vec<f64>,
    pub sgs_vth: Vec<f64>,
    pub tke_resolved: Vec<f64>,
    pub tke_sgs: Vec<f64>,
    /// Mean-field viscosity interpolated to cell centers.
    pub nu_te: Vec<f64>,
    pub nu_t: Vec<f64>,
    pub gamma: Vec<f64>,
    pub n2: Vec<f64>,
    pub s2: Vec<f64>,
    /// Gradient Richardson number, NaN where the shear vanishes.
    pub ri: Vec<f64>,
}

impl ProfileSet {
    /// Column views in emission order, keyed by the CSV header names.
    pub fn columns(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("z", &self.z),
            ("u", &self.u),
            ("v", &self.v),
            ("theta", &self.theta),
            ("speed", &self.speed),
            ("direction_deg", &self.direction_deg),
            ("uu", &self.uu),
            ("vv", &self.vv),
            ("ww", &self.ww),
            ("uw", &self.uw),
            ("vw", &self.vw),
            ("uv", &self.uv),
            ("wth", &self.wth),
            ("uth", &self.uth),
            ("vth", &self.vth),
            ("sgs_uw", &self.sgs_uw),
            ("sgs_vw", &self.sgs_vw),
            ("sgs_uv", &self.sgs_uv),
            ("sgs_wth", &self.sgs_wth),
            ("sgs_uth", &self.sgs_uth),
            ("sgs_vth", &self.sgs_vth),
            ("tke_resolved", &self.tke_resolved),
            ("tke_sgs", &self.tke_sgs),
            ("nu_te", &self.nu_te),
            ("nu_t", &self.nu_t),
            ("gamma", &self.gamma),
            ("n2", &self.n2),
            ("s2", &self.s2),
            ("ri", &self.ri),
        ]
    }
}

/// The scalar summary of a statistics window.
#[derive(Debug, Clone, Serialize)]
pub struct BulkQuantities {
    pub u_tau: f64,
    pub qstar: f64,
    /// Obukhov length; infinite (serialized as null) when qstar = 0.
    pub l_mo: f64,
    pub z_i: f64,
    /// False when no level met the gradient criterion and z_i fell back
    /// to the domain top.
    pub z_i_converged: bool,
    pub z_j: f64,
    /// True when the speed maximum sits on a boundary level, where the
    /// parabolic refinement is unavailable.
    pub z_j_degenerate: bool,
    pub zi_over_lmo: f64,
    pub zj_over_zi: f64,
    pub samples: u64,
}

/// Running sums behind the time average. The fields are public so the
/// checkpoint can persist them and make a resumed window bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsAccumulator {
    pub samples: u64,
    pub sum_u_tau: f64,
    pub sum_qstar: f64,
    pub sum_u: Vec<f64>,
    pub sum_v: Vec<f64>,
    pub sum_theta: Vec<f64>,
    pub sum_uu: Vec<f64>,
    pub sum_vv: Vec<f64>,
    pub sum_ww: Vec<f64>,
    pub sum_uw: Vec<f64>,
    pub sum_vw: Vec<f64>,
    pub sum_uv: Vec<f64>,
    pub sum_wth: Vec<f64>,
    pub sum_uth: Vec<f64>,
    pub sum_vth: Vec<f64>,
    pub sum_sgs_uw: Vec<f64>,
    pub sum_sgs_vw: Vec<f64>,
    pub sum_sgs_uv: Vec<f64>,
    pub sum_sgs_wth: Vec<f64>,
    pub sum_sgs_uth: Vec<f64>,
    pub sum_sgs_vth: Vec<f64>,
    pub sum_tke_sgs: Vec<f64>,
    pub sum_nu_te: Vec<f64>,
    pub sum_nu_t: Vec<f64>,
    pub sum_gamma: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(nz: usize) -> StatsAccumulator {
        StatsAccumulator {
            samples: 0,
            sum_u_tau: 0.0,
            sum_qstar: 0.0,
            sum_u: vec![0.0; nz],
            sum_v: vec![0.0; nz],
            sum_theta: vec![0.0; nz],
            sum_uu: vec![0.0; nz],
            sum_vv: vec![0.0; nz],
            sum_ww: vec![0.0; nz],
            sum_uw: vec![0.0; nz],
            sum_vw: vec![0.0; nz],
            sum_uv: vec![0.0; nz],
            sum_wth: vec![0.0; nz],
            sum_uth: vec![0.0; nz],
            sum_vth: vec![0.0; nz],
            sum_sgs_uw: vec![0.0; nz],
            sum_sgs_vw: vec![0.0; nz],
            sum_sgs_uv: vec![0.0; nz],
            sum_sgs_wth: vec![0.0; nz],
            sum_sgs_uth: vec![0.0; nz],
            sum_sgs_vth: vec![0.0; nz],
            sum_tke_sgs: vec![0.0; nz],
            sum_nu_te: vec![0.0; nz],
            sum_nu_t: vec![0.0; nz],
            sum_gamma: vec![0.0; nz],
        }
    }

    /// Folds one snapshot into the running sums. Velocities are
    /// interpolated to cell centers before any product is formed, and
    /// every second moment uses the instantaneous plane mean of this
    /// snapshot. Summation order is fixed, so the result is independent
    /// of the thread count.
    pub fn accumulate(
        &mut self,
        grid: &Grid,
        state: &State,
        sgs_state: &SgsState,
        params: &SgsParams,
        wall: Option<&WallScales>,
    ) {
        let nz = grid.nz;
        let (uc, vc, wc) = ops::velocity_at_centers(grid, &state.u, &state.v, &state.w);
        let theta_mean = ops::plane_average(&state.theta);
        let s_total = ops::strain_rate(grid, &state.u, &state.v, &state.w);
        let nu_te_c: Vec<f64> = (0..nz)
            .map(|k| 0.5 * (sgs_state.nu_te[k] + sgs_state.nu_te[k + 1]))
            .collect();
        let (tau, tau_th) = sgs::sgs_fluxes(
            grid,
            &s_total,
            &sgs_state.s_mean,
            &nu_te_c,
            &sgs_state.nu_t,
            &sgs_state.gamma,
            &state.theta,
            &theta_mean,
            params.pr_t,
        );
        let uses_tke = params.model.uses_tke();
        let ck_delta = params.c_k * grid.delta;

        for k in 0..nz {
            let ul = uc.level(k);
            let vl = vc.level(k);
            let wl = wc.level(k);
            let thl = state.theta.level(k);
            let um = ops::plane_mean(ul);
            let vm = ops::plane_mean(vl);
            let wm = ops::plane_mean(wl);
            let thm = theta_mean[k];

            let mut uu = 0.0;
            let mut vv = 0.0;
            let mut ww = 0.0;
            let mut uw = 0.0;
            let mut vw = 0.0;
            let mut uv = 0.0;
            let mut wth = 0.0;
            let mut uth = 0.0;
            let mut vth = 0.0;
            for c in 0..ul.len() {
                let du = ul[c] - um;
                let dv = vl[c] - vm;
                let dw = wl[c] - wm;
                let dth = thl[c] - thm;
                uu += du * du;
                vv += dv * dv;
                ww += dw * dw;
                uw += du * dw;
                vw += dv * dw;
                uv += du * dv;
                wth += dw * dth;
                uth += du * dth;
                vth += dv * dth;
            }
            let inv = 1.0 / ul.len() as f64;

            self.sum_u[k] += um;
            self.sum_v[k] += vm;
            self.sum_theta[k] += thm;
            self.sum_uu[k] += uu * inv;
            self.sum_vv[k] += vv * inv;
            self.sum_ww[k] += ww * inv;
            self.sum_uw[k] += uw * inv;
            self.sum_vw[k] += vw * inv;
            self.sum_uv[k] += uv * inv;
            self.sum_wth[k] += wth * inv;
            self.sum_uth[k] += uth * inv;
            self.sum_vth[k] += vth * inv;

            self.sum_sgs_uw[k] += ops::plane_mean(tau.xz.level(k));
            self.sum_sgs_vw[k] += ops::plane_mean(tau.yz.level(k));
            self.sum_sgs_uv[k] += ops::plane_mean(tau.xy.level(k));
            self.sum_sgs_uth[k] += ops::plane_mean(tau_th[0].level(k));
            self.sum_sgs_vth[k] += ops::plane_mean(tau_th[1].level(k));
            self.sum_sgs_wth[k] += ops::plane_mean(tau_th[2].level(k));

            let tke_sgs = if uses_tke {
                ops::plane_mean(state.e.level(k))
            } else {
                let nut = sgs_state.nu_t.level(k);
                let mut s = 0.0;
                for &n in nut {
                    let r = n / ck_delta;
                    s += r * r;
                }
                s * inv
            };
            self.sum_tke_sgs[k] += tke_sgs;
            self.sum_nu_te[k] += nu_te_c[k];
            self.sum_nu_t[k] += ops::plane_mean(sgs_state.nu_t.level(k));
            self.sum_gamma[k] += sgs_state.gamma[k];
        }

        if let Some(w) = wall {
            self.sum_u_tau += w.u_tau;
            self.sum_qstar += w.qstar;
        }
        self.samples += 1;
    }

    pub fn mean_u_tau(&self) -> f64 {
        self.sum_u_tau / self.samples.max(1) as f64
    }

    pub fn mean_qstar(&self) -> f64 {
        self.sum_qstar / self.samples.max(1) as f64
    }

    /// The time-averaged profiles, with the stability diagnostics
    /// evaluated on the averaged means.
    pub fn profiles(&self, grid: &Grid, g: f64, theta0: f64) -> ProfileSet {
        let inv = 1.0 / self.samples.max(1) as f64;
        let avg = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x * inv).collect() };

        let u = avg(&self.sum_u);
        let v = avg(&self.sum_v);
        let theta = avg(&self.sum_theta);
        let uu = avg(&self.sum_uu);
        let vv = avg(&self.sum_vv);
        let ww = avg(&self.sum_ww);

        let speed: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a.hypot(*b)).collect();
        let direction_deg: Vec<f64> = u
            .iter()
            .zip(&v)
            .map(|(a, b)| b.atan2(*a).to_degrees())
            .collect();
        let tke_resolved: Vec<f64> = (0..grid.nz)
            .map(|k| 0.5 * (uu[k] + vv[k] + ww[k]))
            .collect();
        let (n2, s2, ri) = stability_profiles(&theta, &u, &v, grid.dz, g, theta0);

        ProfileSet {
            z: (0..grid.nz).map(|k| grid.z_center(k)).collect(),
            u,
            v,
            theta,
            speed,
            direction_deg,
            uu,
            vv,
            ww,
            uw: avg(&self.sum_uw),
            vw: avg(&self.sum_vw),
            uv: avg(&self.sum_uv),
            wth: avg(&self.sum_wth),
            uth: avg(&self.sum_uth),
            vth: avg(&self.sum_vth),
            sgs_uw: avg(&self.sum_sgs_uw),
            sgs_vw: avg(&self.sum_sgs_vw),
            sgs_uv: avg(&self.sum_sgs_uv),
            sgs_wth: avg(&self.sum_sgs_wth),
            sgs_uth: avg(&self.sum_sgs_uth),
            sgs_vth: avg(&self.sum_sgs_vth),
            tke_resolved,
            tke_sgs: avg(&self.sum_tke_sgs),
            nu_te: avg(&self.sum_nu_te),
            nu_t: avg(&self.sum_nu_t),
            gamma: avg(&self.sum_gamma),
            n2,
            s2,
            ri,
        }
    }
}

/// Buoyancy frequency, squared shear, and gradient Richardson number from
/// mean profiles. Ri is NaN wherever S^2 < 1e-12.
pub fn stability_profiles(
    theta: &[f64],
    u: &[f64],
    v: &[f64],
    dz: f64,
    g: f64,
    theta0: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dthdz = ops::ddz_profile(theta, dz);
    let dudz = ops::ddz_profile(u, dz);
    let dvdz = ops::ddz_profile(v, dz);
    let n2: Vec<f64> = dthdz.iter().map(|d| g / theta0 * d).collect();
    let s2: Vec<f64> = dudz
        .iter()
        .zip(&dvdz)
        .map(|(a, b)| a * a + b * b)
        .collect();
    let ri: Vec<f64> = n2
        .iter()
        .zip(&s2)
        .map(|(n, s)| if *s < 1e-12 { f64::NAN } else { n / s })
        .collect();
    (n2, s2, ri)
}

/// Obukhov length -u_tau^3 / (kappa (g/theta0) qstar); +infinity in the
/// neutral limit qstar = 0.
pub fn obukhov_length(u_tau: f64, qstar: f64, kappa: f64, g: f64, theta0: f64) -> f64 {
    if qstar == 0.0 {
        f64::INFINITY
    } else {
        -u_tau.powi(3) / (kappa * (g / theta0) * qstar)
    }
}

/// Low-level-jet detection: argmax of the speed profile with three-point
/// parabolic refinement.
#[derive(Debug, Clone, Copy)]
pub struct JetDetection {
    pub z_j: f64,
    pub degenerate: bool,
}

pub fn llj_height(z: &[f64], speed: &[f64]) -> JetDetection {
    let mut kmax = 0;
    for k in 1..speed.len() {
        if speed[k] > speed[kmax] {
            kmax = k;
        }
    }
    if kmax == 0 || kmax + 1 == speed.len() {
        return JetDetection {
            z_j: z[kmax],
            degenerate: true,
        };
    }
    let (s0, s1, s2) = (speed[kmax - 1], speed[kmax], speed[kmax + 1]);
    let denom = s0 - 2.0 * s1 + s2;
    let offset = if denom < 0.0 {
        0.5 * (s0 - s2) / denom
    } else {
        0.0
    };
    JetDetection {
        z_j: z[kmax] + offset * (z[kmax + 1] - z[kmax]),
        degenerate: false,
    }
}

/// Boundary-layer-depth detection on the mean speed profile.
#[derive(Debug, Clone, Copy)]
pub struct DepthDetection {
    pub z_i: f64,
    pub converged: bool,
}

/// The lowest height above `z_j` where |d speed/dz| stays below
/// `threshold` for three consecutive levels, refined by interpolating the
/// gradient magnitude through the threshold from the level below. Falls
/// back to the domain top with `converged = false` when no level
/// qualifies.
pub fn boundary_layer_depth(
    z: &[f64],
    speed: &[f64],
    dz: f64,
    z_j: f64,
    threshold: f64,
) -> DepthDetection {
    let grad = ops::ddz_profile(speed, dz);
    let nz = z.len();
    let quiet = |k: usize| grad[k].abs() < threshold;
    for k in 0..nz {
        if z[k] <= z_j || k + 2 >= nz {
            continue;
        }
        if quiet(k) && quiet(k + 1) && quiet(k + 2) {
            if k > 0 && grad[k - 1].abs() >= threshold {
                let g0 = grad[k - 1].abs();
                let g1 = grad[k].abs();
                let frac = (g0 - threshold) / (g0 - g1);
                return DepthDetection {
                    z_i: z[k - 1] + frac * (z[k] - z[k - 1]),
                    converged: true,
                };
            }
            return DepthDetection {
                z_i: z[k],
                converged: true,
            };
        }
    }
    DepthDetection {
        z_i: z[nz - 1] + 0.5 * dz,
        converged: false,
    }
}

/// Assembles the window summary from the averaged profiles and scales.
#[allow(clippy::too_many_arguments)]
pub fn bulk_quantities(
    grid: &Grid,
    profiles: &ProfileSet,
    u_tau: f64,
    qstar: f64,
    kappa: f64,
    g: f64,
    theta0: f64,
    zi_threshold: f64,
    samples: u64,
) -> BulkQuantities {
    let jet = llj_height(&profiles.z, &profiles.speed);
    let depth = boundary_layer_depth(&profiles.z, &profiles.speed, grid.dz, jet.z_j, zi_threshold);
    let l_mo = obukhov_length(u_tau, qstar, kappa, g, theta0);
    BulkQuantities {
        u_tau,
        qstar,
        l_mo,
        z_i: depth.z_i,
        z_i_converged: depth.converged,
        z_j: jet.z_j,
        z_j_degenerate: jet.degenerate,
        zi_over_lmo: if l_mo.is_finite() { depth.z_i / l_mo } else { 0.0 },
        zj_over_zi: jet.z_j / depth.z_i,
        samples,
    }
}

/// Ring-averaged energy spectrum of one horizontal plane. Bin `j` holds
/// the energy |u_hat|^2 / 2 of all modes whose wavenumber magnitude
/// rounds to `j` fundamentals; bin 0 carries the plane mean.
pub fn horizontal_spectrum(plane: &[f64], nx: usize, ny: usize) -> Result<Vec<f64>, AblError> {
    if nx != ny {
        return Err(AblError::Numerics(format!(
            "spectra need a square horizontal plane, got {nx}x{ny}"
        )));
    }
    if plane.len() != nx * ny {
        return Err(AblError::Numerics(
            "plane length does not match its dimensions".into(),
        ));
    }
    let n = nx;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut data: Vec<Complex<f64>> = plane.iter().map(|&x| Complex::new(x, 0.0)).collect();
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for i in 0..n {
        for (j, slot) in col.iter_mut().enumerate() {
            *slot = data[j * n + i];
        }
        fft.process(&mut col);
        for (j, slot) in col.iter().enumerate() {
            data[j * n + i] = *slot;
        }
    }

    let signed = |k: usize| -> f64 {
        if k <= n / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        }
    };
    let nbins = ((n as f64 / 2.0) * SQRT_2).ceil() as usize + 1;
    let mut e = vec![0.0; nbins];
    let norm = 1.0 / (n as f64 * n as f64);
    for ky in 0..n {
        let fy = signed(ky);
        for kx in 0..n {
            let fx = signed(kx);
            let bin = (fx * fx + fy * fy).sqrt().round() as usize;
            let a = data[ky * n + kx] * norm;
            e[bin] += 0.5 * a.norm_sqr();
        }
    }
    Ok(e)
}

pub fn plane_variance(plane: &[f64]) -> f64 {
    let m = ops::plane_mean(plane);
    plane.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / plane.len() as f64
}

/// Verifies that the spectrum's energy above bin zero matches half the
/// plane variance, the discrete Parseval identity under this
/// normalization.
pub fn parseval_check(plane: &[f64], e: &[f64]) -> Result<(), AblError> {
    let half_var = 0.5 * plane_variance(plane);
    let tail: f64 = e[1..].iter().sum();
    let gap = (tail - half_var).abs();
    let tol = 1e-10 * half_var + 1e-12 * e[0].max(f64::MIN_POSITIVE);
    if gap > tol {
        return Err(AblError::Numerics(format!(
            "Parseval violation: binned energy {tail:.17e} vs variance/2 {half_var:.17e}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ScalarField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn test_grid() -> Grid {
        Grid::new(16, 16, 8, 400.0, 400.0, 400.0, 0.0).unwrap()
    }

    fn inert_snapshot(grid: &Grid) -> (State, SgsState, SgsParams) {
        (
            State::new(grid),
            SgsState::inert(grid),
            SgsParams::default(),
        )
    }

    #[test]
    fn single_mode_variance_and_orthogonal_covariance() {
        let grid = test_grid();
        let (mut state, sgs_state, params) = inert_snapshot(&grid);
        let amp = 0.7;
        for k in 0..grid.nz {
            let lev = state.u.level_mut(k);
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    // Sampled at u-faces; the center interpolation keeps a
                    // pure mode with a known reduced amplitude.
                    let x = i as f64 * grid.dx;
                    lev[j * grid.nx + i] = amp * (2.0 * PI * x / grid.lx).sin();
                }
            }
        }
        // w on interior faces varies only in y: uncorrelated with u'.
        for k in 1..grid.nz {
            let lev = state.w.level_mut(k);
            for j in 0..grid.ny {
                let y = j as f64 * grid.dy;
                for i in 0..grid.nx {
                    lev[j * grid.nx + i] = 0.3 * (2.0 * PI * y / grid.ly).sin();
                }
            }
        }
        let mut acc = StatsAccumulator::new(grid.nz);
        acc.accumulate(&grid, &state, &sgs_state, &params, None);
        let p = acc.profiles(&grid, 9.81, 263.5);

        // Center interpolation scales the mode by cos(pi/nx).
        let expect = 0.5 * (amp * (PI / grid.nx as f64).cos()).powi(2);
        for k in 0..grid.nz {
            assert!((p.uu[k] - expect).abs() < 1e-12, "uu[{k}] = {}", p.uu[k]);
            assert!(p.uw[k].abs() < 1e-12);
            assert!(p.u[k].abs() < 1e-12);
        }
        // Resolved TKE is half the variance sum by construction.
        for k in 0..grid.nz {
            let half = 0.5 * (p.uu[k] + p.vv[k] + p.ww[k]);
            assert_eq!(p.tke_resolved[k], half);
        }
    }

    #[test]
    fn time_average_of_identical_snapshots_is_the_snapshot() {
        let grid = test_grid();
        let (mut state, sgs_state, params) = inert_snapshot(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for x in state.u.data.iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        for x in state.theta.data.iter_mut() {
            *x = 263.5 + rng.gen_range(-0.5..0.5);
        }
        let mut once = StatsAccumulator::new(grid.nz);
        once.accumulate(&grid, &state, &sgs_state, &params, None);
        let mut thrice = StatsAccumulator::new(grid.nz);
        for _ in 0..3 {
            thrice.accumulate(&grid, &state, &sgs_state, &params, None);
        }
        let a = once.profiles(&grid, 9.81, 263.5);
        let b = thrice.profiles(&grid, 9.81, 263.5);
        for k in 0..grid.nz {
            assert!((a.uu[k] - b.uu[k]).abs() < 1e-15);
            assert!((a.u[k] - b.u[k]).abs() < 1e-15);
            assert!((a.wth[k] - b.wth[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn sgs_columns_reproduce_uniform_shear_fluxes() {
        let grid = test_grid();
        let (mut state, mut sgs_state, params) = inert_snapshot(&grid);
        let shear = 0.02;
        let lapse = 0.01;
        for k in 0..grid.nz {
            let z = grid.z_center(k);
            state.u.level_mut(k).iter_mut().for_each(|x| *x = shear * z);
            state
                .theta
                .level_mut(k)
                .iter_mut()
                .for_each(|x| *x = 263.5 + lapse * z);
        }
        let nu = 0.3;
        sgs_state.nu_t.fill(nu);
        // The mean strain of this snapshot: S_xz = shear/2 at every level
        // (linear profiles are exact even at the one-sided boundaries).
        sgs_state.s_mean.xz.iter_mut().for_each(|x| *x = 0.5 * shear);

        let mut acc = StatsAccumulator::new(grid.nz);
        acc.accumulate(&grid, &state, &sgs_state, &params, None);
        let p = acc.profiles(&grid, 9.81, 263.5);
        for k in 0..grid.nz {
            assert!(
                (p.sgs_uw[k] + nu * shear).abs() < 1e-14,
                "sgs_uw[{k}] = {}",
                p.sgs_uw[k]
            );
            assert!((p.sgs_wth[k] + nu * lapse / params.pr_t).abs() < 1e-14);
            assert!(p.sgs_vw[k].abs() < 1e-15);
        }
        // SMG models diagnose the SGS energy from nu_t.
        let expect_e = (nu / (params.c_k * grid.delta)).powi(2);
        assert!((p.tke_sgs[0] - expect_e).abs() < 1e-12);
    }

    #[test]
    fn stability_profile_values() {
        let nz = 12;
        let dz = 10.0;
        let theta: Vec<f64> = (0..nz).map(|k| 263.5 + 0.01 * (k as f64 * dz)).collect();
        let u: Vec<f64> = (0..nz).map(|k| 0.03 * (k as f64 * dz)).collect();
        let v = vec![0.0; nz];
        let (n2, s2, ri) = stability_profiles(&theta, &u, &v, dz, 9.81, 263.5);
        let n2_expect = 9.81 / 263.5 * 0.01;
        for k in 0..nz {
            assert!((n2[k] - n2_expect).abs() < 1e-15);
            assert!((s2[k] - 0.03 * 0.03).abs() < 1e-15);
            assert!((ri[k] - n2_expect / 9e-4).abs() < 1e-10);
        }
        // Vanishing shear masks Ri.
        let (_, _, masked) = stability_profiles(&theta, &v, &v, dz, 9.81, 263.5);
        assert!(masked.iter().all(|r| r.is_nan()));
    }

    #[test]
    fn obukhov_length_matches_the_reference_run() {
        let l = obukhov_length(0.266, -0.01024, 0.4, 9.81, 263.5);
        assert!((l - 122.978).abs() / 122.978 < 0.01, "L = {l}");
        assert_eq!(obukhov_length(0.3, 0.0, 0.4, 9.81, 263.5), f64::INFINITY);
        // Stable case: cooling gives a positive length.
        assert!(obukhov_length(0.2, -0.005, 0.4, 9.81, 263.5) > 0.0);
    }

    #[test]
    fn jet_detection_refines_below_grid_spacing() {
        let dz = 12.5;
        let nz = 32;
        let z: Vec<f64> = (0..nz).map(|k| (k as f64 + 0.5) * dz).collect();
        let speed: Vec<f64> = z
            .iter()
            .map(|&zz| 8.0 + (-(zz - 155.0) * (zz - 155.0) / 200.0).exp())
            .collect();
        let jet = llj_height(&z, &speed);
        assert!(!jet.degenerate);
        assert!((jet.z_j - 155.0).abs() < dz / 10.0, "z_j = {}", jet.z_j);

        // Monotone profile: the maximum sits on the top level.
        let ramp: Vec<f64> = z.iter().map(|&zz| zz * 0.01).collect();
        let top = llj_height(&z, &ramp);
        assert!(top.degenerate);
        assert_eq!(top.z_j, z[nz - 1]);
    }

    #[test]
    fn depth_detection_finds_the_quiet_layer() {
        let dz = 10.0;
        let nz = 40;
        let z: Vec<f64> = (0..nz).map(|k| (k as f64 + 0.5) * dz).collect();
        // Log-like layer to 150 m, a jet bump at 155 m, decay until the
        // profile goes constant above 220 m.
        let speed: Vec<f64> = z
            .iter()
            .map(|&zz| {
                if zz < 150.0 {
                    6.0 * (zz / 150.0).sqrt()
                } else if zz < 220.0 {
                    6.3 - 0.004 * (zz - 155.0)
                } else {
                    6.04
                }
            })
            .collect();
        let jet = llj_height(&z, &speed);
        let depth = boundary_layer_depth(&z, &speed, dz, jet.z_j, ZI_DEFAULT_THRESHOLD);
        assert!(depth.converged);
        assert!(
            (depth.z_i - 220.0).abs() < 1.5 * dz,
            "z_i = {} (jet at {})",
            depth.z_i,
            jet.z_j
        );

        // A strictly sheared profile never qualifies.
        let lin: Vec<f64> = z.iter().map(|&zz| 0.01 * zz).collect();
        let none = boundary_layer_depth(&z, &lin, dz, 0.0, ZI_DEFAULT_THRESHOLD);
        assert!(!none.converged);
        assert_eq!(none.z_i, z[nz - 1] + 0.5 * dz);
    }

    #[test]
    fn spectrum_of_a_single_mode() {
        let n = 32;
        let amp = 1.3;
        let mut plane = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                plane[j * n + i] = amp * (2.0 * PI * 3.0 * i as f64 / n as f64).sin();
            }
        }
        let e = horizontal_spectrum(&plane, n, n).unwrap();
        assert!((e[3] - amp * amp / 4.0).abs() < 1e-12, "e3 = {}", e[3]);
        for (k, &v) in e.iter().enumerate() {
            if k != 3 {
                assert!(v < 1e-20, "leak at bin {k}: {v}");
            }
        }
        parseval_check(&plane, &e).unwrap();
    }

    #[test]
    fn spectrum_satisfies_parseval_on_noise() {
        let n = 48;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let plane: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0) + 0.3).collect();
        let e = horizontal_spectrum(&plane, n, n).unwrap();
        parseval_check(&plane, &e).unwrap();
        // Bin zero carries the plane mean.
        let m = ops::plane_mean(&plane);
        assert!((e[0] - 0.5 * m * m).abs() < 1e-12);
    }

    #[test]
    fn spectrum_of_a_constant_plane_is_mean_only() {
        let n = 16;
        let plane = vec![2.5; n * n];
        let e = horizontal_spectrum(&plane, n, n).unwrap();
        assert!((e[0] - 0.5 * 2.5 * 2.5).abs() < 1e-12);
        assert!(e[1..].iter().sum::<f64>() < 1e-20);
        assert!(horizontal_spectrum(&plane, n, n / 2).is_err());
    }

    #[test]
    fn wind_direction_follows_the_mean_components() {
        let grid = test_grid();
        let (mut state, sgs_state, params) = inert_snapshot(&grid);
        state.u.fill(3.0);
        state.v.fill(3.0);
        let mut acc = StatsAccumulator::new(grid.nz);
        acc.accumulate(&grid, &state, &sgs_state, &params, None);
        let p = acc.profiles(&grid, 9.81, 263.5);
        for k in 0..grid.nz {
            assert!((p.direction_deg[k] - 45.0).abs() < 1e-12);
            assert!((p.speed[k] - 3.0 * SQRT_2).abs() < 1e-12);
        }
    }

    #[test]
    fn bulk_assembly_links_the_detectors() {
        let grid = Grid::new(8, 8, 40, 400.0, 400.0, 400.0, 0.0).unwrap();
        let mut acc = StatsAccumulator::new(grid.nz);
        let (mut state, sgs_state, params) = inert_snapshot(&grid);
        for k in 0..grid.nz {
            let z = grid.z_center(k);
            let s = if z < 150.0 {
                8.0 * (z / 150.0).sqrt()
            } else if z < 220.0 {
                8.3 - 0.004 * (z - 155.0)
            } else {
                8.04
            };
            state.u.level_mut(k).iter_mut().for_each(|x| *x = s);
        }
        acc.accumulate(&grid, &state, &sgs_state, &params, None);
        let p = acc.profiles(&grid, 9.81, 263.5);
        let b = bulk_quantities(
            &grid,
            &p,
            0.266,
            -0.01024,
            0.4,
            9.81,
            263.5,
            ZI_DEFAULT_THRESHOLD,
            acc.samples,
        );
        assert!(b.z_i_converged);
        assert!(b.z_j < b.z_i);
        assert!((b.zj_over_zi - b.z_j / b.z_i).abs() < 1e-15);
        assert!((b.l_mo - 123.4).abs() < 1.0);
        assert_eq!(b.samples, 1);
    }

    #[test]
    fn field_means_match_between_staggerings() {
        // The plane mean of a staggered component equals the plane mean of
        // its center interpolation, so the accumulator's mean profiles are
        // free of interpolation bias.
        let grid = test_grid();
        let mut u = ScalarField::centers(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for x in u.data.iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        let v = ScalarField::centers(&grid);
        let w = ScalarField::wfaces(&grid);
        let (uc, _, _) = ops::velocity_at_centers(&grid, &u, &v, &w);
        for k in 0..grid.nz {
            let a = ops::plane_mean(u.level(k));
            let b = ops::plane_mean(uc.level(k));
            assert!((a - b).abs() < 1e-15);
        }
    }
}
