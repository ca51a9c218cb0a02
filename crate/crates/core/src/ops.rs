//! Discrete operators on the staggered grid: plane averages, divergence,
//! strain rate, interpolation, and vertical derivatives.
//!
//! All horizontal derivatives are periodic central differences. Vertical
//! derivatives of cell-centered quantities use second-order one-sided
//! stencils at the first and last levels, so no ghost values are needed.

use crate::grid::{Grid, MeanStrain, ScalarField, StrainField};
use rayon::prelude::*;

/// Mean of one field level, accumulated in index order so the result does
/// not depend on the thread count.
#[inline]
pub fn plane_mean(level: &[f64]) -> f64 {
    let mut s = 0.0;
    for &x in level {
        s += x;
    }
    s / level.len() as f64
}

/// Horizontal average of every level.
pub fn plane_average(f: &ScalarField) -> Vec<f64> {
    let n = f.plane_len();
    f.data.par_chunks(n).map(plane_mean).collect()
}

/// Second-order d/dz of a per-level profile at cell-center level k,
/// one-sided at the ends.
#[inline]
pub fn ddz_profile_at(vals: &[f64], k: usize, dz: f64) -> f64 {
    let n = vals.len();
    if k == 0 {
        (-3.0 * vals[0] + 4.0 * vals[1] - vals[2]) / (2.0 * dz)
    } else if k == n - 1 {
        (3.0 * vals[n - 1] - 4.0 * vals[n - 2] + vals[n - 3]) / (2.0 * dz)
    } else {
        (vals[k + 1] - vals[k - 1]) / (2.0 * dz)
    }
}

/// d/dz of a per-level profile at every cell-center level.
pub fn ddz_profile(vals: &[f64], dz: f64) -> Vec<f64> {
    (0..vals.len()).map(|k| ddz_profile_at(vals, k, dz)).collect()
}

#[inline]
pub fn wrap_up(i: usize, n: usize) -> usize {
    if i + 1 == n {
        0
    } else {
        i + 1
    }
}

#[inline]
pub fn wrap_dn(i: usize, n: usize) -> usize {
    if i == 0 {
        n - 1
    } else {
        i - 1
    }
}

/// Divergence of a staggered velocity field, at cell centers.
pub fn divergence(grid: &Grid, u: &ScalarField, v: &ScalarField, w: &ScalarField) -> ScalarField {
    let mut out = ScalarField::centers(grid);
    divergence_into(grid, u, v, w, &mut out);
    out
}

pub fn divergence_into(
    grid: &Grid,
    u: &ScalarField,
    v: &ScalarField,
    w: &ScalarField,
    out: &mut ScalarField,
) {
    let (nx, ny) = (grid.nx, grid.ny);
    let n = grid.plane_len();
    let (dxi, dyi, dzi) = (1.0 / grid.dx, 1.0 / grid.dy, 1.0 / grid.dz);
    out.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(k, lev)| {
            let ul = u.level(k);
            let vl = v.level(k);
            let wlo = w.level(k);
            let whi = w.level(k + 1);
            for j in 0..ny {
                let jp = wrap_up(j, ny);
                for i in 0..nx {
                    let ip = wrap_up(i, nx);
                    let c = j * nx + i;
                    lev[c] = (ul[j * nx + ip] - ul[c]) * dxi
                        + (vl[jp * nx + i] - vl[c]) * dyi
                        + (whi[c] - wlo[c]) * dzi;
                }
            }
        });
}

/// Strain-rate tensor at cell centers.
///
/// Off-diagonal components interpolate each velocity to the center first and
/// then difference, which keeps every component collocated for the eddy
/// viscosity and the resolved/mean splitting.
pub fn strain_rate(grid: &Grid, u: &ScalarField, v: &ScalarField, w: &ScalarField) -> StrainField {
    let mut s = StrainField::centers(grid);
    strain_rate_into(grid, u, v, w, &mut s);
    s
}

pub fn strain_rate_into(
    grid: &Grid,
    u: &ScalarField,
    v: &ScalarField,
    w: &ScalarField,
    s: &mut StrainField,
) {
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    let n = grid.plane_len();
    let (dxi, dyi, dzi) = (1.0 / grid.dx, 1.0 / grid.dy, 1.0 / grid.dz);

    // u interpolated to cell centers, for the z- and y-derivatives of u.
    let uc = |lev: &[f64], j: usize, i: usize| {
        0.5 * (lev[j * nx + i] + lev[j * nx + wrap_up(i, nx)])
    };
    let vc = |lev: &[f64], j: usize, i: usize| {
        0.5 * (lev[j * nx + i] + lev[wrap_up(j, ny) * nx + i])
    };

    s.xx.data
        .par_chunks_mut(n)
        .zip(s.yy.data.par_chunks_mut(n))
        .zip(s.zz.data.par_chunks_mut(n))
        .zip(s.xy.data.par_chunks_mut(n))
        .zip(s.xz.data.par_chunks_mut(n))
        .zip(s.yz.data.par_chunks_mut(n))
        .enumerate()
        .for_each(|(k, (((((xx, yy), zz), xy), xz), yz))| {
            let ul = u.level(k);
            let vl = v.level(k);
            let wlo = w.level(k);
            let whi = w.level(k + 1);
            // Neighbor levels for d/dz; one-sided at the two boundary levels.
            for j in 0..ny {
                let jp = wrap_up(j, ny);
                let jm = wrap_dn(j, ny);
                for i in 0..nx {
                    let ip = wrap_up(i, nx);
                    let im = wrap_dn(i, nx);
                    let c = j * nx + i;

                    xx[c] = (ul[j * nx + ip] - ul[c]) * dxi;
                    yy[c] = (vl[jp * nx + i] - vl[c]) * dyi;
                    zz[c] = (whi[c] - wlo[c]) * dzi;

                    let dudy = (uc(ul, jp, i) - uc(ul, jm, i)) * 0.5 * dyi;
                    let dvdx = (vc(vl, j, ip) - vc(vl, j, im)) * 0.5 * dxi;
                    xy[c] = 0.5 * (dudy + dvdx);

                    let dudz = if k == 0 {
                        (-3.0 * uc(u.level(0), j, i) + 4.0 * uc(u.level(1), j, i)
                            - uc(u.level(2), j, i))
                            * 0.5
                            * dzi
                    } else if k == nz - 1 {
                        (3.0 * uc(u.level(nz - 1), j, i) - 4.0 * uc(u.level(nz - 2), j, i)
                            + uc(u.level(nz - 3), j, i))
                            * 0.5
                            * dzi
                    } else {
                        (uc(u.level(k + 1), j, i) - uc(u.level(k - 1), j, i)) * 0.5 * dzi
                    };
                    let dwdx =
                        0.5 * ((wlo[j * nx + ip] + whi[j * nx + ip]) - (wlo[j * nx + im] + whi[j * nx + im]))
                            * 0.5
                            * dxi;
                    xz[c] = 0.5 * (dudz + dwdx);

                    let dvdz = if k == 0 {
                        (-3.0 * vc(v.level(0), j, i) + 4.0 * vc(v.level(1), j, i)
                            - vc(v.level(2), j, i))
                            * 0.5
                            * dzi
                    } else if k == nz - 1 {
                        (3.0 * vc(v.level(nz - 1), j, i) - 4.0 * vc(v.level(nz - 2), j, i)
                            + vc(v.level(nz - 3), j, i))
                            * 0.5
                            * dzi
                    } else {
                        (vc(v.level(k + 1), j, i) - vc(v.level(k - 1), j, i)) * 0.5 * dzi
                    };
                    let dwdy =
                        0.5 * ((wlo[jp * nx + i] + whi[jp * nx + i]) - (wlo[jm * nx + i] + whi[jm * nx + i]))
                            * 0.5
                            * dyi;
                    yz[c] = 0.5 * (dvdz + dwdy);
                }
            }
        });
}

/// Per-level mean of each strain component.
pub fn mean_strain(s: &StrainField) -> MeanStrain {
    MeanStrain {
        xx: plane_average(&s.xx),
        yy: plane_average(&s.yy),
        zz: plane_average(&s.zz),
        xy: plane_average(&s.xy),
        xz: plane_average(&s.xz),
        yz: plane_average(&s.yz),
    }
}

/// Velocity interpolated to cell centers (u and v from their face pairs,
/// w from the two bounding z-faces).
pub fn velocity_at_centers(
    grid: &Grid,
    u: &ScalarField,
    v: &ScalarField,
    w: &ScalarField,
) -> (ScalarField, ScalarField, ScalarField) {
    let (nx, ny) = (grid.nx, grid.ny);
    let n = grid.plane_len();
    let mut uc = ScalarField::centers(grid);
    let mut vcf = ScalarField::centers(grid);
    let mut wc = ScalarField::centers(grid);
    uc.data
        .par_chunks_mut(n)
        .zip(vcf.data.par_chunks_mut(n))
        .zip(wc.data.par_chunks_mut(n))
        .enumerate()
        .for_each(|(k, ((ucl, vcl), wcl))| {
            let ul = u.level(k);
            let vl = v.level(k);
            let wlo = w.level(k);
            let whi = w.level(k + 1);
            for j in 0..ny {
                let jp = wrap_up(j, ny);
                for i in 0..nx {
                    let ip = wrap_up(i, nx);
                    let c = j * nx + i;
                    ucl[c] = 0.5 * (ul[c] + ul[j * nx + ip]);
                    vcl[c] = 0.5 * (vl[c] + vl[jp * nx + i]);
                    wcl[c] = 0.5 * (wlo[c] + whi[c]);
                }
            }
        });
    (uc, vcf, wc)
}

/// Largest per-cell advective frequency |u|/dx + |v|/dy + |w|/dz, used for
/// the CFL-limited time step.
pub fn max_advective_rate(grid: &Grid, u: &ScalarField, v: &ScalarField, w: &ScalarField) -> f64 {
    let (nx, ny) = (grid.nx, grid.ny);
    let (dxi, dyi, dzi) = (1.0 / grid.dx, 1.0 / grid.dy, 1.0 / grid.dz);
    (0..grid.nz)
        .into_par_iter()
        .map(|k| {
            let ul = u.level(k);
            let vl = v.level(k);
            let wlo = w.level(k);
            let whi = w.level(k + 1);
            let mut m = 0.0_f64;
            for j in 0..ny {
                let jp = wrap_up(j, ny);
                for i in 0..nx {
                    let ip = wrap_up(i, nx);
                    let c = j * nx + i;
                    let au = 0.5 * (ul[c] + ul[j * nx + ip]).abs() * dxi;
                    let av = 0.5 * (vl[c] + vl[jp * nx + i]).abs() * dyi;
                    let aw = 0.5 * (wlo[c] + whi[c]).abs() * dzi;
                    m = m.max(au + av + aw);
                }
            }
            m
        })
        .reduce(|| 0.0, f64::max)
}

/// Boundary condition on a horizontal z-face for scalar diffusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceBc {
    /// Prescribed diffusive flux K dq/dz through the face (plane-uniform).
    Flux(f64),
    /// Prescribed gradient dq/dz; the flux uses the local diffusivity of
    /// the adjacent cell.
    Gradient(f64),
}

/// Flux-form advection of a cell-centered scalar with face-interpolated
/// values, div(u q). Returns A ~ u.grad(q) for a divergence-free velocity;
/// the caller subtracts it from the tendency. Vertical fluxes vanish on the
/// bottom and top faces where w = 0, so the column integral of q is
/// conserved exactly under pure advection.
pub fn scalar_advection(
    grid: &Grid,
    u: &ScalarField,
    v: &ScalarField,
    w: &ScalarField,
    q: &ScalarField,
) -> ScalarField {
    let mut out = ScalarField::centers(grid);
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    let n = grid.plane_len();
    let (dxi, dyi, dzi) = (1.0 / grid.dx, 1.0 / grid.dy, 1.0 / grid.dz);
    out.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(k, lev)| {
            let ul = u.level(k);
            let vl = v.level(k);
            let wlo = w.level(k);
            let whi = w.level(k + 1);
            let ql = q.level(k);
            for j in 0..ny {
                let jp = wrap_up(j, ny);
                let jm = wrap_dn(j, ny);
                for i in 0..nx {
                    let ip = wrap_up(i, nx);
                    let im = wrap_dn(i, nx);
                    let c = j * nx + i;
                    let ce = j * nx + ip;
                    let cw = j * nx + im;
                    let cn = jp * nx + i;
                    let cs = jm * nx + i;

                    // Divergence form with face-interpolated q.
                    let fx_hi = ul[ce] * 0.5 * (ql[c] + ql[ce]);
                    let fx_lo = ul[c] * 0.5 * (ql[cw] + ql[c]);
                    let fy_hi = vl[cn] * 0.5 * (ql[c] + ql[cn]);
                    let fy_lo = vl[c] * 0.5 * (ql[cs] + ql[c]);
                    let fz_hi = if k + 1 < nz {
                        whi[c] * 0.5 * (ql[c] + q.level(k + 1)[c])
                    } else {
                        0.0
                    };
                    let fz_lo = if k > 0 {
                        wlo[c] * 0.5 * (q.level(k - 1)[c] + ql[c])
                    } else {
                        0.0
                    };
                    lev[c] =
                        (fx_hi - fx_lo) * dxi + (fy_hi - fy_lo) * dyi + (fz_hi - fz_lo) * dzi;
                }
            }
        });
    out
}

/// Conservative diffusion of a cell-centered scalar with a per-cell
/// diffusivity, flux form in all three directions. The bottom and top
/// z-face fluxes are replaced by the prescribed boundary conditions.
pub fn scalar_diffusion(
    grid: &Grid,
    q: &ScalarField,
    kdiff: &ScalarField,
    bottom: FaceBc,
    top: FaceBc,
) -> ScalarField {
    let mut out = ScalarField::centers(grid);
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    let n = grid.plane_len();
    let (dxi, dyi, dzi) = (1.0 / grid.dx, 1.0 / grid.dy, 1.0 / grid.dz);
    out.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(k, lev)| {
            let ql = q.level(k);
            let kl = kdiff.level(k);
            for j in 0..ny {
                let jp = wrap_up(j, ny);
                let jm = wrap_dn(j, ny);
                for i in 0..nx {
                    let ip = wrap_up(i, nx);
                    let im = wrap_dn(i, nx);
                    let c = j * nx + i;
                    let ce = j * nx + ip;
                    let cw = j * nx + im;
                    let cn = jp * nx + i;
                    let cs = jm * nx + i;

                    let fx_hi = 0.5 * (kl[c] + kl[ce]) * (ql[ce] - ql[c]) * dxi;
                    let fx_lo = 0.5 * (kl[cw] + kl[c]) * (ql[c] - ql[cw]) * dxi;
                    let fy_hi = 0.5 * (kl[c] + kl[cn]) * (ql[cn] - ql[c]) * dyi;
                    let fy_lo = 0.5 * (kl[cs] + kl[c]) * (ql[c] - ql[cs]) * dyi;

                    let fz_hi = if k + 1 < nz {
                        let qh = q.level(k + 1)[c];
                        let kh = kdiff.level(k + 1)[c];
                        0.5 * (kl[c] + kh) * (qh - ql[c]) * dzi
                    } else {
                        match top {
                            FaceBc::Flux(f) => f,
                            FaceBc::Gradient(g) => kl[c] * g,
                        }
                    };
                    let fz_lo = if k > 0 {
                        let qd = q.level(k - 1)[c];
                        let kd = kdiff.level(k - 1)[c];
                        0.5 * (kd + kl[c]) * (ql[c] - qd) * dzi
                    } else {
                        match bottom {
                            FaceBc::Flux(f) => f,
                            FaceBc::Gradient(g) => kl[c] * g,
                        }
                    };

                    lev[c] = (fx_hi - fx_lo) * dxi + (fy_hi - fy_lo) * dyi + (fz_hi - fz_lo) * dzi;
                }
            }
        });
    out
}

/// Subtract the gradient of a cell-centered potential from the staggered
/// velocity. The w component is only corrected on interior faces; the
/// bottom and top faces stay fixed (impermeable boundaries), which matches
/// the Neumann condition built into the Poisson solve.
pub fn subtract_gradient(
    grid: &Grid,
    phi: &ScalarField,
    u: &mut ScalarField,
    v: &mut ScalarField,
    w: &mut ScalarField,
) {
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    let n = grid.plane_len();
    let (dxi, dyi, dzi) = (1.0 / grid.dx, 1.0 / grid.dy, 1.0 / grid.dz);
    u.data
        .par_chunks_mut(n)
        .zip(v.data.par_chunks_mut(n))
        .enumerate()
        .for_each(|(k, (ul, vl))| {
            let pl = phi.level(k);
            for j in 0..ny {
                let jm = wrap_dn(j, ny);
                for i in 0..nx {
                    let im = wrap_dn(i, nx);
                    let c = j * nx + i;
                    ul[c] -= (pl[c] - pl[j * nx + im]) * dxi;
                    vl[c] -= (pl[c] - pl[jm * nx + i]) * dyi;
                }
            }
        });
    w.data
        .par_chunks_mut(n)
        .enumerate()
        .skip(1)
        .filter(|(k, _)| *k < nz)
        .for_each(|(k, wl)| {
            let plo = phi.level(k - 1);
            let phi_l = phi.level(k);
            for c in 0..n {
                wl[c] -= (phi_l[c] - plo[c]) * dzi;
            }
        });
}
