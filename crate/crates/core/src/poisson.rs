//! Pressure Poisson solver for the projection step.
//!
//! Fourier transforms in the two periodic directions reduce the problem to
//! one tridiagonal system in z per horizontal mode, closed with Neumann
//! conditions at the impenetrable bottom and top. The horizontal modes use
//! modified wavenumbers matching the discrete second difference, so the
//! projection is exact for the staggered divergence/gradient pair rather
//! than merely spectrally accurate.

use crate::error::AblError;
use crate::grid::{Grid, ScalarField};
use crate::ops;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct PoissonPlan {
    nx: usize,
    ny: usize,
    nz: usize,
    dz2i: f64,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    /// Modified wavenumber -4 sin^2(pi k/n)/h^2 per x index.
    lambda_x: Vec<f64>,
    lambda_y: Vec<f64>,
    grid: Grid,
}

impl PoissonPlan {
    pub fn new(grid: &Grid) -> PoissonPlan {
        let mut planner = FftPlanner::new();
        let modified = |n: usize, h: f64| -> Vec<f64> {
            (0..n)
                .map(|k| {
                    let s = (std::f64::consts::PI * k as f64 / n as f64).sin();
                    -4.0 * s * s / (h * h)
                })
                .collect()
        };
        PoissonPlan {
            nx: grid.nx,
            ny: grid.ny,
            nz: grid.nz,
            dz2i: 1.0 / (grid.dz * grid.dz),
            fwd_x: planner.plan_fft_forward(grid.nx),
            inv_x: planner.plan_fft_inverse(grid.nx),
            fwd_y: planner.plan_fft_forward(grid.ny),
            inv_y: planner.plan_fft_inverse(grid.ny),
            lambda_x: modified(grid.nx, grid.dx),
            lambda_y: modified(grid.ny, grid.dy),
            grid: *grid,
        }
    }

    /// Discrete Laplacian consistent with the solver: periodic second
    /// differences in x and y, Neumann (zero-gradient ghost) in z. This is
    /// exactly the operator formed by taking the staggered divergence of
    /// the staggered gradient with zero bottom/top gradient.
    pub fn apply_laplacian(&self, p: &ScalarField) -> ScalarField {
        let g = &self.grid;
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        let n = nx * ny;
        let (dx2i, dy2i, dz2i) = (1.0 / (g.dx * g.dx), 1.0 / (g.dy * g.dy), self.dz2i);
        let mut out = ScalarField::centers(g);
        out.data
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(k, lev)| {
                let pl = p.level(k);
                for j in 0..ny {
                    let jp = ops::wrap_up(j, ny);
                    let jm = ops::wrap_dn(j, ny);
                    for i in 0..nx {
                        let ip = ops::wrap_up(i, nx);
                        let im = ops::wrap_dn(i, nx);
                        let c = j * nx + i;
                        let mut acc = (pl[j * nx + ip] - 2.0 * pl[c] + pl[j * nx + im]) * dx2i
                            + (pl[jp * nx + i] - 2.0 * pl[c] + pl[jm * nx + i]) * dy2i;
                        if k > 0 {
                            acc += (p.level(k - 1)[c] - pl[c]) * dz2i;
                        }
                        if k + 1 < nz {
                            acc += (p.level(k + 1)[c] - pl[c]) * dz2i;
                        }
                        lev[c] = acc;
                    }
                }
            });
        out
    }

    /// Solve lap(p) = rhs and return p in the zero-mean gauge.
    pub fn solve(&self, rhs: &ScalarField) -> Result<ScalarField, AblError> {
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        let n = nx * ny;

        // Neumann compatibility: the volume integral of rhs must vanish.
        let max_abs = rhs.max_abs();
        let mean = {
            let mut acc = 0.0;
            for k in 0..nz {
                acc += ops::plane_mean(rhs.level(k));
            }
            acc / nz as f64
        };
        let tol = 1e-10 * max_abs;
        if mean.abs() > tol {
            return Err(AblError::IncompatibleRhs {
                mean: mean.abs(),
                tol,
            });
        }

        // Forward transform each level: rows in x, then columns in y.
        let mut spec = vec![Complex::new(0.0, 0.0); nz * n];
        spec.par_chunks_mut(n)
            .enumerate()
            .for_each(|(k, slab)| {
                let rl = rhs.level(k);
                for (s, &r) in slab.iter_mut().zip(rl) {
                    *s = Complex::new(r, 0.0);
                }
                for j in 0..ny {
                    self.fwd_x.process(&mut slab[j * nx..(j + 1) * nx]);
                }
                let mut col = vec![Complex::new(0.0, 0.0); ny];
                for i in 0..nx {
                    for j in 0..ny {
                        col[j] = slab[j * nx + i];
                    }
                    self.fwd_y.process(&mut col);
                    for j in 0..ny {
                        slab[j * nx + i] = col[j];
                    }
                }
            });

        // One tridiagonal solve in z per horizontal mode. The zero mode is
        // singular under pure Neumann conditions; pin its first value and
        // restore the gauge afterwards.
        let spec_cell = SpecCell(spec.as_mut_ptr());
        (0..ny).into_par_iter().for_each(|j| {
            let base = spec_cell.get();
            let mut diag = vec![0.0; nz];
            let mut cprime = vec![Complex::new(0.0, 0.0); nz];
            let mut dprime = vec![Complex::new(0.0, 0.0); nz];
            for i in 0..nx {
                let lam = self.lambda_x[i] + self.lambda_y[j];
                let pinned = i == 0 && j == 0;
                // Neumann ends drop one neighbor, so the diagonal there
                // loses one dz2i relative to the interior rows.
                for (k, d) in diag.iter_mut().enumerate() {
                    *d = lam
                        - if k == 0 || k == nz - 1 {
                            self.dz2i
                        } else {
                            2.0 * self.dz2i
                        };
                }

                let at = |k: usize| (k * ny + j) * nx + i;
                // Thomas forward sweep.
                let (b0, c0, r0) = if pinned {
                    (1.0, 0.0, Complex::new(0.0, 0.0))
                } else {
                    (diag[0], self.dz2i, unsafe { *base.add(at(0)) })
                };
                cprime[0] = Complex::new(c0 / b0, 0.0);
                dprime[0] = r0 / b0;
                for k in 1..nz {
                    let a = self.dz2i;
                    let b = diag[k];
                    let c = if k + 1 < nz { self.dz2i } else { 0.0 };
                    let denom = Complex::new(b, 0.0) - cprime[k - 1] * a;
                    cprime[k] = Complex::new(c, 0.0) / denom;
                    let r = unsafe { *base.add(at(k)) };
                    dprime[k] = (r - dprime[k - 1] * a) / denom;
                }
                // Back substitution.
                let mut prev = dprime[nz - 1];
                unsafe { *base.add(at(nz - 1)) = prev };
                for k in (0..nz - 1).rev() {
                    prev = dprime[k] - cprime[k] * prev;
                    unsafe { *base.add(at(k)) = prev };
                }
            }
        });
        drop(spec_cell);

        // Inverse transforms and normalization.
        let mut out = ScalarField::centers(&self.grid);
        let norm = 1.0 / (nx as f64 * ny as f64);
        out.data
            .par_chunks_mut(n)
            .zip(spec.par_chunks_mut(n))
            .for_each(|(lev, slab)| {
                let mut col = vec![Complex::new(0.0, 0.0); ny];
                for i in 0..nx {
                    for j in 0..ny {
                        col[j] = slab[j * nx + i];
                    }
                    self.inv_y.process(&mut col);
                    for j in 0..ny {
                        slab[j * nx + i] = col[j];
                    }
                }
                for j in 0..ny {
                    self.inv_x.process(&mut slab[j * nx..(j + 1) * nx]);
                }
                for (o, s) in lev.iter_mut().zip(slab.iter()) {
                    *o = s.re * norm;
                }
            });

        // Zero-mean gauge.
        let mut gmean = 0.0;
        for k in 0..nz {
            gmean += ops::plane_mean(out.level(k));
        }
        gmean /= nz as f64;
        out.data.par_iter_mut().for_each(|x| *x -= gmean);

        Ok(out)
    }
}

/// Shared mutable base pointer for the mode-parallel tridiagonal sweep.
/// Safety: every (j, i) column writes a disjoint index set {(k, j, i)}.
struct SpecCell(*mut Complex<f64>);

impl SpecCell {
    fn get(&self) -> *mut Complex<f64> {
        self.0
    }
}

unsafe impl Sync for SpecCell {}
unsafe impl Send for SpecCell {}
