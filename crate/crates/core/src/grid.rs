//! Structured staggered grid and the scalar field container.
//!
//! The mesh is uniform and periodic in x and y, bounded in z. Velocity
//! components live on their normal faces (MAC arrangement): u on x-faces,
//! v on y-faces, w on z-faces; scalars sit at cell centers. The lowest
//! z-face is at `z_bottom`, which is the first resolved level, not the
//! ground: the wall model carries the surface layer below it.

use crate::error::AblError;
use serde::{Deserialize, Serialize};

/// Uniform Cartesian grid, periodic in x and y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    /// Height of the lowest resolved z-face above the ground.
    pub z_bottom: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    /// Filter width, the geometric mean of the cell dimensions.
    pub delta: f64,
}

impl Grid {
    pub fn new(
        nx: usize,
        ny: usize,
        nz: usize,
        lx: f64,
        ly: f64,
        lz: f64,
        z_bottom: f64,
    ) -> Result<Grid, AblError> {
        if nx < 4 || ny < 4 || nz < 4 {
            return Err(AblError::config(
                "grid",
                format!("need at least 4 cells per direction, got {nx}x{ny}x{nz}"),
            ));
        }
        if !(lx > 0.0 && ly > 0.0 && lz > 0.0) {
            return Err(AblError::config("grid", "domain extents must be positive"));
        }
        if !(z_bottom >= 0.0 && z_bottom < lz) {
            return Err(AblError::config(
                "grid",
                format!("z_bottom {z_bottom} must lie in [0, lz)"),
            ));
        }
        let dx = lx / nx as f64;
        let dy = ly / ny as f64;
        let dz = (lz - z_bottom) / nz as f64;
        Ok(Grid {
            nx,
            ny,
            nz,
            lx,
            ly,
            lz,
            z_bottom,
            dx,
            dy,
            dz,
            delta: (dx * dy * dz).cbrt(),
        })
    }

    /// Height of the cell-center level k.
    #[inline]
    pub fn z_center(&self, k: usize) -> f64 {
        self.z_bottom + (k as f64 + 0.5) * self.dz
    }

    /// Height of the z-face level k (k in 0..=nz).
    #[inline]
    pub fn z_face(&self, k: usize) -> f64 {
        self.z_bottom + k as f64 * self.dz
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.nx * self.ny
    }
}

/// Vertical placement of a scalar field's levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Staggering {
    /// nz levels at cell centers. Also used for the horizontally staggered
    /// u and v, whose array shape matches the centers.
    Center,
    /// nz+1 levels on z-faces (the w component).
    WFace,
}

/// Dense 3D scalar storage, level-major: index (k*ny + j)*nx + i.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub data: Vec<f64>,
    pub nx: usize,
    pub ny: usize,
    /// Number of vertical levels (nz for centers, nz+1 for w-faces).
    pub nl: usize,
    pub stag: Staggering,
}

impl ScalarField {
    pub fn centers(grid: &Grid) -> ScalarField {
        ScalarField {
            data: vec![0.0; grid.nx * grid.ny * grid.nz],
            nx: grid.nx,
            ny: grid.ny,
            nl: grid.nz,
            stag: Staggering::Center,
        }
    }

    pub fn wfaces(grid: &Grid) -> ScalarField {
        ScalarField {
            data: vec![0.0; grid.nx * grid.ny * (grid.nz + 1)],
            nx: grid.nx,
            ny: grid.ny,
            nl: grid.nz + 1,
            stag: Staggering::WFace,
        }
    }

    #[inline]
    pub fn idx(&self, k: usize, j: usize, i: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    #[inline]
    pub fn get(&self, k: usize, j: usize, i: usize) -> f64 {
        self.data[(k * self.ny + j) * self.nx + i]
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.nx * self.ny
    }

    /// Borrow one horizontal level.
    #[inline]
    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// The six independent components of the strain-rate tensor, evaluated at
/// cell centers.
#[derive(Debug, Clone)]
pub struct StrainField {
    pub xx: ScalarField,
    pub yy: ScalarField,
    pub zz: ScalarField,
    pub xy: ScalarField,
    pub xz: ScalarField,
    pub yz: ScalarField,
}

impl StrainField {
    pub fn centers(grid: &Grid) -> StrainField {
        StrainField {
            xx: ScalarField::centers(grid),
            yy: ScalarField::centers(grid),
            zz: ScalarField::centers(grid),
            xy: ScalarField::centers(grid),
            xz: ScalarField::centers(grid),
            yz: ScalarField::centers(grid),
        }
    }
}

/// Per-level values of the six mean strain components, in the same order
/// as the `StrainField` members.
#[derive(Debug, Clone, Default)]
pub struct MeanStrain {
    pub xx: Vec<f64>,
    pub yy: Vec<f64>,
    pub zz: Vec<f64>,
    pub xy: Vec<f64>,
    pub xz: Vec<f64>,
    pub yz: Vec<f64>,
}

impl MeanStrain {
    pub fn zeros(nl: usize) -> MeanStrain {
        MeanStrain {
            xx: vec![0.0; nl],
            yy: vec![0.0; nl],
            zz: vec![0.0; nl],
            xy: vec![0.0; nl],
            xz: vec![0.0; nl],
            yz: vec![0.0; nl],
        }
    }

    /// Invariant sqrt(2 S_ij S_ij) at level k.
    pub fn magnitude(&self, k: usize) -> f64 {
        let sq = self.xx[k] * self.xx[k] + self.yy[k] * self.yy[k] + self.zz[k] * self.zz[k];
        let cross =
            self.xy[k] * self.xy[k] + self.xz[k] * self.xz[k] + self.yz[k] * self.yz[k];
        (2.0 * (sq + 2.0 * cross)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spacing_and_levels() {
        let g = Grid::new(8, 8, 16, 400.0, 400.0, 400.0, 0.2).unwrap();
        assert!((g.dx - 50.0).abs() < 1e-12);
        assert!((g.dz - (400.0 - 0.2) / 16.0).abs() < 1e-12);
        assert!((g.z_face(0) - 0.2).abs() < 1e-12);
        assert!((g.z_center(0) - (0.2 + g.dz * 0.5)).abs() < 1e-12);
        assert!((g.z_face(16) - 400.0).abs() < 1e-12);
        let d = (g.dx * g.dy * g.dz).cbrt();
        assert!((g.delta - d).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid::new(2, 8, 8, 1.0, 1.0, 1.0, 0.0).is_err());
        assert!(Grid::new(8, 8, 8, -1.0, 1.0, 1.0, 0.0).is_err());
        assert!(Grid::new(8, 8, 8, 1.0, 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn field_indexing_is_level_major() {
        let g = Grid::new(4, 5, 6, 1.0, 1.0, 1.0, 0.0).unwrap();
        let mut f = ScalarField::centers(&g);
        assert_eq!(f.data.len(), 4 * 5 * 6);
        let id = f.idx(2, 3, 1);
        f.data[id] = 7.0;
        assert_eq!(f.level(2)[3 * 4 + 1], 7.0);
        let w = ScalarField::wfaces(&g);
        assert_eq!(w.nl, 7);
    }

    #[test]
    fn mean_strain_magnitude_pure_shear() {
        // A single shear component S_xz = s gives |S| = sqrt(4 s^2) = 2 s.
        let mut m = MeanStrain::zeros(1);
        m.xz[0] = 0.25;
        assert!((m.magnitude(0) - 0.5).abs() < 1e-15);
    }
}
