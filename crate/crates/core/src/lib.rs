//! Large-eddy simulation of stably stratified and neutral atmospheric
//! boundary layers on a staggered Cartesian grid.
//!
//! The subgrid closure splits the resolved strain into its horizontal mean
//! and the fluctuation about it. Fluctuations are damped by a conventional
//! eddy viscosity (Smagorinsky or a prognostic SGS energy variant) scaled
//! by a partition factor, while the mean shear is handled by a separate
//! mean-field viscosity profile anchored to the Monin-Obukhov wall model.
//! This keeps the surface-layer mean gradients consistent with similarity
//! theory even on coarse grids.

pub mod cases;
pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod ops;
pub mod output;
pub mod poisson;
pub mod runner;
pub mod sgs;
pub mod wall;

pub use error::AblError;
