//! Initial states for the two benchmark cases.
//!
//! The stable case starts from a uniform geostrophic wind over a two-layer
//! temperature profile with a weak seeded perturbation near the ground; the
//! neutral case starts from a rough-wall logarithmic wind with seeded,
//! projected velocity noise in the lower part of the domain. Both are
//! bit-reproducible for a fixed seed and grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{Simulation, State};
use crate::error::AblError;

/// Depth of the initial isothermal layer (m).
const GABLS_MIXED_TOP: f64 = 100.0;
/// Lapse rate of the capping inversion (K/m).
const GABLS_LAPSE: f64 = 0.01;
/// Initial temperature of the mixed layer (K).
const GABLS_THETA: f64 = 265.0;
/// Temperature perturbations are applied below this height (m).
const GABLS_PERTURB_TOP: f64 = 50.0;
const GABLS_PERTURB_AMP: f64 = 0.1;
/// SGS energy ramp depth (m) and surface value (m^2/s^2).
const GABLS_E_DEPTH: f64 = 250.0;
const GABLS_E_SURFACE: f64 = 0.4;
const GABLS_E_FLOOR: f64 = 1e-6;

/// Velocity noise is applied below this height (m) in the neutral case.
const NEUTRAL_PERTURB_TOP: f64 = 200.0;
const NEUTRAL_PERTURB_FRAC: f64 = 0.1;

/// The stable-case initial profile: uniform geostrophic wind, an
/// isothermal layer capped by a constant lapse rate, seeded temperature
/// noise near the ground, and a decaying SGS energy ramp. The velocity
/// carries no perturbation at all.
pub fn init_gabls(sim: &Simulation, seed: u64) -> State {
    let grid = &sim.grid;
    let mut state = State::new(grid);
    state.u.fill(sim.phys.u_g);
    state.v.fill(sim.phys.v_g);

    for k in 0..grid.nz {
        let z = grid.z_center(k);
        let th = if z <= GABLS_MIXED_TOP {
            GABLS_THETA
        } else {
            GABLS_THETA + GABLS_LAPSE * (z - GABLS_MIXED_TOP)
        };
        state.theta.level_mut(k).iter_mut().for_each(|x| *x = th);

        let e = if z < GABLS_E_DEPTH {
            let r = 1.0 - z / GABLS_E_DEPTH;
            (GABLS_E_SURFACE * r * r * r).max(GABLS_E_FLOOR)
        } else {
            GABLS_E_FLOOR
        };
        state.e.level_mut(k).iter_mut().for_each(|x| *x = e);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..grid.nz {
        if grid.z_center(k) > GABLS_PERTURB_TOP {
            break;
        }
        for x in state.theta.level_mut(k).iter_mut() {
            *x += rng.gen_range(-GABLS_PERTURB_AMP..GABLS_PERTURB_AMP);
        }
    }
    state
}

/// The neutral-case initial profile: the rough-wall log law evaluated at
/// cell centers, with uniform temperature and seeded velocity noise of
/// ten percent relative amplitude below 200 m. The noisy field is
/// projected so the returned state is divergence-free.
pub fn init_neutral(sim: &Simulation, u_tau: f64, seed: u64) -> Result<State, AblError> {
    let grid = &sim.grid;
    let kappa = sim.consts.kappa;
    let z0 = sim.z0;
    let mut state = State::new(grid);
    state.theta.fill(sim.phys.theta0);

    let log_wind = |z: f64| u_tau / kappa * ((z + z0) / z0).ln();
    for k in 0..grid.nz {
        let val = log_wind(grid.z_center(k));
        state.u.level_mut(k).iter_mut().for_each(|x| *x = val);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..grid.nz {
        let z = grid.z_center(k);
        if z > NEUTRAL_PERTURB_TOP {
            break;
        }
        let amp = NEUTRAL_PERTURB_FRAC * log_wind(z);
        for x in state.u.level_mut(k).iter_mut() {
            *x += amp * rng.gen_range(-1.0..1.0);
        }
        for x in state.v.level_mut(k).iter_mut() {
            *x = amp * rng.gen_range(-1.0..1.0);
        }
    }
    for k in 1..grid.nz {
        let z = grid.z_face(k);
        if z > NEUTRAL_PERTURB_TOP {
            break;
        }
        let amp = NEUTRAL_PERTURB_FRAC * log_wind(z);
        for x in state.w.level_mut(k).iter_mut() {
            *x = amp * rng.gen_range(-1.0..1.0);
        }
    }

    sim.project(&mut state.u, &mut state.v, &mut state.w)?;
    Ok(state)
}
