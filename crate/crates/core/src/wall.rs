//! Monin-Obukhov wall model for the rough lower boundary.
//!
//! The first resolved level z1 sits inside the surface layer. Between the
//! ground and z1 the mean profiles are assumed to follow the stable-limit
//! similarity laws
//!
//!   U(z1)          = (u_tau / kappa) * (ln(z1/z0) + beta_m * z1 / L)
//!   theta(z1)-th_b = (theta_tau / kappa) * (ln(z1/z0) + beta_h * z1 / L)
//!
//! with L = u_tau^2 theta0 / (kappa g theta_tau) the Obukhov length. Given
//! the plane-averaged wind speed and temperature difference at z1, the two
//! laws form a closed system for (u_tau, theta_tau). Eliminating L turns it
//! into a single quadratic whose physical root is selected analytically, so
//! the solve is exact and iteration free.

use crate::error::AblError;
use serde::{Deserialize, Serialize};

/// Similarity constants of the stable surface layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConstants {
    pub kappa: f64,
    pub beta_m: f64,
    pub beta_h: f64,
}

impl Default for SimilarityConstants {
    fn default() -> Self {
        SimilarityConstants {
            kappa: 0.4,
            beta_m: 4.8,
            beta_h: 7.2,
        }
    }
}

impl SimilarityConstants {
    /// Stability function for momentum, phi_m = 1 + beta_m z/L. Unstable
    /// arguments are clamped to the neutral value; the closure is built for
    /// the stable and neutral regimes only.
    #[inline]
    pub fn phi_m(&self, z_over_l: f64) -> f64 {
        1.0 + self.beta_m * z_over_l.max(0.0)
    }

    /// Stability function for heat, phi_h = 1 + beta_h z/L.
    #[inline]
    pub fn phi_h(&self, z_over_l: f64) -> f64 {
        1.0 + self.beta_h * z_over_l.max(0.0)
    }

    /// Largest bulk Richardson number g z1 (theta(z1)-th_b) / (theta0 U^2)
    /// for which the coupled laws still admit a positive friction velocity.
    #[inline]
    pub fn max_bulk_richardson(&self) -> f64 {
        self.beta_h / (self.beta_m * self.beta_m)
    }
}

/// Surface-layer scales returned by the wall solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallScales {
    /// Friction velocity (m/s).
    pub u_tau: f64,
    /// Surface temperature scale (K); positive under stable stratification.
    pub theta_tau: f64,
    /// Obukhov length (m); +inf in the neutral limit.
    pub l_mo: f64,
    /// Kinematic surface heat flux -u_tau * theta_tau (K m/s); negative
    /// when the surface cools the flow.
    pub qstar: f64,
    /// Bulk Richardson number of the inputs.
    pub ri_b: f64,
}

/// Solve the coupled similarity laws for the friction scales.
///
/// * `u_mean` - plane-averaged tangential wind speed at the sampling height
/// * `delta_theta` - plane-averaged theta(z1) minus the surface temperature (K)
/// * `z1` - sampling height above the ground (m)
/// * `z0` - roughness length (m)
///
/// A non-positive `delta_theta` falls back to the neutral log law, which the
/// stable branch approaches continuously as delta_theta -> 0. Stratification
/// stronger than `max_bulk_richardson` admits no positive friction velocity
/// and is reported as an error rather than silently laminarized.
pub fn solve_friction_scales(
    u_mean: f64,
    delta_theta: f64,
    z1: f64,
    z0: f64,
    g: f64,
    theta0: f64,
    consts: &SimilarityConstants,
) -> Result<WallScales, AblError> {
    if !(u_mean.is_finite() && delta_theta.is_finite()) {
        return Err(AblError::Numerics(format!(
            "wall solve got non-finite inputs: U={u_mean}, dtheta={delta_theta}"
        )));
    }
    if z1 <= z0 {
        return Err(AblError::config(
            "wall",
            format!("sampling height {z1} must exceed the roughness length {z0}"),
        ));
    }
    if u_mean <= 0.0 {
        return Err(AblError::NoStableSolution(format!(
            "vanishing mean wind (U = {u_mean}) at the sampling height"
        )));
    }

    let kappa = consts.kappa;
    let log_ratio = (z1 / z0).ln();
    let dtheta_tilde = delta_theta / theta0;

    // Neutral branch: u_tau = kappa U / ln(z1/z0). Scaled temperature laws
    // with beta corrections vanish; a slightly negative delta_theta (weak
    // transient instability) keeps the neutral momentum law and a passive
    // scalar flux so the solve stays defined during spin-up.
    if dtheta_tilde <= 0.0 {
        let u_tau = kappa * u_mean / log_ratio;
        let theta_tau_tilde = kappa * dtheta_tilde / log_ratio;
        let theta_tau = theta_tau_tilde * theta0;
        let l_mo = if theta_tau_tilde == 0.0 {
            f64::INFINITY
        } else {
            u_tau * u_tau / (kappa * g * theta_tau_tilde)
        };
        return Ok(WallScales {
            u_tau,
            theta_tau,
            l_mo,
            qstar: -u_tau * theta_tau,
            ri_b: g * z1 * dtheta_tilde / (u_mean * u_mean),
        });
    }

    let ri_b = g * z1 * dtheta_tilde / (u_mean * u_mean);
    let ri_max = consts.max_bulk_richardson();
    if ri_b >= ri_max {
        return Err(AblError::NoStableSolution(format!(
            "bulk Richardson number {ri_b:.4} at or above the critical value {ri_max:.4}"
        )));
    }

    // Substitute x = u_tau ln(z1/z0), A = kappa U, r = beta_h/beta_m.
    // Eliminating theta_tau between the two laws yields
    //   (r-1) x^2 + A (1-2r) x + A^2 (r - beta_m Ri_b) = 0,
    // which has exactly one root in (0, A); the other root is spurious
    // (it would require theta_tau < 0 under stable stratification).
    let a = kappa * u_mean;
    let r = consts.beta_h / consts.beta_m;
    let x = if (r - 1.0).abs() < 1e-12 {
        // Equal-beta degenerate case: the quadratic collapses to linear.
        a * (1.0 - consts.beta_m * ri_b)
    } else {
        let disc = 1.0 + 4.0 * ri_b * (consts.beta_h - consts.beta_m);
        if disc < 0.0 {
            return Err(AblError::NoStableSolution(format!(
                "negative discriminant {disc:.4e} (beta_h < beta_m with Ri_b = {ri_b:.4})"
            )));
        }
        a * ((2.0 * r - 1.0) - disc.sqrt()) / (2.0 * (r - 1.0))
    };

    if !(x > 0.0) {
        return Err(AblError::NoStableSolution(format!(
            "friction velocity root collapsed to {x:.4e} at Ri_b = {ri_b:.4}"
        )));
    }

    let u_tau = x / log_ratio;
    // Back-substitute into the momentum law for the temperature scale:
    // theta_tau_tilde = u_tau (kappa U - x) / (beta_m kappa g z1).
    let theta_tau_tilde = u_tau * (a - x) / (consts.beta_m * kappa * g * z1);
    let theta_tau = theta_tau_tilde * theta0;
    let l_mo = u_tau * u_tau / (kappa * g * theta_tau_tilde);

    Ok(WallScales {
        u_tau,
        theta_tau,
        l_mo,
        qstar: -u_tau * theta_tau,
        ri_b,
    })
}

/// Distribute the mean wall stress over the plane in proportion to the
/// local tangential velocity: t_i = u_tau^2 u_i / U. The plane average of
/// the traction vector then reproduces u_tau^2 times the mean wind
/// direction, and the local stress opposes the local wind.
pub fn localize_traction(
    u_t: &[f64],
    v_t: &[f64],
    u_tau: f64,
    u_mean: f64,
) -> (Vec<f64>, Vec<f64>) {
    let scale = u_tau * u_tau / u_mean;
    (
        u_t.iter().map(|&x| scale * x).collect(),
        v_t.iter().map(|&x| scale * x).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: f64 = 9.81;
    const THETA0: f64 = 263.5;

    fn consts() -> SimilarityConstants {
        SimilarityConstants::default()
    }

    /// Residuals of the two similarity laws for a candidate scale pair.
    fn law_residuals(
        s: &WallScales,
        u_mean: f64,
        delta_theta: f64,
        z1: f64,
        z0: f64,
        c: &SimilarityConstants,
    ) -> (f64, f64) {
        let tt = s.theta_tau / THETA0;
        let z_over_l = z1 / s.l_mo;
        let rm = u_mean - s.u_tau / c.kappa * ((z1 / z0).ln() + c.beta_m * z_over_l);
        let rh = delta_theta / THETA0 - tt / c.kappa * ((z1 / z0).ln() + c.beta_h * z_over_l);
        (rm, rh)
    }

    #[test]
    fn neutral_is_exact() {
        let c = consts();
        let s = solve_friction_scales(5.0, 0.0, 2.0, 0.1, G, THETA0, &c).unwrap();
        assert_eq!(s.u_tau, 0.4 * 5.0 / (20.0_f64).ln());
        assert_eq!(s.theta_tau, 0.0);
        assert_eq!(s.qstar, 0.0);
        assert!(s.l_mo.is_infinite());
    }

    #[test]
    fn stable_solution_satisfies_both_laws() {
        let c = consts();
        for &(u, dth, z1) in &[
            (8.0, 1.0, 3.0),
            (4.0, 0.5, 1.0),
            (10.0, 2.0, 5.0),
            (6.0, 0.05, 0.6),
        ] {
            let s = solve_friction_scales(u, dth, z1, 0.1, G, THETA0, &c).unwrap();
            assert!(s.u_tau > 0.0 && s.theta_tau > 0.0 && s.l_mo > 0.0);
            let (rm, rh) = law_residuals(&s, u, dth, z1, 0.1, &c);
            assert!(rm.abs() < 1e-12 * u, "momentum residual {rm:.3e}");
            assert!(rh.abs() < 1e-14, "heat residual {rh:.3e}");
        }
    }

    #[test]
    fn equal_beta_closed_form() {
        let c = SimilarityConstants {
            kappa: 0.4,
            beta_m: 5.0,
            beta_h: 5.0,
        };
        let (u, dth, z1, z0) = (7.0, 0.8, 2.5, 0.1);
        let s = solve_friction_scales(u, dth, z1, z0, G, THETA0, &c).unwrap();
        let ri_b = G * z1 * (dth / THETA0) / (u * u);
        let lr = (z1 / z0 as f64).ln();
        let expect_ut = c.kappa * u / lr * (1.0 - c.beta_m * ri_b);
        let expect_tt = c.kappa * dth / lr * (1.0 - c.beta_m * ri_b);
        assert!((s.u_tau - expect_ut).abs() < 1e-14);
        assert!((s.theta_tau - expect_tt).abs() < 1e-13);
    }

    #[test]
    fn supercritical_stratification_is_rejected() {
        let c = consts();
        // Ri_b above beta_h/beta_m^2 = 0.3125 has no positive root.
        let u = 1.0;
        let z1 = 2.0;
        let dth = 0.35 * u * u * THETA0 / (G * z1);
        let err = solve_friction_scales(u, dth, z1, 0.1, G, THETA0, &c).unwrap_err();
        assert!(matches!(err, AblError::NoStableSolution(_)));
    }

    #[test]
    fn friction_velocity_decreases_with_stratification() {
        let c = consts();
        let mut prev = f64::INFINITY;
        for n in 0..10 {
            let dth = 0.2 * n as f64;
            let s = solve_friction_scales(8.0, dth, 2.0, 0.1, G, THETA0, &c).unwrap();
            assert!(s.u_tau < prev);
            prev = s.u_tau;
        }
    }

    #[test]
    fn stable_branch_is_continuous_at_neutral() {
        let c = consts();
        let s0 = solve_friction_scales(8.0, 0.0, 2.0, 0.1, G, THETA0, &c).unwrap();
        let s1 = solve_friction_scales(8.0, 1e-9, 2.0, 0.1, G, THETA0, &c).unwrap();
        assert!((s0.u_tau - s1.u_tau).abs() < 1e-9);
        assert!(s1.theta_tau > 0.0 && s1.theta_tau < 1e-9);
    }

    #[test]
    fn traction_is_linear_with_correct_mean() {
        let u_t = vec![3.0, 5.0, 4.0, 4.0];
        let v_t = vec![-1.0, 1.0, 0.5, -0.5];
        let (tx, ty) = localize_traction(&u_t, &v_t, 0.3, 4.0);
        let mean_tx: f64 = tx.iter().sum::<f64>() / 4.0;
        let mean_ty: f64 = ty.iter().sum::<f64>() / 4.0;
        assert!((mean_tx - 0.09 * 4.0 / 4.0).abs() < 1e-15);
        assert!(mean_ty.abs() < 1e-15);
        // Plane-uniform speed: traction magnitude is u_tau^2 everywhere.
        let (tx, ty) = localize_traction(&[4.0, 4.0], &[0.0, 0.0], 0.3, 4.0);
        for (a, b) in tx.iter().zip(&ty) {
            assert!((a.hypot(*b) - 0.09).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_inputs_error() {
        let c = consts();
        assert!(solve_friction_scales(0.0, 0.5, 2.0, 0.1, G, THETA0, &c).is_err());
        assert!(solve_friction_scales(5.0, 0.5, 0.05, 0.1, G, THETA0, &c).is_err());
        assert!(solve_friction_scales(f64::NAN, 0.5, 2.0, 0.1, G, THETA0, &c).is_err());
    }
}
