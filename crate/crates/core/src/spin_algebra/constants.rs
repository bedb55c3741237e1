use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Physical constants (SI base values) and the derived dipolar scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Electron gyromagnetic ratio, rad s⁻¹ T⁻¹.
    pub gamma_e: f64,
    /// μ0 / 4π, T m A⁻¹.
    pub mu0_over_4pi: f64,
    /// Reduced Planck constant, J s.
    pub hbar: f64,
    /// `(μ0/4π) γ² ħ / 2π` in MHz nm³.
    pub dipolar_prefactor_b: f64,
    /// Diamond cubic lattice constant, nm.
    pub lattice_constant_a: f64,
    /// Carbon atoms per nm³, `8 / a³`.
    pub carbon_density: f64,
    /// NV zero-field splitting, MHz. Cancels under the echo; kept for reference.
    pub zero_field_splitting_d: f64,
    /// P1 hyperfine constant for a Jahn-Teller axis along [111], MHz.
    pub hyperfine_a_111: f64,
    /// P1 hyperfine constant for the three other Jahn-Teller axes, MHz.
    pub hyperfine_a_other: f64,
}

impl PhysicalConstants {
    /// Builds the constant set, deriving `b` and the carbon density.
    pub fn new(gamma_e: f64, mu0_over_4pi: f64, hbar: f64, lattice_constant_a: f64) -> Self {
        Self {
            gamma_e,
            mu0_over_4pi,
            hbar,
            dipolar_prefactor_b: Self::prefactor_from(gamma_e, mu0_over_4pi, hbar),
            lattice_constant_a,
            carbon_density: 8.0 / lattice_constant_a.powi(3),
            zero_field_splitting_d: 2870.0,
            hyperfine_a_111: 114.0,
            hyperfine_a_other: 86.0,
        }
    }

    /// `(μ0/4π) γ² ħ / 2π`, converted from Hz m³ to MHz nm³.
    pub fn prefactor_from(gamma_e: f64, mu0_over_4pi: f64, hbar: f64) -> f64 {
        let hz_m3 = mu0_over_4pi * gamma_e * gamma_e * hbar / (2.0 * std::f64::consts::PI);
        hz_m3 * 1e27 * 1e-6
    }

    /// Smallest hyperfine splitting between subgroups, MHz.
    pub fn min_hyperfine_splitting(&self) -> f64 {
        self.hyperfine_a_111 - self.hyperfine_a_other
    }

    /// Number density of defects (nm⁻³) at a concentration in ppm of carbon sites.
    pub fn number_density(&self, concentration_ppm: f64) -> f64 {
        self.carbon_density * concentration_ppm * 1e-6
    }
}

impl Default for PhysicalConstants {
    /// CODATA 2018 values and a = 0.3567 nm.
    fn default() -> Self {
        Self::new(
            1.760_859_630_23e11,
            1.000_000_000_55e-7,
            1.054_571_817e-34,
            0.3567,
        )
    }
}

/// Secular dipolar coupling `J = b (1 − 3cos²θ) / r³` (MHz), θ measured from z.
pub fn dipolar_coupling(r: &Vector3<f64>, constants: &PhysicalConstants) -> Result<f64> {
    let r2 = r.norm_squared();
    if r2 == 0.0 || !r2.is_finite() {
        return Err(Error::CoincidentSpins);
    }
    let cos2 = r.z * r.z / r2;
    Ok(constants.dipolar_prefactor_b * (1.0 - 3.0 * cos2) / (r2 * r2.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefactor_reproduces_hand_value() {
        // 1e-7 * (1.76085963023e11)^2 * 1.054571817e-34 / 2π = 5.20412e-20 Hz m³
        let c = PhysicalConstants::default();
        assert!(
            (c.dipolar_prefactor_b - 52.0412).abs() < 1e-3,
            "{}",
            c.dipolar_prefactor_b
        );
        let again = PhysicalConstants::prefactor_from(c.gamma_e, c.mu0_over_4pi, c.hbar);
        assert!(((again - c.dipolar_prefactor_b) / again).abs() < 1e-6);
    }

    #[test]
    fn carbon_density_is_eight_over_a_cubed() {
        let c = PhysicalConstants::default();
        assert!((c.carbon_density - 8.0 / 0.3567f64.powi(3)).abs() < 1e-12);
        assert!((c.number_density(1.0) - 1.7627e-4).abs() < 1e-7);
    }

    #[test]
    fn coupling_along_z() {
        let c = PhysicalConstants::default();
        let j = dipolar_coupling(&Vector3::new(0.0, 0.0, 10.0), &c).unwrap();
        assert!((j - (-0.104_082)).abs() < 1e-5, "{j}");
    }

    #[test]
    fn coupling_in_plane() {
        let c = PhysicalConstants::default();
        let j = dipolar_coupling(&Vector3::new(10.0, 0.0, 0.0), &c).unwrap();
        assert!((j - 0.052_041).abs() < 1e-5, "{j}");
    }

    #[test]
    fn coupling_vanishes_at_magic_angle() {
        let c = PhysicalConstants::default();
        for len in [1.0, 7.3, 55.0] {
            let theta = (1.0f64 / 3.0).sqrt().acos();
            let r = Vector3::new(len * theta.sin(), 0.0, len * theta.cos());
            assert!(dipolar_coupling(&r, &c).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn zero_vector_is_rejected() {
        let c = PhysicalConstants::default();
        assert!(matches!(
            dipolar_coupling(&Vector3::zeros(), &c),
            Err(Error::CoincidentSpins)
        ));
    }
}
