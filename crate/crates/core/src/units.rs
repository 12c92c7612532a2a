//! Internal unit system: lengths in µm, times in ps, angular frequencies in
//! rad/ps, wavevectors in 1/µm. Configuration values carry their own units
//! in their names and are converted at the boundary.

use std::f64::consts::PI;

/// Speed of light in vacuum, µm/ps.
pub const C_UM_PER_PS: f64 = 299.792_458;

pub const UM_PER_MM: f64 = 1000.0;
pub const UM_PER_NM: f64 = 1e-3;

/// Angular frequency (rad/ps) of light with vacuum wavelength `lambda_um`.
pub fn omega_from_wavelength_um(lambda_um: f64) -> f64 {
    2.0 * PI * C_UM_PER_PS / lambda_um
}

pub fn wavelength_um_from_omega(omega: f64) -> f64 {
    2.0 * PI * C_UM_PER_PS / omega
}

/// Vacuum wavenumber ω/c in 1/µm.
pub fn k_air(omega: f64) -> f64 {
    omega / C_UM_PER_PS
}

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Conversion between FWHM and standard deviation of a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_wavelength_roundtrip() {
        let w = omega_from_wavelength_um(0.8085);
        assert!((wavelength_um_from_omega(w) - 0.8085).abs() < 1e-14);
    }

    #[test]
    fn sinc_near_zero_is_smooth() {
        assert_eq!(sinc(0.0), 1.0);
        assert!((sinc(1e-9) - 1.0).abs() < 1e-15);
        assert!((sinc(1e-3) - (1e-3f64).sin() / 1e-3).abs() < 1e-15);
        assert!(sinc(PI).abs() < 1e-15);
    }
}
