//! Plane-wave-pump toy model of the delay distribution.
//!
//! With q_p = 0 the idler momentum is −q_s and the delay density becomes
//!
//! `R(τ) ∝ rect((τ − DL/2)/DL) · |∫d²q exp(−i|q|²(τ − τ₀)/(nD k₀)) g(q)|²`
//!
//! with `τ₀ = DL/2 + nD(f1 − z_CL + z_c + L/2)` and k₀ the vacuum
//! wavenumber at degeneracy. For a Gaussian envelope
//! `g = exp(−w_g²|q|²/4)` the integral is `π/a`, with
//! `a = w_g²/4 + i(τ − τ₀)/(nDk₀)`, so R is a Lorentzian in τ − τ₀ cut to
//! the walk-off window.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::coincidence::{DelayDistribution, Provenance};
use crate::dispersion::WalkoffConstants;
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::units::{k_air, omega_from_wavelength_um, UM_PER_MM, UM_PER_NM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Envelope {
    /// `exp(−w²|q|²/4)`.
    Gaussian { waist_um: f64 },
    /// `1/(1 + exp((|q| − radius)/edge))`, a flat disc with a soft rim.
    SoftDisc { radius_per_um: f64, edge_per_um: f64 },
}

impl Envelope {
    /// Envelope seen by a fibre-coupled pair: both photons pass through a
    /// mode of waist w_f, so the product G(q)G(−q) has waist √2·w_f.
    pub fn fibre_pair(fiber_waist_um: f64) -> Self {
        Envelope::Gaussian { waist_um: std::f64::consts::SQRT_2 * fiber_waist_um }
    }

    /// Rough stand-in for a square free-space detector of side `side_um`
    /// behind a lens pair with magnification `kappa`. The radius π/(κl)
    /// sits near the half-power point of the aperture's sinc² response.
    pub fn detector_square(side_um: f64, kappa: f64) -> Self {
        let radius = PI / (kappa * side_um);
        Envelope::SoftDisc { radius_per_um: radius, edge_per_um: 0.2 * radius }
    }

    pub fn value(&self, q: f64) -> f64 {
        match *self {
            Envelope::Gaussian { waist_um } => (-waist_um * waist_um * q * q / 4.0).exp(),
            Envelope::SoftDisc { radius_per_um, edge_per_um } => {
                1.0 / (1.0 + ((q - radius_per_um) / edge_per_um).exp())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToyParams {
    /// Walk-off per unit length, oriented so that delays grow positively.
    pub d_ps_per_um: f64,
    pub e_per_um_k: f64,
    pub n_mean: f64,
    pub n_pump: f64,
    pub length_mm: f64,
    pub f1_mm: f64,
    pub z_cl_mm: f64,
    pub z_c_mm: f64,
    /// T − T₀; carried for completeness, it does not enter the distribution.
    pub temperature_offset_k: f64,
    /// Vacuum wavenumber at degeneracy, 1/µm.
    pub k0_per_um: f64,
    pub envelope: Envelope,
}

impl ToyParams {
    pub fn from_walkoff(
        w: &WalkoffConstants,
        pump_wavelength_nm: f64,
        length_mm: f64,
        f1_mm: f64,
        z_cl_mm: f64,
        z_c_mm: f64,
        envelope: Envelope,
    ) -> Self {
        Self {
            d_ps_per_um: w.d_ps_per_um.abs(),
            e_per_um_k: w.e_per_um_k,
            n_mean: w.n_mean,
            n_pump: w.n_pump,
            length_mm,
            f1_mm,
            z_cl_mm,
            z_c_mm,
            temperature_offset_k: 0.0,
            k0_per_um: k_air(omega_from_wavelength_um(2.0 * pump_wavelength_nm * UM_PER_NM)),
            envelope,
        }
    }

    /// Same setup with the lens moved by +L/(2n).
    ///
    /// The in-crystal exit phase of the full model acts as an extra
    /// propagation of −L/(2n) before the lens, so the full model at lens
    /// position z_CL matches the toy formula evaluated at z_CL + L/(2n).
    pub fn matched_to_full_model(&self) -> Self {
        Self { z_cl_mm: self.z_cl_mm + self.length_mm / (2.0 * self.n_mean), ..*self }
    }

    pub fn with_position(&self, z_c_mm: f64) -> Self {
        Self { z_c_mm, ..*self }
    }

    pub fn with_lens(&self, z_cl_mm: f64) -> Self {
        Self { z_cl_mm, ..*self }
    }

    /// Walk-off window DL in ps.
    pub fn window_ps(&self) -> f64 {
        self.d_ps_per_um * self.length_mm * UM_PER_MM
    }

    /// `nD k₀`, the scale converting |q|² to delay.
    fn scale(&self) -> f64 {
        self.n_mean * self.d_ps_per_um * self.k0_per_um
    }

    /// Half width at half maximum of the Lorentzian for a Gaussian envelope.
    pub fn lorentzian_hwhm(&self) -> Option<f64> {
        match self.envelope {
            Envelope::Gaussian { waist_um } => Some(self.scale() * waist_um * waist_um / 4.0),
            Envelope::SoftDisc { .. } => None,
        }
    }

    /// Unnormalized density at τ.
    pub fn density(&self, tau: f64) -> f64 {
        if !(0.0..=self.window_ps()).contains(&tau) {
            return 0.0;
        }
        self.q_integral(tau - tau0(self)).norm_sqr()
    }

    /// `∫d²q exp(−i|q|² x/(nDk₀)) g(q)`.
    pub fn q_integral(&self, x: f64) -> Complex64 {
        let b = x / self.scale();
        match self.envelope {
            Envelope::Gaussian { waist_um } => PI / Complex64::new(waist_um * waist_um / 4.0, b),
            Envelope::SoftDisc { radius_per_um, edge_per_um } => {
                // π ∫ e^{−ibu} g(√u) du, split into panels so each holds a
                // bounded number of oscillations
                let qmax = radius_per_um + 40.0 * edge_per_um;
                let umax = qmax * qmax;
                // the rim spans about 2·radius·edge in u
                let rim = 2.0 * radius_per_um.max(edge_per_um) * edge_per_um;
                let panels = ((b.abs() * umax / PI).max(umax / rim).ceil() as usize).clamp(8, 1 << 16);
                let (x0, w0) = gauss_legendre(16, 0.0, 1.0);
                let h = umax / panels as f64;
                let mut acc = Complex64::default();
                for p in 0..panels {
                    for (xi, wi) in x0.iter().zip(&w0) {
                        let u = (p as f64 + xi) * h;
                        acc += wi * h * self.envelope.value(u.sqrt()) * Complex64::cis(-b * u);
                    }
                }
                PI * acc
            }
        }
    }
}

/// Centre of the toy distribution, ps.
pub fn tau0(p: &ToyParams) -> f64 {
    let d_um = (p.f1_mm - p.z_cl_mm + p.z_c_mm + p.length_mm / 2.0) * UM_PER_MM;
    p.window_ps() / 2.0 + p.n_mean * p.d_ps_per_um * d_um
}

/// Normalized toy distribution on `n` samples from `tau_start` with step `dtau`.
pub fn toy_delay_distribution(tau_start: f64, dtau: f64, n: usize, p: &ToyParams) -> Result<DelayDistribution> {
    if n == 0 || !(dtau > 0.0) {
        return Err(Error::Grid("toy distribution needs samples and positive spacing".into()));
    }
    let values = (0..n).map(|k| p.density(tau_start + k as f64 * dtau)).collect();
    DelayDistribution {
        tau_start,
        dtau,
        values,
        normalized: false,
        raw_mass: 0.0,
        resolution: dtau,
        provenance: Some(Provenance {
            model: "toy".into(),
            scheme: match p.envelope {
                Envelope::Gaussian { .. } => "gaussian_envelope".into(),
                Envelope::SoftDisc { .. } => "soft_disc_envelope".into(),
            },
            z_c_mm: p.z_c_mm,
            z_cl_mm: p.z_cl_mm,
            temperature_c: f64::NAN,
            bandpass: None,
        }),
    }
    .normalized()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShiftCheck {
    pub shift_ps: f64,
    /// Max |R_b(τ) − R_a(τ − shift)| over the interior, both peak-normalized.
    pub residual: f64,
    /// Set when a τ₀ leaves the window or no interior region remains.
    pub inconclusive: bool,
}

/// Compares the distribution at z_c + Δz with the one at z_c shifted by nDΔz.
pub fn shift_check(p: &ToyParams, dz_mm: f64) -> ShiftCheck {
    let moved = p.with_position(p.z_c_mm + dz_mm);
    let (ta, tb) = (tau0(p), tau0(&moved));
    let shift = tb - ta;
    let window = p.window_ps();
    let inside = |t: f64| t > 0.0 && t < window;
    let width = p.lorentzian_hwhm().unwrap_or(0.05 * window);
    let margin = 3.0 * width;
    let lo = margin.max(margin + shift);
    let hi = (window - margin).min(window - margin + shift);
    if !inside(ta) || !inside(tb) || lo >= hi {
        return ShiftCheck { shift_ps: shift, residual: f64::NAN, inconclusive: true };
    }
    let (pa, pb) = (p.density(ta), moved.density(tb));
    let samples = 2001;
    let residual = (0..samples)
        .map(|k| lo + (hi - lo) * k as f64 / (samples - 1) as f64)
        .map(|t| (moved.density(t) / pb - p.density(t - shift) / pa).abs())
        .fold(0.0, f64::max);
    ShiftCheck { shift_ps: shift, residual, inconclusive: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coincidence::mean_delay;

    fn params(envelope: Envelope) -> ToyParams {
        ToyParams {
            d_ps_per_um: 3.52328e-4,
            e_per_um_k: 2.15e-4,
            n_mean: 1.8004,
            n_pump: 1.8413,
            length_mm: 15.0,
            f1_mm: 100.0,
            z_cl_mm: 107.5,
            z_c_mm: 0.0,
            temperature_offset_k: 0.0,
            k0_per_um: 2.0 * PI / 0.8085,
            envelope,
        }
    }

    #[test]
    fn tau0_examples() {
        let p = params(Envelope::fibre_pair(18.0));
        assert!((tau0(&p) - p.window_ps() / 2.0).abs() < 1e-12);
        assert!((p.window_ps() / 2.0 - 2.6425).abs() < 0.01);
        let shift = tau0(&p.with_position(1.0)) - tau0(&p);
        assert!((shift - p.n_mean * p.d_ps_per_um * 1000.0).abs() < 1e-12);
        let lens = tau0(&p.with_lens(p.z_cl_mm + 1.0)) - tau0(&p);
        assert!((lens + p.n_mean * p.d_ps_per_um * 1000.0).abs() < 1e-12);
        let flat = ToyParams { d_ps_per_um: 0.0, ..p };
        assert_eq!(tau0(&flat), 0.0);
        let m = p.matched_to_full_model();
        assert!((tau0(&m) - (p.window_ps() / 2.0 - p.d_ps_per_um * 7500.0)).abs() < 1e-9);
    }

    #[test]
    fn rect_support_is_exact() {
        let p = params(Envelope::fibre_pair(18.0)).with_position(0.8);
        let d = toy_delay_distribution(-3.0, 0.01, 1200, &p).unwrap();
        let w = p.window_ps();
        for (k, v) in d.values.iter().enumerate() {
            let t = d.tau(k);
            if !(0.0..=w).contains(&t) {
                assert_eq!(*v, 0.0);
            }
        }
        assert!(d.values.iter().any(|v| *v > 0.0));
        assert!((d.peak() - tau0(&p)).abs() < 0.01);
    }

    #[test]
    fn shift_check_cases() {
        let p = params(Envelope::Gaussian { waist_um: 8.0 });
        let zero = shift_check(&p, 0.0);
        assert!(!zero.inconclusive && zero.shift_ps == 0.0 && zero.residual == 0.0);
        let one = shift_check(&p, 1.0);
        assert!(!one.inconclusive);
        assert!((one.shift_ps - p.n_mean * p.d_ps_per_um * 1000.0).abs() < 1e-12);
        assert!(one.residual < 1e-9, "{}", one.residual);
        assert!(shift_check(&p, 5.0).inconclusive);
    }

    #[test]
    fn soft_disc_reduces_to_numeric_integral() {
        let p = params(Envelope::SoftDisc { radius_per_um: 0.05, edge_per_um: 0.005 });
        // at x = 0 the integral is the envelope area
        let area = p.q_integral(0.0).re;
        let (x, w) = gauss_legendre(400, 0.0, 0.3);
        let direct: f64 = x.iter().zip(&w).map(|(q, wq)| 2.0 * PI * q * wq * p.envelope.value(*q)).sum();
        assert!((area - direct).abs() < 1e-8 * direct);
        // magnitude falls off away from τ₀
        assert!(p.q_integral(0.5).norm() < area);
    }

    #[test]
    fn mean_tracks_tau0_with_narrow_envelope() {
        let p = params(Envelope::Gaussian { waist_um: 5.0 });
        let dist = |z: f64| toy_delay_distribution(-1.0, 0.001, 7400, &p.with_position(z)).unwrap();
        let (a, b) = (mean_delay(&dist(-0.5)).unwrap(), mean_delay(&dist(0.5)).unwrap());
        let nd = p.n_mean * p.d_ps_per_um * 1000.0;
        assert!(((b - a) - nd).abs() < 0.05 * nd, "{} vs {nd}", b - a);
    }
}
