//! Temperature-dependent refractive indices, longitudinal wavevectors and
//! the phase mismatch of the quasi-phase-matched type-II process.
//!
//! Coefficients are loaded from a JSON data file (see `data/ktp.json` and
//! the schema notes in the README). Each crystal axis carries a Sellmeier
//! form
//!
//! ```text
//! n²(λ) = A + Σ_k B_k / (λ² − C_k) − F λ²          (λ in µm)
//! n(λ, T) = n(λ) + n₁(λ)(T − T_ref) + n₂(λ)(T − T_ref)²
//! n_m(λ) = Σ_j a_mj / λ^j
//! ```
//!
//! and the poling period expands as `Λ(T) = Λ₀ (1 + α ΔT + β ΔT²)`.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{k_air, omega_from_wavelength_um, wavelength_um_from_omega, C_UM_PER_PS, UM_PER_MM, UM_PER_NM};

/// The bundled KTP dispersion file.
pub const BUILTIN_KTP: &str = include_str!("../data/ktp.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// The three interacting waves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wave {
    Pump,
    Signal,
    Idler,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pole {
    pub strength: f64,
    pub pole_um2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermoOptic {
    pub reference_temperature_c: f64,
    /// Coefficients of Σ a_j / λ^j for the linear term.
    pub linear: Vec<f64>,
    pub quadratic: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SellmeierAxis {
    pub axis: Axis,
    pub constant: f64,
    pub poles: Vec<Pole>,
    #[serde(default)]
    pub ir_coefficient_per_um2: f64,
    pub thermo_optic: ThermoOptic,
    pub wavelength_range_um: [f64; 2],
    pub temperature_range_c: [f64; 2],
}

impl SellmeierAxis {
    fn check_range(&self, lambda_um: f64, temperature_c: f64) -> Result<()> {
        let [lmin, lmax] = self.wavelength_range_um;
        if !(lmin..=lmax).contains(&lambda_um) {
            return Err(Error::OutOfRange {
                variable: "wavelength_nm",
                value: lambda_um / UM_PER_NM,
                min: lmin / UM_PER_NM,
                max: lmax / UM_PER_NM,
            });
        }
        let [tmin, tmax] = self.temperature_range_c;
        if !(tmin..=tmax).contains(&temperature_c) {
            return Err(Error::OutOfRange { variable: "temperature_c", value: temperature_c, min: tmin, max: tmax });
        }
        Ok(())
    }

    fn index_unchecked(&self, lambda_um: f64, temperature_c: f64) -> f64 {
        let l2 = lambda_um * lambda_um;
        let n2 = self.constant + self.poles.iter().map(|p| p.strength / (l2 - p.pole_um2)).sum::<f64>()
            - self.ir_coefficient_per_um2 * l2;
        let poly = |coeffs: &[f64]| coeffs.iter().enumerate().map(|(j, a)| a / lambda_um.powi(j as i32)).sum::<f64>();
        let dt = temperature_c - self.thermo_optic.reference_temperature_c;
        n2.sqrt() + poly(&self.thermo_optic.linear) * dt + poly(&self.thermo_optic.quadratic) * dt * dt
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessAxes {
    pub pump: Axis,
    pub signal: Axis,
    pub idler: Axis,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ThermalExpansion {
    pub reference_temperature_c: f64,
    pub linear_per_k: f64,
    pub quadratic_per_k2: f64,
    pub temperature_range_c: [f64; 2],
}

impl ThermalExpansion {
    pub fn disabled() -> Self {
        Self {
            reference_temperature_c: 25.0,
            linear_per_k: 0.0,
            quadratic_per_k2: 0.0,
            temperature_range_c: [-273.15, 1000.0],
        }
    }

    /// Relative length factor `1 + α ΔT + β ΔT²`.
    pub fn factor(&self, temperature_c: f64) -> Result<f64> {
        let [tmin, tmax] = self.temperature_range_c;
        if !(tmin..=tmax).contains(&temperature_c) {
            return Err(Error::OutOfRange { variable: "temperature_c", value: temperature_c, min: tmin, max: tmax });
        }
        let dt = temperature_c - self.reference_temperature_c;
        Ok(1.0 + self.linear_per_k * dt + self.quadratic_per_k2 * dt * dt)
    }
}

/// A complete set of dispersion data for one material and one
/// polarization assignment of the three waves.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SellmeierSet {
    pub material: String,
    pub citation: String,
    pub axes: Vec<SellmeierAxis>,
    pub process: ProcessAxes,
    pub thermal_expansion: ThermalExpansion,
}

impl SellmeierSet {
    /// The KTP data shipped with the crate.
    pub fn ktp() -> Self {
        Self::from_json_str(BUILTIN_KTP).expect("built-in dispersion data is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let set: SellmeierSet = serde_json::from_str(s)?;
        set.validate()?;
        Ok(set)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        for wave_axis in [self.process.pump, self.process.signal, self.process.idler] {
            self.axis_data(wave_axis)?;
        }
        for a in &self.axes {
            if a.wavelength_range_um[0] >= a.wavelength_range_um[1] || a.wavelength_range_um[0] <= 0.0 {
                return Err(Error::Config(format!("axis {:?}: bad wavelength range", a.axis)));
            }
            if a.temperature_range_c[0] >= a.temperature_range_c[1] {
                return Err(Error::Config(format!("axis {:?}: bad temperature range", a.axis)));
            }
            for p in &a.poles {
                let [lmin, lmax] = a.wavelength_range_um;
                if (lmin * lmin..=lmax * lmax).contains(&p.pole_um2) {
                    return Err(Error::Config(format!(
                        "axis {:?}: pole at {} um^2 lies inside the validity range",
                        a.axis, p.pole_um2
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn axis_data(&self, axis: Axis) -> Result<&SellmeierAxis> {
        self.axes
            .iter()
            .find(|a| a.axis == axis)
            .ok_or_else(|| Error::Config(format!("no Sellmeier data for axis {axis:?}")))
    }

    pub fn axis_of(&self, wave: Wave) -> Axis {
        match wave {
            Wave::Pump => self.process.pump,
            Wave::Signal => self.process.signal,
            Wave::Idler => self.process.idler,
        }
    }

    /// Refractive index along `axis` at vacuum wavelength `lambda_nm` and
    /// temperature `temperature_c`.
    pub fn refractive_index(&self, axis: Axis, lambda_nm: f64, temperature_c: f64) -> Result<f64> {
        let data = self.axis_data(axis)?;
        let lambda_um = lambda_nm * UM_PER_NM;
        data.check_range(lambda_um, temperature_c)?;
        Ok(data.index_unchecked(lambda_um, temperature_c))
    }

    /// Index seen by `wave` at angular frequency `omega` (rad/ps).
    pub fn index_for(&self, wave: Wave, omega: f64, temperature_c: f64) -> Result<f64> {
        let lambda_nm = wavelength_um_from_omega(omega) / UM_PER_NM;
        self.refractive_index(self.axis_of(wave), lambda_nm, temperature_c)
    }

    /// Wavenumber n ω / c in the crystal, 1/µm.
    pub fn k(&self, wave: Wave, omega: f64, temperature_c: f64) -> Result<f64> {
        Ok(self.index_for(wave, omega, temperature_c)? * omega / C_UM_PER_PS)
    }

    /// Longitudinal wavevector `sqrt((nω/c)² − |q|²)`.
    pub fn kz(&self, wave: Wave, omega: f64, q: [f64; 2], temperature_c: f64) -> Result<f64> {
        let k = self.k(wave, omega, temperature_c)?;
        kz_from_k(k, q[0] * q[0] + q[1] * q[1])
    }
}

/// `sqrt(k² − q²)`, or a domain error for evanescent components.
pub fn kz_from_k(k: f64, q2: f64) -> Result<f64> {
    if q2 > k * k {
        return Err(Error::Evanescent { q: q2.sqrt(), k });
    }
    Ok((k * k - q2).sqrt())
}

/// `kz − k` computed without cancellation; used wherever a small transverse
/// correction is added to a large on-axis phase.
pub fn kz_minus_k(k: f64, q2: f64) -> f64 {
    -q2 / ((k * k - q2).max(0.0).sqrt() + k)
}

#[derive(Debug, Clone)]
pub struct CrystalConfig {
    pub length_mm: f64,
    /// Poling period at the expansion reference temperature.
    pub poling_period_um: f64,
    pub expansion: ThermalExpansion,
    pub temperature_c: f64,
    /// Crystal-centre position relative to the reference position.
    pub z_c_mm: f64,
    pub dispersion: Arc<SellmeierSet>,
}

impl CrystalConfig {
    /// The 15 mm, 9.89 µm ppKTP crystal with the built-in data.
    pub fn ppktp(temperature_c: f64) -> Self {
        let dispersion = Arc::new(SellmeierSet::ktp());
        Self {
            length_mm: 15.0,
            poling_period_um: 9.89,
            expansion: dispersion.thermal_expansion.clone(),
            temperature_c,
            z_c_mm: 0.0,
            dispersion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_mm > 0.0) {
            return Err(Error::Config(format!("crystal length must be > 0, got {}", self.length_mm)));
        }
        if !(self.poling_period_um > 0.0) {
            return Err(Error::Config(format!("poling period must be > 0, got {}", self.poling_period_um)));
        }
        if !self.z_c_mm.is_finite() || !self.temperature_c.is_finite() {
            return Err(Error::Config("crystal position and temperature must be finite".into()));
        }
        Ok(())
    }

    pub fn length_um(&self) -> f64 {
        self.length_mm * UM_PER_MM
    }

    pub fn with_temperature(&self, temperature_c: f64) -> Self {
        Self { temperature_c, ..self.clone() }
    }

    pub fn with_position(&self, z_c_mm: f64) -> Self {
        Self { z_c_mm, ..self.clone() }
    }

    /// Poling period Λ(T) in µm at the configured temperature.
    pub fn poling_period(&self) -> Result<f64> {
        self.poling_period_at(self.temperature_c)
    }

    pub fn poling_period_at(&self, temperature_c: f64) -> Result<f64> {
        let period = self.poling_period_um * self.expansion.factor(temperature_c)?;
        if period <= 0.0 {
            return Err(Error::Config(format!("poling period became non-positive at {temperature_c} C")));
        }
        Ok(period)
    }
}

/// Phase-matching kinematics for a fixed crystal, temperature and
/// monochromatic pump. Detuning Ω is the idler offset from degeneracy;
/// the signal sits at ω_p/2 − Ω.
#[derive(Debug, Clone)]
pub struct PhaseMatching {
    pub crystal: CrystalConfig,
    pub temperature_c: f64,
    pub omega_pump: f64,
    pub k_pump: f64,
    /// 2π/Λ(T), 1/µm.
    pub grating_k: f64,
}

impl PhaseMatching {
    pub fn new(crystal: &CrystalConfig, pump_wavelength_nm: f64) -> Result<Self> {
        Self::at(crystal, pump_wavelength_nm, crystal.temperature_c)
    }

    pub fn at(crystal: &CrystalConfig, pump_wavelength_nm: f64, temperature_c: f64) -> Result<Self> {
        crystal.validate()?;
        if !(pump_wavelength_nm > 0.0) {
            return Err(Error::Config(format!("pump wavelength must be > 0, got {pump_wavelength_nm}")));
        }
        let omega_pump = omega_from_wavelength_um(pump_wavelength_nm * UM_PER_NM);
        let k_pump = crystal.dispersion.k(Wave::Pump, omega_pump, temperature_c)?;
        let grating_k = 2.0 * PI / crystal.poling_period_at(temperature_c)?;
        Ok(Self { crystal: crystal.clone(), temperature_c, omega_pump, k_pump, grating_k })
    }

    pub fn omega_signal(&self, detuning: f64) -> f64 {
        0.5 * self.omega_pump - detuning
    }

    pub fn omega_idler(&self, detuning: f64) -> f64 {
        0.5 * self.omega_pump + detuning
    }

    /// On-axis signal and idler wavenumbers at detuning Ω.
    pub fn k_signal_idler(&self, detuning: f64) -> Result<(f64, f64)> {
        let d = &self.crystal.dispersion;
        Ok((
            d.k(Wave::Signal, self.omega_signal(detuning), self.temperature_c)?,
            d.k(Wave::Idler, self.omega_idler(detuning), self.temperature_c)?,
        ))
    }

    /// Collinear mismatch `k_p − k_s − k_i − 2π/Λ`.
    pub fn collinear_mismatch(&self, detuning: f64) -> Result<f64> {
        let (ks, ki) = self.k_signal_idler(detuning)?;
        Ok(self.k_pump - ks - ki - self.grating_k)
    }

    /// Full mismatch `k_pz(q_s + q_i) − k_sz(−Ω, q_s) − k_iz(Ω, q_i) − 2π/Λ(T)`.
    pub fn delta_kz(&self, q_s: [f64; 2], q_i: [f64; 2], detuning: f64) -> Result<f64> {
        let (ks, ki) = self.k_signal_idler(detuning)?;
        let qs2 = q_s[0] * q_s[0] + q_s[1] * q_s[1];
        let qi2 = q_i[0] * q_i[0] + q_i[1] * q_i[1];
        let qp = [q_s[0] + q_i[0], q_s[1] + q_i[1]];
        let qp2 = qp[0] * qp[0] + qp[1] * qp[1];
        // propagate evanescent errors
        kz_from_k(self.k_pump, qp2)?;
        kz_from_k(ks, qs2)?;
        kz_from_k(ki, qi2)?;
        let on_axis = self.k_pump - ks - ki - self.grating_k;
        Ok(on_axis + kz_minus_k(self.k_pump, qp2) - kz_minus_k(ks, qs2) - kz_minus_k(ki, qi2))
    }

    /// Refractive index of the pump.
    pub fn n_pump(&self) -> f64 {
        self.k_pump / k_air(self.omega_pump)
    }
}

/// Solve `Δk_z(0, 0, 0; T) = 0` for T by bisection on `[20, 120] °C`.
pub fn solve_t0(crystal: &CrystalConfig, pump_wavelength_nm: f64) -> Result<f64> {
    solve_t0_in(crystal, pump_wavelength_nm, (20.0, 120.0), 1e-9)
}

pub fn solve_t0_in(
    crystal: &CrystalConfig,
    pump_wavelength_nm: f64,
    bracket: (f64, f64),
    tolerance_k: f64,
) -> Result<f64> {
    let f = |t: f64| PhaseMatching::at(crystal, pump_wavelength_nm, t)?.collinear_mismatch(0.0);
    let (mut lo, mut hi) = bracket;
    let mut f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Solver(format!(
            "mismatch does not change sign on [{lo}, {hi}] C (values {f_lo:.3e}, {f_hi:.3e} 1/um)"
        )));
    }
    while hi - lo > tolerance_k {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid)?;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Taylor constants of the mismatch about the collinear degenerate point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WalkoffConstants {
    /// Inverse group-velocity difference of signal and idler, ps/µm.
    pub d_ps_per_um: f64,
    /// ∂Δk/∂T including the poling-period expansion, 1/(µm·K).
    pub e_per_um_k: f64,
    pub n_pump: f64,
    /// Mean of signal and idler indices at degeneracy.
    pub n_mean: f64,
    pub t0_c: f64,
    pub omega_step: f64,
    pub temperature_step: f64,
}

impl WalkoffConstants {
    pub fn d_ps_per_mm(&self) -> f64 {
        self.d_ps_per_um * UM_PER_MM
    }

    /// Full-crystal walk-off window D·L in ps (signed).
    pub fn window_ps(&self, length_mm: f64) -> f64 {
        self.d_ps_per_mm() * length_mm
    }
}

pub const DEFAULT_OMEGA_STEP: f64 = 1e-3;
pub const DEFAULT_TEMPERATURE_STEP: f64 = 0.01;

pub fn walkoff_constants(crystal: &CrystalConfig, pump_wavelength_nm: f64) -> Result<WalkoffConstants> {
    walkoff_constants_with_steps(crystal, pump_wavelength_nm, DEFAULT_OMEGA_STEP, DEFAULT_TEMPERATURE_STEP)
}

pub fn walkoff_constants_with_steps(
    crystal: &CrystalConfig,
    pump_wavelength_nm: f64,
    omega_step: f64,
    temperature_step: f64,
) -> Result<WalkoffConstants> {
    let t0 = solve_t0(crystal, pump_wavelength_nm)?;
    let pm = PhaseMatching::at(crystal, pump_wavelength_nm, t0)?;
    let d = (pm.collinear_mismatch(omega_step)? - pm.collinear_mismatch(-omega_step)?) / (2.0 * omega_step);
    let up = PhaseMatching::at(crystal, pump_wavelength_nm, t0 + temperature_step)?.collinear_mismatch(0.0)?;
    let down = PhaseMatching::at(crystal, pump_wavelength_nm, t0 - temperature_step)?.collinear_mismatch(0.0)?;
    let e = (up - down) / (2.0 * temperature_step);
    let (ks, ki) = pm.k_signal_idler(0.0)?;
    let k0 = k_air(0.5 * pm.omega_pump);
    Ok(WalkoffConstants {
        d_ps_per_um: d,
        e_per_um_k: e,
        n_pump: pm.n_pump(),
        n_mean: 0.5 * (ks + ki) / k0,
        t0_c: t0,
        omega_step,
        temperature_step,
    })
}
