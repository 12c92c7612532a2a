//! Biphoton mode function at the crystal exit facet.
//!
//! Φ(q_s, q_i, Ω) ∝ sinc(Δk_z L/2) · exp(−w²|q_s+q_i|²/4)
//!                  · exp(i k_pz (z_c − z_foc)) · exp(i (k_sz + k_iz) L/2)
//!
//! The pump is monochromatic, so the idler frequency is never an
//! independent coordinate: the grid carries only the detuning Ω and the
//! signal sits at ω_p/2 − Ω. Φ is kept unnormalized.
//!
//! Large on-axis phases (k·L ~ 10⁵ rad) are split from the small transverse
//! corrections so that mismatches and phases keep full precision.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::dispersion::{kz_minus_k, CrystalConfig, PhaseMatching, WalkoffConstants};
use crate::error::{Error, Result};
use crate::export::write_header;
use crate::quadrature::gauss_legendre;
use crate::units::{k_air, sinc, UM_PER_MM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PumpConfig {
    pub wavelength_nm: f64,
    /// Beam waist inside the crystal.
    pub waist_um: f64,
}

impl PumpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength_nm > 0.0) || !(self.waist_um > 0.0) {
            return Err(Error::Config(format!(
                "pump wavelength and waist must be > 0, got {} nm, {} um",
                self.wavelength_nm, self.waist_um
            )));
        }
        Ok(())
    }
}

/// Laboratory-frame pump focus for a crystal centred at `z_c_mm`.
///
/// Inside the crystal the focus moves opposite to the crystal by a factor
/// `1 − n_p`; once it leaves through a facet it stays put.
pub fn pump_focus(z_c_mm: f64, length_mm: f64, n_pump: f64) -> f64 {
    let edge = length_mm / (2.0 * n_pump);
    if z_c_mm <= -edge {
        length_mm / 2.0 - edge
    } else if z_c_mm >= edge {
        -length_mm / 2.0 + edge
    } else {
        z_c_mm - n_pump * z_c_mm
    }
}

/// Uniform detuning axis `Ω_j = (j − n/2) ΔΩ`; contains Ω = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OmegaAxis {
    pub samples: usize,
    pub spacing: f64,
}

impl OmegaAxis {
    /// `samples` points covering `[-half_extent, half_extent)`.
    pub fn symmetric(samples: usize, half_extent: f64) -> Self {
        Self { samples, spacing: 2.0 * half_extent / samples as f64 }
    }

    pub fn value(&self, j: usize) -> f64 {
        (j as f64 - (self.samples / 2) as f64) * self.spacing
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.samples).map(|j| self.value(j)).collect()
    }

    pub fn zero_index(&self) -> usize {
        self.samples / 2
    }

    /// Full width n·ΔΩ.
    pub fn extent(&self) -> f64 {
        self.samples as f64 * self.spacing
    }
}

/// Symmetric transverse axis `q_j = (j − (n−1)/2) Δq`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QAxis {
    pub samples: usize,
    pub spacing: f64,
}

impl QAxis {
    /// Midpoint samples covering `[-half_extent, half_extent]`.
    pub fn symmetric(samples: usize, half_extent: f64) -> Self {
        Self { samples, spacing: 2.0 * half_extent / samples as f64 }
    }

    pub fn value(&self, j: usize) -> f64 {
        (j as f64 - 0.5 * (self.samples as f64 - 1.0)) * self.spacing
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.samples).map(|j| self.value(j)).collect()
    }

    pub fn half_extent(&self) -> f64 {
        0.5 * self.samples as f64 * self.spacing
    }

    /// Value of `q_a + q_b` indexed by `a + b`.
    pub fn sum_value(&self, m: usize) -> f64 {
        (m as f64 - (self.samples as f64 - 1.0)) * self.spacing
    }
}

/// Node counts and extents for the rotationally reduced quadrature over
/// (|q_s|, |q_p|, angle between them), with q_p = q_s + q_i.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialSpec {
    pub signal_nodes: usize,
    pub pump_nodes: usize,
    pub angle_nodes: usize,
    pub signal_extent: f64,
    pub pump_extent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Transverse {
    Cartesian(QAxis),
    Radial(RadialSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiphotonGrid {
    pub omega: OmegaAxis,
    pub transverse: Transverse,
}

impl BiphotonGrid {
    pub fn validate(&self) -> Result<()> {
        if self.omega.samples < 2 || !(self.omega.spacing > 0.0) {
            return Err(Error::Grid("omega axis needs >= 2 samples and positive spacing".into()));
        }
        match self.transverse {
            Transverse::Cartesian(q) => {
                if q.samples == 0 || !(q.spacing > 0.0) {
                    return Err(Error::Grid("q axis needs samples and positive spacing".into()));
                }
            }
            Transverse::Radial(r) => {
                if r.signal_nodes == 0 || r.pump_nodes == 0 || r.angle_nodes == 0 {
                    return Err(Error::Grid("radial quadrature needs nodes on every axis".into()));
                }
                if !(r.signal_extent > 0.0) || !(r.pump_extent > 0.0) {
                    return Err(Error::Grid("radial extents must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Delay spacing of the FFT-conjugate grid, `2π / (n ΔΩ)`.
    pub fn tau_spacing(&self) -> f64 {
        2.0 * PI / self.omega.extent()
    }

    /// Checks that the transverse window covers 4/w and the Ω window
    /// covers four phase-matching bandwidths 2π/|DL|.
    pub fn check_coverage(&self, pump_waist_um: f64, window_ps: f64) -> Result<()> {
        let q_half = match self.transverse {
            Transverse::Cartesian(q) => q.half_extent(),
            Transverse::Radial(r) => r.signal_extent.max(0.5 * r.pump_extent),
        };
        if q_half < 4.0 / pump_waist_um {
            return Err(Error::Grid(format!(
                "transverse half-extent {q_half:.4} 1/um is below 4/w = {:.4}",
                4.0 / pump_waist_um
            )));
        }
        let bandwidth = 2.0 * PI / window_ps.abs();
        if self.omega.extent() < 4.0 * bandwidth {
            return Err(Error::Grid(format!(
                "omega extent {:.3} rad/ps is below four phase-matching bandwidths ({:.3})",
                self.omega.extent(),
                4.0 * bandwidth
            )));
        }
        Ok(())
    }
}

/// Optional overrides of the default grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridOverrides {
    pub omega_samples: Option<usize>,
    pub omega_half_extent_rad_per_ps: Option<f64>,
    pub q_samples: Option<usize>,
    pub q_half_extent_per_um: Option<f64>,
    pub radial_signal_nodes: Option<usize>,
    pub radial_pump_nodes: Option<usize>,
    pub radial_angle_nodes: Option<usize>,
}

pub const DEFAULT_SIDELOBES: f64 = 6.0;
pub const DEFAULT_CARTESIAN_OMEGA_SAMPLES: usize = 128;
pub const DEFAULT_RADIAL_OMEGA_SAMPLES: usize = 256;
pub const DEFAULT_Q_SAMPLES: usize = 32;
pub const DEFAULT_RADIAL_NODES: usize = 48;

/// Default grid for a given crystal and pump.
///
/// The Ω window spans ±6 sinc lobes (2π/|DL| each). The transverse window
/// covers the larger of 4/w and 1.5× the momentum phase-matched at the Ω
/// window edge. For fibre detection the window is also capped at 10/w_f,
/// beyond which the fibre mode is below e⁻²⁵.
pub fn default_grid(
    cartesian: bool,
    walkoff: &WalkoffConstants,
    crystal: &CrystalConfig,
    pump: &PumpConfig,
    fiber_waist_um: Option<f64>,
    overrides: &GridOverrides,
) -> BiphotonGrid {
    let window = walkoff.window_ps(crystal.length_mm).abs();
    let omega_half = overrides.omega_half_extent_rad_per_ps.unwrap_or(DEFAULT_SIDELOBES * 2.0 * PI / window);
    let omega_samples = overrides.omega_samples.unwrap_or(if cartesian {
        DEFAULT_CARTESIAN_OMEGA_SAMPLES
    } else {
        DEFAULT_RADIAL_OMEGA_SAMPLES
    });
    let k0 = k_air(crate::units::omega_from_wavelength_um(2.0 * pump.wavelength_nm * 1e-3));
    let q_pm = (omega_half * walkoff.d_ps_per_um.abs() * walkoff.n_mean * k0).sqrt();
    let mut q_half = (4.0 / pump.waist_um).max(1.5 * q_pm);
    if let Some(wf) = fiber_waist_um {
        q_half = q_half.min(10.0 / wf);
    }
    let q_half = overrides.q_half_extent_per_um.unwrap_or(q_half);
    let omega = OmegaAxis::symmetric(omega_samples, omega_half);
    let transverse = if cartesian {
        Transverse::Cartesian(QAxis::symmetric(overrides.q_samples.unwrap_or(DEFAULT_Q_SAMPLES), q_half))
    } else {
        Transverse::Radial(RadialSpec {
            signal_nodes: overrides.radial_signal_nodes.unwrap_or(DEFAULT_RADIAL_NODES),
            pump_nodes: overrides.radial_pump_nodes.unwrap_or(DEFAULT_RADIAL_NODES),
            angle_nodes: overrides.radial_angle_nodes.unwrap_or(DEFAULT_RADIAL_NODES),
            signal_extent: q_half,
            pump_extent: (2.0 * q_half).min(8.6 / pump.waist_um),
        })
    };
    BiphotonGrid { omega, transverse }
}

/// Per-Ω quantities shared by every transverse point.
#[derive(Debug, Clone)]
pub(crate) struct OmegaRow {
    pub omega: f64,
    pub k_signal: f64,
    pub k_idler: f64,
    /// k_p − k_s − k_i − 2π/Λ on axis.
    pub mismatch: f64,
    /// exp(i (k_s + k_i) L/2).
    pub exit_phase: Complex64,
}

/// The biphoton mode function for one crystal/pump configuration on a
/// given grid. Values are generated on demand; only per-Ω and pump tables
/// are stored, since the full Cartesian field does not fit in memory at
/// production resolution.
#[derive(Debug, Clone)]
pub struct ModeFunctionField {
    pub grid: BiphotonGrid,
    pub crystal: CrystalConfig,
    pub pump: PumpConfig,
    pub z_foc_mm: f64,
    pub(crate) pm: PhaseMatching,
    pub(crate) half_length_um: f64,
    /// z_c − z_foc in µm.
    pub(crate) pump_path_um: f64,
    pub(crate) rows: Vec<OmegaRow>,
}

impl ModeFunctionField {
    /// Builds the mode function for `crystal` pumped by `pump`.
    pub fn new(grid: BiphotonGrid, crystal: &CrystalConfig, pump: &PumpConfig) -> Result<Self> {
        grid.validate()?;
        pump.validate()?;
        let pm = PhaseMatching::new(crystal, pump.wavelength_nm)?;
        let z_foc_mm = pump_focus(crystal.z_c_mm, crystal.length_mm, pm.n_pump());
        let half_length_um = 0.5 * crystal.length_um();
        let rows = (0..grid.omega.samples)
            .map(|j| {
                let omega = grid.omega.value(j);
                let (k_signal, k_idler) = pm.k_signal_idler(omega)?;
                Ok(OmegaRow {
                    omega,
                    k_signal,
                    k_idler,
                    mismatch: pm.k_pump - k_signal - k_idler - pm.grating_k,
                    exit_phase: Complex64::cis((k_signal + k_idler) * half_length_um),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            crystal: crystal.clone(),
            pump: *pump,
            z_foc_mm,
            pump_path_um: (crystal.z_c_mm - z_foc_mm) * UM_PER_MM,
            pm,
            half_length_um,
            rows,
        })
    }

    pub fn phase_matching(&self) -> &PhaseMatching {
        &self.pm
    }

    pub fn omega_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.omega).collect()
    }

    /// Pump envelope and focus phase for transverse pump momentum |q_p|².
    /// Also returns k_pz − k_p.
    pub(crate) fn pump_factor(&self, qp2: f64) -> (Complex64, f64) {
        let dkp = kz_minus_k(self.pm.k_pump, qp2);
        let w = self.pump.waist_um;
        let envelope = (-w * w * qp2 / 4.0).exp();
        let phase = Complex64::cis(self.pm.k_pump * self.pump_path_um) * Complex64::cis(dkp * self.pump_path_um);
        (envelope * phase, dkp)
    }

    /// Φ at an arbitrary point, evaluated from scratch.
    pub fn eval(&self, q_s: [f64; 2], q_i: [f64; 2], omega: f64) -> Result<Complex64> {
        let dk = self.pm.delta_kz(q_s, q_i, omega)?;
        let (ks, ki) = self.pm.k_signal_idler(omega)?;
        let qs2 = q_s[0] * q_s[0] + q_s[1] * q_s[1];
        let qi2 = q_i[0] * q_i[0] + q_i[1] * q_i[1];
        let qp2 = (q_s[0] + q_i[0]).powi(2) + (q_s[1] + q_i[1]).powi(2);
        let (pump, _) = self.pump_factor(qp2);
        let l2 = self.half_length_um;
        let exit = Complex64::cis((ks + ki) * l2) * Complex64::cis((kz_minus_k(ks, qs2) + kz_minus_k(ki, qi2)) * l2);
        Ok(sinc(dk * l2) * pump * exit)
    }

    /// Tables for one Ω slice of the Cartesian grid.
    pub fn cartesian_slice(&self, j: usize) -> Result<CartesianSlice<'_>> {
        let q = match self.grid.transverse {
            Transverse::Cartesian(q) => q,
            Transverse::Radial(_) => return Err(Error::Grid("field was built on a radial grid".into())),
        };
        let row = &self.rows[j];
        let n = q.samples;
        let l2 = self.half_length_um;
        let mut d_signal = Vec::with_capacity(n * n);
        let mut d_idler = Vec::with_capacity(n * n);
        let mut signal_phase = Vec::with_capacity(n * n);
        let mut idler_phase = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                let q2 = q.value(a).powi(2) + q.value(b).powi(2);
                let ds = kz_minus_k(row.k_signal, q2);
                let di = kz_minus_k(row.k_idler, q2);
                d_signal.push(ds);
                d_idler.push(di);
                signal_phase.push(Complex64::cis(ds * l2));
                idler_phase.push(Complex64::cis(di * l2));
            }
        }
        let m = 2 * n - 1;
        let mut pump = Vec::with_capacity(m * m);
        let mut d_pump = Vec::with_capacity(m * m);
        for a in 0..m {
            for b in 0..m {
                let (p, dkp) = self.pump_factor(q.sum_value(a).powi(2) + q.sum_value(b).powi(2));
                pump.push(p * row.exit_phase);
                d_pump.push(dkp);
            }
        }
        Ok(CartesianSlice {
            n,
            half_length_um: l2,
            mismatch: row.mismatch,
            d_signal,
            d_idler,
            signal_phase,
            idler_phase,
            pump,
            d_pump,
            _field: std::marker::PhantomData,
        })
    }

    /// Dumps one Ω slice of a Cartesian field as CSV with a metadata header.
    pub fn write_slice_csv<W: Write>(&self, mut out: W, j: usize) -> Result<()> {
        let slice = self.cartesian_slice(j)?;
        let q = match self.grid.transverse {
            Transverse::Cartesian(q) => q,
            Transverse::Radial(_) => unreachable!(),
        };
        writeln!(out, "# omega_rad_per_ps={}", self.rows[j].omega)?;
        writeln!(out, "# grid={}", serde_json::to_string(&self.grid)?)?;
        writeln!(out, "# pump={}", serde_json::to_string(&self.pump)?)?;
        writeln!(
            out,
            "# crystal_length_mm={} temperature_c={} z_c_mm={} z_foc_mm={}",
            self.crystal.length_mm, self.crystal.temperature_c, self.crystal.z_c_mm, self.z_foc_mm
        )?;
        writeln!(out, "q_sx,q_sy,q_ix,q_iy,re,im")?;
        let n = q.samples;
        let mut row = vec![Complex64::default(); n * n];
        for s in 0..n * n {
            slice.signal_row(s, &mut row);
            for (i, v) in row.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{:e},{:e}",
                    q.value(s / n),
                    q.value(s % n),
                    q.value(i / n),
                    q.value(i % n),
                    v.re,
                    v.im
                )?;
            }
        }
        Ok(())
    }
}

/// One Ω slice of Φ on a Cartesian grid, indexed `[q_sx][q_sy]` ×
/// `[q_ix][q_iy]` with row-major flattening.
pub struct CartesianSlice<'a> {
    n: usize,
    half_length_um: f64,
    mismatch: f64,
    d_signal: Vec<f64>,
    d_idler: Vec<f64>,
    signal_phase: Vec<Complex64>,
    idler_phase: Vec<Complex64>,
    /// Pump factor times the on-axis exit phase, indexed by (a+c, b+e).
    pump: Vec<Complex64>,
    d_pump: Vec<f64>,
    _field: std::marker::PhantomData<&'a ()>,
}

impl CartesianSlice<'_> {
    /// Fills `out[i] = Φ(q_s = s, q_i = i)` for every idler index.
    pub fn signal_row(&self, s: usize, out: &mut [Complex64]) {
        let n = self.n;
        let m = 2 * n - 1;
        let (a, b) = (s / n, s % n);
        let ds = self.d_signal[s];
        let sp = self.signal_phase[s];
        for c in 0..n {
            let prow = (a + c) * m + b;
            for e in 0..n {
                let i = c * n + e;
                let p = prow + e;
                let dk = self.mismatch + self.d_pump[p] - ds - self.d_idler[i];
                out[i] = self.pump[p] * (sp * self.idler_phase[i]) * sinc(dk * self.half_length_um);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Marginal |Φ|² over (q_x, Ω) for a signal photon with q_y = 0, with the
/// idler traced out over the grid, plus the plane-wave Δk_z = 0 locus.
#[derive(Debug, Clone, Serialize)]
pub struct CorrelationMap {
    pub q_values: Vec<f64>,
    pub omega_values: Vec<f64>,
    /// Row-major `[q][omega]`.
    pub intensity: Vec<f64>,
    /// Points (q, Ω) with Δk_z(q, −q, Ω) = 0 inside the Ω window.
    pub overlay: Vec<(f64, f64)>,
}

impl CorrelationMap {
    pub fn at(&self, qi: usize, oj: usize) -> f64 {
        self.intensity[qi * self.omega_values.len() + oj]
    }

    /// Long format, one row per (q_x, Ω) cell.
    pub fn write_csv<W: Write, P: Serialize + ?Sized>(&self, mut out: W, params: &P) -> Result<()> {
        write_header(&mut out, "correlation_map", params)?;
        writeln!(out, "q_x_per_um,omega_rad_per_ps,intensity")?;
        for (qi, q) in self.q_values.iter().enumerate() {
            for (oj, w) in self.omega_values.iter().enumerate() {
                writeln!(out, "{q:.8e},{w:.8e},{:.8e}", self.at(qi, oj))?;
            }
        }
        Ok(())
    }

    pub fn write_overlay_csv<W: Write, P: Serialize + ?Sized>(&self, mut out: W, params: &P) -> Result<()> {
        write_header(&mut out, "phase_matching_locus", params)?;
        writeln!(out, "q_x_per_um,omega_rad_per_ps")?;
        for (q, w) in &self.overlay {
            writeln!(out, "{q:.8e},{w:.8e}")?;
        }
        Ok(())
    }

    /// Ω of the maximum in each q column.
    pub fn ridge(&self) -> Vec<f64> {
        let no = self.omega_values.len();
        (0..self.q_values.len())
            .map(|qi| {
                let col = &self.intensity[qi * no..(qi + 1) * no];
                let (j, _) =
                    col.iter().enumerate().fold((0, f64::MIN), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
                self.omega_values[j]
            })
            .collect()
    }
}

pub fn correlation_map(field: &ModeFunctionField) -> Result<CorrelationMap> {
    let q = match field.grid.transverse {
        Transverse::Cartesian(q) => q,
        Transverse::Radial(_) => return Err(Error::Grid("correlation map needs a Cartesian grid".into())),
    };
    let qv = q.values();
    let no = field.rows.len();
    let l2 = field.half_length_um;
    // columns are independent; parallel over q_x
    let columns: Vec<Vec<f64>> = qv
        .par_iter()
        .map(|&qx| {
            let mut col = vec![0.0; no];
            for (j, row) in field.rows.iter().enumerate() {
                let ds = kz_minus_k(row.k_signal, qx * qx);
                let mut acc = 0.0;
                for &ix in &qv {
                    for &iy in &qv {
                        let qi2 = ix * ix + iy * iy;
                        let qp2 = (qx + ix).powi(2) + iy * iy;
                        let dkp = kz_minus_k(field.pm.k_pump, qp2);
                        let dk = row.mismatch + dkp - ds - kz_minus_k(row.k_idler, qi2);
                        let w = field.pump.waist_um;
                        let amp = sinc(dk * l2) * (-w * w * qp2 / 4.0).exp();
                        acc += amp * amp;
                    }
                }
                col[j] = acc;
            }
            col
        })
        .collect();
    let intensity = columns.into_iter().flatten().collect();
    let omega_values = field.omega_values();
    let overlay = phase_matching_locus(field.phase_matching(), &qv, &omega_values)?;
    Ok(CorrelationMap { q_values: qv, omega_values, intensity, overlay })
}

/// Ω(q) solving Δk_z((q,0), (−q,0), Ω) = 0, by bisection on the Ω window.
pub fn phase_matching_locus(pm: &PhaseMatching, q_values: &[f64], omega_values: &[f64]) -> Result<Vec<(f64, f64)>> {
    let lo0 = omega_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi0 = omega_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    for &q in q_values {
        let f = |w: f64| pm.delta_kz([q, 0.0], [-q, 0.0], w);
        let (mut lo, mut hi) = (lo0, hi0);
        let mut flo = f(lo)?;
        let fhi = f(hi)?;
        if flo.signum() == fhi.signum() {
            continue;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid)?;
            if fm.signum() == flo.signum() {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        out.push((q, 0.5 * (lo + hi)));
    }
    Ok(out)
}

/// Gauss–Legendre tables for the radial reduction.
#[derive(Debug, Clone)]
pub(crate) struct RadialTables {
    pub signal: (Vec<f64>, Vec<f64>),
    pub pump: (Vec<f64>, Vec<f64>),
    pub angle: (Vec<f64>, Vec<f64>),
    /// |q_i|² for each (pump, signal, angle) node triple, row-major.
    pub idler_q2: Vec<f64>,
    /// Pump factor and k_pz − k_p per pump node.
    pub pump_factor: Vec<(Complex64, f64)>,
}

impl ModeFunctionField {
    pub(crate) fn radial_tables(&self) -> Result<RadialTables> {
        let r = match self.grid.transverse {
            Transverse::Radial(r) => r,
            Transverse::Cartesian(_) => return Err(Error::Grid("field was built on a Cartesian grid".into())),
        };
        let signal = gauss_legendre(r.signal_nodes, 0.0, r.signal_extent);
        let pump = gauss_legendre(r.pump_nodes, 0.0, r.pump_extent);
        let angle = gauss_legendre(r.angle_nodes, 0.0, PI);
        let mut idler_q2 = Vec::with_capacity(r.pump_nodes * r.signal_nodes * r.angle_nodes);
        for &rp in &pump.0 {
            for &rs in &signal.0 {
                for &phi in &angle.0 {
                    idler_q2.push((rs * rs + rp * rp - 2.0 * rs * rp * phi.cos()).max(0.0));
                }
            }
        }
        let pump_factor = pump.0.iter().map(|&rp| self.pump_factor(rp * rp)).collect();
        Ok(RadialTables { signal, pump, angle, idler_q2, pump_factor })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::walkoff_constants;

    const PUMP: PumpConfig = PumpConfig { wavelength_nm: 404.25, waist_um: 12.9 };

    #[test]
    fn pump_focus_branches() {
        let (l, np) = (15.0, 1.84);
        assert_eq!(pump_focus(0.0, l, np), 0.0);
        let edge = l / (2.0 * np);
        let expect = -l / 2.0 + l / (2.0 * np);
        let inner = edge - np * edge;
        assert!((inner - expect).abs() < 1e-12);
        assert!((pump_focus(edge, l, np) - expect).abs() < 1e-12);
        assert!((pump_focus(20.0, l, np) - expect).abs() < 1e-12);
        assert!((pump_focus(-20.0, l, np) + expect).abs() < 1e-12);
    }

    #[test]
    fn pump_focus_continuous_and_slope() {
        let (l, np) = (15.0, 1.8413);
        let edge = l / (2.0 * np);
        for e in [edge, -edge] {
            let a = pump_focus(e - 1e-13, l, np);
            let b = pump_focus(e + 1e-13, l, np);
            assert!((a - b).abs() < 1e-12);
        }
        let h = 1e-4;
        for z in [-3.0, 0.0, 1.7] {
            let slope = (pump_focus(z + h, l, np) - pump_focus(z - h, l, np)) / (2.0 * h);
            assert!((slope - (1.0 - np)).abs() < 1e-9);
        }
    }

    fn test_field(t: f64, cartesian: bool) -> (ModeFunctionField, WalkoffConstants) {
        let crystal = CrystalConfig::ppktp(t);
        let w = walkoff_constants(&crystal, PUMP.wavelength_nm).unwrap();
        let overrides = GridOverrides { omega_samples: Some(32), q_samples: Some(8), ..Default::default() };
        let grid = default_grid(cartesian, &w, &crystal, &PUMP, None, &overrides);
        (ModeFunctionField::new(grid, &crystal, &PUMP).unwrap(), w)
    }

    #[test]
    fn peak_on_axis_at_degeneracy() {
        let crystal = CrystalConfig::ppktp(59.0);
        let w = walkoff_constants(&crystal, PUMP.wavelength_nm).unwrap();
        let (field, _) = test_field(w.t0_c, true);
        let peak = field.eval([0.0; 2], [0.0; 2], 0.0).unwrap().norm();
        let mut rng_like = 0.37f64;
        for _ in 0..200 {
            rng_like = (rng_like * 97.13).fract();
            let qs = [0.3 * (rng_like - 0.5), 0.2 * (0.5 - rng_like * rng_like)];
            let qi = [0.1 * rng_like, -0.25 * (rng_like - 0.3)];
            let om = 4.0 * (rng_like - 0.5);
            assert!(field.eval(qs, qi, om).unwrap().norm() <= peak * (1.0 + 1e-12));
        }
        // sinc and Gaussian both unity on axis
        assert!((peak - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sinc_zero_and_gaussian_envelope() {
        let crystal = CrystalConfig::ppktp(59.0);
        let w = walkoff_constants(&crystal, PUMP.wavelength_nm).unwrap();
        let (field, _) = test_field(w.t0_c, true);
        let l2 = field.half_length_um;
        // collinear detuning with Δk L/2 = π
        let target = PI / l2;
        let pm = field.phase_matching();
        let (mut lo, mut hi) = (0.0, 5.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if pm.delta_kz([0.0; 2], [0.0; 2], mid).unwrap() < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!(field.eval([0.0; 2], [0.0; 2], lo).unwrap().norm() < 1e-9);

        // q_s = q_i = q with |q_s+q_i| = 2/w: pick Ω to cancel Δk
        let q = 1.0 / PUMP.waist_um;
        let qs = [q, 0.0];
        let (mut lo, mut hi) = (-5.0, 5.0);
        let f = |om: f64| pm.delta_kz(qs, qs, om).unwrap();
        let flo = f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid).signum() == flo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let v = field.eval(qs, qs, lo).unwrap().norm();
        assert!((v - (-1.0f64).exp()).abs() < 1e-6, "{v}");
    }

    #[test]
    fn modulus_independent_of_crystal_position() {
        let crystal = CrystalConfig::ppktp(59.0);
        let w = walkoff_constants(&crystal, PUMP.wavelength_nm).unwrap();
        let grid = default_grid(true, &w, &crystal, &PUMP, None, &GridOverrides::default());
        let a = ModeFunctionField::new(grid, &crystal, &PUMP).unwrap();
        let b = ModeFunctionField::new(grid, &crystal.with_position(1.3), &PUMP).unwrap();
        for k in 0..50 {
            let x = k as f64 * 0.004;
            let qs = [x, -0.5 * x];
            let qi = [0.02 - x, 0.3 * x];
            let om = 0.1 * k as f64 - 2.0;
            let (fa, fb) = (a.eval(qs, qi, om).unwrap(), b.eval(qs, qi, om).unwrap());
            assert!((fa.norm() - fb.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn pump_envelope_depends_on_sum_only() {
        let (field, _) = test_field(59.0, true);
        for k in 0..40 {
            let a = [0.01 * k as f64, -0.003 * k as f64];
            let b = [0.05 - 0.002 * k as f64, 0.01];
            let shift = [0.017 * (k as f64).sin(), 0.011];
            let s1 = (a[0] + b[0]).powi(2) + (a[1] + b[1]).powi(2);
            let a2 = [a[0] + shift[0], a[1] + shift[1]];
            let b2 = [b[0] - shift[0], b[1] - shift[1]];
            let s2 = (a2[0] + b2[0]).powi(2) + (a2[1] + b2[1]).powi(2);
            let (p1, _) = field.pump_factor(s1);
            let (p2, _) = field.pump_factor(s2);
            assert!((p1 - p2).norm() < 1e-9 * p1.norm().max(1e-300));
        }
    }

    #[test]
    fn cartesian_slice_matches_pointwise_eval() {
        let (field, _) = test_field(59.0, true);
        let q = match field.grid.transverse {
            Transverse::Cartesian(q) => q,
            _ => unreachable!(),
        };
        let n = q.samples;
        for j in [0, 7, 16, 31] {
            let slice = field.cartesian_slice(j).unwrap();
            let mut row = vec![Complex64::default(); n * n];
            for s in [0, 5, n * n - 1] {
                slice.signal_row(s, &mut row);
                for i in [0, 3, 17, n * n - 1] {
                    let qs = [q.value(s / n), q.value(s % n)];
                    let qi = [q.value(i / n), q.value(i % n)];
                    let want = field.eval(qs, qi, field.grid.omega.value(j)).unwrap();
                    assert!((row[i] - want).norm() < 1e-9, "{j} {s} {i}");
                }
            }
        }
    }

    #[test]
    fn correlation_map_shape() {
        let crystal = CrystalConfig::ppktp(59.0);
        let w = walkoff_constants(&crystal, PUMP.wavelength_nm).unwrap();
        let crystal = crystal.with_temperature(w.t0_c);
        let overrides = GridOverrides { omega_samples: Some(64), q_samples: Some(15), ..Default::default() };
        let grid = default_grid(true, &w, &crystal, &PUMP, None, &overrides);
        let field = ModeFunctionField::new(grid, &crystal, &PUMP).unwrap();
        let map = correlation_map(&field).unwrap();
        assert!(map.intensity.iter().all(|v| v.is_finite() && *v >= 0.0));
        // tracing out the idler pulls the q_x = 0 ridge slightly, but it
        // stays inside the central sinc lobe and the map is even in q_x
        let ridge = map.ridge();
        let lobe = 2.0 * PI / w.window_ps(15.0);
        assert!(ridge[7].abs() < 0.5 * lobe, "{}", ridge[7]);
        for k in 0..15 {
            assert_eq!(ridge[k], ridge[14 - k]);
        }
        // locus Ω ∝ −|q|²: check linearity in q² on the overlay
        let pts: Vec<_> = map.overlay.iter().filter(|(q, _)| *q > 0.0).collect();
        assert!(pts.len() >= 3);
        let slopes: Vec<f64> = pts.iter().map(|(q, om)| om / (q * q)).collect();
        for s in &slopes {
            assert!((s - slopes[0]).abs() < 0.02 * slopes[0].abs());
        }
    }

    #[test]
    fn radial_tables_geometry() {
        let (field, _) = test_field(59.0, false);
        let t = field.radial_tables().unwrap();
        let r = match field.grid.transverse {
            Transverse::Radial(r) => r,
            _ => unreachable!(),
        };
        assert_eq!(t.idler_q2.len(), r.signal_nodes * r.pump_nodes * r.angle_nodes);
        assert!(field.cartesian_slice(0).is_err());
    }

    #[test]
    fn grid_coverage_check() {
        let crystal = CrystalConfig::ppktp(59.0);
        let w = walkoff_constants(&crystal, PUMP.wavelength_nm).unwrap();
        let grid = default_grid(true, &w, &crystal, &PUMP, None, &GridOverrides::default());
        grid.check_coverage(PUMP.waist_um, w.window_ps(15.0)).unwrap();
        let narrow = default_grid(
            true,
            &w,
            &crystal,
            &PUMP,
            None,
            &GridOverrides { q_half_extent_per_um: Some(0.1), ..Default::default() },
        );
        assert!(narrow.check_coverage(PUMP.waist_um, w.window_ps(15.0)).is_err());
    }
}
