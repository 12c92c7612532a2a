//! Detection: projection onto Gaussian fibre modes, thin-lens Fresnel
//! propagation onto a finite free-space detector, and the spectral bandpass.
//!
//! Both photons see the same optics. The defocus
//! `d = f1 − (z_CL − z_c − L/2)` is measured from the crystal exit facet.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biphoton::{CartesianSlice, ModeFunctionField, OmegaAxis, Transverse};
use crate::dispersion::kz_minus_k;
use crate::error::{Error, Result};
use crate::units::{k_air, sinc, wavelength_um_from_omega, FWHM_PER_SIGMA, UM_PER_MM, UM_PER_NM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheme {
    Smf {
        fiber_waist_um: f64,
    },
    FreeSpace {
        detector_side_um: f64,
        /// Lattice points per axis per detector.
        #[serde(default = "default_lattice_points")]
        lattice_points: usize,
    },
    /// Free-space detectors larger than the whole image; every transverse
    /// plane-wave mode is counted.
    OpenAperture,
}

pub const DEFAULT_LATTICE_POINTS: usize = 7;

fn default_lattice_points() -> usize {
    DEFAULT_LATTICE_POINTS
}

/// Gaussian spectral filter, same for both photons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bandpass {
    pub center_nm: f64,
    /// FWHM of the intensity transmission in wavelength.
    pub fwhm_nm: f64,
}

impl Bandpass {
    pub fn at_degeneracy(pump_wavelength_nm: f64, fwhm_nm: f64) -> Self {
        Self { center_nm: 2.0 * pump_wavelength_nm, fwhm_nm }
    }

    /// Amplitude transmission for light at angular frequency `omega`.
    pub fn amplitude(&self, omega: f64) -> f64 {
        let lambda_nm = wavelength_um_from_omega(omega) / UM_PER_NM;
        let sigma = self.fwhm_nm / FWHM_PER_SIGMA;
        let x = lambda_nm - self.center_nm;
        (-x * x / (4.0 * sigma * sigma)).exp()
    }
}

/// Amplitude transmission of an optional filter; 1 when absent.
pub fn bandpass_amplitude(omega: f64, filter: Option<&Bandpass>) -> f64 {
    filter.map_or(1.0, |f| f.amplitude(omega))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub scheme: Scheme,
    pub f1_mm: f64,
    pub f2_mm: f64,
    pub z_cl_mm: f64,
    pub bandpass: Option<Bandpass>,
}

impl DetectionConfig {
    pub fn smf(fiber_waist_um: f64, f1_mm: f64, z_cl_mm: f64) -> Self {
        Self { scheme: Scheme::Smf { fiber_waist_um }, f1_mm, f2_mm: f1_mm, z_cl_mm, bandpass: None }
    }

    pub fn free_space(detector_side_um: f64, f1_mm: f64, f2_mm: f64, z_cl_mm: f64) -> Self {
        Self {
            scheme: Scheme::FreeSpace { detector_side_um, lattice_points: DEFAULT_LATTICE_POINTS },
            f1_mm,
            f2_mm,
            z_cl_mm,
            bandpass: None,
        }
    }

    pub fn with_bandpass(mut self, bandpass: Option<Bandpass>) -> Self {
        self.bandpass = bandpass;
        self
    }

    /// Lens position that leaves the crystal centred in the detected
    /// walk-off window at z_c = 0: `d = L/(2n)`, which cancels the
    /// paraxial part of the in-crystal exit phase.
    pub fn reference_z_cl_mm(f1_mm: f64, length_mm: f64, n_mean: f64) -> f64 {
        f1_mm + length_mm / 2.0 - length_mm / (2.0 * n_mean)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f1_mm > 0.0) || !(self.f2_mm > 0.0) {
            return Err(Error::Config(format!(
                "focal lengths must be > 0, got f1 = {} mm, f2 = {} mm",
                self.f1_mm, self.f2_mm
            )));
        }
        if !self.z_cl_mm.is_finite() {
            return Err(Error::Config("collection lens position must be finite".into()));
        }
        match self.scheme {
            Scheme::Smf { fiber_waist_um } if !(fiber_waist_um > 0.0) => {
                return Err(Error::Config(format!("fibre waist must be > 0, got {fiber_waist_um} um")));
            }
            Scheme::FreeSpace { detector_side_um, lattice_points } => {
                if !(detector_side_um >= 0.0) || !detector_side_um.is_finite() {
                    return Err(Error::Config(format!("detector side must be >= 0, got {detector_side_um} um")));
                }
                if lattice_points == 0 {
                    return Err(Error::Config("detector lattice needs at least one point".into()));
                }
            }
            _ => {}
        }
        if let Some(b) = self.bandpass {
            if !(b.center_nm > 0.0) || !(b.fwhm_nm > 0.0) {
                return Err(Error::Config("bandpass center and FWHM must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Defocus d in µm for a crystal centred at `z_c_mm`.
    pub fn defocus_um(&self, z_c_mm: f64, length_mm: f64) -> f64 {
        (self.f1_mm - (self.z_cl_mm - z_c_mm - length_mm / 2.0)) * UM_PER_MM
    }

    /// Ratio f1/f2 multiplying r·q in the detector kernel.
    pub fn kappa(&self) -> f64 {
        self.f1_mm / self.f2_mm
    }

    pub fn fiber_waist_um(&self) -> Result<f64> {
        match self.scheme {
            Scheme::Smf { fiber_waist_um } => Ok(fiber_waist_um),
            _ => Err(Error::Config("fibre mode requested under free-space detection".into())),
        }
    }

    /// Gaussian fibre mode at the exit facet, for light of frequency `omega`.
    pub fn gaussian_mode(&self, q: [f64; 2], omega: f64, d_um: f64) -> Result<Complex64> {
        let wf = self.fiber_waist_um()?;
        Ok(gaussian_detection_mode(q[0] * q[0] + q[1] * q[1], k_air(omega), wf, d_um))
    }

    /// Detector lattice coordinates along one axis.
    pub fn lattice(&self) -> Result<Vec<f64>> {
        match self.scheme {
            Scheme::FreeSpace { detector_side_um, lattice_points } => {
                Ok(detector_lattice(detector_side_um, lattice_points))
            }
            _ => Err(Error::Config("detector lattice needs a finite free-space detector".into())),
        }
    }
}

/// `(w_f/√2π) exp(−w_f²|q|²/4) exp(−i|q|² d/(2 k_air))`.
pub fn gaussian_detection_mode(q2: f64, k_air: f64, fiber_waist_um: f64, d_um: f64) -> Complex64 {
    let wf = fiber_waist_um;
    let amp = wf / (2.0 * PI).sqrt() * (-wf * wf * q2 / 4.0).exp();
    amp * Complex64::cis(-q2 * d_um / (2.0 * k_air))
}

/// Paraxial free-space propagation over `d_um`.
pub fn propagation_phase(q2: f64, k_air: f64, d_um: f64) -> Complex64 {
    Complex64::cis(-k_air * d_um) * Complex64::cis(q2 / (2.0 * k_air) * d_um)
}

/// Thin-lens kernel linking detector point `r` to transverse momentum `q`.
pub fn detector_kernel(r: [f64; 2], q: [f64; 2], kappa: f64) -> Complex64 {
    Complex64::cis(-kappa * (r[0] * q[0] + r[1] * q[1]))
}

/// Midpoints of `n` equal cells across `[-side/2, side/2]`.
pub fn detector_lattice(side_um: f64, n: usize) -> Vec<f64> {
    let h = side_um / n as f64;
    (0..n).map(|k| -side_um / 2.0 + (k as f64 + 0.5) * h).collect()
}

/// Joint amplitude over the Ω grid for one detection channel pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralAmplitude {
    pub omega: OmegaAxis,
    pub values: Vec<Complex64>,
}

impl SpectralAmplitude {
    pub fn new(omega: OmegaAxis, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != omega.samples {
            return Err(Error::Grid(format!("{} values for {} omega samples", values.len(), omega.samples)));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Grid("non-finite spectral amplitude".into()));
        }
        Ok(Self { omega, values })
    }

    /// ∫|A|² dΩ on the grid.
    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.omega.spacing
    }

    /// RMS width of |A|² in Ω.
    pub fn rms_width(&self) -> f64 {
        let w: Vec<f64> = self.values.iter().map(|v| v.norm_sqr()).collect();
        let m0: f64 = w.iter().sum();
        let m1: f64 = w.iter().enumerate().map(|(j, v)| v * self.omega.value(j)).sum::<f64>() / m0;
        let m2: f64 = w.iter().enumerate().map(|(j, v)| v * (self.omega.value(j) - m1).powi(2)).sum::<f64>() / m0;
        m2.sqrt()
    }
}

/// Amplitudes for a set of detector point pairs over the Ω grid.
///
/// Pair index is row-major over (r_sx, r_sy, r_ix, r_iy); `values` is
/// `[Ω][pair]`.
#[derive(Debug, Clone)]
pub struct PairAmplitudes {
    pub omega: OmegaAxis,
    pub pairs: usize,
    pub values: Vec<Complex64>,
}

impl PairAmplitudes {
    pub fn pair(&self, p: usize) -> SpectralAmplitude {
        let values = (0..self.omega.samples).map(|j| self.values[j * self.pairs + p]).collect();
        SpectralAmplitude { omega: self.omega, values }
    }
}

/// Frequency-dependent quantities for one photon at one Ω.
struct Photon {
    k_air: f64,
    filter: f64,
}

fn photons(field: &ModeFunctionField, det: &DetectionConfig, omega: f64) -> (Photon, Photon) {
    let pm = field.phase_matching();
    let (ws, wi) = (pm.omega_signal(omega), pm.omega_idler(omega));
    let f = det.bandpass.as_ref();
    (
        Photon { k_air: k_air(ws), filter: bandpass_amplitude(ws, f) },
        Photon { k_air: k_air(wi), filter: bandpass_amplitude(wi, f) },
    )
}

/// Projects Φ onto the fibre modes of both photons.
///
/// Uses the rotationally reduced quadrature on a radial grid; on a
/// Cartesian grid it falls back to the direct 4D sum.
pub fn project_smf(field: &ModeFunctionField, det: &DetectionConfig) -> Result<SpectralAmplitude> {
    let wf = det.fiber_waist_um()?;
    smf_with_prefactor(field, det, wf / (2.0 * PI).sqrt())
}

pub(crate) fn smf_with_prefactor(
    field: &ModeFunctionField,
    det: &DetectionConfig,
    prefactor: f64,
) -> Result<SpectralAmplitude> {
    det.validate()?;
    let wf = det.fiber_waist_um()?;
    let d = det.defocus_um(field.crystal.z_c_mm, field.crystal.length_mm);
    let values = match field.grid.transverse {
        Transverse::Radial(_) => smf_radial(field, det, wf, prefactor, d)?,
        Transverse::Cartesian(_) => smf_cartesian(field, det, wf, prefactor, d)?,
    };
    SpectralAmplitude::new(field.grid.omega, values)
}

fn smf_radial(field: &ModeFunctionField, det: &DetectionConfig, wf: f64, pre: f64, d: f64) -> Result<Vec<Complex64>> {
    let t = field.radial_tables()?;
    let l2 = field.half_length_um;
    let (ns, na) = (t.signal.0.len(), t.angle.0.len());
    // q_p = q_s + q_i with relative angle φ ∈ [0, π], doubled for (π, 2π)
    // and 2π from the overall rotation.
    let measure = 4.0 * PI;
    let values = field
        .rows
        .par_iter()
        .map(|row| {
            let (s, i) = photons(field, det, row.omega);
            let signal: Vec<(f64, Complex64)> = t
                .signal
                .0
                .iter()
                .zip(&t.signal.1)
                .map(|(&rho, &w)| {
                    let q2 = rho * rho;
                    let ds = kz_minus_k(row.k_signal, q2);
                    let g = pre * (-wf * wf * q2 / 4.0).exp();
                    (ds, w * rho * g * Complex64::cis(ds * l2 + q2 * d / (2.0 * s.k_air)))
                })
                .collect();
            let mut acc = Complex64::default();
            for (p, (&rho_p, &w_p)) in t.pump.0.iter().zip(&t.pump.1).enumerate() {
                let (pump, dkp) = t.pump_factor[p];
                let mut inner = Complex64::default();
                for (si, &(ds, sw)) in signal.iter().enumerate() {
                    let base = (p * ns + si) * na;
                    let mut ang = Complex64::default();
                    for (a, &wa) in t.angle.1.iter().enumerate() {
                        let qi2 = t.idler_q2[base + a];
                        let env = (-wf * wf * qi2 / 4.0).exp();
                        if env < 1e-20 {
                            continue;
                        }
                        let di = kz_minus_k(row.k_idler, qi2);
                        let dk = row.mismatch + dkp - ds - di;
                        let phase = di * l2 + qi2 * d / (2.0 * i.k_air);
                        ang += (wa * env * sinc(dk * l2)) * Complex64::cis(phase);
                    }
                    inner += sw * ang;
                }
                acc += w_p * rho_p * pump * inner;
            }
            acc * row.exit_phase * (measure * pre * s.filter * i.filter)
        })
        .collect();
    Ok(values)
}

fn smf_cartesian(
    field: &ModeFunctionField,
    det: &DetectionConfig,
    wf: f64,
    pre: f64,
    d: f64,
) -> Result<Vec<Complex64>> {
    let q = match field.grid.transverse {
        Transverse::Cartesian(q) => q,
        Transverse::Radial(_) => unreachable!(),
    };
    let n = q.samples;
    let q2: Vec<f64> = (0..n * n).map(|k| q.value(k / n).powi(2) + q.value(k % n).powi(2)).collect();
    let dq4 = q.spacing.powi(4);
    (0..field.rows.len())
        .into_par_iter()
        .map(|j| {
            let row = &field.rows[j];
            let slice = field.cartesian_slice(j)?;
            let (s, i) = photons(field, det, row.omega);
            let gs: Vec<Complex64> = q2.iter().map(|&v| gaussian_detection_mode(v, s.k_air, wf, d).conj()).collect();
            let gi: Vec<Complex64> = q2.iter().map(|&v| gaussian_detection_mode(v, i.k_air, wf, d).conj()).collect();
            let scale = pre / (wf / (2.0 * PI).sqrt());
            let mut buf = vec![Complex64::default(); n * n];
            let mut acc = Complex64::default();
            for (si, g) in gs.iter().enumerate() {
                slice.signal_row(si, &mut buf);
                let inner: Complex64 = buf.iter().zip(&gi).map(|(f, g)| f * g).sum();
                acc += g * inner;
            }
            Ok(acc * dq4 * scale * scale * s.filter * i.filter)
        })
        .collect()
}

/// Amplitudes at every pair of points of the configured detector lattice.
pub fn project_free_space(field: &ModeFunctionField, det: &DetectionConfig) -> Result<PairAmplitudes> {
    det.validate()?;
    let lat = det.lattice()?;
    if let (Scheme::FreeSpace { detector_side_um, .. }, Transverse::Cartesian(q)) = (det.scheme, field.grid.transverse)
    {
        // the sampled q axis makes the image periodic in r
        let period = 2.0 * PI / (det.kappa() * q.spacing);
        if detector_side_um > period {
            return Err(Error::Grid(format!(
                "detector side {detector_side_um} um exceeds the image period {period:.1} um of the q grid; \
                 refine q_samples or use the open_aperture scheme"
            )));
        }
    }
    free_space_amplitudes(field, det, [&lat, &lat, &lat, &lat])
}

/// Amplitude for a single pair of detector points.
pub fn point_pair_amplitude(
    field: &ModeFunctionField,
    det: &DetectionConfig,
    r_s: [f64; 2],
    r_i: [f64; 2],
) -> Result<SpectralAmplitude> {
    det.validate()?;
    if let Scheme::Smf { .. } = det.scheme {
        return Err(Error::Config("point-pair amplitudes need free-space detection".into()));
    }
    let a = free_space_amplitudes(field, det, [&[r_s[0]], &[r_s[1]], &[r_i[0]], &[r_i[1]]])?;
    Ok(a.pair(0))
}

/// Contracts Φ with the propagation phases and detector kernels, one
/// transverse axis at a time. `axes` holds the detector coordinates for
/// (r_sx, r_sy, r_ix, r_iy).
pub fn free_space_amplitudes(
    field: &ModeFunctionField,
    det: &DetectionConfig,
    axes: [&[f64]; 4],
) -> Result<PairAmplitudes> {
    let q = match field.grid.transverse {
        Transverse::Cartesian(q) => q,
        Transverse::Radial(_) => return Err(Error::Grid("free-space detection needs a Cartesian grid".into())),
    };
    let n = q.samples;
    let qv = q.values();
    let kappa = det.kappa();
    let d = det.defocus_um(field.crystal.z_c_mm, field.crystal.length_mm);
    let kernel = |r: &[f64]| -> Vec<Complex64> {
        r.iter().flat_map(|&x| qv.iter().map(move |&qq| Complex64::cis(-kappa * x * qq) * q.spacing)).collect()
    };
    let [esx, esy, eix, eiy] = axes.map(kernel);
    let [msx, msy, mix, miy] = axes.map(|a| a.len());
    let mi = mix * miy;
    let pairs = msx * msy * mi;
    let q2: Vec<f64> = (0..n * n).map(|k| qv[k / n].powi(2) + qv[k % n].powi(2)).collect();

    let per_omega: Vec<Vec<Complex64>> = (0..field.rows.len())
        .into_par_iter()
        .map(|j| -> Result<Vec<Complex64>> {
            let row = &field.rows[j];
            let slice = field.cartesian_slice(j)?;
            let (s, i) = photons(field, det, row.omega);
            let ps: Vec<Complex64> = q2.iter().map(|&v| propagation_phase(v, s.k_air, d) * s.filter).collect();
            let pi: Vec<Complex64> = q2.iter().map(|&v| propagation_phase(v, i.k_air, d) * i.filter).collect();
            let mut buf = vec![Complex64::default(); n * n];
            let mut half = vec![Complex64::default(); mix * n];
            // y[s][rix][riy]
            let mut y = vec![Complex64::default(); n * n * mi];
            for s_idx in 0..n * n {
                slice.signal_row(s_idx, &mut buf);
                for (b, p) in buf.iter_mut().zip(&pi) {
                    *b *= p;
                }
                // contract q_ix
                for rx in 0..mix {
                    let e = &eix[rx * n..(rx + 1) * n];
                    for qe in 0..n {
                        let mut acc = Complex64::default();
                        for c in 0..n {
                            acc += e[c] * buf[c * n + qe];
                        }
                        half[rx * n + qe] = acc;
                    }
                }
                // contract q_iy
                let out = &mut y[s_idx * mi..(s_idx + 1) * mi];
                let sp = ps[s_idx];
                for rx in 0..mix {
                    for ry in 0..miy {
                        let e = &eiy[ry * n..(ry + 1) * n];
                        let h = &half[rx * n..(rx + 1) * n];
                        let acc: Complex64 = e.iter().zip(h).map(|(a, b)| a * b).sum();
                        out[rx * miy + ry] = acc * sp;
                    }
                }
            }
            // contract q_sy: w[a][rsy][ri]
            let mut w = vec![Complex64::default(); n * msy * mi];
            for a in 0..n {
                for ry in 0..msy {
                    let e = &esy[ry * n..(ry + 1) * n];
                    let dst = &mut w[(a * msy + ry) * mi..(a * msy + ry + 1) * mi];
                    for (b, eb) in e.iter().enumerate() {
                        let src = &y[(a * n + b) * mi..(a * n + b + 1) * mi];
                        for (o, v) in dst.iter_mut().zip(src) {
                            *o += eb * v;
                        }
                    }
                }
            }
            // contract q_sx
            let mut z = vec![Complex64::default(); pairs];
            for rx in 0..msx {
                let e = &esx[rx * n..(rx + 1) * n];
                for (a, ea) in e.iter().enumerate() {
                    let src = &w[a * msy * mi..(a + 1) * msy * mi];
                    let dst = &mut z[rx * msy * mi..(rx + 1) * msy * mi];
                    for (o, v) in dst.iter_mut().zip(src) {
                        *o += ea * v;
                    }
                }
            }
            Ok(z)
        })
        .collect::<Result<_>>()?;
    Ok(PairAmplitudes { omega: field.grid.omega, pairs, values: per_omega.into_iter().flatten().collect() })
}

/// Plane-wave mode amplitudes seen by unbounded detectors.
///
/// Integrating |A(r_s, r_i)|² over both detector planes turns the Fourier
/// kernel into a sum over q modes (Parseval), so an infinite detector is an
/// incoherent sum over (q_s, q_i) of the propagated Φ, each weighted by
/// `weight()`.
pub struct OpenAperture<'a> {
    slices: Vec<CartesianSlice<'a>>,
    signal: Vec<Vec<Complex64>>,
    idler: Vec<Vec<Complex64>>,
    modes: usize,
    weight: f64,
}

impl<'a> OpenAperture<'a> {
    pub fn new(field: &'a ModeFunctionField, det: &DetectionConfig) -> Result<Self> {
        det.validate()?;
        let q = match field.grid.transverse {
            Transverse::Cartesian(q) => q,
            Transverse::Radial(_) => return Err(Error::Grid("free-space detection needs a Cartesian grid".into())),
        };
        let n = q.samples;
        let q2: Vec<f64> = (0..n * n).map(|k| q.value(k / n).powi(2) + q.value(k % n).powi(2)).collect();
        let d = det.defocus_um(field.crystal.z_c_mm, field.crystal.length_mm);
        let mut slices = Vec::with_capacity(field.rows.len());
        let (mut signal, mut idler) = (Vec::new(), Vec::new());
        for (j, row) in field.rows.iter().enumerate() {
            slices.push(field.cartesian_slice(j)?);
            let (s, i) = photons(field, det, row.omega);
            signal.push(q2.iter().map(|&v| propagation_phase(v, s.k_air, d) * s.filter).collect());
            idler.push(q2.iter().map(|&v| propagation_phase(v, i.k_air, d) * i.filter).collect());
        }
        let weight = (2.0 * PI * q.spacing / det.kappa()).powi(4);
        Ok(Self { slices, signal, idler, modes: n * n, weight })
    }

    /// Number of transverse modes per photon.
    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn omega_samples(&self) -> usize {
        self.slices.len()
    }

    /// Detector-area factor `(2π Δq/κ)⁴` per mode pair.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Fills `out[j * modes + i]` with the amplitude of signal mode `s` and
    /// idler mode `i` at frequency sample `j`.
    pub fn signal_block(&self, s: usize, out: &mut [Complex64]) {
        let m = self.modes;
        for (j, slice) in self.slices.iter().enumerate() {
            let row = &mut out[j * m..(j + 1) * m];
            slice.signal_row(s, row);
            let sp = self.signal[j][s];
            for (v, p) in row.iter_mut().zip(&self.idler[j]) {
                *v *= sp * p;
            }
        }
    }
}
