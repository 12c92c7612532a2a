//! Signal–idler delay distributions.
//!
//! For a spectral amplitude A(Ω) on a uniform grid,
//! `R(τ) = (1/2π) |Σ_j A(Ω_j) e^{iΩ_j τ} ΔΩ|²`,
//! so that `∫R dτ = ∫|A|² dΩ`. The sum is evaluated with a zero-padded
//! inverse FFT; padding only interpolates the same trigonometric sum onto
//! a finer τ grid.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::biphoton::{ModeFunctionField, OmegaAxis};
use crate::detection::{
    point_pair_amplitude, project_free_space, project_smf, Bandpass, DetectionConfig, OpenAperture, PairAmplitudes,
    Scheme, SpectralAmplitude,
};
use crate::error::{Error, Result};
use crate::export::write_header;

pub const DEFAULT_PADDING: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub model: String,
    pub scheme: String,
    pub z_c_mm: f64,
    pub z_cl_mm: f64,
    pub temperature_c: f64,
    pub bandpass: Option<Bandpass>,
}

impl Provenance {
    pub fn from_setup(field: &ModeFunctionField, det: &DetectionConfig) -> Self {
        let scheme = match det.scheme {
            Scheme::Smf { .. } => "smf",
            Scheme::FreeSpace { .. } => "free_space",
            Scheme::OpenAperture => "open_aperture",
        };
        Self {
            model: "full".into(),
            scheme: scheme.into(),
            z_c_mm: field.crystal.z_c_mm,
            z_cl_mm: det.z_cl_mm,
            temperature_c: field.crystal.temperature_c,
            bandpass: det.bandpass,
        }
    }
}

/// Density on a uniform τ grid starting at `tau_start`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayDistribution {
    pub tau_start: f64,
    pub dtau: f64,
    pub values: Vec<f64>,
    pub normalized: bool,
    /// ∫R dτ before normalization; the relative coincidence rate.
    pub raw_mass: f64,
    /// Native resolution 2π/(Ω extent) of the underlying spectrum.
    pub resolution: f64,
    pub provenance: Option<Provenance>,
}

impl DelayDistribution {
    pub fn tau(&self, k: usize) -> f64 {
        self.tau_start + k as f64 * self.dtau
    }

    pub fn taus(&self) -> Vec<f64> {
        (0..self.values.len()).map(|k| self.tau(k)).collect()
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dtau
    }

    /// Copy scaled to unit integral; `raw_mass` keeps the original mass.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.integral();
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::ZeroMass);
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v /= m);
        out.normalized = true;
        if !self.normalized {
            out.raw_mass = m;
        }
        Ok(out)
    }

    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        self.values.iter().enumerate().filter(|(k, _)| (lo..=hi).contains(&self.tau(*k))).map(|(_, v)| v).sum::<f64>()
            * self.dtau
    }

    /// Location of the maximum, refined by a parabola through three samples.
    pub fn peak(&self) -> f64 {
        let (k, _) = self.values.iter().enumerate().fold((0, f64::MIN), |a, (k, &v)| if v > a.1 { (k, v) } else { a });
        refine_extremum(&self.values, k, self.tau(k), self.dtau)
    }

    /// Outermost crossings of `fraction` of the peak height, linearly
    /// interpolated. With a few percent these track the walk-off limits
    /// rather than the flanks of the central peak.
    pub fn support_edges(&self, fraction: f64) -> (f64, f64) {
        let level = fraction * self.values.iter().cloned().fold(0.0, f64::max);
        let v = &self.values;
        let cross = |k: usize, j: usize| {
            let t = (level - v[k]) / (v[j] - v[k]);
            self.tau(k) + t * (self.tau(j) - self.tau(k))
        };
        let first = v.iter().position(|&x| x >= level).unwrap_or(0);
        let last = v.iter().rposition(|&x| x >= level).unwrap_or(0);
        let lo = if first > 0 { cross(first - 1, first) } else { self.tau(0) };
        let hi = if last + 1 < v.len() { cross(last, last + 1) } else { self.tau(last) };
        (lo, hi)
    }

    /// Keeps samples with τ in `[lo, hi]`.
    pub fn crop(&self, lo: f64, hi: f64) -> Self {
        let keep: Vec<usize> = (0..self.values.len()).filter(|&k| (lo..=hi).contains(&self.tau(k))).collect();
        let (a, b) = (keep.first().copied().unwrap_or(0), keep.last().map_or(0, |k| k + 1));
        Self { tau_start: self.tau(a), values: self.values[a..b].to_vec(), ..self.clone() }
    }

    pub fn write_csv<W: Write, P: Serialize + ?Sized>(&self, mut out: W, params: &P) -> Result<()> {
        write_header(&mut out, "delay_distribution", params)?;
        if let Some(p) = &self.provenance {
            writeln!(out, "# provenance={}", serde_json::to_string(p)?)?;
        }
        writeln!(out, "# raw_mass={:e} normalized={}", self.raw_mass, self.normalized)?;
        writeln!(out, "tau_ps,density")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(out, "{:.6},{:e}", self.tau(k), v)?;
        }
        Ok(())
    }
}

fn refine_extremum(v: &[f64], k: usize, x: f64, h: f64) -> f64 {
    if k == 0 || k + 1 >= v.len() {
        return x;
    }
    let (a, b, c) = (v[k - 1], v[k], v[k + 1]);
    let den = a - 2.0 * b + c;
    if den == 0.0 {
        return x;
    }
    x + 0.5 * h * (a - c) / den
}

/// First moment of a distribution with positive mass.
pub fn mean_delay(dist: &DelayDistribution) -> Result<f64> {
    let m: f64 = dist.values.iter().sum();
    if !(m > 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok(dist.values.iter().enumerate().map(|(k, v)| v * dist.tau(k)).sum::<f64>() / m)
}

/// Standard deviation of τ.
pub fn delay_width(dist: &DelayDistribution) -> Result<f64> {
    let mu = mean_delay(dist)?;
    let m: f64 = dist.values.iter().sum();
    Ok((dist.values.iter().enumerate().map(|(k, v)| v * (dist.tau(k) - mu).powi(2)).sum::<f64>() / m).sqrt())
}

/// Unnormalized `R` on the padded grid, in increasing τ.
pub struct RawDelay {
    pub tau_start: f64,
    pub dtau: f64,
    pub values: Vec<f64>,
}

/// Evaluates `R(τ)` for one amplitude on the padded FFT grid.
pub fn raw_delay(values: &[Complex64], omega: &OmegaAxis, padding: usize, planner: &mut FftPlanner<f64>) -> RawDelay {
    let n = values.len();
    let nt = n * padding.max(1);
    let fft = planner.plan_fft_inverse(nt);
    let mut buf = vec![Complex64::default(); nt];
    buf[..n].copy_from_slice(values);
    fft.process(&mut buf);
    let scale = omega.spacing * omega.spacing / (2.0 * PI);
    let dtau = 2.0 * PI / (nt as f64 * omega.spacing);
    let half = nt / 2;
    let out = (0..nt).map(|m| buf[(m + half) % nt].norm_sqr() * scale).collect();
    RawDelay { tau_start: -(half as f64) * dtau, dtau, values: out }
}

/// `R(τ)` by direct summation of the Fourier series; the verification path.
pub fn delay_density_direct(amp: &SpectralAmplitude, tau: f64) -> f64 {
    let s: Complex64 = amp.values.iter().enumerate().map(|(j, a)| a * Complex64::cis(amp.omega.value(j) * tau)).sum();
    (s * amp.omega.spacing).norm_sqr() / (2.0 * PI)
}

fn finish(raw: RawDelay, omega: &OmegaAxis, provenance: Option<Provenance>) -> Result<DelayDistribution> {
    debug_assert!(raw.values.iter().all(|v| *v >= 0.0));
    let dist = DelayDistribution {
        tau_start: raw.tau_start,
        dtau: raw.dtau,
        values: raw.values,
        normalized: false,
        raw_mass: 0.0,
        resolution: 2.0 * PI / omega.extent(),
        provenance,
    };
    dist.normalized()
}

/// Unnormalized delay density of one amplitude.
pub fn delay_distribution_raw(amp: &SpectralAmplitude, padding: usize) -> DelayDistribution {
    let mut planner = FftPlanner::new();
    let raw = raw_delay(&amp.values, &amp.omega, padding, &mut planner);
    DelayDistribution {
        tau_start: raw.tau_start,
        dtau: raw.dtau,
        values: raw.values,
        normalized: false,
        raw_mass: 0.0,
        resolution: 2.0 * PI / amp.omega.extent(),
        provenance: None,
    }
}

/// Normalized delay distribution for fibre detection.
pub fn delay_distribution_smf(amp: &SpectralAmplitude) -> Result<DelayDistribution> {
    delay_distribution_padded(amp, DEFAULT_PADDING)
}

pub fn delay_distribution_padded(amp: &SpectralAmplitude, padding: usize) -> Result<DelayDistribution> {
    let mut planner = FftPlanner::new();
    finish(raw_delay(&amp.values, &amp.omega, padding, &mut planner), &amp.omega, None)
}

/// Distribution for a single pair of detector points.
pub fn delay_distribution_point_pair(
    field: &ModeFunctionField,
    det: &DetectionConfig,
    r_s: [f64; 2],
    r_i: [f64; 2],
) -> Result<DelayDistribution> {
    let amp = point_pair_amplitude(field, det, r_s, r_i)?;
    let mut d = delay_distribution_smf(&amp)?;
    d.provenance = Some(Provenance::from_setup(field, det));
    Ok(d)
}

/// Incoherent sum of point-pair distributions over the detector lattice.
///
/// Each pair is weighted by the product of the two lattice cell areas, so
/// the raw mass approximates the area integral and does not depend on the
/// lattice density.
pub fn delay_distribution_fs(field: &ModeFunctionField, det: &DetectionConfig) -> Result<DelayDistribution> {
    let amps = project_free_space(field, det)?;
    let raw = sum_pairs(&amps, DEFAULT_PADDING, pair_weight(det));
    finish(raw, &amps.omega, Some(Provenance::from_setup(field, det)))
}

/// Delay distribution for unbounded free-space detectors.
///
/// Each (q_s, q_i) mode contributes a trigonometric polynomial in τ of
/// degree below the Ω sample count, so a 2× padded transform per mode is
/// exact and the sum is interpolated to the default padding afterwards.
pub fn delay_distribution_open_aperture(field: &ModeFunctionField, det: &DetectionConfig) -> Result<DelayDistribution> {
    let oa = OpenAperture::new(field, det)?;
    let omega = field.grid.omega;
    let (nw, modes) = (oa.omega_samples(), oa.modes());
    let len = 2 * nw;
    let fft = FftPlanner::new().plan_fft_inverse(len);
    let per_signal: Vec<Vec<f64>> = (0..modes)
        .into_par_iter()
        .map_init(
            || {
                (
                    vec![Complex64::default(); nw * modes],
                    vec![Complex64::default(); len],
                    vec![Complex64::default(); fft.get_inplace_scratch_len()],
                )
            },
            |(block, col, scratch), s| {
                oa.signal_block(s, block);
                let mut acc = vec![0.0; len];
                for i in 0..modes {
                    col.iter_mut().for_each(|c| *c = Complex64::default());
                    for j in 0..nw {
                        col[j] = block[j * modes + i];
                    }
                    fft.process_with_scratch(col, scratch);
                    for (a, c) in acc.iter_mut().zip(col.iter()) {
                        *a += c.norm_sqr();
                    }
                }
                acc
            },
        )
        .collect();
    // fixed summation order keeps reruns bit-identical
    let mut acc = vec![0.0; len];
    for row in &per_signal {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let scale = oa.weight() * omega.spacing * omega.spacing / (2.0 * PI);
    acc.iter_mut().for_each(|v| *v *= scale);
    let raw = upsample_periodic(&acc, DEFAULT_PADDING / 2, omega.spacing);
    finish(raw, &omega, Some(Provenance::from_setup(field, det)))
}

/// Band-limited interpolation of `R` sampled at `τ_m = m·2π/(L ΔΩ)`,
/// `m = 0..L`, onto a grid `factor` times finer, returned in increasing τ.
fn upsample_periodic(samples: &[f64], factor: usize, d_omega: f64) -> RawDelay {
    let l = samples.len();
    let nt = l * factor.max(1);
    let mut planner = FftPlanner::new();
    let mut spec: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(l).process(&mut spec);
    let mut fine = vec![Complex64::default(); nt];
    // the Nyquist bin carries nothing for a polynomial of degree < L/2
    for k in 0..l / 2 {
        fine[k] = spec[k];
        if k > 0 {
            fine[nt - k] = spec[l - k];
        }
    }
    planner.plan_fft_inverse(nt).process(&mut fine);
    let dtau = 2.0 * PI / (nt as f64 * d_omega);
    let half = nt / 2;
    let values = (0..nt).map(|m| (fine[(m + half) % nt].re / l as f64).max(0.0)).collect();
    RawDelay { tau_start: -(half as f64) * dtau, dtau, values }
}

fn pair_weight(det: &DetectionConfig) -> f64 {
    match det.scheme {
        Scheme::FreeSpace { detector_side_um, lattice_points } if detector_side_um > 0.0 => {
            (detector_side_um / lattice_points as f64).powi(4)
        }
        _ => 1.0,
    }
}

/// Result of checking an FFT distribution against direct summation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleReport {
    pub points: usize,
    /// Largest |FFT − direct| divided by the peak density.
    pub max_rel_deviation: f64,
}

/// Recomputes `dist` by direct Fourier summation at every `stride`-th
/// delay, for either detection scheme.
pub fn direct_oracle(
    field: &ModeFunctionField,
    det: &DetectionConfig,
    dist: &DelayDistribution,
    stride: usize,
) -> Result<OracleReport> {
    let ks: Vec<usize> = (0..dist.values.len()).step_by(stride.max(1)).collect();
    let taus: Vec<f64> = ks.iter().map(|&k| dist.tau(k)).collect();
    let (amps, weight) = match det.scheme {
        Scheme::Smf { .. } => {
            let a = project_smf(field, det)?;
            (PairAmplitudes { omega: a.omega, pairs: 1, values: a.values }, 1.0)
        }
        Scheme::FreeSpace { .. } => (project_free_space(field, det)?, pair_weight(det)),
        Scheme::OpenAperture => {
            return Err(Error::Config("the direct oracle needs fibre or finite free-space detection".into()))
        }
    };
    let omega = amps.omega;
    let phases: Vec<Complex64> =
        taus.iter().flat_map(|&t| (0..omega.samples).map(move |j| Complex64::cis(omega.value(j) * t))).collect();
    let direct: Vec<f64> = (0..taus.len())
        .into_par_iter()
        .map(|m| {
            let row = &phases[m * omega.samples..(m + 1) * omega.samples];
            (0..amps.pairs)
                .map(|p| {
                    let s: Complex64 = row.iter().enumerate().map(|(j, e)| amps.values[j * amps.pairs + p] * e).sum();
                    (s * omega.spacing).norm_sqr() / (2.0 * PI)
                })
                .sum::<f64>()
                * weight
        })
        .collect();
    let mass = if dist.normalized { dist.raw_mass } else { 1.0 };
    let peak = dist.values.iter().cloned().fold(0.0, f64::max);
    let max_rel_deviation =
        ks.iter().zip(&direct).map(|(&k, d)| (dist.values[k] - d / mass).abs()).fold(0.0, f64::max) / peak;
    Ok(OracleReport { points: ks.len(), max_rel_deviation })
}

/// Incoherent sum over pairs with a deterministic reduction order: fixed
/// chunks are summed in parallel and then combined in chunk order.
pub fn sum_pairs(amps: &PairAmplitudes, padding: usize, weight: f64) -> RawDelay {
    const CHUNK: usize = 64;
    let n = amps.omega.samples;
    let nt = n * padding.max(1);
    let chunks: Vec<Vec<f64>> = (0..amps.pairs.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut planner = FftPlanner::new();
            let mut acc = vec![0.0; nt];
            let mut col = vec![Complex64::default(); n];
            for p in c * CHUNK..((c + 1) * CHUNK).min(amps.pairs) {
                for (j, v) in col.iter_mut().enumerate() {
                    *v = amps.values[j * amps.pairs + p];
                }
                let r = raw_delay(&col, &amps.omega, padding, &mut planner);
                for (a, v) in acc.iter_mut().zip(&r.values) {
                    *a += v;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; nt];
    for c in &chunks {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v * weight;
        }
    }
    let dtau = 2.0 * PI / (nt as f64 * amps.omega.spacing);
    RawDelay { tau_start: -((nt / 2) as f64) * dtau, dtau, values: total }
}

/// Observables at one scan position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanPoint {
    pub position_mm: f64,
    pub mean_delay_ps: f64,
    pub width_ps: f64,
    pub peak_ps: f64,
    /// Raw coincidence mass; divided by the reference point's in `rel_rate`.
    pub rate: f64,
    pub rel_rate: f64,
    pub instrument_peak_ps: Option<f64>,
    pub error: Option<String>,
}

impl ScanPoint {
    pub fn from_distribution(position_mm: f64, dist: &DelayDistribution) -> Result<Self> {
        Ok(Self {
            position_mm,
            mean_delay_ps: mean_delay(dist)?,
            width_ps: delay_width(dist)?,
            peak_ps: dist.peak(),
            rate: dist.raw_mass,
            rel_rate: f64::NAN,
            instrument_peak_ps: None,
            error: None,
        })
    }

    pub fn failed(position_mm: f64, err: &Error) -> Self {
        Self {
            position_mm,
            mean_delay_ps: f64::NAN,
            width_ps: f64::NAN,
            peak_ps: f64::NAN,
            rate: f64::NAN,
            rel_rate: f64::NAN,
            instrument_peak_ps: None,
            error: Some(err.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biphoton::{default_grid, GridOverrides, PumpConfig};
    use crate::detection::project_smf;
    use crate::dispersion::{walkoff_constants, CrystalConfig};

    fn box_amplitude(n: usize, half: f64, width: f64) -> SpectralAmplitude {
        let omega = OmegaAxis::symmetric(n, half);
        let values = (0..n)
            .map(|j| if omega.value(j).abs() <= width / 2.0 { Complex64::new(1.0, 0.0) } else { Complex64::default() })
            .collect();
        SpectralAmplitude::new(omega, values).unwrap()
    }

    #[test]
    fn parseval_and_nonnegative() {
        let omega = OmegaAxis::symmetric(128, 7.0);
        let values: Vec<Complex64> = (0..128)
            .map(|j| {
                let w = omega.value(j);
                Complex64::new((-w * w / 3.0).exp(), 0.0) * Complex64::cis(0.7 * w * w - 2.0 * w)
            })
            .collect();
        let amp = SpectralAmplitude::new(omega, values).unwrap();
        for pad in [1, 4, 16] {
            let d = delay_distribution_raw(&amp, pad);
            assert!(d.values.iter().all(|v| *v >= 0.0));
            let rel = (d.integral() - amp.norm_sqr()).abs() / amp.norm_sqr();
            assert!(rel < 1e-12, "pad {pad}: {rel}");
        }
        let n = delay_distribution_smf(&amp).unwrap();
        assert!((n.integral() - 1.0).abs() < 1e-12);
        assert!((n.raw_mass - amp.norm_sqr()).abs() < 1e-12 * amp.norm_sqr());
    }

    #[test]
    fn box_spectrum_gives_sinc_squared() {
        let width = 4.0;
        let amp = box_amplitude(4096, 40.0, width);
        let d = delay_distribution_raw(&amp, 4);
        // discrete box: count samples in the window
        let m = amp.values.iter().filter(|v| v.re > 0.0).count() as f64;
        let w_eff = m * amp.omega.spacing;
        let peak = (w_eff).powi(2) / (2.0 * PI);
        for k in (0..d.values.len()).step_by(97) {
            let t = d.tau(k);
            if t.abs() > 30.0 {
                continue;
            }
            let x = w_eff * t / 2.0;
            let want = peak * crate::units::sinc(x).powi(2);
            assert!((d.values[k] - want).abs() < 2e-3 * peak, "t={t} {} {want}", d.values[k]);
        }
    }

    #[test]
    fn fft_matches_direct_sum() {
        let omega = OmegaAxis::symmetric(256, 7.1);
        let values: Vec<Complex64> = (0..256)
            .map(|j| {
                let w = omega.value(j);
                crate::units::sinc(1.3 * w) * Complex64::cis(2.6 * w + 0.05 * w * w)
            })
            .collect();
        let amp = SpectralAmplitude::new(omega, values).unwrap();
        let d = delay_distribution_raw(&amp, 16);
        let peak = d.values.iter().cloned().fold(0.0, f64::max);
        for k in (0..d.values.len()).step_by(d.values.len() / 16) {
            let direct = delay_density_direct(&amp, d.tau(k));
            assert!((direct - d.values[k]).abs() < 1e-9 * peak);
        }
    }

    #[test]
    fn moments_of_simple_shapes() {
        let mk = |f: &dyn Fn(f64) -> f64| {
            let values = (0..2001).map(|k| f(-10.0 + 0.01 * k as f64)).collect();
            DelayDistribution {
                tau_start: -10.0,
                dtau: 0.01,
                values,
                normalized: false,
                raw_mass: 0.0,
                resolution: 0.1,
                provenance: None,
            }
        };
        let g = mk(&|t| (-(t - 1.5f64).powi(2)).exp());
        assert!((mean_delay(&g).unwrap() - 1.5).abs() < 1e-9);
        assert!((g.peak() - 1.5).abs() < 1e-6);
        let rect = mk(&|t| if (-0.001..=5.301).contains(&t) { 1.0 } else { 0.0 });
        assert!((mean_delay(&rect).unwrap() - 2.65).abs() < 1e-9);
        let (lo, hi) = rect.support_edges(0.5);
        assert!((lo - 0.0).abs() < 0.01 && (hi - 5.3).abs() < 0.01, "{lo} {hi}");
        let tri = mk(&|t| (1.0 - t.abs()).max(0.0));
        let (lo, hi) = tri.support_edges(0.25);
        assert!((lo + 0.75).abs() < 1e-9 && (hi - 0.75).abs() < 1e-9, "{lo} {hi}");
        let zero = mk(&|_| 0.0);
        assert!(matches!(mean_delay(&zero), Err(Error::ZeroMass)));
        assert!(zero.normalized().is_err());
    }

    #[test]
    fn smf_distribution_support_and_rate() {
        let pump = PumpConfig { wavelength_nm: 404.25, waist_um: 12.9 };
        let c = CrystalConfig::ppktp(59.0);
        let w = walkoff_constants(&c, pump.wavelength_nm).unwrap();
        let det = DetectionConfig::smf(18.0, 100.0, DetectionConfig::reference_z_cl_mm(100.0, 15.0, w.n_mean));
        let o = GridOverrides {
            omega_samples: Some(128),
            radial_signal_nodes: Some(24),
            radial_pump_nodes: Some(24),
            radial_angle_nodes: Some(24),
            ..Default::default()
        };
        let window = w.window_ps(15.0);
        let mut rates = Vec::new();
        for z in [0.0, 4.0] {
            let c = c.with_position(z);
            let grid = default_grid(false, &w, &c, &pump, Some(18.0), &o);
            let field = ModeFunctionField::new(grid, &c, &pump).unwrap();
            let d = delay_distribution_smf(&project_smf(&field, &det).unwrap()).unwrap();
            let delta = 3.0 * d.resolution;
            assert!(d.mass_between(-delta, window + delta) > 0.99);
            rates.push(d.raw_mass);
        }
        assert!(rates[0] > rates[1]);
    }

    #[test]
    fn single_point_detector_equals_point_pair() {
        let pump = PumpConfig { wavelength_nm: 404.25, waist_um: 11.4 };
        let c = CrystalConfig::ppktp(58.0).with_position(1.0);
        let w = walkoff_constants(&c, pump.wavelength_nm).unwrap();
        let o = GridOverrides { omega_samples: Some(32), q_samples: Some(12), ..Default::default() };
        let grid = default_grid(true, &w, &c, &pump, None, &o);
        let field = ModeFunctionField::new(grid, &c, &pump).unwrap();
        let mut det =
            DetectionConfig::free_space(0.0, 100.0, 100.0, DetectionConfig::reference_z_cl_mm(100.0, 15.0, w.n_mean));
        det.scheme = Scheme::FreeSpace { detector_side_um: 0.0, lattice_points: 1 };
        let a = delay_distribution_fs(&field, &det).unwrap();
        let b = delay_distribution_point_pair(&field, &det, [0.0; 2], [0.0; 2]).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12 * x.abs().max(1e-12));
        }
    }

    /// A lattice of n points spanning one image period is a unitary DFT of
    /// the n q samples, so it must reproduce the open-aperture sum.
    #[test]
    fn open_aperture_equals_full_period_lattice() {
        let pump = PumpConfig { wavelength_nm: 404.25, waist_um: 11.4 };
        let c = CrystalConfig::ppktp(58.0).with_position(1.5);
        let w = walkoff_constants(&c, pump.wavelength_nm).unwrap();
        let n = 8;
        let o = GridOverrides { omega_samples: Some(32), q_samples: Some(n), ..Default::default() };
        let grid = default_grid(true, &w, &c, &pump, None, &o);
        let dq = match grid.transverse {
            crate::biphoton::Transverse::Cartesian(q) => q.spacing,
            _ => unreachable!(),
        };
        let field = ModeFunctionField::new(grid, &c, &pump).unwrap();
        let z_cl = DetectionConfig::reference_z_cl_mm(100.0, 15.0, w.n_mean);
        let mut det = DetectionConfig::free_space(0.0, 100.0, 100.0, z_cl)
            .with_bandpass(Some(Bandpass::at_degeneracy(404.25, 2.5)));
        det.scheme = Scheme::OpenAperture;
        let open = delay_distribution_open_aperture(&field, &det).unwrap();
        let period = 2.0 * PI / (det.kappa() * dq) * (1.0 - 1e-13);
        det.scheme = Scheme::FreeSpace { detector_side_um: period, lattice_points: n };
        let lattice = delay_distribution_fs(&field, &det).unwrap();
        assert_eq!(open.values.len(), lattice.values.len());
        assert!((open.raw_mass / lattice.raw_mass - 1.0).abs() < 1e-9, "{} vs {}", open.raw_mass, lattice.raw_mass);
        let peak = lattice.values.iter().cloned().fold(0.0, f64::max);
        for (x, y) in open.values.iter().zip(&lattice.values) {
            assert!((x - y).abs() < 1e-9 * peak, "{x} vs {y}");
        }
        // a wider lattice would count image replicas
        det.scheme = Scheme::FreeSpace { detector_side_um: 1.5 * period, lattice_points: n };
        assert!(matches!(delay_distribution_fs(&field, &det), Err(Error::Grid(_))));
    }

    #[test]
    fn crop_and_csv() {
        let amp = box_amplitude(64, 7.0, 3.0);
        let d = delay_distribution_smf(&amp).unwrap().crop(-2.0, 7.3);
        assert!(d.tau(0) >= -2.0 && d.tau(d.values.len() - 1) <= 7.3);
        let mut out = Vec::new();
        d.write_csv(&mut out, &serde_json::json!({"case": "box"})).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.contains("tau_ps,density"));
        assert_eq!(crate::export::data_rows(&s).count(), d.values.len() + 1);
    }
}
