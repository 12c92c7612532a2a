//! Parameter scans over crystal position, lens position or temperature.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::biphoton::{default_grid, BiphotonGrid, GridOverrides, ModeFunctionField, PumpConfig};
use crate::coincidence::{
    delay_distribution_fs, delay_distribution_open_aperture, delay_distribution_smf, DelayDistribution, Provenance,
    ScanPoint,
};
use crate::detection::{project_smf, DetectionConfig, Scheme};
use crate::dispersion::{walkoff_constants, CrystalConfig, WalkoffConstants};
use crate::error::{Error, Result};
use crate::export::write_header;
use crate::instrument::{measure, InstrumentSpec};

/// Everything needed to compute a delay distribution.
#[derive(Debug, Clone)]
pub struct Setup {
    pub crystal: CrystalConfig,
    pub pump: PumpConfig,
    pub detection: DetectionConfig,
    pub grid: GridOverrides,
    pub walkoff: WalkoffConstants,
}

impl Setup {
    pub fn new(
        crystal: CrystalConfig,
        pump: PumpConfig,
        detection: DetectionConfig,
        grid: GridOverrides,
    ) -> Result<Self> {
        crystal.validate()?;
        pump.validate()?;
        detection.validate()?;
        let walkoff = walkoff_constants(&crystal, pump.wavelength_nm)?;
        Ok(Self { crystal, pump, detection, grid, walkoff })
    }

    /// Lens position with the crystal centred in the walk-off window.
    pub fn reference_z_cl_mm(&self) -> f64 {
        DetectionConfig::reference_z_cl_mm(self.detection.f1_mm, self.crystal.length_mm, self.walkoff.n_mean)
    }

    pub fn grid_for(&self, crystal: &CrystalConfig, det: &DetectionConfig) -> BiphotonGrid {
        let (cartesian, wf) = match det.scheme {
            Scheme::Smf { fiber_waist_um } => (false, Some(fiber_waist_um)),
            Scheme::FreeSpace { .. } | Scheme::OpenAperture => (true, None),
        };
        default_grid(cartesian, &self.walkoff, crystal, &self.pump, wf, &self.grid)
    }

    pub fn field(&self, crystal: &CrystalConfig, det: &DetectionConfig) -> Result<ModeFunctionField> {
        ModeFunctionField::new(self.grid_for(crystal, det), crystal, &self.pump)
    }

    /// Normalized distribution; `raw_mass` carries the coincidence rate.
    pub fn distribution_for(&self, field: &ModeFunctionField, det: &DetectionConfig) -> Result<DelayDistribution> {
        match det.scheme {
            Scheme::Smf { .. } => {
                let mut d = delay_distribution_smf(&project_smf(field, det)?)?;
                d.provenance = Some(Provenance::from_setup(field, det));
                Ok(d)
            }
            Scheme::FreeSpace { .. } => delay_distribution_fs(field, det),
            Scheme::OpenAperture => delay_distribution_open_aperture(field, det),
        }
    }

    pub fn distribution(&self) -> Result<DelayDistribution> {
        let field = self.field(&self.crystal, &self.detection)?;
        self.distribution_for(&field, &self.detection)
    }

    pub fn echo(&self) -> serde_json::Value {
        json!({
            "crystal": {
                "length_mm": self.crystal.length_mm,
                "poling_period_um": self.crystal.poling_period_um,
                "temperature_c": self.crystal.temperature_c,
                "z_c_mm": self.crystal.z_c_mm,
                "material": self.crystal.dispersion.material,
                "thermal_expansion": self.crystal.expansion,
            },
            "pump": self.pump,
            "detection": self.detection,
            "grid": self.grid,
            "walkoff": self.walkoff,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanVariable {
    /// Crystal centre position, mm.
    ZC,
    /// Collection lens position, mm.
    ZCl,
    /// Crystal temperature, °C.
    Temperature,
}

impl ScanVariable {
    pub fn column(&self) -> &'static str {
        match self {
            ScanVariable::ZC => "z_c_mm",
            ScanVariable::ZCl => "z_cl_mm",
            ScanVariable::Temperature => "temperature_c",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanSpec {
    pub variable: ScanVariable,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    /// Simulated measurement per point; `None` skips it.
    pub instrument: Option<InstrumentSpec>,
    pub seed: u64,
}

impl ScanSpec {
    /// ±6 mm in 0.5 mm steps over the crystal position.
    pub fn crystal_default() -> Self {
        Self { variable: ScanVariable::ZC, start: -6.0, stop: 6.0, step: 0.5, instrument: None, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::Config(format!("scan step must be > 0, got {}", self.step)));
        }
        if !self.start.is_finite() || !self.stop.is_finite() || self.stop < self.start {
            return Err(Error::Config(format!("scan range [{}, {}] is empty", self.start, self.stop)));
        }
        if let Some(i) = &self.instrument {
            i.validate()?;
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.start + k as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanDiagnostics {
    pub window_ps: f64,
    pub swing_ps: f64,
    pub swing_fraction: f64,
    /// Local extrema of the mean delay, refined by parabolas.
    pub turning_points: Vec<f64>,
    /// Monotonic stretch around the reference value; open ends are `None`.
    pub monotonic_interval: (Option<f64>, Option<f64>),
    pub monotonic_length: Option<f64>,
    /// Least-squares slopes within ±1 of the reference value, ps per unit.
    pub central_mean_slope: f64,
    pub central_peak_slope: f64,
    /// Position of the largest rate.
    pub rate_maximum: f64,
    pub failed_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub spec: ScanSpec,
    pub reference_value: f64,
    pub points: Vec<ScanPoint>,
    pub diagnostics: ScanDiagnostics,
}

/// Runs a scan. A point that fails is recorded with its error and the scan
/// continues. The mode function is built once when only the lens moves.
pub fn run_scan(setup: &Setup, spec: &ScanSpec) -> Result<ScanResult> {
    spec.validate()?;
    let values = spec.values();
    let reference = match spec.variable {
        ScanVariable::ZC => setup.crystal.z_c_mm,
        ScanVariable::ZCl => setup.detection.z_cl_mm,
        ScanVariable::Temperature => setup.crystal.temperature_c,
    };
    let shared_field = match spec.variable {
        ScanVariable::ZCl => Some(setup.field(&setup.crystal, &setup.detection)?),
        _ => None,
    };
    let mut points: Vec<ScanPoint> = values
        .par_iter()
        .enumerate()
        .map(|(k, &x)| {
            let point = || -> Result<ScanPoint> {
                let (crystal, det) = match spec.variable {
                    ScanVariable::ZC => (setup.crystal.with_position(x), setup.detection),
                    ScanVariable::ZCl => (setup.crystal.clone(), DetectionConfig { z_cl_mm: x, ..setup.detection }),
                    ScanVariable::Temperature => (setup.crystal.with_temperature(x), setup.detection),
                };
                let dist = match &shared_field {
                    Some(f) => setup.distribution_for(f, &det)?,
                    None => setup.distribution_for(&setup.field(&crystal, &det)?, &det)?,
                };
                let mut p = ScanPoint::from_distribution(x, &dist)?;
                if let Some(inst) = &spec.instrument {
                    p.instrument_peak_ps = Some(measure(&dist, inst, spec.seed, k as u64)?.fit.peak_ps);
                }
                Ok(p)
            };
            point().unwrap_or_else(|e| ScanPoint::failed(x, &e))
        })
        .collect();

    let ref_rate = points
        .iter()
        .filter(|p| p.error.is_none())
        .min_by(|a, b| (a.position_mm - reference).abs().total_cmp(&(b.position_mm - reference).abs()))
        .map(|p| p.rate);
    if let Some(r) = ref_rate {
        for p in points.iter_mut() {
            p.rel_rate = p.rate / r;
        }
    }
    let diagnostics = diagnose(&points, reference, setup.walkoff.window_ps(setup.crystal.length_mm).abs());
    Ok(ScanResult { spec: *spec, reference_value: reference, points, diagnostics })
}

/// Scan of the collection lens position.
pub fn lens_scan(setup: &Setup, start_mm: f64, stop_mm: f64, step_mm: f64) -> Result<ScanResult> {
    run_scan(
        setup,
        &ScanSpec {
            variable: ScanVariable::ZCl,
            start: start_mm,
            stop: stop_mm,
            step: step_mm,
            instrument: None,
            seed: 0,
        },
    )
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Interior local extrema of `ys`, refined by a parabola through three
/// neighbouring points.
pub fn turning_points(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 1..ys.len().saturating_sub(1) {
        let (a, b, c) = (ys[k - 1], ys[k], ys[k + 1]);
        if (b - a) * (c - b) < 0.0 {
            let den = a - 2.0 * b + c;
            let h = 0.5 * (xs[k + 1] - xs[k - 1]);
            let shift = if den != 0.0 { 0.5 * h * (a - c) / den } else { 0.0 };
            out.push(xs[k] + shift.clamp(-h, h));
        }
    }
    out
}

pub fn diagnose(points: &[ScanPoint], reference: f64, window_ps: f64) -> ScanDiagnostics {
    let ok: Vec<&ScanPoint> = points.iter().filter(|p| p.error.is_none()).collect();
    let xs: Vec<f64> = ok.iter().map(|p| p.position_mm).collect();
    let means: Vec<f64> = ok.iter().map(|p| p.mean_delay_ps).collect();
    let peaks: Vec<f64> = ok.iter().map(|p| p.peak_ps).collect();
    let max = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let swing = if means.is_empty() { f64::NAN } else { max - min };
    let turning = turning_points(&xs, &means);
    let below = turning
        .iter()
        .cloned()
        .filter(|t| *t < reference)
        .fold(None, |a: Option<f64>, t| Some(a.map_or(t, |a| a.max(t))));
    let above = turning
        .iter()
        .cloned()
        .filter(|t| *t > reference)
        .fold(None, |a: Option<f64>, t| Some(a.map_or(t, |a| a.min(t))));
    let central: Vec<usize> = (0..xs.len()).filter(|&k| (xs[k] - reference).abs() <= 1.0 + 1e-9).collect();
    let cx: Vec<f64> = central.iter().map(|&k| xs[k]).collect();
    let rate_maximum = ok.iter().max_by(|a, b| a.rate.total_cmp(&b.rate)).map_or(f64::NAN, |p| p.position_mm);
    ScanDiagnostics {
        window_ps,
        swing_ps: swing,
        swing_fraction: swing / window_ps,
        turning_points: turning.clone(),
        monotonic_interval: (below, above),
        monotonic_length: below.zip(above).map(|(a, b)| b - a),
        central_mean_slope: slope(&cx, &central.iter().map(|&k| means[k]).collect::<Vec<_>>()),
        central_peak_slope: slope(&cx, &central.iter().map(|&k| peaks[k]).collect::<Vec<_>>()),
        rate_maximum,
        failed_points: points.len() - ok.len(),
    }
}

impl ScanResult {
    pub fn write_csv<W: Write, P: Serialize + ?Sized>(&self, mut out: W, params: &P) -> Result<()> {
        write_header(&mut out, "scan", params)?;
        let ok: Vec<f64> = self.points.iter().filter(|p| p.error.is_none()).map(|p| p.mean_delay_ps).collect();
        let avg = ok.iter().sum::<f64>() / ok.len().max(1) as f64;
        writeln!(
            out,
            "{},mean_delay_ps,mean_subtracted_ps,width_ps,peak_ps,rate,rel_rate,instrument_peak_ps,flags",
            self.spec.variable.column()
        )?;
        for p in &self.points {
            let inst = p.instrument_peak_ps.map_or(String::new(), |v| format!("{v:.6}"));
            let flags = match &p.error {
                None => "ok".to_string(),
                Some(e) => format!("error: {}", e.replace([',', '\n'], ";")),
            };
            writeln!(
                out,
                "{:.6},{:.6},{:.6},{:.6},{:.6},{:e},{:.6},{},{}",
                p.position_mm,
                p.mean_delay_ps,
                p.mean_delay_ps - avg,
                p.width_ps,
                p.peak_ps,
                p.rate,
                p.rel_rate,
                inst,
                flags
            )?;
        }
        Ok(())
    }

    pub fn metadata(&self, setup: &Setup) -> serde_json::Value {
        json!({
            "tool": crate::export::TOOL_NAME,
            "version": crate::export::TOOL_VERSION,
            "setup": setup.echo(),
            "scan": self.spec,
            "reference_value": self.reference_value,
            "diagnostics": self.diagnostics,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(x: f64, mean: f64) -> ScanPoint {
        ScanPoint {
            position_mm: x,
            mean_delay_ps: mean,
            width_ps: 1.0,
            peak_ps: mean,
            rate: 1.0 / (1.0 + x * x),
            rel_rate: f64::NAN,
            instrument_peak_ps: None,
            error: None,
        }
    }

    #[test]
    fn spec_values_and_validation() {
        let s = ScanSpec::crystal_default();
        let v = s.values();
        assert_eq!(v.len(), 25);
        assert_eq!(v[0], -6.0);
        assert!((v[24] - 6.0).abs() < 1e-12);
        assert!(ScanSpec { stop: -7.0, ..s }.validate().is_err());
        assert!(ScanSpec { step: 0.0, ..s }.validate().is_err());
        assert_eq!(ScanSpec { start: 1.0, stop: 1.0, ..s }.values(), vec![1.0]);
    }

    #[test]
    fn diagnostics_of_a_sine() {
        // turning points at ±4 for sin(πx/8)
        let pts: Vec<ScanPoint> = (0..=24)
            .map(|k| {
                let x = -6.0 + 0.5 * k as f64;
                point(x, 2.65 + 1.5 * (std::f64::consts::PI * x / 8.0).sin())
            })
            .collect();
        let d = diagnose(&pts, 0.0, 5.3);
        assert_eq!(d.turning_points.len(), 2);
        let (lo, hi) = d.monotonic_interval;
        assert!((lo.unwrap() + 4.0).abs() < 0.05 && (hi.unwrap() - 4.0).abs() < 0.05);
        assert!((d.monotonic_length.unwrap() - 8.0).abs() < 0.1);
        assert!((d.swing_ps - 3.0).abs() < 1e-9);
        let expected = 1.5 * std::f64::consts::PI / 8.0;
        assert!((d.central_mean_slope - expected).abs() < 0.05 * expected);
        assert_eq!(d.rate_maximum, 0.0);
    }

    #[test]
    fn failed_points_are_counted() {
        let mut pts = vec![point(0.0, 1.0), point(1.0, 2.0)];
        pts.push(ScanPoint::failed(2.0, &Error::ZeroMass));
        let d = diagnose(&pts, 0.0, 5.3);
        assert_eq!(d.failed_points, 1);
        assert!(d.turning_points.is_empty());
        assert_eq!(d.monotonic_length, None);
    }
}
