//! JSON run configuration. Every dimensional key carries its unit.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::biphoton::{GridOverrides, PumpConfig};
use crate::detection::{Bandpass, DetectionConfig, Scheme, DEFAULT_LATTICE_POINTS};
use crate::dispersion::{CrystalConfig, SellmeierSet, ThermalExpansion};
use crate::error::{Error, Result};
use crate::instrument::InstrumentSpec;
use crate::scan::{ScanSpec, ScanVariable, Setup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrystalSection {
    pub length_mm: f64,
    pub poling_period_um: f64,
    pub temperature_c: f64,
    pub z_c_mm: f64,
    pub thermal_expansion: bool,
    /// Dispersion data file; relative paths resolve against the config file.
    pub dispersion_file: Option<PathBuf>,
}

impl Default for CrystalSection {
    fn default() -> Self {
        Self {
            length_mm: 15.0,
            poling_period_um: 9.89,
            temperature_c: 59.0,
            z_c_mm: 0.0,
            thermal_expansion: true,
            dispersion_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PumpSection {
    pub wavelength_nm: f64,
    pub waist_um: f64,
}

impl Default for PumpSection {
    fn default() -> Self {
        Self { wavelength_nm: 404.25, waist_um: 12.9 }
    }
}

pub const DEFAULT_FIBER_WAIST_UM: f64 = 18.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Smf,
    FreeSpace,
    OpenAperture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandpassSection {
    pub fwhm_nm: f64,
    /// Defaults to twice the pump wavelength.
    #[serde(default)]
    pub center_nm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionSection {
    pub scheme: SchemeName,
    /// Defaults to 18 µm for the smf scheme.
    pub fiber_waist_um: Option<f64>,
    pub detector_side_um: Option<f64>,
    pub lattice_points: Option<usize>,
    pub f1_mm: f64,
    pub f2_mm: f64,
    /// Defaults to the position that centres the walk-off window.
    pub z_cl_mm: Option<f64>,
    pub bandpass: Option<BandpassSection>,
}

impl Default for DetectionSection {
    fn default() -> Self {
        Self {
            scheme: SchemeName::Smf,
            fiber_waist_um: None,
            detector_side_um: None,
            lattice_points: None,
            f1_mm: 100.0,
            f2_mm: 100.0,
            z_cl_mm: None,
            bandpass: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub variable: ScanVariable,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    #[serde(default)]
    pub instrument: bool,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self { variable: ScanVariable::ZC, start: -6.0, stop: 6.0, step: 0.5, instrument: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub crystal: CrystalSection,
    pub pump: PumpSection,
    pub detection: DetectionSection,
    pub grid: GridOverrides,
    pub scan: ScanSection,
    pub instrument: InstrumentSpec,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Directory of the file this was read from.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parses JSON; errors name the offending line, column and field.
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    fn dispersion(&self) -> Result<SellmeierSet> {
        match &self.crystal.dispersion_file {
            None => Ok(SellmeierSet::ktp()),
            Some(p) => {
                let full = match (&self.base_dir, p.is_relative()) {
                    (Some(base), true) => base.join(p),
                    _ => p.clone(),
                };
                SellmeierSet::from_path(&full)
            }
        }
    }

    pub fn crystal(&self) -> Result<CrystalConfig> {
        let c = &self.crystal;
        let dispersion = Arc::new(self.dispersion()?);
        let expansion =
            if c.thermal_expansion { dispersion.thermal_expansion.clone() } else { ThermalExpansion::disabled() };
        let cfg = CrystalConfig {
            length_mm: c.length_mm,
            poling_period_um: c.poling_period_um,
            expansion,
            temperature_c: c.temperature_c,
            z_c_mm: c.z_c_mm,
            dispersion,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pump(&self) -> PumpConfig {
        PumpConfig { wavelength_nm: self.pump.wavelength_nm, waist_um: self.pump.waist_um }
    }

    fn scheme(&self) -> Result<Scheme> {
        let d = &self.detection;
        match d.scheme {
            SchemeName::Smf => {
                if d.detector_side_um.is_some() || d.lattice_points.is_some() {
                    return Err(Error::Config("detection: smf scheme takes fiber_waist_um only".into()));
                }
                Ok(Scheme::Smf { fiber_waist_um: d.fiber_waist_um.unwrap_or(DEFAULT_FIBER_WAIST_UM) })
            }
            SchemeName::FreeSpace => {
                if d.fiber_waist_um.is_some() {
                    return Err(Error::Config("detection: free_space scheme does not take fiber_waist_um".into()));
                }
                let detector_side_um = d
                    .detector_side_um
                    .ok_or_else(|| Error::Config("detection: free_space scheme needs detector_side_um".into()))?;
                Ok(Scheme::FreeSpace {
                    detector_side_um,
                    lattice_points: d.lattice_points.unwrap_or(DEFAULT_LATTICE_POINTS),
                })
            }
            SchemeName::OpenAperture => {
                if d.fiber_waist_um.is_some() || d.detector_side_um.is_some() || d.lattice_points.is_some() {
                    return Err(Error::Config("detection: open_aperture scheme takes no detector size".into()));
                }
                Ok(Scheme::OpenAperture)
            }
        }
    }

    /// Resolves defaults and validates everything.
    pub fn setup(&self) -> Result<Setup> {
        let crystal = self.crystal()?;
        let pump = self.pump();
        let bandpass = self
            .detection
            .bandpass
            .as_ref()
            .map(|b| Bandpass { center_nm: b.center_nm.unwrap_or(2.0 * pump.wavelength_nm), fwhm_nm: b.fwhm_nm });
        if let Some(b) = &bandpass {
            if !(b.fwhm_nm > 0.0) || !(b.center_nm > 0.0) {
                return Err(Error::Config("detection: bandpass needs fwhm_nm > 0 and center_nm > 0".into()));
            }
        }
        // the lens default needs n_mean, which the setup computes
        let det = DetectionConfig {
            scheme: self.scheme()?,
            f1_mm: self.detection.f1_mm,
            f2_mm: self.detection.f2_mm,
            z_cl_mm: self.detection.z_cl_mm.unwrap_or(0.0),
            bandpass,
        };
        let mut setup = Setup::new(crystal, pump, det, self.grid)?;
        if self.detection.z_cl_mm.is_none() {
            setup.detection.z_cl_mm = setup.reference_z_cl_mm();
        }
        Ok(setup)
    }

    pub fn scan_spec(&self) -> Result<ScanSpec> {
        let s = &self.scan;
        let spec = ScanSpec {
            variable: s.variable,
            start: s.start,
            stop: s.stop,
            step: s.step,
            instrument: s.instrument.then_some(self.instrument),
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}
