//! Fixtures shared by the benchmarks.

use spdc_core::biphoton::{default_grid, GridOverrides, ModeFunctionField, PumpConfig};
use spdc_core::detection::DetectionConfig;
use spdc_core::dispersion::{walkoff_constants, CrystalConfig};
use spdc_core::instrument::{convolve_jitter, sample_histogram, Histogram, SamplingSpec};
use spdc_core::scan::Setup;

pub const PUMP_NM: f64 = 404.25;

/// Fibre detection with the 12.9 µm pump at 59 °C.
pub fn smf_setup(grid: GridOverrides) -> Setup {
    let crystal = CrystalConfig::ppktp(59.0);
    let w = walkoff_constants(&crystal, PUMP_NM).expect("built-in data covers 59 C");
    let z_cl = DetectionConfig::reference_z_cl_mm(100.0, crystal.length_mm, w.n_mean);
    let pump = PumpConfig { wavelength_nm: PUMP_NM, waist_um: 12.9 };
    Setup::new(crystal, pump, DetectionConfig::smf(18.0, 100.0, z_cl), grid).expect("valid setup")
}

/// 40 µm free-space detectors with the 11.4 µm pump at 60 °C.
pub fn free_space_setup(grid: GridOverrides, lattice_points: usize) -> Setup {
    let crystal = CrystalConfig::ppktp(60.0);
    let w = walkoff_constants(&crystal, PUMP_NM).expect("built-in data covers 60 C");
    let z_cl = DetectionConfig::reference_z_cl_mm(100.0, crystal.length_mm, w.n_mean);
    let mut det = DetectionConfig::free_space(40.0, 100.0, 100.0, z_cl);
    if let spdc_core::detection::Scheme::FreeSpace { lattice_points: ref mut n, .. } = det.scheme {
        *n = lattice_points;
    }
    let pump = PumpConfig { wavelength_nm: PUMP_NM, waist_um: 11.4 };
    Setup::new(crystal, pump, det, grid).expect("valid setup")
}

pub fn field(setup: &Setup) -> ModeFunctionField {
    let wf = match setup.detection.scheme {
        spdc_core::detection::Scheme::Smf { fiber_waist_um } => Some(fiber_waist_um),
        _ => None,
    };
    let cartesian = wf.is_none();
    let grid = default_grid(cartesian, &setup.walkoff, &setup.crystal, &setup.pump, wf, &setup.grid);
    ModeFunctionField::new(grid, &setup.crystal, &setup.pump).expect("field builds")
}

/// A jittered histogram of the fibre distribution.
pub fn histogram(pairs: u64) -> Histogram {
    let dist = smf_setup(GridOverrides::default()).distribution().expect("distribution");
    let jittered = convolve_jitter(&dist, 50.0).expect("jitter");
    sample_histogram(&jittered, &SamplingSpec::new(pairs, 4.0), 1, 0).expect("histogram")
}
