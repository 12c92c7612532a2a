use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use spdc_core::biphoton::{correlation_map, default_grid, ModeFunctionField};
use spdc_core::coincidence::{delay_width, direct_oracle, mean_delay, DelayDistribution};
use spdc_core::config::RunConfig;
use spdc_core::detection::Scheme;
use spdc_core::export::{data_rows, write_header};
use spdc_core::instrument::{
    fit_histogram, measure, relative_delay, FitOptions, Histogram, HistogramFit, InstrumentSpec,
};
use spdc_core::scan::{run_scan, Setup};
use spdc_core::toymodel::{toy_delay_distribution, Envelope, ToyParams};
use spdc_core::{Error, Result};

use crate::{Cli, Command, InstrumentFlags};

/// Instrument stream used by `delay`; scans use the point index.
const DELAY_STREAM: u64 = 0;

struct Context {
    config: RunConfig,
    out: PathBuf,
    seed: u64,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let config = match &cli.config {
            Some(p) => RunConfig::from_path(p)?,
            None => RunConfig::default(),
        };
        let out = cli.out.clone().or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
        let seed = cli.seed.unwrap_or(config.seed);
        Ok(Self { config, out, seed })
    }

    fn write(&self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        write_file(&self.out, name, body)
    }

    fn params(&self, setup: &Setup, extra: Value) -> Value {
        json!({ "setup": setup.echo(), "seed": self.seed, "run": extra })
    }

    fn instrument(&self, flags: &InstrumentFlags) -> Result<InstrumentSpec> {
        let mut spec = self.config.instrument;
        if let Some(j) = flags.jitter_fwhm_ps {
            spec.jitter_fwhm_ps = j;
        }
        if let Some(b) = flags.bins_ps {
            spec.bin_width_ps = b;
        }
        spec.validate()?;
        Ok(spec)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit { files, jitter_fwhm_ps } => fit(cli, files, *jitter_fwhm_ps),
        Command::Correlations => correlations(&Context::new(cli)?),
        Command::Delay { z_c_mm, oracle, toy_overlay, instrument } => {
            delay(&Context::new(cli)?, *z_c_mm, *oracle, *toy_overlay, instrument)
        }
        Command::Scan { variable, start, stop, step, instrument } => {
            let mut ctx = Context::new(cli)?;
            let s = &mut ctx.config.scan;
            if let Some(v) = variable {
                s.variable = (*v).into();
            }
            s.start = start.unwrap_or(s.start);
            s.stop = stop.unwrap_or(s.stop);
            s.step = step.unwrap_or(s.step);
            s.instrument |= instrument.enabled();
            scan(&ctx, instrument)
        }
    }
}

fn correlations(ctx: &Context) -> Result<()> {
    let setup = ctx.config.setup()?;
    let grid = default_grid(true, &setup.walkoff, &setup.crystal, &setup.pump, None, &setup.grid);
    let field = ModeFunctionField::new(grid, &setup.crystal, &setup.pump)?;
    let map = correlation_map(&field)?;
    let params = ctx.params(&setup, json!({ "command": "correlations" }));
    ctx.write("correlation_map.csv", |w| map.write_csv(w, &params))?;
    ctx.write("phase_matching_locus.csv", |w| map.write_overlay_csv(w, &params))?;
    println!(
        "correlation map: {} x {} cells, locus: {} points, written to {}",
        map.q_values.len(),
        map.omega_values.len(),
        map.overlay.len(),
        ctx.out.display()
    );
    Ok(())
}

fn toy_overlay(setup: &Setup, dist: &DelayDistribution) -> Result<DelayDistribution> {
    let envelope = match setup.detection.scheme {
        Scheme::Smf { fiber_waist_um } => Envelope::fibre_pair(fiber_waist_um),
        Scheme::FreeSpace { detector_side_um, .. } => {
            Envelope::detector_square(detector_side_um, setup.detection.kappa())
        }
        Scheme::OpenAperture => {
            return Err(Error::Config("the toy overlay needs a finite detector".into()));
        }
    };
    let toy = ToyParams::from_walkoff(
        &setup.walkoff,
        setup.pump.wavelength_nm,
        setup.crystal.length_mm,
        setup.detection.f1_mm,
        setup.detection.z_cl_mm,
        setup.crystal.z_c_mm,
        envelope,
    )
    .matched_to_full_model();
    toy_delay_distribution(dist.tau_start, dist.dtau, dist.values.len(), &toy)
}

fn delay(ctx: &Context, z_c_mm: Option<f64>, oracle: bool, toy: bool, flags: &InstrumentFlags) -> Result<()> {
    let mut setup = ctx.config.setup()?;
    if let Some(z) = z_c_mm {
        setup.crystal = setup.crystal.with_position(z);
        setup.crystal.validate()?;
    }
    let field = setup.field(&setup.crystal, &setup.detection)?;
    let dist = setup.distribution_for(&field, &setup.detection)?;
    let inst = if flags.enabled() { Some(ctx.instrument(flags)?) } else { None };
    let params =
        ctx.params(&setup, json!({ "command": "delay", "oracle": oracle, "toy_overlay": toy, "instrument": inst }));
    // keep the files small: drop the empty padding far outside the window
    let window = setup.walkoff.window_ps(setup.crystal.length_mm).abs();
    let shown = dist.crop(-window, 2.0 * window);
    ctx.write("delay.csv", |w| shown.write_csv(w, &params))?;

    let mean = mean_delay(&dist)?;
    println!("mean delay   {mean:.6} ps");
    println!("rms width    {:.6} ps", delay_width(&dist)?);
    println!("peak         {:.6} ps", dist.peak());
    println!("raw rate     {:e}", dist.raw_mass);
    println!("window DL    {window:.6} ps");

    if toy {
        let overlay = toy_overlay(&setup, &shown)?;
        ctx.write("toy_overlay.csv", |w| overlay.write_csv(w, &params))?;
    }
    if oracle {
        let report = direct_oracle(&field, &setup.detection, &dist, 16)?;
        println!(
            "oracle       max |fft - direct| / peak = {:.3e} over {} delays",
            report.max_rel_deviation, report.points
        );
    }
    if let Some(spec) = inst {
        let m = measure(&dist, &spec, ctx.seed, DELAY_STREAM)?;
        ctx.write("histogram.csv", |w| m.histogram.write_csv(w, &params))?;
        ctx.write("fit.csv", |w| m.fit.write_csv(w, &params))?;
        println!("fitted peak  {:.4} +- {:.4} ps", m.fit.peak_ps, m.fit.peak_err_ps);
    }
    Ok(())
}

fn scan(ctx: &Context, flags: &InstrumentFlags) -> Result<()> {
    let setup = ctx.config.setup()?;
    let mut config = ctx.config.clone();
    config.instrument = if config.scan.instrument { ctx.instrument(flags)? } else { config.instrument };
    config.seed = ctx.seed;
    let spec = config.scan_spec()?;
    let result = run_scan(&setup, &spec)?;
    let params = ctx.params(&setup, json!({ "command": "scan", "scan": spec }));
    ctx.write("scan.csv", |w| result.write_csv(w, &params))?;
    ctx.write("scan_metadata.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &result.metadata(&setup))?;
        Ok(writeln!(w)?)
    })?;

    let d = &result.diagnostics;
    let unit = if spec.variable == spdc_core::scan::ScanVariable::Temperature { "K" } else { "mm" };
    println!("points            {} ({} failed)", result.points.len(), d.failed_points);
    println!("swing             {:.4} ps ({:.1}% of DL = {:.4} ps)", d.swing_ps, 100.0 * d.swing_fraction, d.window_ps);
    println!("turning points    {:?}", d.turning_points.iter().map(|t| format!("{t:.3}")).collect::<Vec<_>>());
    match d.monotonic_length {
        Some(l) => println!("monotonic region  {l:.3} {unit}"),
        None => println!("monotonic region  open (no turning point on one side)"),
    }
    println!(
        "central slope     mean {:.4} ps/{unit}, peak {:.4} ps/{unit}",
        d.central_mean_slope, d.central_peak_slope
    );
    println!("rate maximum at   {:.3}", d.rate_maximum);
    if d.failed_points == result.points.len() {
        return Err(Error::Solver("every scan point failed; see flags in scan.csv".into()));
    }
    Ok(())
}

fn write_file(dir: &Path, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_histogram(path: &Path) -> Result<Histogram> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    // a header-only file gets a clear message instead of a fit error
    if data_rows(&text).nth(1).is_none() {
        return Err(Error::Parse { row: 1, message: format!("{} holds no histogram rows", path.display()) });
    }
    Histogram::parse_csv(&text)
}

fn fit(cli: &Cli, files: &[PathBuf], jitter_fwhm_ps: Option<f64>) -> Result<()> {
    let ctx = Context::new(cli)?;
    let jitter = jitter_fwhm_ps.unwrap_or(ctx.config.instrument.jitter_fwhm_ps);
    if !(jitter >= 0.0) {
        return Err(Error::Config(format!("jitter must be >= 0, got {jitter} ps")));
    }
    let out = ctx.out;
    let opts = FitOptions::for_jitter(jitter);
    let mut fits: Vec<HistogramFit> = Vec::new();
    for f in files {
        let h = read_histogram(f)?;
        let fit = fit_histogram(&h, &opts)?;
        println!(
            "{}: peak {:.4} +- {:.4} ps, reduced chi2 {:.3}",
            f.display(),
            fit.peak_ps,
            fit.peak_err_ps,
            fit.chi2_red
        );
        fits.push(fit);
    }
    let params = json!({ "command": "fit", "files": files, "jitter_fwhm_ps": jitter });
    for (k, fit) in fits.iter().enumerate() {
        let name = if fits.len() == 1 { "fit.csv".to_string() } else { format!("fit_{}.csv", k + 1) };
        write_file(&out, &name, |w| fit.write_csv(w, &params))?;
    }
    if let [a, b] = fits.as_slice() {
        let rel = relative_delay(a, b);
        write_file(&out, "relative_delay.csv", |w| {
            write_header(w, "relative_delay", &params)?;
            writeln!(w, "delay_ps,error_ps")?;
            Ok(writeln!(w, "{:.6},{:.6}", rel.delay_ps, rel.error_ps)?)
        })?;
        println!("relative delay {:.4} +- {:.4} ps", rel.delay_ps, rel.error_ps);
    }
    Ok(())
}
