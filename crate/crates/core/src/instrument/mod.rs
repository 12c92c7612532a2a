//! Measurement chain: detector jitter, histogramming of arrival-time
//! differences, and the empirical two-Gaussian fit.

mod fit;

pub use fit::{fit_histogram, relative_delay, FitOptions, HistogramFit, RelativeDelay, PARAMETER_NAMES};

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::coincidence::{mean_delay, DelayDistribution};
use crate::error::{Error, Result};
use crate::export::{data_rows, write_header};
use crate::units::FWHM_PER_SIGMA;

/// Reproducible RNG for stream `stream` of run `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Convolves with a zero-mean Gaussian of the given FWHM.
///
/// The kernel is sampled on the distribution's grid out to ±6σ and
/// normalized to unit sum, and the output grid is extended by the kernel
/// half-width, so mass and mean are preserved exactly up to rounding.
pub fn convolve_jitter(dist: &DelayDistribution, fwhm_ps: f64) -> Result<DelayDistribution> {
    if !(fwhm_ps > 0.0) {
        return Err(Error::Config(format!("jitter FWHM must be > 0, got {fwhm_ps} ps")));
    }
    let sigma = fwhm_ps / FWHM_PER_SIGMA;
    let h = (6.0 * sigma / dist.dtau).ceil() as usize;
    let mut kernel: Vec<f64> = (0..=2 * h)
        .map(|k| {
            let t = (k as f64 - h as f64) * dist.dtau;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let ks: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= ks);
    let n = dist.values.len();
    let mut out = vec![0.0; n + 2 * h];
    for (i, &v) in dist.values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        for (k, &g) in kernel.iter().enumerate() {
            out[i + k] += v * g;
        }
    }
    Ok(DelayDistribution { tau_start: dist.tau_start - h as f64 * dist.dtau, values: out, ..dist.clone() })
}

/// Uniform-width histogram of arrival-time differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub first_edge_ps: f64,
    pub bin_width_ps: f64,
    pub counts: Vec<u64>,
    pub total_pairs: u64,
    pub offset_ps: f64,
}

impl Histogram {
    pub fn center(&self, k: usize) -> f64 {
        self.first_edge_ps + (k as f64 + 0.5) * self.bin_width_ps
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|k| self.center(k)).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Count-weighted mean of bin centres.
    pub fn mean(&self) -> f64 {
        let t = self.total() as f64;
        self.counts.iter().enumerate().map(|(k, &c)| c as f64 * self.center(k)).sum::<f64>() / t
    }

    pub fn write_csv<W: Write, P: Serialize + ?Sized>(&self, mut out: W, params: &P) -> Result<()> {
        write_header(&mut out, "histogram", params)?;
        writeln!(
            out,
            "# total_pairs={} offset_ps={} bin_width_ps={}",
            self.total_pairs, self.offset_ps, self.bin_width_ps
        )?;
        writeln!(out, "bin_center_ps,counts")?;
        for (k, c) in self.counts.iter().enumerate() {
            writeln!(out, "{:.6},{}", self.center(k), c)?;
        }
        Ok(())
    }

    /// Parses the `bin_center_ps,counts` format; `#` lines are ignored.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rows = data_rows(text);
        match rows.next() {
            Some((_, "bin_center_ps,counts")) => {}
            Some((row, other)) => {
                return Err(Error::Parse {
                    row,
                    message: format!("expected header 'bin_center_ps,counts', got '{other}'"),
                })
            }
            None => return Err(Error::Parse { row: 0, message: "empty histogram file".into() }),
        }
        let mut centers = Vec::new();
        let mut counts = Vec::new();
        for (row, line) in rows {
            let mut cols = line.split(',');
            let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Parse { row, message: format!("expected 2 columns in '{line}'") });
            };
            let c: f64 =
                a.trim().parse().map_err(|e| Error::Parse { row, message: format!("bad bin centre '{a}': {e}") })?;
            let n: u64 =
                b.trim().parse().map_err(|e| Error::Parse { row, message: format!("bad count '{b}': {e}") })?;
            if !c.is_finite() {
                return Err(Error::Parse { row, message: "non-finite bin centre".into() });
            }
            centers.push((row, c));
            counts.push(n);
        }
        if centers.len() < 2 {
            return Err(Error::Parse {
                row: centers.first().map_or(0, |c| c.0),
                message: "need at least two bins".into(),
            });
        }
        let width = centers[1].1 - centers[0].1;
        if !(width > 0.0) {
            return Err(Error::Parse { row: centers[1].0, message: "bin centres must increase".into() });
        }
        for w in centers.windows(2) {
            if ((w[1].1 - w[0].1) - width).abs() > 1e-6 * width.max(1.0) {
                return Err(Error::Parse { row: w[1].0, message: "bins are not uniformly spaced".into() });
            }
        }
        let total = counts.iter().sum();
        Ok(Self {
            first_edge_ps: centers[0].1 - width / 2.0,
            bin_width_ps: width,
            counts,
            total_pairs: total,
            offset_ps: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplingSpec {
    pub pairs: u64,
    pub bin_width_ps: f64,
    /// Electronic offset added to every delay.
    pub offset_ps: f64,
    /// Mean background counts per bin.
    pub background_per_bin: f64,
    /// Histogram range in ps; default is ±250 ps around the shifted mean.
    pub range_ps: Option<(f64, f64)>,
}

impl SamplingSpec {
    pub fn new(pairs: u64, bin_width_ps: f64) -> Self {
        Self { pairs, bin_width_ps, offset_ps: 0.0, background_per_bin: 0.0, range_ps: None }
    }
}

/// Cumulative mass of the piecewise-constant density at τ.
fn cdf(dist: &DelayDistribution, prefix: &[f64], t: f64) -> f64 {
    let x = (t - dist.tau_start) / dist.dtau + 0.5;
    if x <= 0.0 {
        return 0.0;
    }
    let n = dist.values.len();
    if x >= n as f64 {
        return prefix[n];
    }
    let k = x.floor() as usize;
    prefix[k] + dist.values[k] * dist.dtau * (x - k as f64)
}

/// Draws a histogram: `pairs` delays distributed over bins multinomially
/// (pairs outside the range are lost) plus Poisson background per bin.
pub fn sample_histogram(dist: &DelayDistribution, spec: &SamplingSpec, seed: u64, stream: u64) -> Result<Histogram> {
    if spec.pairs == 0 || !(spec.bin_width_ps > 0.0) || !(spec.background_per_bin >= 0.0) {
        return Err(Error::Config("sampling needs pairs > 0, bin width > 0 and background >= 0".into()));
    }
    let mass = dist.integral();
    if !(mass > 0.0) {
        return Err(Error::ZeroMass);
    }
    let mean = mean_delay(dist)? + spec.offset_ps;
    let (lo, hi) = spec.range_ps.unwrap_or((mean - 250.0, mean + 250.0));
    let bw = spec.bin_width_ps;
    let first = (lo / bw).floor() * bw;
    let nbins = ((hi - first) / bw).ceil().max(1.0) as usize;

    let mut prefix = Vec::with_capacity(dist.values.len() + 1);
    prefix.push(0.0);
    for v in &dist.values {
        prefix.push(prefix.last().unwrap() + v * dist.dtau);
    }
    let probs: Vec<f64> = (0..nbins)
        .map(|k| {
            let a = first + k as f64 * bw - spec.offset_ps;
            ((cdf(dist, &prefix, a + bw) - cdf(dist, &prefix, a)) / mass).max(0.0)
        })
        .collect();

    let mut rng = rng_for(seed, stream);
    let mut remaining = spec.pairs;
    let mut p_left = 1.0f64;
    let mut counts = Vec::with_capacity(nbins);
    for &p in &probs {
        let c = if remaining == 0 || p <= 0.0 {
            0
        } else {
            let q = (p / p_left).clamp(0.0, 1.0);
            Binomial::new(remaining, q).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng)
        };
        remaining -= c;
        p_left -= p;
        counts.push(c);
    }
    if spec.background_per_bin > 0.0 {
        let bg = Poisson::new(spec.background_per_bin).map_err(|e| Error::Config(e.to_string()))?;
        for c in counts.iter_mut() {
            *c += bg.sample(&mut rng) as u64;
        }
    }
    Ok(Histogram { first_edge_ps: first, bin_width_ps: bw, counts, total_pairs: spec.pairs, offset_ps: spec.offset_ps })
}

/// Settings of the simulated measurement chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstrumentSpec {
    pub jitter_fwhm_ps: f64,
    pub bin_width_ps: f64,
    pub pairs: u64,
    pub offset_ps: f64,
    pub background_per_bin: f64,
}

impl Default for InstrumentSpec {
    fn default() -> Self {
        Self { jitter_fwhm_ps: 50.0, bin_width_ps: 4.0, pairs: 1_000_000, offset_ps: 0.0, background_per_bin: 1.0 }
    }
}

impl InstrumentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_fwhm_ps > 0.0)
            || !(self.bin_width_ps > 0.0)
            || self.pairs == 0
            || !(self.background_per_bin >= 0.0)
        {
            return Err(Error::Config(
                "instrument needs jitter > 0, bin width > 0, pairs > 0 and background >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn sampling(&self) -> SamplingSpec {
        SamplingSpec {
            pairs: self.pairs,
            bin_width_ps: self.bin_width_ps,
            offset_ps: self.offset_ps,
            background_per_bin: self.background_per_bin,
            range_ps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measurement {
    pub histogram: Histogram,
    pub fit: HistogramFit,
}

/// Jitter, histogram and fit for one simulated distribution.
pub fn measure(dist: &DelayDistribution, spec: &InstrumentSpec, seed: u64, stream: u64) -> Result<Measurement> {
    spec.validate()?;
    let blurred = convolve_jitter(dist, spec.jitter_fwhm_ps)?;
    let histogram = sample_histogram(&blurred, &spec.sampling(), seed, stream)?;
    let fit = fit_histogram(&histogram, &FitOptions::for_jitter(spec.jitter_fwhm_ps))?;
    Ok(Measurement { histogram, fit })
}
