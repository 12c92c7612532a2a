//! Seven-parameter fit: two Gaussians plus a constant background,
//! `a1·exp(−(t−μ1)²/2s1²) + a2·exp(−(t−μ2)²/2s2²) + b`,
//! by projected Levenberg–Marquardt with Poisson weights 1/max(y, 1).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::Histogram;
use crate::error::{Error, Result};
use crate::export::write_header;
use crate::units::FWHM_PER_SIGMA;

pub const PARAMETER_NAMES: [&str; 7] = ["a1", "mu1_ps", "sigma1_ps", "a2", "mu2_ps", "sigma2_ps", "background"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative χ² change below which a start counts as converged.
    pub tolerance: f64,
    pub min_nonempty_bins: usize,
    /// Lower bound on both Gaussian widths; a quarter bin when absent.
    pub min_sigma_ps: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 400, tolerance: 1e-10, min_nonempty_bins: 50, min_sigma_ps: None }
    }
}

impl FitOptions {
    /// No feature of a jittered histogram is narrower than the jitter, so
    /// both components are kept at least that wide. Without the bound the
    /// second component can settle on a noise bump near the maximum.
    pub fn for_jitter(jitter_fwhm_ps: f64) -> Self {
        Self { min_sigma_ps: Some(jitter_fwhm_ps / FWHM_PER_SIGMA), ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramFit {
    pub params: [f64; 7],
    pub peak_ps: f64,
    pub peak_err_ps: f64,
    pub chi2_red: f64,
    pub iterations: usize,
    pub covariance: Vec<f64>,
}

impl HistogramFit {
    pub fn model(&self, t: f64) -> f64 {
        model(&self.params, t)
    }

    pub fn write_csv<W: Write, P: Serialize + ?Sized>(&self, mut out: W, params: &P) -> Result<()> {
        write_header(&mut out, "fit_report", params)?;
        writeln!(out, "{},peak_ps,peak_err_ps,chi2_red", PARAMETER_NAMES.join(","))?;
        let vals: Vec<String> = self.params.iter().map(|v| format!("{v:.9e}")).collect();
        writeln!(out, "{},{:.9},{:.9},{:.6}", vals.join(","), self.peak_ps, self.peak_err_ps, self.chi2_red)?;
        Ok(())
    }
}

fn gauss(t: f64, mu: f64, s: f64) -> f64 {
    (-(t - mu) * (t - mu) / (2.0 * s * s)).exp()
}

fn model(p: &[f64; 7], t: f64) -> f64 {
    p[0] * gauss(t, p[1], p[2]) + p[3] * gauss(t, p[4], p[5]) + p[6]
}

fn jacobian_row(p: &[f64; 7], t: f64) -> [f64; 7] {
    let mut row = [0.0; 7];
    for c in 0..2 {
        let (a, mu, s) = (p[3 * c], p[3 * c + 1], p[3 * c + 2]);
        let g = gauss(t, mu, s);
        let x = t - mu;
        row[3 * c] = g;
        row[3 * c + 1] = a * g * x / (s * s);
        row[3 * c + 2] = a * g * x * x / (s * s * s);
    }
    row[6] = 1.0;
    row
}

struct Data {
    t: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    min_sigma: f64,
    range: (f64, f64),
}

impl Data {
    fn chi2(&self, p: &[f64; 7]) -> f64 {
        self.t.iter().zip(&self.y).zip(&self.w).map(|((&t, &y), &w)| w * (y - model(p, t)).powi(2)).sum()
    }

    fn project(&self, p: &mut [f64; 7]) {
        p[0] = p[0].max(0.0);
        p[3] = p[3].max(0.0);
        p[2] = p[2].abs().max(self.min_sigma);
        p[5] = p[5].abs().max(self.min_sigma);
        p[1] = p[1].clamp(self.range.0, self.range.1);
        p[4] = p[4].clamp(self.range.0, self.range.1);
    }

    fn active_bounds(&self, p: &[f64; 7], g: &DVector<f64>) -> Vec<usize> {
        let at = |v: f64, bound: f64| (v - bound).abs() <= 1e-12 * bound.abs().max(1.0);
        (0..7)
            .filter(|&i| match i {
                0 | 3 => at(p[i], 0.0) && g[i] < 0.0,
                2 | 5 => at(p[i], self.min_sigma) && g[i] < 0.0,
                1 | 4 => (at(p[i], self.range.0) && g[i] < 0.0) || (at(p[i], self.range.1) && g[i] > 0.0),
                _ => false,
            })
            .collect()
    }

    /// Normal matrix JᵀWJ and gradient JᵀW r.
    fn normal(&self, p: &[f64; 7]) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(7, 7);
        let mut g = DVector::zeros(7);
        for ((&t, &y), &w) in self.t.iter().zip(&self.y).zip(&self.w) {
            let j = jacobian_row(p, t);
            let r = y - model(p, t);
            for i in 0..7 {
                g[i] += w * j[i] * r;
                for k in 0..=i {
                    a[(i, k)] += w * j[i] * j[k];
                }
            }
        }
        for i in 0..7 {
            for k in 0..i {
                a[(k, i)] = a[(i, k)];
            }
        }
        (a, g)
    }
}

struct StartResult {
    params: [f64; 7],
    chi2: f64,
    iterations: usize,
    converged: bool,
}

fn levenberg_marquardt(data: &Data, start: [f64; 7], opts: &FitOptions) -> StartResult {
    let mut p = start;
    data.project(&mut p);
    let mut chi2 = data.chi2(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut it = 0;
    while it < opts.max_iterations {
        it += 1;
        let (mut a, mut g) = data.normal(&p);
        // parameters held at a bound by a gradient pointing outward stay put
        for i in data.active_bounds(&p, &g) {
            for k in 0..7 {
                a[(i, k)] = 0.0;
                a[(k, i)] = 0.0;
            }
            a[(i, i)] = 1.0;
            g[i] = 0.0;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut m = a.clone();
            for i in 0..7 {
                m[(i, i)] += lambda * a[(i, i)].max(1e-12);
            }
            let Some(step) = m.cholesky().map(|c| c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p;
            for i in 0..7 {
                trial[i] += step[i];
            }
            data.project(&mut trial);
            let c = data.chi2(&trial);
            if c.is_finite() && c <= chi2 {
                let rel = (chi2 - c) / chi2.max(1e-300);
                p = trial;
                chi2 = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel < opts.tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no downhill step at any damping: a (local) minimum
            converged = lambda > 1e8;
            break;
        }
        if converged {
            break;
        }
    }
    StartResult { params: p, chi2, iterations: it, converged }
}

/// Inverse normal matrix with parameters held at a bound treated as fixed.
/// A scaled pseudo-inverse keeps degenerate directions (two coinciding
/// components) from swamping the identifiable ones.
fn covariance(data: &Data, p: &[f64; 7]) -> DMatrix<f64> {
    let (mut a, g) = data.normal(p);
    let fixed = data.active_bounds(p, &g);
    for &i in &fixed {
        for k in 0..7 {
            a[(i, k)] = 0.0;
            a[(k, i)] = 0.0;
        }
    }
    let d: Vec<f64> = (0..7).map(|i| if a[(i, i)] > 0.0 { 1.0 / a[(i, i)].sqrt() } else { 0.0 }).collect();
    let scaled = DMatrix::from_fn(7, 7, |i, k| a[(i, k)] * d[i] * d[k]);
    let svd = scaled.svd(true, true);
    let tol = 1e-10 * svd.singular_values.max();
    match svd.pseudo_inverse(tol) {
        Ok(inv) => DMatrix::from_fn(7, 7, |i, k| inv[(i, k)] * d[i] * d[k]),
        Err(_) => DMatrix::from_element(7, 7, f64::NAN),
    }
}

/// Location of the model maximum (background excluded) inside `range`.
///
/// With nonnegative amplitudes the sum rises left of both centres and falls
/// right of both, so the maximum lies between them.
fn model_peak(p: &[f64; 7], range: (f64, f64)) -> f64 {
    let f = |t: f64| p[0] * gauss(t, p[1], p[2]) + p[3] * gauss(t, p[4], p[5]);
    let lo = p[1].min(p[4]).max(range.0);
    let hi = p[1].max(p[4]).min(range.1);
    if hi - lo < 1e-12 {
        return lo;
    }
    let n = (((hi - lo) / (0.05 * p[2].min(p[5]))).ceil() as usize).clamp(200, 1_000_000);
    let h = (hi - lo) / n as f64;
    let (mut best, mut bv) = (lo, f64::MIN);
    for k in 0..=n {
        let t = lo + k as f64 * h;
        let v = f(t);
        if v > bv {
            bv = v;
            best = t;
        }
    }
    let (mut a, mut b) = ((best - h).max(lo), (best + h).min(hi));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

const REWEIGHT_PASSES: usize = 3;
/// Floor on the model variance so empty tails do not dominate.
const MIN_VARIANCE: f64 = 0.5;

/// Fits the two-Gaussian model with five moment-based starts and keeps the
/// best converged one, then refines it with model-variance weights.
pub fn fit_histogram(h: &Histogram, opts: &FitOptions) -> Result<HistogramFit> {
    let nonempty = h.counts.iter().filter(|&&c| c > 0).count();
    if nonempty < opts.min_nonempty_bins {
        return Err(Error::Config(format!(
            "histogram has {nonempty} nonempty bins, the fit needs at least {}",
            opts.min_nonempty_bins
        )));
    }
    let t = h.centers();
    let y: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    let w = y.iter().map(|&v| 1.0 / v.max(1.0)).collect();
    let range = (h.first_edge_ps, h.first_edge_ps + h.counts.len() as f64 * h.bin_width_ps);
    let data = Data {
        t: t.clone(),
        y: y.clone(),
        w,
        min_sigma: opts.min_sigma_ps.unwrap_or(0.0).max(0.25 * h.bin_width_ps),
        range,
    };

    // background from the outer tenth of bins on each side
    let edge = (y.len() / 10).max(1);
    let mut outer: Vec<f64> = y[..edge].iter().chain(&y[y.len() - edge..]).cloned().collect();
    outer.sort_by(|a, b| a.total_cmp(b));
    let b0 = outer[outer.len() / 2];
    let signal: Vec<f64> = y.iter().map(|v| (v - b0).max(0.0)).collect();
    let m0: f64 = signal.iter().sum();
    if !(m0 > 0.0) {
        return Err(Error::FitNotConverged { best_chi2_red: f64::NAN });
    }
    let mean = signal.iter().zip(&t).map(|(s, t)| s * t).sum::<f64>() / m0;
    let sd = (signal.iter().zip(&t).map(|(s, t)| s * (t - mean).powi(2)).sum::<f64>() / m0).sqrt().max(h.bin_width_ps);
    let height = signal.iter().cloned().fold(0.0, f64::max);

    let starts = [
        [0.5 * height, mean, sd, 0.5 * height, mean, 2.0 * sd, b0],
        [0.7 * height, mean - 0.3 * sd, 0.8 * sd, 0.3 * height, mean + 0.5 * sd, 1.5 * sd, b0],
        [0.7 * height, mean + 0.3 * sd, 0.8 * sd, 0.3 * height, mean - 0.5 * sd, 1.5 * sd, b0],
        [0.9 * height, mean, 0.9 * sd, 0.1 * height, mean, 3.0 * sd, b0],
        [0.6 * height, mean - 0.2 * sd, 0.6 * sd, 0.4 * height, mean + 0.2 * sd, 1.2 * sd, 0.5 * b0],
    ];
    let dof = (y.len() as f64 - 7.0).max(1.0);
    let results: Vec<StartResult> = starts.iter().map(|s| levenberg_marquardt(&data, *s, opts)).collect();
    let best_any = results.iter().map(|r| r.chi2).fold(f64::INFINITY, f64::min);
    let best = results
        .into_iter()
        .filter(|r| r.converged && r.params.iter().all(|v| v.is_finite()))
        .min_by(|a, b| a.chi2.total_cmp(&b.chi2))
        .ok_or(Error::FitNotConverged { best_chi2_red: best_any / dof })?;

    // reweight with the fitted model as the Poisson variance; the 1/count
    // weights of the first pass are biased in sparse bins
    let mut data = data;
    let mut best = best;
    for _ in 0..REWEIGHT_PASSES {
        data.w = data.t.iter().map(|&t| 1.0 / model(&best.params, t).max(MIN_VARIANCE)).collect();
        let next = levenberg_marquardt(&data, best.params, opts);
        if !next.converged || !next.params.iter().all(|v| v.is_finite()) {
            break;
        }
        best = next;
    }

    let p = best.params;
    let cov = covariance(&data, &p);
    let peak = model_peak(&p, range);
    // delta method: numerical gradient of the peak location
    let mut grad = [0.0; 7];
    for i in 0..7 {
        let step = 1e-5 * p[i].abs().max(1e-3);
        let (mut up, mut dn) = (p, p);
        up[i] += step;
        dn[i] -= step;
        grad[i] = (model_peak(&up, range) - model_peak(&dn, range)) / (2.0 * step);
    }
    let g = DVector::from_row_slice(&grad);
    let var = (g.transpose() * &cov * &g)[(0, 0)];
    Ok(HistogramFit {
        params: p,
        peak_ps: peak,
        peak_err_ps: var.max(0.0).sqrt(),
        chi2_red: best.chi2 / dof,
        iterations: best.iterations,
        covariance: cov.iter().cloned().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelativeDelay {
    pub delay_ps: f64,
    pub error_ps: f64,
}

/// Peak of `b` relative to peak of `a`.
pub fn relative_delay(a: &HistogramFit, b: &HistogramFit) -> RelativeDelay {
    RelativeDelay { delay_ps: b.peak_ps - a.peak_ps, error_ps: a.peak_err_ps.hypot(b.peak_err_ps) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::rng_for;
    use rand_distr::{Distribution, Poisson};

    fn synthetic(p: &[f64; 7], seed: u64) -> Histogram {
        let mut rng = rng_for(seed, 0);
        let bw = 4.0;
        let first = -200.0;
        let counts = (0..100)
            .map(|k| {
                let t = first + (k as f64 + 0.5) * bw;
                let mu = model(p, t);
                if mu > 0.0 {
                    Poisson::new(mu).unwrap().sample(&mut rng) as u64
                } else {
                    0
                }
            })
            .collect::<Vec<_>>();
        let total = counts.iter().sum();
        Histogram { first_edge_ps: first, bin_width_ps: bw, counts, total_pairs: total, offset_ps: 0.0 }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = [100.0, 3.0, 20.0, 40.0, -8.0, 35.0, 2.0];
        for t in [-50.0, 0.0, 13.0] {
            let j = jacobian_row(&p, t);
            for i in 0..7 {
                let h = 1e-6 * p[i].abs().max(1.0);
                let (mut u, mut d) = (p, p);
                u[i] += h;
                d[i] -= h;
                let fd = (model(&u, t) - model(&d, t)) / (2.0 * h);
                assert!((fd - j[i]).abs() < 1e-6 * fd.abs().max(1e-6), "{i}: {fd} {}", j[i]);
            }
        }
    }

    #[test]
    fn recovers_known_model() {
        // about 1e5 counts in total
        let truth = [1500.0, 2.0, 18.0, 500.0, 15.0, 30.0, 5.0];
        let h = synthetic(&truth, 11);
        let fit = fit_histogram(&h, &FitOptions::default()).unwrap();
        let true_peak = model_peak(&truth, (-200.0, 200.0));
        assert!((fit.peak_ps - true_peak).abs() < 0.4, "{} vs {true_peak}", fit.peak_ps);
        assert!(fit.chi2_red < 1.5);
        assert!(fit.peak_err_ps > 0.0 && fit.peak_err_ps < 0.4);
    }

    #[test]
    fn single_gaussian_degenerates_gracefully() {
        let truth = [2000.0, -4.0, 21.0, 0.0, 0.0, 21.0, 3.0];
        let h = synthetic(&truth, 5);
        let fit = fit_histogram(&h, &FitOptions::default()).unwrap();
        assert!((fit.peak_ps + 4.0).abs() < 0.5, "{} {:?}", fit.peak_ps, fit.params);
    }

    /// With both widths held at the jitter, the two components of a single
    /// Gaussian coincide; the fit must still converge and report a finite,
    /// calibrated peak error.
    #[test]
    fn jitter_bound_on_single_gaussian() {
        let truth = [2000.0, -4.0, 21.0, 0.0, 0.0, 21.0, 3.0];
        let opts = FitOptions::for_jitter(50.0);
        assert!((opts.min_sigma_ps.unwrap() - 21.233).abs() < 1e-3);
        let peaks: Vec<f64> = (0..20)
            .map(|seed| {
                let fit = fit_histogram(&synthetic(&truth, seed), &opts).unwrap();
                assert!(fit.params[2] >= 21.233 - 1e-9 && fit.params[5] >= 21.233 - 1e-9);
                assert!(fit.peak_err_ps.is_finite() && fit.peak_err_ps > 0.0 && fit.peak_err_ps < 1.0);
                fit.peak_ps
            })
            .collect();
        let mean = peaks.iter().sum::<f64>() / peaks.len() as f64;
        let sd = (peaks.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (peaks.len() - 1) as f64).sqrt();
        // σ/√N for about 1e5 counts is 0.07 ps
        assert!((mean + 4.0).abs() < 0.1 && sd < 0.2, "mean {mean} sd {sd}");
    }

    #[test]
    fn background_is_absorbed() {
        let truth = [1500.0, 2.0, 18.0, 500.0, 15.0, 30.0, 0.0];
        let raised = [1500.0, 2.0, 18.0, 500.0, 15.0, 30.0, 200.0];
        let a = fit_histogram(&synthetic(&truth, 21), &FitOptions::default()).unwrap();
        let b = fit_histogram(&synthetic(&raised, 21), &FitOptions::default()).unwrap();
        assert!((b.params[6] - 200.0).abs() < 10.0, "{}", b.params[6]);
        assert!((a.peak_ps - b.peak_ps).abs() < 4.0 * a.peak_err_ps.hypot(b.peak_err_ps));
    }

    #[test]
    fn too_few_bins_is_an_error() {
        let h =
            Histogram { first_edge_ps: 0.0, bin_width_ps: 4.0, counts: vec![5; 20], total_pairs: 100, offset_ps: 0.0 };
        assert!(matches!(fit_histogram(&h, &FitOptions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn same_fit_gives_zero_relative_delay() {
        let h = synthetic(&[1000.0, 0.0, 20.0, 300.0, 10.0, 30.0, 1.0], 2);
        let f = fit_histogram(&h, &FitOptions::default()).unwrap();
        assert_eq!(relative_delay(&f, &f).delay_ps, 0.0);
        let mut out = Vec::new();
        f.write_csv(&mut out, &serde_json::json!({})).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("peak_ps,peak_err_ps,chi2_red"));
    }
}
