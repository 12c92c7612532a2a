use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spdc-delay")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

fn stdout_value(stdout: &str, key: &str) -> f64 {
    let line = stdout.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no {key} in {stdout}"));
    line[key.len()..].split_whitespace().next().unwrap().parse().unwrap()
}

fn write_config(dir: &TempDir, json: &str) -> String {
    write_named(dir.path(), "run.json", json)
}

fn write_named(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn correlations_writes_map_and_locus() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    // at the phase-matching temperature the ridge follows the plane-wave locus
    let cfg = write_config(&dir, r#"{"crystal": {"temperature_c": 56.9254}, "pump": {"waist_um": 100}}"#);
    ok(&["--config", &cfg, "--out", out, "correlations"]);
    let map_text = fs::read_to_string(dir.path().join("correlation_map.csv")).unwrap();
    assert!(map_text.starts_with("# tool=spdc-delay version="));
    let params = map_text.lines().nth(1).unwrap();
    for key in ["\"length_mm\":15.0", "\"waist_um\":100.0", "\"fiber_waist_um\":18.0", "\"temperature_c\":56.9254"] {
        assert!(params.contains(key), "{key} missing from {params}");
    }
    let map = rows(&dir.path().join("correlation_map.csv"));
    let locus = rows(&dir.path().join("phase_matching_locus.csv"));
    assert!(!map.is_empty() && !locus.is_empty());

    let mut omegas: Vec<f64> = map.iter().map(|r| r[1]).collect();
    omegas.dedup();
    omegas.sort_by(f64::total_cmp);
    omegas.dedup();
    let d_omega = omegas[1] - omegas[0];
    let peak = map.iter().map(|r| r[2]).fold(0.0, f64::max);
    let mut checked = 0;
    for pt in &locus {
        let column: Vec<&Vec<f64>> = map.iter().filter(|r| r[0] == pt[0]).collect();
        let best = column.iter().max_by(|a, b| a[2].total_cmp(&b[2])).unwrap();
        // only columns that carry signal have a meaningful ridge
        if best[2] > 0.05 * peak {
            assert!((best[1] - pt[1]).abs() <= 2.0 * d_omega, "q = {}: ridge {} vs locus {}", pt[0], best[1], pt[1]);
            checked += 1;
        }
    }
    assert!(checked >= 4, "only {checked} columns checked");
}

#[test]
fn delay_with_overlay_and_oracle() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let stdout = ok(&["--out", out, "delay", "--z-c-mm", "1", "--toy-overlay", "--oracle"]);
    let dev = stdout_value(&stdout, "oracle       max |fft - direct| / peak =");
    assert!(dev < 1e-6, "{stdout}");
    let dist = rows(&dir.path().join("delay.csv"));
    let toy = rows(&dir.path().join("toy_overlay.csv"));
    assert_eq!(dist.len(), toy.len());
    let mass: f64 = dist.iter().map(|r| r[1]).sum::<f64>() * (dist[1][0] - dist[0][0]);
    assert!((mass - 1.0).abs() < 0.02, "cropped mass {mass}");
    let mean = stdout_value(&stdout, "mean delay");
    assert!(mean > 2.9 && mean < 3.4, "mean {mean}");
}

#[test]
fn delay_is_byte_identical_across_runs() {
    let dirs = [TempDir::new().unwrap(), TempDir::new().unwrap()];
    for d in &dirs {
        ok(&["--out", d.path().to_str().unwrap(), "--seed", "7", "delay", "--jitter-fwhm-ps", "50", "--bins-ps", "4"]);
    }
    for name in ["delay.csv", "histogram.csv", "fit.csv"] {
        let a = fs::read(dirs[0].path().join(name)).unwrap();
        let b = fs::read(dirs[1].path().join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
}

#[test]
fn fit_single_and_relative() {
    let dir = TempDir::new().unwrap();
    let base = dir.path();
    let (a, b) = (base.join("a"), base.join("b"));
    let cfg = write_named(base, "a.json", r#"{"instrument": {"pairs": 1000000}}"#);
    ok(&["--config", &cfg, "--out", a.to_str().unwrap(), "--seed", "3", "delay", "--instrument"]);
    let shifted = write_named(base, "b.json", r#"{"instrument": {"pairs": 1000000, "offset_ps": 1.0}}"#);
    ok(&["--config", &shifted, "--out", b.to_str().unwrap(), "--seed", "3", "delay", "--instrument"]);

    let fit_dir = base.join("fit");
    let ha = a.join("histogram.csv");
    let hb = b.join("histogram.csv");
    let single = ok(&["--out", fit_dir.to_str().unwrap(), "fit", ha.to_str().unwrap()]);
    assert!(single.contains("peak"));
    let fit = rows(&fit_dir.join("fit.csv"));
    let generated = rows(&a.join("fit.csv"));
    // refitting the written histogram recovers the generating fit
    for (x, y) in fit[0].iter().zip(&generated[0]) {
        assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0), "{x} vs {y}");
    }

    ok(&["--out", fit_dir.to_str().unwrap(), "fit", ha.to_str().unwrap(), hb.to_str().unwrap()]);
    let rel = rows(&fit_dir.join("relative_delay.csv"));
    // the same seed gives common random numbers, so only the offset differs
    assert!((rel[0][0] - 1.0).abs() < 0.1, "relative delay {}", rel[0][0]);
    assert!(fit_dir.join("fit_1.csv").exists() && fit_dir.join("fit_2.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();

    let bad = write_config(&dir, "{\n  \"pump\": {\"waist\": 12.9}\n}");
    let r = run(&["--config", &bad, "--out", out, "delay"]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("unknown field `waist`") && err.contains("line 2"), "{err}");

    let r = run(&["--out", out, "scan", "--start", "2", "--stop", "-2"]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));

    let csv = dir.path().join("broken.csv");
    fs::write(&csv, "bin_center_ps,counts\n0,1\n4,x\n").unwrap();
    let r = run(&["--out", out, "fit", csv.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("row 3"), "{}", String::from_utf8_lossy(&r.stderr));

    let flat = dir.path().join("flat.csv");
    let body: String = (0..100).map(|k| format!("{},10\n", 4 * k)).collect();
    fs::write(&flat, format!("bin_center_ps,counts\n{body}")).unwrap();
    let r = run(&["--out", out, "fit", flat.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(4), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stderr).contains("did not converge"));
}

#[test]
fn lens_scan_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let stdout = ok(&["--out", out, "scan", "--variable", "z_cl", "--start", "101", "--stop", "103", "--step", "1"]);
    assert!(stdout.contains("points            3 (0 failed)"), "{stdout}");
    let text = fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(
        header,
        "z_cl_mm,mean_delay_ps,mean_subtracted_ps,width_ps,peak_ps,rate,rel_rate,instrument_peak_ps,flags"
    );
    let scan = rows(&dir.path().join("scan.csv"));
    // moving the lens away from the crystal lowers the delay
    assert!(scan[0][1] > scan[1][1] && scan[1][1] > scan[2][1]);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("scan_metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["scan"]["variable"], "z_cl");
    assert!(meta["setup"]["crystal"]["length_mm"].is_number());
}

/// Central slope of the crystal scan with the fibre parameters.
#[test]
fn smf_scan_slope_matches_n_d() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let stdout = ok(&["--out", out, "scan", "--start", "-1", "--stop", "1", "--step", "0.5"]);
    let line = stdout.lines().find(|l| l.starts_with("central slope")).unwrap();
    let peak_slope: f64 = line.split("peak ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    let n_d = 1.8004 * 0.352328;
    assert!((peak_slope - n_d).abs() < 0.15 * n_d, "{line}");
}

#[test]
fn free_space_rate_drops_away_from_centre() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write_config(
        &dir,
        r#"{"crystal": {"temperature_c": 58}, "pump": {"waist_um": 11.4},
            "detection": {"scheme": "free_space", "detector_side_um": 40, "bandpass": {"fwhm_nm": 2.5}}}"#,
    );
    ok(&["--config", &cfg, "--out", out, "scan", "--start", "0", "--stop", "4", "--step", "4"]);
    let scan = rows(&dir.path().join("scan.csv"));
    assert_eq!(scan[0][6], 1.0);
    assert!(scan[0][5] / scan[1][5] > 1.0, "rate(0)/rate(4) = {}", scan[0][5] / scan[1][5]);
}
