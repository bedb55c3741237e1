//! Stretched-exponential fits `Mx = exp[−(t/T2)^p]` and concentration scaling.
//!
//! The fit is linear in `ln(−ln Mx) = p ln t + d`, so `T2 = exp(−d/p)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bath::HyperfineMode;
use crate::curve::DecayCurve;
use crate::{Error, Result};

/// Points with `Mx` at or below this are excluded before windowing.
pub const MX_FLOOR: f64 = 1e-6;
pub const AUTO_LEVEL_HI: f64 = 0.9;
pub const AUTO_LEVEL_LO: f64 = 0.5;
/// Smallest reported uncertainty of `p`.
pub const P_ERROR_FLOOR: f64 = 0.1;
const MIN_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// `Mx ∈ [0.5, 0.9]`, trimmed at the late end where the curve bends.
    Auto,
    /// Points with `t_lo ≤ t ≤ t_hi` (μs).
    Explicit { t_lo: f64, t_hi: f64 },
    /// Points with `lo ≤ Mx ≤ hi`, no trimming.
    Levels { hi: f64, lo: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub p: f64,
    pub t2: f64,
    pub intercept_d: f64,
    /// Time span of the points used, μs.
    pub window: (f64, f64),
    /// `Mx` at the window ends (early, late).
    pub mx_window: (f64, f64),
    /// RMS residual of the linear fit.
    pub residual: f64,
    pub p_error: f64,
    pub n_points: usize,
}

struct Line {
    slope: f64,
    intercept: f64,
    rms: f64,
    slope_stderr: f64,
    residuals: Vec<f64>,
}

fn least_squares(x: &[f64], y: &[f64]) -> Line {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| b - (intercept + slope * a))
        .collect();
    let ss: f64 = residuals.iter().map(|r| r * r).sum();
    let rms = (ss / n).sqrt();
    let slope_stderr = if x.len() > 2 {
        (ss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Line {
        slope,
        intercept,
        rms,
        slope_stderr,
        residuals,
    }
}

/// Least-squares stretched-exponential fit over a window.
pub fn fit_stretched_exponential(curve: &DecayCurve, mode: WindowMode) -> Result<FitResult> {
    let usable: Vec<usize> = (0..curve.len())
        .filter(|&i| curve.times[i] > 0.0 && curve.mx[i] > MX_FLOOR)
        .collect();
    let mut idx: Vec<usize> = match mode {
        WindowMode::Auto => usable
            .into_iter()
            .filter(|&i| (AUTO_LEVEL_LO..=AUTO_LEVEL_HI).contains(&curve.mx[i]))
            .collect(),
        WindowMode::Levels { hi, lo } => usable
            .into_iter()
            .filter(|&i| (lo..=hi).contains(&curve.mx[i]))
            .collect(),
        WindowMode::Explicit { t_lo, t_hi } => usable
            .into_iter()
            .filter(|&i| (t_lo..=t_hi).contains(&curve.times[i]))
            .collect(),
    };
    if let Some(&i) = idx.iter().find(|&&i| curve.mx[i] >= 1.0) {
        return Err(Error::UndefinedLog {
            t: curve.times[i],
            mx: curve.mx[i],
        });
    }
    if idx.len() < MIN_POINTS {
        return Err(Error::InsufficientData(idx.len()));
    }
    let xy = |idx: &[usize]| -> (Vec<f64>, Vec<f64>) {
        idx.iter()
            .map(|&i| (curve.times[i].ln(), (-curve.mx[i].ln()).ln()))
            .unzip()
    };
    let (x, y) = xy(&idx);
    let mut line = least_squares(&x, &y);
    if mode == WindowMode::Auto {
        while idx.len() > MIN_POINTS {
            let last = line.residuals.last().expect("non-empty").abs();
            if last <= (2.0 * line.rms).max(1e-9) {
                break;
            }
            idx.pop();
            let (x, y) = xy(&idx);
            line = least_squares(&x, &y);
        }
    }
    let p = line.slope;
    if !(p > 0.0) {
        return Err(Error::InvalidInput(format!(
            "fitted exponent {p} is not positive"
        )));
    }
    let (first, last) = (idx[0], *idx.last().expect("non-empty"));
    Ok(FitResult {
        p,
        t2: (-line.intercept / p).exp(),
        intercept_d: line.intercept,
        window: (curve.times[first], curve.times[last]),
        mx_window: (curve.mx[first], curve.mx[last]),
        residual: line.rms,
        p_error: line.slope_stderr.max(P_ERROR_FLOOR),
        n_points: idx.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub rho_ppm: f64,
    pub t2: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    /// `d log T2 / d log ρ`.
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<ScalingPoint>,
    pub layer_thickness: f64,
}

/// Slope of `log T2` against `log ρ` over at least three concentrations.
pub fn scaling_exponent(fits: &[(f64, FitResult)], layer_thickness: f64) -> Result<ScalingResult> {
    if fits.len() < 3 {
        return Err(Error::InsufficientData(fits.len()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = fits.iter().map(|(rho, f)| (rho.ln(), f.t2.ln())).unzip();
    let line = least_squares(&x, &y);
    let mut points: Vec<ScalingPoint> = fits
        .iter()
        .map(|(rho, f)| ScalingPoint {
            rho_ppm: *rho,
            t2: f.t2,
            p: f.p,
        })
        .collect();
    points.sort_by(|a, b| a.rho_ppm.total_cmp(&b.rho_ppm));
    Ok(ScalingResult {
        slope: line.slope,
        intercept: line.intercept,
        points,
        layer_thickness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeEntry {
    pub layer_thickness: f64,
    pub rho_ppm: f64,
    pub mode: HyperfineMode,
    pub fit: Option<FitResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeCell {
    pub rho_ppm: f64,
    /// `None` when the cell is missing or its fit failed.
    pub p: Option<f64>,
    pub p_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub layer_thickness: f64,
    pub mode: HyperfineMode,
    pub cells: Vec<RegimeCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub concentrations: Vec<f64>,
    pub rows: Vec<RegimeRow>,
}

fn mode_name(mode: HyperfineMode) -> &'static str {
    match mode {
        HyperfineMode::P1 => "p1",
        HyperfineMode::NoHyperfine => "no_hyperfine",
    }
}

/// Table of fitted exponents with rows `(L, mode)` and concentration columns.
pub fn regime_report(entries: &[RegimeEntry]) -> RegimeReport {
    let mut concentrations: Vec<f64> = entries.iter().map(|e| e.rho_ppm).collect();
    concentrations.sort_by(f64::total_cmp);
    concentrations.dedup();
    let mut rows: BTreeMap<(u64, &str), (f64, HyperfineMode, BTreeMap<u64, &RegimeEntry>)> =
        BTreeMap::new();
    for e in entries {
        let row = rows
            .entry((e.layer_thickness.to_bits(), mode_name(e.mode)))
            .or_insert_with(|| (e.layer_thickness, e.mode, BTreeMap::new()));
        row.2.insert(e.rho_ppm.to_bits(), e);
    }
    let rows = rows
        .into_values()
        .map(|(l, mode, cells)| RegimeRow {
            layer_thickness: l,
            mode,
            cells: concentrations
                .iter()
                .map(|rho| {
                    let fit = cells.get(&rho.to_bits()).and_then(|e| e.fit.as_ref());
                    RegimeCell {
                        rho_ppm: *rho,
                        p: fit.map(|f| f.p),
                        p_error: fit.map(|f| f.p_error),
                    }
                })
                .collect(),
        })
        .collect();
    RegimeReport {
        concentrations,
        rows,
    }
}

impl RegimeReport {
    /// Plain-text table; absent cells print as `-`.
    pub fn render(&self) -> String {
        let mut s = String::from("L_nm      mode          ");
        for rho in &self.concentrations {
            let _ = write!(s, "{:>16}", format!("{rho} ppm"));
        }
        s.push('\n');
        for row in &self.rows {
            let _ = write!(s, "{:<10}{:<14}", row.layer_thickness, mode_name(row.mode));
            for c in &row.cells {
                let cell = match (c.p, c.p_error) {
                    (Some(p), Some(e)) => format!("{p:.2} ± {e:.2}"),
                    _ => "-".to_string(),
                };
                let _ = write!(s, "{cell:>16}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTableRow {
    pub layer_thickness: f64,
    pub rho_ppm: f64,
    pub mode: HyperfineMode,
    pub fit: FitResult,
    pub slope: Option<f64>,
}

/// Flat CSV with columns `L,rho_ppm,mode,p,p_err,T2_us,slope`.
pub fn fit_table_csv(rows: &[FitTableRow]) -> String {
    let mut s = String::from("L,rho_ppm,mode,p,p_err,T2_us,slope\n");
    for r in rows {
        let slope = r.slope.map_or(String::new(), |v| format!("{v}"));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.layer_thickness,
            r.rho_ppm,
            mode_name(r.mode),
            r.fit.p,
            r.fit.p_error,
            r.fit.t2,
            slope
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::geometric_grid;

    fn model(t2: f64, p: f64) -> DecayCurve {
        DecayCurve::stretched_exponential(&geometric_grid(t2 / 100.0, 3.0 * t2, 60), t2, p)
    }

    #[test]
    fn recovers_model_parameters() {
        let f = fit_stretched_exponential(&model(100.0, 0.67), WindowMode::Auto).unwrap();
        assert!((f.p - 0.67).abs() < 1e-6);
        assert!((f.t2 - 100.0).abs() < 1e-4);
        assert!((f.t2 - (-f.intercept_d / f.p).exp()).abs() < 1e-12);
        assert_eq!(f.p_error, P_ERROR_FLOOR);
    }

    #[test]
    fn pure_exponential_t2_is_one_over_e_time() {
        let c = model(37.0, 1.0);
        let f = fit_stretched_exponential(&c, WindowMode::Auto).unwrap();
        assert!((f.p - 1.0).abs() < 1e-9);
        assert!(((-(-1.0f64).exp().ln()) * 37.0 - f.t2).abs() < 1e-6);
    }

    #[test]
    fn explicit_window_and_errors() {
        let c = model(10.0, 1.5);
        let f = fit_stretched_exponential(
            &c,
            WindowMode::Explicit {
                t_lo: 1.0,
                t_hi: 20.0,
            },
        )
        .unwrap();
        assert!((f.p - 1.5).abs() < 1e-9);
        assert!(f.window.0 >= 1.0 && f.window.1 <= 20.0);
        assert!(matches!(
            fit_stretched_exponential(
                &c,
                WindowMode::Explicit {
                    t_lo: 29.0,
                    t_hi: 30.0
                }
            ),
            Err(Error::InsufficientData(_))
        ));
        let mut bad = c.clone();
        bad.mx[20] = 1.01;
        assert!(matches!(
            fit_stretched_exponential(
                &bad,
                WindowMode::Explicit {
                    t_lo: 0.1,
                    t_hi: 30.0
                }
            ),
            Err(Error::UndefinedLog { .. })
        ));
    }

    #[test]
    fn bending_tail_is_trimmed() {
        // exponent changes from 1 to 2 beyond the true window
        let times = geometric_grid(0.5, 30.0, 60);
        let mx = times
            .iter()
            .map(|&t: &f64| {
                let x: f64 = t / 10.0;
                let e = if x < 0.6 { x } else { 0.6 * (x / 0.6).powi(2) };
                (-e).exp()
            })
            .collect();
        let f = fit_stretched_exponential(&DecayCurve::new(times, mx), WindowMode::Auto).unwrap();
        assert!(f.mx_window.1 > 0.5);
        assert!(f.p < 1.5);
    }

    #[test]
    fn inverse_scaling_has_unit_slope() {
        let fits: Vec<(f64, FitResult)> = [0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&rho| {
                (
                    rho,
                    fit_stretched_exponential(&model(100.0 / rho, 1.0), WindowMode::Auto).unwrap(),
                )
            })
            .collect();
        let s = scaling_exponent(&fits, 240.0).unwrap();
        assert!((s.slope + 1.0).abs() < 1e-9);
        assert!(scaling_exponent(&fits[..2], 240.0).is_err());
    }

    #[test]
    fn report_marks_missing_cells() {
        let fit = fit_stretched_exponential(&model(50.0, 0.67), WindowMode::Auto).unwrap();
        let entries = vec![
            RegimeEntry {
                layer_thickness: 30.0,
                rho_ppm: 1.0,
                mode: HyperfineMode::P1,
                fit: Some(fit.clone()),
            },
            RegimeEntry {
                layer_thickness: 30.0,
                rho_ppm: 2.0,
                mode: HyperfineMode::P1,
                fit: None,
            },
            RegimeEntry {
                layer_thickness: 240.0,
                rho_ppm: 2.0,
                mode: HyperfineMode::P1,
                fit: Some(fit),
            },
        ];
        let r = regime_report(&entries);
        assert_eq!(r.concentrations, vec![1.0, 2.0]);
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows[0].cells[1].p.is_none());
        assert!(r.rows[1].cells[0].p.is_none());
        assert!(r.render().contains("0.67 ± 0.10"));
    }

    #[test]
    fn csv_table_has_header() {
        let fit = fit_stretched_exponential(&model(50.0, 1.0), WindowMode::Auto).unwrap();
        let csv = fit_table_csv(&[FitTableRow {
            layer_thickness: 240.0,
            rho_ppm: 2.0,
            mode: HyperfineMode::P1,
            fit,
            slope: Some(-1.0),
        }]);
        assert!(csv.starts_with("L,rho_ppm,mode,p,p_err,T2_us,slope\n240,2,p1,"));
    }
}
