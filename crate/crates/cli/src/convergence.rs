//! One-axis convergence studies.

use std::fs;
use std::path::Path;

use pcce::curve::DecayCurve;
use serde::{Deserialize, Serialize};

use crate::config::{Axis, Method, RunConfig, TimeGrid};
use crate::pipeline::{execute, resolve_time_grid, write_run};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub value: f64,
    /// Max |ΔMx| against the curve at the largest axis value.
    pub max_deviation: f64,
    /// `|ΔMx|` at most the reference standard error at every time.
    pub within_stderr: bool,
    /// Max |ΔMx| against the exact engine while the exact curve is ≥ 0.5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_deviation: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub axis: Axis,
    pub reference_value: f64,
    pub rows: Vec<ConvergenceRow>,
}

fn axis_name(axis: Axis) -> &'static str {
    match axis {
        Axis::K => "k",
        Axis::Rb => "rb",
        Axis::Rd => "rd",
        Axis::InternalSamples => "internal_samples",
    }
}

/// `base` with the axis set to `value`.
pub fn with_axis(base: &RunConfig, axis: Axis, value: f64) -> RunConfig {
    let mut c = base.clone();
    c.convergence = None;
    c.sweep = None;
    c.output_dir = None;
    match axis {
        Axis::K => {
            let n = match c.method {
                Method::Pcce { n, .. } | Method::Cce { n } => n,
                _ => 2,
            };
            c.method = Method::Pcce {
                n,
                k: value as usize,
            };
        }
        Axis::Rb => c.bath.bath_radius = Some(value),
        Axis::Rd => c.cce.dipole_radius_rd = Some(value),
        Axis::InternalSamples => c.cce.internal_samples = Some(value as usize),
    }
    c
}

fn deviation_above_half(curve: &DecayCurve, exact: &DecayCurve) -> f64 {
    curve
        .mx
        .iter()
        .zip(&exact.mx)
        .filter(|(_, e)| **e >= 0.5)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Runs `base` once per axis value on a shared time grid and compares every
/// curve with the one at the largest value.
pub fn run_convergence(base: &RunConfig, out: &Path) -> anyhow::Result<ConvergenceReport> {
    let study = base
        .convergence
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("config has no `convergence` section"))?;
    let axis = study.axis;
    let reference_value = study.values.iter().copied().fold(f64::MIN, f64::max);
    let mut base = base.clone();
    base.time_grid =
        TimeGrid::Explicit(resolve_time_grid(&with_axis(&base, axis, reference_value))?);
    fs::create_dir_all(out)?;

    let mut curves = vec![];
    for &v in &study.values {
        eprintln!("{} = {v}: running", axis_name(axis));
        let config = with_axis(&base, axis, v);
        let o = execute(&config)?;
        write_run(&out.join(format!("{}_{v}", axis_name(axis))), &o)?;
        curves.push((v, o.curve));
    }
    let exact = if study.exact_reference {
        let mut c = with_axis(&base, axis, reference_value);
        c.method = Method::Exact;
        let o = execute(&c)?;
        write_run(&out.join("exact"), &o)?;
        Some(o.curve)
    } else {
        None
    };

    let reference = &curves
        .iter()
        .find(|(v, _)| *v == reference_value)
        .expect("reference run")
        .1;
    let se = reference.stderr();
    let rows = curves
        .iter()
        .map(|(v, c)| {
            let diffs: Vec<f64> =
                c.mx.iter()
                    .zip(&reference.mx)
                    .map(|(a, b)| (a - b).abs())
                    .collect();
            ConvergenceRow {
                value: *v,
                max_deviation: diffs.iter().copied().fold(0.0, f64::max),
                within_stderr: diffs.iter().zip(&se).all(|(d, s)| d <= s),
                exact_deviation: exact.as_ref().map(|e| deviation_above_half(c, e)),
            }
        })
        .collect();
    let report = ConvergenceReport {
        axis,
        reference_value,
        rows,
    };
    fs::write(
        out.join("convergence.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    fs::write(out.join("convergence.txt"), render(&report))?;
    Ok(report)
}

fn render(r: &ConvergenceReport) -> String {
    let mut s = format!(
        "# {} max_deviation within_stderr exact_deviation\n",
        axis_name(r.axis)
    );
    for row in &r.rows {
        let exact = row
            .exact_deviation
            .map_or("-".to_string(), |d| format!("{d:.6e}"));
        s.push_str(&format!(
            "{} {:.6e} {} {exact}\n",
            row.value, row.max_deviation, row.within_stderr
        ));
    }
    s
}
