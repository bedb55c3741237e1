//! Concentration × thickness grids with resumable cells.

use std::fs;
use std::path::{Path, PathBuf};

use pcce::analysis::{
    fit_table_csv, regime_report, scaling_exponent, FitTableRow, RegimeEntry, RegimeReport,
    ScalingResult,
};
use pcce::bath::HyperfineMode;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::pipeline::{config_hash, execute, read_record, write_run, RunRecord};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellStatus {
    pub layer_thickness: f64,
    pub rho_ppm: f64,
    pub dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRow {
    pub layer_thickness: f64,
    pub mode: HyperfineMode,
    pub result: Option<ScalingResult>,
    /// Concentrations without a usable fit; the slope is omitted when non-empty.
    pub incomplete: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub regimes: RegimeReport,
    pub scaling: Vec<ScalingRow>,
    pub cells: Vec<CellStatus>,
}

/// Configuration of one grid cell.
pub fn cell_config(base: &RunConfig, layer_thickness: f64, rho_ppm: f64) -> RunConfig {
    let mut c = base.clone();
    c.bath.layer_thickness = layer_thickness;
    c.bath.concentration_ppm = rho_ppm;
    c.sweep = None;
    c.convergence = None;
    c.output_dir = None;
    c
}

fn cell_dir(out: &Path, config: &RunConfig) -> PathBuf {
    out.join("cells").join(&config_hash(config)[..16])
}

fn load_finished(dir: &Path, hash: &str) -> Option<RunRecord> {
    read_record(dir).ok().filter(|r| r.config_hash == hash)
}

/// Runs every cell (skipping finished ones when `resume`) and writes the
/// aggregate files. Returns the report; failed cells are listed in it.
pub fn run_sweep(base: &RunConfig, out: &Path, resume: bool) -> anyhow::Result<SweepReport> {
    let grid = base
        .sweep
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("config has no `sweep` section"))?;
    fs::create_dir_all(out)?;
    let mut cells = vec![];
    let mut records: Vec<(f64, f64, Option<RunRecord>)> = vec![];
    for &l in &grid.layer_thicknesses {
        for &rho in &grid.concentrations_ppm {
            let config = cell_config(base, l, rho);
            let dir = cell_dir(out, &config);
            let hash = config_hash(&config);
            let finished = if resume {
                load_finished(&dir, &hash)
            } else {
                None
            };
            let (record, error) = match finished {
                Some(r) => {
                    eprintln!("cell L={l} rho={rho}: complete, skipped");
                    (Some(r), None)
                }
                None => {
                    eprintln!("cell L={l} rho={rho}: running");
                    match execute(&config) {
                        Ok(o) => {
                            write_run(&dir, &o)?;
                            (Some(o.record), None)
                        }
                        Err(e) => (None, Some(e.to_string())),
                    }
                }
            };
            let fit_error = record.as_ref().and_then(|r| r.fit.error.clone());
            let dir = dir.strip_prefix(out).unwrap_or(&dir).to_path_buf();
            cells.push(CellStatus {
                layer_thickness: l,
                rho_ppm: rho,
                dir,
                error,
                fit_error,
            });
            records.push((l, rho, record));
        }
    }

    let mode = base.bath.hyperfine_mode;
    let entries: Vec<RegimeEntry> = records
        .iter()
        .map(|(l, rho, r)| RegimeEntry {
            layer_thickness: *l,
            rho_ppm: *rho,
            mode,
            fit: r.as_ref().and_then(|r| r.fit.fit.clone()),
        })
        .collect();
    let mut scaling = vec![];
    for &l in &grid.layer_thicknesses {
        let row: Vec<&RegimeEntry> = entries.iter().filter(|e| e.layer_thickness == l).collect();
        let incomplete: Vec<f64> = row
            .iter()
            .filter(|e| e.fit.is_none())
            .map(|e| e.rho_ppm)
            .collect();
        let result = if incomplete.is_empty() {
            let fits: Vec<_> = row
                .iter()
                .map(|e| (e.rho_ppm, e.fit.clone().expect("complete row")))
                .collect();
            Some(scaling_exponent(&fits, l)?)
        } else {
            None
        };
        scaling.push(ScalingRow {
            layer_thickness: l,
            mode,
            result,
            incomplete,
        });
    }
    let rows: Vec<FitTableRow> = entries
        .iter()
        .filter_map(|e| {
            let slope = scaling
                .iter()
                .find(|s| s.layer_thickness == e.layer_thickness)
                .and_then(|s| s.result.as_ref().map(|r| r.slope));
            e.fit.clone().map(|fit| FitTableRow {
                layer_thickness: e.layer_thickness,
                rho_ppm: e.rho_ppm,
                mode,
                fit,
                slope,
            })
        })
        .collect();
    let report = SweepReport {
        regimes: regime_report(&entries),
        scaling,
        cells,
    };

    fs::write(
        out.join("scaling.json"),
        serde_json::to_string_pretty(&report.scaling)? + "\n",
    )?;
    fs::write(out.join("fits.csv"), fit_table_csv(&rows))?;
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    fs::write(out.join("report.txt"), render(&report))?;
    Ok(report)
}

fn render(report: &SweepReport) -> String {
    let mut s = report.regimes.render();
    s.push('\n');
    for row in &report.scaling {
        match &row.result {
            Some(r) => s.push_str(&format!(
                "L = {} nm: slope d log T2 / d log rho = {:.3}\n",
                row.layer_thickness, r.slope
            )),
            None => s.push_str(&format!(
                "L = {} nm: incomplete (missing {:?} ppm), no slope\n",
                row.layer_thickness, row.incomplete
            )),
        }
    }
    for c in &report.cells {
        if let Some(e) = c.error.as_ref().or(c.fit_error.as_ref()) {
            s.push_str(&format!(
                "failed cell L = {} nm, rho = {} ppm: {e}\n",
                c.layer_thickness, c.rho_ppm
            ));
        }
    }
    s
}
