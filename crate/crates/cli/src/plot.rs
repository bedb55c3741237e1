//! Gnuplot-ready column files from run records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pcce::analysis::scaling_exponent;

use crate::pipeline::{read_record, RunRecord, RECORD_FILE};

pub struct PlotSummary {
    pub records: usize,
    /// Points left out of the log-log file because `Mx ≥ 1` (or `Mx ≤ 0`).
    pub skipped: usize,
}

/// Run directories under `paths`: each path is a run directory or a sweep
/// directory holding `cells/*`.
pub fn collect_records(paths: &[PathBuf]) -> anyhow::Result<Vec<(PathBuf, RunRecord)>> {
    let mut dirs = vec![];
    for p in paths {
        if p.join(RECORD_FILE).is_file() {
            dirs.push(p.clone());
        } else if p.join("cells").is_dir() {
            let mut cells: Vec<PathBuf> = fs::read_dir(p.join("cells"))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|d| d.join(RECORD_FILE).is_file())
                .collect();
            cells.sort();
            dirs.extend(cells);
        } else {
            anyhow::bail!("{} holds no run record", p.display());
        }
    }
    dirs.into_iter()
        .map(|d| read_record(&d).map(|r| (d, r)))
        .collect()
}

fn label(r: &RunRecord) -> String {
    let mode = match r.config.bath.hyperfine_mode {
        pcce::bath::HyperfineMode::P1 => "p1",
        pcce::bath::HyperfineMode::NoHyperfine => "no_hyperfine",
    };
    format!(
        "L={} rho={} mode={mode}",
        r.config.bath.layer_thickness, r.config.bath.concentration_ppm
    )
}

/// Writes `mx.dat`, `loglog.dat` and `scaling.dat` into `out`.
pub fn write_plots(records: &[(PathBuf, RunRecord)], out: &Path) -> anyhow::Result<PlotSummary> {
    fs::create_dir_all(out)?;
    let mut mx = String::new();
    let mut loglog = String::new();
    let mut skipped = 0;
    for (i, (dir, r)) in records.iter().enumerate() {
        let sep = if i > 0 { "\n\n" } else { "" };
        let _ = writeln!(
            mx,
            "{sep}# {} ({})\n# t_us mx stderr",
            label(r),
            dir.display()
        );
        for ((t, m), s) in r.time_grid.iter().zip(&r.mx).zip(&r.stderr) {
            let _ = writeln!(mx, "{t:e} {m:e} {s:e}");
        }
        let fit = r.fit.fit.as_ref();
        let p = fit.map_or(f64::NAN, |f| f.p);
        let _ = writeln!(
            loglog,
            "{sep}# {} p={p}\n# ln_t ln_neg_ln_mx fit_line in_window p",
            label(r)
        );
        for (t, m) in r.time_grid.iter().zip(&r.mx) {
            if *t <= 0.0 {
                continue;
            }
            if !(*m < 1.0 && *m > 0.0) {
                skipped += 1;
                continue;
            }
            let x = t.ln();
            let y = (-m.ln()).ln();
            let (line, inside) = match fit {
                Some(f) => (
                    f.p * x + f.intercept_d,
                    (f.window.0..=f.window.1).contains(t) as u8,
                ),
                None => (f64::NAN, 0),
            };
            let _ = writeln!(loglog, "{x:e} {y:e} {line:e} {inside} {p}");
        }
    }

    let mut groups: BTreeMap<(u64, String), Vec<(f64, pcce::analysis::FitResult)>> =
        BTreeMap::new();
    for (_, r) in records {
        if let Some(f) = &r.fit.fit {
            let key = (
                r.config.bath.layer_thickness.to_bits(),
                format!("{:?}", r.config.bath.hyperfine_mode),
            );
            groups
                .entry(key)
                .or_default()
                .push((r.config.bath.concentration_ppm, f.clone()));
        }
    }
    let mut scaling = String::new();
    for (i, ((l, mode), mut fits)) in groups.into_iter().enumerate() {
        fits.sort_by(|a, b| a.0.total_cmp(&b.0));
        let l = f64::from_bits(l);
        let line = scaling_exponent(&fits, l).ok();
        let sep = if i > 0 { "\n\n" } else { "" };
        let slope = line.as_ref().map_or(f64::NAN, |s| s.slope);
        let _ = writeln!(
            scaling,
            "{sep}# L={l} mode={mode} slope={slope}\n# log10_rho log10_t2 fit_line rho_ppm t2_us"
        );
        for (rho, f) in &fits {
            let fit_line = line.as_ref().map_or(f64::NAN, |s| {
                (s.intercept + s.slope * rho.ln()) / std::f64::consts::LN_10
            });
            let _ = writeln!(
                scaling,
                "{:e} {:e} {fit_line:e} {rho} {}",
                rho.log10(),
                f.t2.log10(),
                f.t2
            );
        }
    }

    fs::write(out.join("mx.dat"), mx)?;
    fs::write(out.join("loglog.dat"), loglog)?;
    fs::write(out.join("scaling.dat"), scaling)?;
    Ok(PlotSummary {
        records: records.len(),
        skipped,
    })
}
