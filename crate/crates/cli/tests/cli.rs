use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn pcce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcce"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn small_exact() -> Value {
    json!({
        "schema_version": 1,
        "bath": {
            "concentration_ppm": 20.0,
            "layer_thickness": 10.0,
            "hyperfine_mode": "no_hyperfine",
            "bath_radius": 20.0,
            "shell_thickness": 5.0,
            "preparation": {"nearest": {"n": 6}}
        },
        "method": "exact",
        "time_grid": {"geometric": {"t_lo": 0.5, "t_hi": 50.0, "points": 12}},
        "ensemble": {"n_realizations": 2, "master_seed": 3}
    })
}

fn model(slope: f64, p: f64) -> Value {
    json!({
        "schema_version": 1,
        "bath": {"concentration_ppm": 1.0, "layer_thickness": 240.0, "hyperfine_mode": "p1"},
        "method": {"model": {"t2_1ppm": 250.0, "slope": slope, "p": p}}
    })
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_to(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = pcce(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    o
}

#[test]
fn exact_run_writes_all_files_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_exact());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_to(&cfg, &a, &[]);
    run_to(&cfg, &b, &["--workers", "1"]);
    for f in [
        "record.json",
        "curve.csv",
        "fit.json",
        "clusters_summary.json",
    ] {
        assert!(a.join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(a.join("curve.csv")).unwrap();
    assert_eq!(fs::read_to_string(b.join("curve.csv")).unwrap(), csv);
    assert_eq!(
        fs::read(a.join("record.json")).unwrap(),
        fs::read(b.join("record.json")).unwrap()
    );
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("time_us,mx,stderr"));
    let first: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|c| c.parse().unwrap())
        .collect();
    assert_eq!(first[0], 0.0);
    assert!((first[1] - 1.0).abs() < 1e-12);
}

#[test]
fn seed_flag_changes_the_ensemble() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_exact());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_to(&cfg, &a, &[]);
    run_to(&cfg, &b, &["--seed", "4"]);
    assert_ne!(
        fs::read(a.join("curve.csv")).unwrap(),
        fs::read(b.join("curve.csv")).unwrap()
    );
}

#[test]
fn invalid_config_exits_2_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = small_exact();
    v["bath"]["concentration"] = json!(1.0);
    let cfg = write_config(tmp.path(), "c.json", &v);
    let out = tmp.path().join("out");
    let o = pcce(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bath"), "{}", stderr(&o));
    assert!(!out.exists());

    let mut v = small_exact();
    v["ensemble"]["n_realizations"] = json!(0);
    let cfg = write_config(tmp.path(), "d.json", &v);
    let o = pcce(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("ensemble.n_realizations"),
        "{}",
        stderr(&o)
    );
    assert!(!out.exists());

    let o = pcce(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let ok = write_config(tmp.path(), "ok.json", &small_exact());
    assert!(pcce(&["validate", "--config", ok.to_str().unwrap()])
        .status
        .success());
}

#[test]
fn runtime_failure_exits_1_naming_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = small_exact();
    v["bath"]["concentration_ppm"] = json!(1e-6);
    let cfg = write_config(tmp.path(), "c.json", &v);
    let out = tmp.path().join("out");
    let o = pcce(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("realization 0 (seed "),
        "{}",
        stderr(&o)
    );
}

fn sweep(v: &Value, dir: &Path, resume: bool) -> Output {
    let cfg = write_config(dir, "sweep.json", v);
    let out = dir.join("sweep");
    let mut args = vec![
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    if resume {
        args.push("--resume");
    }
    pcce(&args)
}

#[test]
fn model_sweep_reproduces_slope_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = model(-1.0, 1.0);
    v["sweep"] = json!({"concentrations_ppm": [0.5, 1.0, 2.0], "layer_thicknesses": [240.0]});
    let o = sweep(&v, tmp.path(), false);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("sweep");
    let scaling: Value =
        serde_json::from_str(&fs::read_to_string(out.join("scaling.json")).unwrap()).unwrap();
    let slope = scaling[0]["result"]["slope"].as_f64().unwrap();
    assert!((slope + 1.0).abs() < 1e-6, "{slope}");
    let fits = fs::read_to_string(out.join("fits.csv")).unwrap();
    assert_eq!(fits.lines().count(), 4);
    assert!(fits.starts_with("L,rho_ppm,mode,p,p_err,T2_us,slope"));

    let names = ["scaling.json", "fits.csv", "report.json", "report.txt"];
    let before: Vec<Vec<u8>> = names
        .iter()
        .map(|n| fs::read(out.join(n)).unwrap())
        .collect();
    // a half-written cell is recomputed, finished cells are skipped
    let cells: Vec<PathBuf> = fs::read_dir(out.join("cells"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(cells.len(), 3);
    fs::remove_file(cells[0].join("record.json")).unwrap();
    let o = sweep(&v, tmp.path(), true);
    assert!(o.status.success());
    assert_eq!(stderr(&o).matches("skipped").count(), 2);
    let after: Vec<Vec<u8>> = names
        .iter()
        .map(|n| fs::read(out.join(n)).unwrap())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn incomplete_sweep_rows_get_no_slope() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = model(-1.0, 1.0);
    v["time_grid"] = json!({"geometric": {"t_lo": 1.0, "t_hi": 300.0, "points": 40}});
    v["sweep"] = json!({"concentrations_ppm": [0.05, 1.0, 2.0], "layer_thicknesses": [240.0]});
    let o = sweep(&v, tmp.path(), false);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("sweep");
    let scaling: Value =
        serde_json::from_str(&fs::read_to_string(out.join("scaling.json")).unwrap()).unwrap();
    assert!(scaling[0]["result"].is_null());
    assert_eq!(scaling[0]["incomplete"], json!([0.05]));
    assert!(fs::read_to_string(out.join("report.txt"))
        .unwrap()
        .contains("no slope"));
}

#[test]
fn sweep_needs_three_concentrations() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = model(-1.0, 1.0);
    v["sweep"] = json!({"concentrations_ppm": [1.0, 2.0], "layer_thicknesses": [240.0]});
    let o = sweep(&v, tmp.path(), false);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("sweep").exists());
}

fn columns(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(|c| c.parse().unwrap()).collect())
        .collect()
}

#[test]
fn plot_of_unit_exponent_model_is_a_unit_slope_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "m.json", &model(-1.0, 1.0));
    let run = tmp.path().join("run");
    run_to(&cfg, &run, &[]);
    let plots = tmp.path().join("plots");
    let o = pcce(&[
        "plot",
        run.to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("1 records"));
    let rows = columns(&fs::read_to_string(plots.join("loglog.dat")).unwrap());
    assert!(rows.len() > 10);
    for w in rows.windows(2) {
        let slope = (w[1][1] - w[0][1]) / (w[1][0] - w[0][0]);
        assert!((slope - 1.0).abs() < 1e-9, "{slope}");
    }
    for r in &rows {
        assert!((r[1] - r[2]).abs() < 1e-6);
    }
    let mx = fs::read_to_string(plots.join("mx.dat")).unwrap();
    assert!(mx.starts_with('#'));
    assert_eq!(columns(&mx)[0][1], 1.0);
}

#[test]
fn plot_of_a_sweep_lists_every_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = model(-1.5, 0.67);
    v["sweep"] = json!({"concentrations_ppm": [0.5, 1.0, 2.0], "layer_thicknesses": [30.0]});
    assert!(sweep(&v, tmp.path(), false).status.success());
    let plots = tmp.path().join("plots");
    let o = pcce(&[
        "plot",
        tmp.path().join("sweep").to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = fs::read_to_string(plots.join("scaling.dat")).unwrap();
    assert!(s.contains("slope=-1.5"), "{s}");
    assert_eq!(columns(&s).len(), 3);
}

#[test]
fn plot_skips_points_at_or_above_one() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = model(-1.0, 1.0);
    v["time_grid"] = json!({"explicit": [0.0, 1e-300, 1.0, 2.0]});
    let cfg = write_config(tmp.path(), "c.json", &v);
    let run = tmp.path().join("run");
    run_to(&cfg, &run, &[]);
    let plots = tmp.path().join("plots");
    let o = pcce(&[
        "plot",
        run.to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning: 1 points"), "{}", stderr(&o));
}

#[test]
fn plot_without_records_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let plots = tmp.path().join("plots");
    assert_eq!(
        pcce(&["plot", "--out", plots.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = pcce(&[
        "plot",
        empty.to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn convergence_over_k_with_exact_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = small_exact();
    v["method"] = json!({"pcce": {"n": 2, "k": 1}});
    v["cce"] = json!({"averaging": "normal", "normal_samples": 2, "dipole_radius_rd": 1e9});
    v["convergence"] = json!({"axis": "k", "values": [1.0, 2.0, 3.0], "exact_reference": true});
    let cfg = write_config(tmp.path(), "c.json", &v);
    let out = tmp.path().join("conv");
    let o = pcce(&[
        "convergence",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value =
        serde_json::from_str(&fs::read_to_string(out.join("convergence.json")).unwrap()).unwrap();
    assert_eq!(r["reference_value"], json!(3.0));
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2]["max_deviation"], json!(0.0));
    assert_eq!(rows[2]["within_stderr"], json!(true));
    assert!(rows
        .iter()
        .all(|r| r["exact_deviation"].as_f64().unwrap() < 0.5));
    for d in ["k_1", "k_2", "k_3", "exact"] {
        assert!(out.join(d).join("record.json").is_file(), "{d}");
    }
}
