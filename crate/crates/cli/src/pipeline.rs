//! Executes one configured run and persists it.

use std::fs;
use std::io::Write;
use std::path::Path;

use pcce::analysis::{fit_stretched_exponential, FitResult};
use pcce::cce::{
    conventional_cce, ensemble_with, partition_for, pilot_time_grid, prepare_bath,
    realization_seed, run_pcce, ClusterSummary, EnsembleResult, RealizationRecord,
};
use pcce::curve::{geometric_grid, DecayCurve};
use pcce::exact::exact_hahn_echo;
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig, TimeGrid};

pub const RECORD_FILE: &str = "record.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const FIT_FILE: &str = "fit.json";
pub const CLUSTERS_FILE: &str = "clusters_summary.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub fit: Option<FitResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub config_hash: String,
    pub time_grid: Vec<f64>,
    pub n_disorder: usize,
    pub n_normal: usize,
    pub n_internal: usize,
    pub mx: Vec<f64>,
    pub stderr: Vec<f64>,
    pub fit: FitRecord,
    pub realizations: Vec<RealizationRecord>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClustersReport {
    pub total: ClusterSummary,
    pub per_realization: Vec<ClusterSummary>,
}

pub struct RunOutput {
    pub curve: DecayCurve,
    pub record: RunRecord,
    pub clusters: ClustersReport,
}

/// Hex SHA-256 of the canonical JSON form of `config`.
pub fn config_hash(config: &RunConfig) -> String {
    use sha2::{Digest, Sha256};
    let mut c = config.clone();
    c.output_dir = None;
    let bytes = serde_json::to_vec(&c).expect("config serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Time grid of the run; `Auto` runs a pilot on realization 0.
pub fn resolve_time_grid(config: &RunConfig) -> pcce::Result<Vec<f64>> {
    if let Some(grid) = config.fixed_time_grid() {
        return Ok(grid);
    }
    let TimeGrid::Auto { points } = config.time_grid else {
        unreachable!()
    };
    let spec = config.bath_spec();
    if let Method::Model { t2_1ppm, slope, .. } = config.method {
        let t2 = t2_1ppm * spec.concentration_ppm.powf(slope);
        return Ok(geometric_grid(t2 / 100.0, 3.0 * t2, points));
    }
    let seed = realization_seed(config.ensemble.master_seed, 0);
    let system = prepare_bath(
        &spec,
        config.bath.preparation,
        config.partition_size(),
        seed,
    )
    .map_err(|e| pcce::Error::Realization {
        index: 0,
        seed,
        source: Box::new(e),
    })?;
    pilot_time_grid(&system, &config.cce_config(vec![0.0, 1.0]), points, seed).map_err(|e| {
        pcce::Error::Realization {
            index: 0,
            seed,
            source: Box::new(e),
        }
    })
}

fn ensemble(config: &RunConfig, times: &[f64]) -> pcce::Result<EnsembleResult> {
    let spec = config.bath_spec();
    let prep = config.bath.preparation;
    let k = config.partition_size();
    let cce = config.cce_config(times.to_vec());
    let n = config.ensemble.n_realizations;
    let master = config.ensemble.master_seed;
    let record = |index, seed, system: &pcce::bath::BathSystem, mx, summary| RealizationRecord {
        index,
        seed,
        bath_radius: system.spec.bath_radius,
        dynamic_spins: system.dynamic_count(),
        l_s: system.l_s,
        mx,
        summary,
    };
    match config.method {
        Method::Pcce { .. } => ensemble_with(n, master, times, |i, seed| {
            let system = prepare_bath(&spec, prep, k, seed)?;
            let p = partition_for(&system, &cce, seed)?;
            let run = run_pcce(&system, &p, &cce, seed)?;
            Ok(record(i, seed, &system, run.curve.mx, run.summary))
        }),
        Method::Cce { .. } => ensemble_with(n, master, times, |i, seed| {
            let system = prepare_bath(&spec, prep, k, seed)?;
            let curve = conventional_cce(&system, &cce, seed)?;
            Ok(record(
                i,
                seed,
                &system,
                curve.mx,
                ClusterSummary::default(),
            ))
        }),
        Method::Exact => ensemble_with(n, master, times, |i, seed| {
            let system = prepare_bath(&spec, prep, k, seed)?;
            let r = exact_hahn_echo(&system, &config.exact, times, seed)?;
            Ok(record(
                i,
                seed,
                &system,
                r.curve.mx,
                ClusterSummary::default(),
            ))
        }),
        Method::Model { t2_1ppm, slope, p } => {
            let t2 = t2_1ppm * spec.concentration_ppm.powf(slope);
            let curve = DecayCurve::stretched_exponential(times, t2, p);
            Ok(EnsembleResult {
                curve,
                realizations: vec![],
            })
        }
    }
}

fn total_summary(parts: &[ClusterSummary]) -> ClusterSummary {
    let mut t = ClusterSummary::default();
    for s in parts {
        if t.clusters_by_size.len() < s.clusters_by_size.len() {
            t.clusters_by_size.resize(s.clusters_by_size.len(), 0);
        }
        for (a, b) in t.clusters_by_size.iter_mut().zip(&s.clusters_by_size) {
            *a += b;
        }
        t.max_cluster_spins = t.max_cluster_spins.max(s.max_cluster_spins);
        t.saturations += s.saturations;
        t.unphysical_clusters += s.unphysical_clusters;
        t.unphysical_curves += s.unphysical_curves;
        t.sample_curves += s.sample_curves;
    }
    t
}

/// Runs the configured pipeline and fits the ensemble curve.
pub fn execute(config: &RunConfig) -> pcce::Result<RunOutput> {
    let times = resolve_time_grid(config)?;
    let result = ensemble(config, &times)?;
    let curve = result.curve;
    let fit = match fit_stretched_exponential(&curve, config.fit.window) {
        Ok(f) => FitRecord {
            fit: Some(f),
            error: None,
        },
        Err(e) => FitRecord {
            fit: None,
            error: Some(e.to_string()),
        },
    };
    let per_realization: Vec<ClusterSummary> = result
        .realizations
        .iter()
        .map(|r| r.summary.clone())
        .collect();
    let clusters = ClustersReport {
        total: total_summary(&per_realization),
        per_realization,
    };
    let record = RunRecord {
        config: config.clone(),
        config_hash: config_hash(config),
        time_grid: curve.times.clone(),
        n_disorder: curve.n_disorder,
        n_normal: curve.n_normal,
        n_internal: curve.n_internal,
        mx: curve.mx.clone(),
        stderr: curve.stderr(),
        fit,
        realizations: result.realizations,
    };
    Ok(RunOutput {
        curve,
        record,
        clusters,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(tmp, path)
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

/// Writes the run files; `record.json` goes last and marks completion.
pub fn write_run(dir: &Path, out: &RunOutput) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = Vec::new();
    out.curve
        .write_csv(&mut csv)
        .map_err(std::io::Error::other)?;
    write_atomic(&dir.join(CURVE_FILE), &csv)?;
    write_atomic(&dir.join(FIT_FILE), &json(&out.record.fit))?;
    write_atomic(&dir.join(CLUSTERS_FILE), &json(&out.clusters))?;
    write_atomic(&dir.join(RECORD_FILE), &json(&out.record))
}

pub fn read_record(dir: &Path) -> anyhow::Result<RunRecord> {
    let text = fs::read_to_string(dir.join(RECORD_FILE))?;
    Ok(serde_json::from_str(&text)?)
}
