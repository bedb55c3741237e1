//! Partition cluster-correlation expansion.
//!
//! Clusters of up to N partitions (plus the NV) are solved exactly with all
//! other spins frozen at random mean-field values. Genuine contributions
//! `L̃_C = Mx_C / Π_{B⊊C} L̃_B` multiply to the total coherence.

mod conventional;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use conventional::conventional_cce;

use crate::bath::{generate_bath_with, grow_bath_radius_with, BathSpec, BathSystem};
use crate::curve::{geometric_grid, validate_grid, DecayCurve};
use crate::linalg::random_state;
use crate::partitioning::{partition_bath, partition_bath_whole, Partitioning};
use crate::rng::{self, tag};
use crate::spin_algebra::{build_hamiltonian, EchoKernel, DEFAULT_DIMENSION_CAP};
use crate::{Error, Result};

/// Dipole radius at 1 ppm in bulk, nm.
pub const DEFAULT_RD1: f64 = 45.0;
/// Full cluster dimension up to which the bath trace is evaluated exactly
/// under [`BathStateMode::Auto`].
pub const AUTO_EXACT_TRACE_DIM: usize = 1 << 9;
pub const DEFAULT_DIVISION_GUARD: f64 = 1e-6;
pub const DEFAULT_UNPHYSICAL_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MIN_DYNAMIC_SPINS: usize = 140;

/// `r̃_d · max(1, √(2 r̃_d / L))` with `r̃_d = r_d1 · ρ^(−1/3)`.
pub fn dipole_radius(layer_thickness: f64, rho_ppm: f64, r_d1: f64) -> f64 {
    let bulk = r_d1 * rho_ppm.powf(-1.0 / 3.0);
    bulk * (2.0 * bulk / layer_thickness).sqrt().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// One mean-field configuration shared by every cluster, product averaged.
    Normal,
    /// Fresh configurations per cluster, each Mx averaged before assembly.
    Internal,
    /// Internal averaging repeated `normal_samples` times.
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BathStateMode {
    /// Exact trace up to [`AUTO_EXACT_TRACE_DIM`], typicality above.
    Auto {
        typicality_samples: usize,
    },
    MaximallyMixed,
    Typicality {
        samples: usize,
    },
}

impl Default for BathStateMode {
    fn default() -> Self {
        BathStateMode::Auto {
            typicality_samples: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    #[default]
    PerSubgroup,
    WholeBath,
}

fn default_rd1() -> f64 {
    DEFAULT_RD1
}
fn default_guard() -> f64 {
    DEFAULT_DIVISION_GUARD
}
fn default_eps() -> f64 {
    DEFAULT_UNPHYSICAL_TOLERANCE
}
fn default_cap() -> usize {
    DEFAULT_DIMENSION_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CceConfig {
    pub order_n: usize,
    pub partition_size_k: usize,
    /// Explicit cutoff on partition-center distance (nm); derived from the
    /// bath density and thickness when absent.
    #[serde(default)]
    pub dipole_radius_rd: Option<f64>,
    #[serde(default = "default_rd1")]
    pub rd_base_r_d1: f64,
    pub internal_samples: usize,
    pub normal_samples: usize,
    pub averaging: Averaging,
    #[serde(default)]
    pub bath_state_mode: BathStateMode,
    /// Total echo times 2τ, μs.
    pub time_grid: Vec<f64>,
    #[serde(default = "default_eps")]
    pub unphysical_tolerance: f64,
    #[serde(default = "default_guard")]
    pub division_guard: f64,
    #[serde(default)]
    pub partition_mode: PartitionMode,
    #[serde(default = "default_cap")]
    pub dimension_cap: usize,
}

impl CceConfig {
    /// Sample counts used for production runs of pCCE(N, K).
    pub fn recommended(order_n: usize, k: usize, time_grid: Vec<f64>) -> Self {
        let (averaging, normal, internal) = match k {
            1 => (Averaging::Normal, 50, 1),
            2 => (Averaging::Combined, 50, 50),
            3 => (Averaging::Combined, 50, 20),
            _ => (Averaging::Internal, 1, 20),
        };
        Self {
            order_n,
            partition_size_k: k,
            dipole_radius_rd: None,
            rd_base_r_d1: DEFAULT_RD1,
            internal_samples: internal,
            normal_samples: normal,
            averaging,
            bath_state_mode: BathStateMode::default(),
            time_grid,
            unphysical_tolerance: DEFAULT_UNPHYSICAL_TOLERANCE,
            division_guard: DEFAULT_DIVISION_GUARD,
            partition_mode: PartitionMode::PerSubgroup,
            dimension_cap: DEFAULT_DIMENSION_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.order_n == 0 {
            return bad("order_n must be at least 1");
        }
        if self.partition_size_k == 0 {
            return bad("partition_size_k must be at least 1");
        }
        if self.internal_samples == 0 || self.normal_samples == 0 {
            return bad("sample counts must be at least 1");
        }
        if let Some(rd) = self.dipole_radius_rd {
            if !(rd > 0.0) {
                return bad("dipole_radius_rd must be positive");
            }
        }
        if !(self.rd_base_r_d1 > 0.0) {
            return bad("rd_base_r_d1 must be positive");
        }
        if let BathStateMode::Auto {
            typicality_samples: 0,
        }
        | BathStateMode::Typicality { samples: 0 } = self.bath_state_mode
        {
            return bad("typicality sample count must be at least 1");
        }
        if !(self.unphysical_tolerance >= 0.0) || !(self.division_guard >= 0.0) {
            return bad("tolerances must be non-negative");
        }
        validate_grid(&self.time_grid)
    }

    /// Dipole radius for a bath of this spec.
    pub fn resolved_rd(&self, spec: &BathSpec) -> f64 {
        self.dipole_radius_rd.unwrap_or_else(|| {
            dipole_radius(
                spec.layer_thickness,
                spec.concentration_ppm,
                self.rd_base_r_d1,
            )
        })
    }

    /// Mean-field samples per cluster factor and outer repetitions.
    fn sample_plan(&self) -> (usize, usize) {
        match self.averaging {
            Averaging::Normal => (self.normal_samples, 1),
            Averaging::Internal => (1, self.internal_samples),
            Averaging::Combined => (self.normal_samples, self.internal_samples),
        }
    }
}

/// All clusters of 1..=`order_n` partitions whose centers are pairwise within
/// `r_d`, ordered by size and then lexicographically.
pub fn enumerate_clusters(p: &Partitioning, order_n: usize, r_d: f64) -> Vec<Vec<usize>> {
    let m = p.len();
    let near = |a: usize, b: usize| (p.centers[a] - p.centers[b]).norm() <= r_d;
    let mut levels: Vec<Vec<Vec<usize>>> = vec![(0..m).map(|i| vec![i]).collect()];
    for _ in 1..order_n {
        let prev = levels.last().expect("non-empty");
        let mut next = Vec::new();
        for c in prev {
            let last = *c.last().expect("non-empty cluster");
            for j in last + 1..m {
                if c.iter().all(|&a| near(a, j)) {
                    let mut d = c.clone();
                    d.push(j);
                    next.push(d);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        levels.push(next);
    }
    levels.into_iter().flatten().collect()
}

/// Frozen `I_z` value of a spin under a mean-field configuration.
#[inline]
pub fn meanfield_value(config_seed: u64, uid: u64) -> f64 {
    if rng::derive(config_seed, &[uid]) & 1 == 1 {
        0.5
    } else {
        -0.5
    }
}

/// Mean-field vector over the coupling table (index 0 = NV, unused).
pub fn meanfield_vector(system: &BathSystem, config_seed: u64) -> Vec<f64> {
    std::iter::once(0.0)
        .chain(
            system
                .spins
                .iter()
                .map(|s| meanfield_value(config_seed, s.site.0)),
        )
        .collect()
}

/// Order-independent identifier of a spin set.
pub fn spin_set_key(system: &BathSystem, spins: &[usize]) -> u64 {
    let uids: Vec<u64> = spins.iter().map(|&i| system.spins[i].site.0).collect();
    rng::set_key(&uids)
}

/// Echo of `{NV} ∪ spins` (indices into `system.spins`) with every other spin
/// frozen according to the configuration `config_seed`.
pub fn spin_cluster_signal(
    system: &BathSystem,
    spins: &[usize],
    config_seed: u64,
    config: &CceConfig,
) -> Result<Vec<f64>> {
    let times = &config.time_grid;
    let table = &system.couplings;
    let flips = spins.iter().enumerate().any(|(a, &i)| {
        spins[a + 1..]
            .iter()
            .any(|&k| table.flipflop_allowed(i + 1, k + 1))
    });
    if !flips {
        // static fields and Ising terms alone are refocused exactly
        return Ok(vec![1.0; times.len()]);
    }
    let full_dim = 1usize << (spins.len() + 1);
    if full_dim > config.dimension_cap {
        return Err(Error::Capacity {
            dim: full_dim,
            cap: config.dimension_cap,
        });
    }
    let subset: Vec<usize> = std::iter::once(0)
        .chain(spins.iter().map(|&i| i + 1))
        .collect();
    let mf = meanfield_vector(system, config_seed);
    let h = build_hamiltonian(&subset, table, &mf, config.dimension_cap)?;
    let kernel = EchoKernel::new(&h)?;
    let samples = match config.bath_state_mode {
        BathStateMode::MaximallyMixed => None,
        BathStateMode::Typicality { samples } => Some(samples),
        BathStateMode::Auto { typicality_samples } => {
            (full_dim > AUTO_EXACT_TRACE_DIM).then_some(typicality_samples)
        }
    };
    match samples {
        None => Ok(kernel.mx_mixed(times)),
        Some(n) => {
            let key = spin_set_key(system, spins);
            let mut r = rng::stream(rng::derive(config_seed, &[tag::TYPICALITY, key]));
            let mut acc = vec![0.0; times.len()];
            for _ in 0..n {
                let psi = random_state(kernel.bath_dim(), &mut r);
                for (a, v) in acc.iter_mut().zip(kernel.mx_pure(&psi, times)?) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= n as f64);
            Ok(acc)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Partition indices, ascending.
    pub cluster: Vec<usize>,
    pub mx_curve: Vec<f64>,
    /// Filled in by [`assemble_pcce`].
    pub tilde_l_curve: Vec<f64>,
    pub unphysical_flag: bool,
}

fn cluster_spins(p: &Partitioning, cluster: &[usize]) -> Vec<usize> {
    let mut s: Vec<usize> = cluster
        .iter()
        .flat_map(|&c| p.partitions[c].iter().copied())
        .collect();
    s.sort_unstable();
    s
}

/// Echo of one cluster of partitions under a single mean-field configuration.
pub fn cluster_mx(
    cluster: &[usize],
    partitioning: &Partitioning,
    system: &BathSystem,
    config_seed: u64,
    config: &CceConfig,
) -> Result<ClusterResult> {
    let spins = cluster_spins(partitioning, cluster);
    let mx = spin_cluster_signal(system, &spins, config_seed, config)?;
    Ok(ClusterResult::new(
        cluster.to_vec(),
        mx,
        config.unphysical_tolerance,
    ))
}

impl ClusterResult {
    pub fn new(mut cluster: Vec<usize>, mx_curve: Vec<f64>, tolerance: f64) -> Self {
        cluster.sort_unstable();
        let unphysical_flag = mx_curve.iter().any(|v| v.abs() > 1.0 + tolerance);
        Self {
            cluster,
            mx_curve,
            tilde_l_curve: vec![],
            unphysical_flag,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub total: Vec<f64>,
    /// Time points at which a contribution was dropped by the division guard.
    pub saturations: usize,
}

/// Runs the CCE recursion over a subcluster-closed family and multiplies the
/// genuine contributions. Fills `tilde_l_curve` of every result.
pub fn assemble_pcce(results: &mut [ClusterResult], guard: f64) -> Result<Assembly> {
    let nt = results.first().map_or(0, |r| r.mx_curve.len());
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| {
        results[a]
            .cluster
            .len()
            .cmp(&results[b].cluster.len())
            .then(results[a].cluster.cmp(&results[b].cluster))
    });
    let index: HashMap<Vec<usize>, usize> = results
        .iter()
        .enumerate()
        .map(|(i, r)| (r.cluster.clone(), i))
        .collect();
    let mut saturations = 0;
    let mut total = vec![1.0; nt];
    for &ci in &order {
        let members = results[ci].cluster.clone();
        let s = members.len();
        let mut denom_factors: Vec<usize> = Vec::new();
        for mask in 1..(1u64 << s) - 1 {
            let sub: Vec<usize> = (0..s)
                .filter(|&b| mask >> b & 1 == 1)
                .map(|b| members[b])
                .collect();
            let j = *index.get(&sub).ok_or_else(|| {
                Error::InvalidInput(format!("cluster family is not closed: {sub:?} missing"))
            })?;
            denom_factors.push(j);
        }
        let mut tl = vec![0.0; nt];
        for t in 0..nt {
            let mut denom = 1.0;
            let mut tiny = false;
            for &j in &denom_factors {
                let f = results[j].tilde_l_curve[t];
                tiny |= f.abs() < guard;
                denom *= f;
            }
            tl[t] = if tiny || denom.abs() < guard {
                saturations += 1;
                1.0
            } else {
                results[ci].mx_curve[t] / denom
            };
            total[t] *= tl[t];
        }
        results[ci].tilde_l_curve = tl;
    }
    Ok(Assembly { total, saturations })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    /// Number of clusters of each size (index 0 = singletons).
    pub clusters_by_size: Vec<usize>,
    pub max_cluster_spins: usize,
    pub saturations: usize,
    /// Cluster factors whose averaged |Mx| exceeded `1 + ε`.
    pub unphysical_clusters: usize,
    /// Assembled sample curves exceeding `1 + ε` somewhere.
    pub unphysical_curves: usize,
    pub sample_curves: usize,
}

#[derive(Debug, Clone)]
pub struct PcceRun {
    pub curve: DecayCurve,
    pub clusters: Vec<Vec<usize>>,
    pub summary: ClusterSummary,
    /// Assembled curve of each outer repetition.
    pub sample_curves: Vec<Vec<f64>>,
}

/// Full pCCE evaluation of one bath with the configured averaging.
pub fn run_pcce(
    system: &BathSystem,
    partitioning: &Partitioning,
    config: &CceConfig,
    seed: u64,
) -> Result<PcceRun> {
    config.validate()?;
    let r_d = config.resolved_rd(&system.spec);
    let clusters = enumerate_clusters(partitioning, config.order_n, r_d);
    let spins: Vec<Vec<usize>> = clusters
        .iter()
        .map(|c| cluster_spins(partitioning, c))
        .collect();
    let keys: Vec<u64> = spins.iter().map(|s| spin_set_key(system, s)).collect();
    let mut summary = ClusterSummary {
        max_cluster_spins: spins.iter().map(Vec::len).max().unwrap_or(0),
        ..Default::default()
    };
    for c in &clusters {
        if summary.clusters_by_size.len() < c.len() {
            summary.clusters_by_size.resize(c.len(), 0);
        }
        summary.clusters_by_size[c.len() - 1] += 1;
    }
    let (outer, inner) = config.sample_plan();
    let nt = config.time_grid.len();
    let mut sample_curves = Vec::with_capacity(outer);
    for o in 0..outer {
        let mx: Vec<Vec<f64>> = (0..clusters.len())
            .into_par_iter()
            .map(|c| -> Result<Vec<f64>> {
                if config.averaging == Averaging::Normal {
                    return spin_cluster_signal(
                        system,
                        &spins[c],
                        rng::derive(seed, &[tag::NORMAL, o as u64]),
                        config,
                    );
                }
                let mut acc = vec![0.0; nt];
                for j in 0..inner {
                    let cs = rng::derive(seed, &[tag::INTERNAL, o as u64, j as u64, keys[c]]);
                    for (a, v) in acc
                        .iter_mut()
                        .zip(spin_cluster_signal(system, &spins[c], cs, config)?)
                    {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= inner as f64);
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        let mut results: Vec<ClusterResult> = clusters
            .iter()
            .zip(mx)
            .map(|(c, m)| ClusterResult::new(c.clone(), m, config.unphysical_tolerance))
            .collect();
        let asm = assemble_pcce(&mut results, config.division_guard)?;
        summary.saturations += asm.saturations;
        summary.unphysical_clusters += results.iter().filter(|r| r.unphysical_flag).count();
        if asm
            .total
            .iter()
            .any(|v| v.abs() > 1.0 + config.unphysical_tolerance)
        {
            summary.unphysical_curves += 1;
        }
        sample_curves.push(asm.total);
    }
    summary.sample_curves = sample_curves.len();
    let mut curve = DecayCurve::mean_of(&sample_curves, &config.time_grid)?;
    curve.n_normal = outer;
    curve.n_internal = inner;
    Ok(PcceRun {
        curve,
        clusters,
        summary,
        sample_curves,
    })
}

/// Partitions a bath according to the configured mode.
pub fn partition_for(system: &BathSystem, config: &CceConfig, seed: u64) -> Result<Partitioning> {
    let seed = rng::derive(seed, &[tag::KMEANS]);
    match config.partition_mode {
        PartitionMode::PerSubgroup => partition_bath(system, config.partition_size_k, seed),
        PartitionMode::WholeBath => partition_bath_whole(system, config.partition_size_k, seed),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnphysicalStats {
    pub repetitions: usize,
    pub unphysical: usize,
    pub fraction: f64,
}

/// Fraction of independent repetitions (fresh mean-field seeds) whose
/// assembled curve exceeds `1 + ε` at some time.
pub fn unphysical_stats(
    system: &BathSystem,
    partitioning: &Partitioning,
    config: &CceConfig,
    repetitions: usize,
    seed: u64,
) -> Result<UnphysicalStats> {
    if repetitions == 0 {
        return Err(Error::InvalidInput(
            "at least one repetition is required".into(),
        ));
    }
    let mut unphysical = 0;
    for r in 0..repetitions {
        let run = run_pcce(
            system,
            partitioning,
            config,
            rng::derive(seed, &[tag::REPETITION, r as u64]),
        )?;
        if run
            .curve
            .mx
            .iter()
            .any(|v| v.abs() > 1.0 + config.unphysical_tolerance)
        {
            unphysical += 1;
        }
    }
    Ok(UnphysicalStats {
        repetitions,
        unphysical,
        fraction: unphysical as f64 / repetitions as f64,
    })
}

/// How each realization's bath is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BathPreparation {
    /// Grow r_b to a minimum spin count and pad subgroups to multiples of K.
    Grow { min_dynamic_spins: usize },
    /// Keep only the `n` spins nearest to the NV.
    Nearest { n: usize },
}

impl Default for BathPreparation {
    fn default() -> Self {
        BathPreparation::Grow {
            min_dynamic_spins: DEFAULT_MIN_DYNAMIC_SPINS,
        }
    }
}

/// Seed of realization `index` under `master_seed`.
pub fn realization_seed(master_seed: u64, index: usize) -> u64 {
    rng::derive(master_seed, &[tag::REALIZATION, index as u64])
}

/// Bath realization `seed` prepared for partition size `k`.
pub fn prepare_bath(
    spec: &BathSpec,
    prep: BathPreparation,
    k: usize,
    seed: u64,
) -> Result<BathSystem> {
    let mut spec = spec.clone();
    spec.seed = seed;
    let constants = Default::default();
    match prep {
        BathPreparation::Grow { min_dynamic_spins } => {
            Ok(grow_bath_radius_with(&spec, min_dynamic_spins, k, &constants)?.1)
        }
        BathPreparation::Nearest { n } => generate_bath_with(&spec, &constants)?.nearest(n),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub index: usize,
    pub seed: u64,
    pub bath_radius: f64,
    pub dynamic_spins: usize,
    pub l_s: f64,
    pub mx: Vec<f64>,
    pub summary: ClusterSummary,
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub curve: DecayCurve,
    pub realizations: Vec<RealizationRecord>,
}

/// Runs `evaluate(index, seed)` for every realization in parallel and averages
/// the curves in index order. The first failure aborts the ensemble.
pub fn ensemble_with<F>(
    n_realizations: usize,
    master_seed: u64,
    times: &[f64],
    evaluate: F,
) -> Result<EnsembleResult>
where
    F: Fn(usize, u64) -> Result<RealizationRecord> + Sync,
{
    let realizations: Vec<RealizationRecord> = (0..n_realizations)
        .into_par_iter()
        .map(|i| {
            let seed = realization_seed(master_seed, i);
            evaluate(i, seed).map_err(|e| Error::Realization {
                index: i,
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let curves: Vec<Vec<f64>> = realizations.iter().map(|r| r.mx.clone()).collect();
    let mut curve = DecayCurve::mean_of(&curves, times)?;
    curve.n_disorder = n_realizations;
    if let Some(r) = realizations.first() {
        curve.n_normal = r.summary.sample_curves.max(1);
    }
    Ok(EnsembleResult {
        curve,
        realizations,
    })
}

/// pCCE over `n_realizations` random baths derived from `master_seed`.
pub fn run_disorder_ensemble(
    spec: &BathSpec,
    prep: BathPreparation,
    config: &CceConfig,
    n_realizations: usize,
    master_seed: u64,
) -> Result<EnsembleResult> {
    config.validate()?;
    let mut result = ensemble_with(
        n_realizations,
        master_seed,
        &config.time_grid,
        |index, seed| {
            let system = prepare_bath(spec, prep, config.partition_size_k, seed)?;
            let p = partition_for(&system, config, seed)?;
            let run = run_pcce(&system, &p, config, seed)?;
            Ok(RealizationRecord {
                index,
                seed,
                bath_radius: system.spec.bath_radius,
                dynamic_spins: system.dynamic_count(),
                l_s: system.l_s,
                mx: run.curve.mx,
                summary: run.summary,
            })
        },
    )?;
    let (outer, inner) = config.sample_plan();
    result.curve.n_normal = outer;
    result.curve.n_internal = inner;
    Ok(result)
}

/// Time grid around the decay of `system`: a pCCE(2,1) pilot locates the
/// 1/e time `T`, then `points` geometric samples span `[T/100, 3T]`.
pub fn pilot_time_grid(
    system: &BathSystem,
    template: &CceConfig,
    points: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut pilot = template.clone();
    pilot.order_n = 2;
    pilot.partition_size_k = 1;
    pilot.averaging = Averaging::Normal;
    pilot.normal_samples = 4;
    pilot.bath_state_mode = BathStateMode::MaximallyMixed;
    pilot.partition_mode = PartitionMode::PerSubgroup;
    pilot.time_grid = geometric_grid(1e-2, 1e6, 81);
    let p = partition_bath(system, 1, seed)?;
    let run = run_pcce(system, &p, &pilot, seed)?;
    let t_e = run.curve.crossing_time((-1.0f64).exp()).ok_or_else(|| {
        Error::InvalidInput("pilot curve does not decay to 1/e within 1 s".into())
    })?;
    Ok(geometric_grid(t_e / 100.0, 3.0 * t_e, points))
}

#[cfg(test)]
mod tests;
