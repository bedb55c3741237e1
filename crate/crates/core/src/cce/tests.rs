use nalgebra::Vector3;

use super::*;
use crate::bath::{generate_bath, BathSpec, HyperfineMode};
use crate::spin_algebra::{hahn_echo_mx, BathState, PhysicalConstants};

fn small_bath(mode: HyperfineMode, n: usize, seed: u64) -> BathSystem {
    let spec = BathSpec {
        concentration_ppm: 20.0,
        layer_thickness: 10.0,
        bath_radius: 20.0,
        shell_thickness: 5.0,
        hyperfine_mode: mode,
        seed,
    };
    generate_bath(&spec).unwrap().nearest(n).unwrap()
}

fn config(order_n: usize, k: usize, averaging: Averaging) -> CceConfig {
    let mut c = CceConfig::recommended(order_n, k, geometric_grid(0.5, 50.0, 12));
    c.dipole_radius_rd = Some(1e9);
    c.averaging = averaging;
    c.normal_samples = 3;
    c.internal_samples = 4;
    c
}

#[test]
fn dipole_radius_values() {
    assert!((dipole_radius(240.0, 1.0, 45.0) - 45.0).abs() < 1e-12);
    assert!((dipole_radius(1e6, 8.0, 45.0) - 22.5).abs() < 1e-12);
    assert!((dipole_radius(30.0, 1.0, 45.0) - 45.0 * 3f64.sqrt()).abs() < 1e-9);
}

fn line_partitioning(xs: &[f64]) -> Partitioning {
    Partitioning {
        k: 1,
        partitions: (0..xs.len()).map(|i| vec![i]).collect(),
        centers: xs.iter().map(|&x| Vector3::new(x, 0.0, 0.0)).collect(),
        subgroup_of_partition: vec![0; xs.len()],
        objective: 0.0,
    }
}

#[test]
fn cluster_enumeration_respects_radius_and_order() {
    let p = line_partitioning(&[0.0, 40.0, 100.0]);
    let c = enumerate_clusters(&p, 2, 45.0);
    assert_eq!(c, vec![vec![0], vec![1], vec![2], vec![0, 1]]);
    assert_eq!(enumerate_clusters(&p, 1, 1e9).len(), 3);
    let p = line_partitioning(&[0.0, 1.0, 2.0, 3.0, 4.0]);
    assert_eq!(enumerate_clusters(&p, 2, f64::INFINITY).len(), 5 + 10);
    assert_eq!(enumerate_clusters(&p, 3, f64::INFINITY).len(), 5 + 10 + 10);
}

#[test]
fn enumerated_family_is_subcluster_closed() {
    let sys = small_bath(HyperfineMode::NoHyperfine, 12, 1);
    let p = partition_bath(&sys, 2, 1).unwrap();
    let clusters = enumerate_clusters(&p, 3, 12.0);
    let set: std::collections::HashSet<_> = clusters.iter().cloned().collect();
    for c in &clusters {
        for skip in 0..c.len() {
            if c.len() > 1 {
                let sub: Vec<usize> = c
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != skip)
                    .map(|(_, &x)| x)
                    .collect();
                assert!(set.contains(&sub));
            }
        }
    }
}

#[test]
fn empty_and_single_spin_clusters_are_flat() {
    let sys = small_bath(HyperfineMode::NoHyperfine, 6, 2);
    let c = config(2, 1, Averaging::Normal);
    assert!(spin_cluster_signal(&sys, &[], 7, &c)
        .unwrap()
        .iter()
        .all(|&v| v == 1.0));
    for i in 0..6 {
        let m = spin_cluster_signal(&sys, &[i], 7, &c).unwrap();
        assert!(m.iter().all(|&v| v == 1.0));
    }
}

#[test]
fn pair_cluster_matches_dense_reference() {
    let sys = small_bath(HyperfineMode::NoHyperfine, 6, 3);
    let c = config(2, 1, Averaging::Normal);
    let seed = 11;
    let mx = spin_cluster_signal(&sys, &[0, 1], seed, &c).unwrap();
    let mf = meanfield_vector(&sys, seed);
    let h = build_hamiltonian(&[0, 1, 2], &sys.couplings, &mf, 1 << 14).unwrap();
    for (t, v) in c.time_grid.iter().zip(&mx) {
        let r = hahn_echo_mx(&h, &BathState::MaximallyMixed, 0.5 * t).unwrap();
        assert!((r - v).abs() < 1e-8, "{t}: {r} vs {v}");
    }
}

#[test]
fn single_spin_total_collapses_to_its_signal() {
    let mut r = vec![ClusterResult::new(vec![0], vec![1.0, 0.7, 0.4], 1e-6)];
    let a = assemble_pcce(&mut r, 1e-6).unwrap();
    assert_eq!(a.total, vec![1.0, 0.7, 0.4]);
    let mut ones = vec![
        ClusterResult::new(vec![0], vec![1.0; 3], 1e-6),
        ClusterResult::new(vec![1], vec![1.0; 3], 1e-6),
        ClusterResult::new(vec![0, 1], vec![1.0; 3], 1e-6),
    ];
    assert_eq!(assemble_pcce(&mut ones, 1e-6).unwrap().total, vec![1.0; 3]);
}

#[test]
fn recursion_divides_by_subclusters_and_guards() {
    let mut r = vec![
        ClusterResult::new(vec![0], vec![0.5, 1e-8], 1e-6),
        ClusterResult::new(vec![1], vec![0.8, 0.5], 1e-6),
        ClusterResult::new(vec![0, 1], vec![0.36, 0.2], 1e-6),
    ];
    let a = assemble_pcce(&mut r, 1e-6).unwrap();
    assert!((r[2].tilde_l_curve[0] - 0.9).abs() < 1e-15);
    assert_eq!(r[2].tilde_l_curve[1], 1.0);
    assert_eq!(a.saturations, 1);
    assert!((a.total[0] - 0.36).abs() < 1e-15);
}

#[test]
fn missing_subcluster_is_an_error() {
    let mut r = vec![
        ClusterResult::new(vec![0], vec![1.0], 0.0),
        ClusterResult::new(vec![0, 1], vec![1.0], 0.0),
    ];
    assert!(assemble_pcce(&mut r, 1e-6).is_err());
}

#[test]
fn ising_limit_is_flat_for_all_modes() {
    let sys = small_bath(HyperfineMode::NoHyperfine, 8, 4).without_flipflops();
    for (n, k) in [(1, 1), (2, 1), (2, 2), (3, 2), (2, 4)] {
        for av in [Averaging::Normal, Averaging::Internal, Averaging::Combined] {
            let c = config(n, k, av);
            let p = partition_bath(&sys, k, 5).unwrap();
            let run = run_pcce(&sys, &p, &c, 9).unwrap();
            assert!(run.curve.mx.iter().all(|v| (v - 1.0).abs() < 1e-9));
        }
    }
}

#[test]
fn normalized_at_zero_time() {
    let sys = small_bath(HyperfineMode::NoHyperfine, 8, 6);
    for av in [Averaging::Normal, Averaging::Internal, Averaging::Combined] {
        let c = config(2, 2, av);
        let p = partition_bath(&sys, 2, 5).unwrap();
        let run = run_pcce(&sys, &p, &c, 3).unwrap();
        assert!((run.curve.mx[0] - 1.0).abs() < 1e-9);
        assert!(run.curve.mx.last().unwrap() < &0.999);
    }
}

#[test]
fn unit_partitions_reproduce_conventional_cce() {
    for (mode, seed) in [(HyperfineMode::NoHyperfine, 7), (HyperfineMode::P1, 8)] {
        let sys = small_bath(mode, 9, seed);
        for order in [1, 2, 3] {
            for av in [Averaging::Normal, Averaging::Internal, Averaging::Combined] {
                let mut c = config(order, 1, av);
                c.dipole_radius_rd = Some(12.0);
                let p = partition_bath(&sys, 1, 0).unwrap();
                let a = run_pcce(&sys, &p, &c, 21).unwrap().curve;
                let b = conventional_cce(&sys, &c, 21).unwrap();
                assert!(a.max_deviation(&b) < 1e-12, "order {order} {av:?}");
            }
        }
    }
}

#[test]
fn typicality_clusters_approach_exact_trace() {
    let sys = small_bath(HyperfineMode::NoHyperfine, 8, 9);
    let mut c = config(1, 8, Averaging::Normal);
    c.normal_samples = 1;
    let exact = spin_cluster_signal(&sys, &(0..8).collect::<Vec<_>>(), 5, &c).unwrap();
    c.bath_state_mode = BathStateMode::Typicality { samples: 40 };
    let typ = spin_cluster_signal(&sys, &(0..8).collect::<Vec<_>>(), 5, &c).unwrap();
    for (a, b) in exact.iter().zip(&typ) {
        assert!((a - b).abs() < 0.05, "{a} vs {b}");
    }
}

#[test]
fn capacity_is_enforced() {
    let sys = small_bath(HyperfineMode::NoHyperfine, 8, 10);
    let mut c = config(1, 8, Averaging::Normal);
    c.dimension_cap = 1 << 6;
    assert!(matches!(
        spin_cluster_signal(&sys, &(0..8).collect::<Vec<_>>(), 5, &c),
        Err(Error::Capacity { .. })
    ));
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let sys = small_bath(HyperfineMode::NoHyperfine, 8, 11);
    let c = config(2, 2, Averaging::Combined);
    let p = partition_bath(&sys, 2, 5).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_pcce(&sys, &p, &c, 3).unwrap().curve)
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn ensemble_of_one_equals_single_run_and_is_deterministic() {
    let spec = BathSpec {
        concentration_ppm: 20.0,
        layer_thickness: 10.0,
        bath_radius: 20.0,
        shell_thickness: 5.0,
        hyperfine_mode: HyperfineMode::NoHyperfine,
        seed: 0,
    };
    let prep = BathPreparation::Nearest { n: 8 };
    let c = config(2, 2, Averaging::Normal);
    let e = run_disorder_ensemble(&spec, prep, &c, 1, 42).unwrap();
    let seed = realization_seed(42, 0);
    let sys = prepare_bath(&spec, prep, 2, seed).unwrap();
    let p = partition_for(&sys, &c, seed).unwrap();
    assert_eq!(e.curve.mx, run_pcce(&sys, &p, &c, seed).unwrap().curve.mx);
    let e3a = run_disorder_ensemble(&spec, prep, &c, 3, 42).unwrap();
    let e3b = run_disorder_ensemble(&spec, prep, &c, 3, 42).unwrap();
    assert_eq!(e3a.curve, e3b.curve);
    assert_eq!(e3a.curve.n_disorder, 3);
}

#[test]
fn ensemble_failure_names_the_realization() {
    let spec = BathSpec {
        concentration_ppm: 1e-6,
        layer_thickness: 10.0,
        bath_radius: 5.0,
        shell_thickness: 0.0,
        hyperfine_mode: HyperfineMode::NoHyperfine,
        seed: 0,
    };
    let c = config(2, 1, Averaging::Normal);
    let err =
        run_disorder_ensemble(&spec, BathPreparation::Nearest { n: 4 }, &c, 2, 1).unwrap_err();
    assert!(matches!(err, Error::Realization { index: 0, .. }));
}

#[test]
fn meanfield_values_are_balanced() {
    let up = (0..10_000u64)
        .filter(|&u| meanfield_value(3, u) > 0.0)
        .count();
    assert!((up as f64 - 5000.0).abs() < 300.0);
    let _ = PhysicalConstants::default();
}
