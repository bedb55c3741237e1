use approx::assert_abs_diff_eq;
use nalgebra::Vector3;
use pcce::analysis::{fit_stretched_exponential, WindowMode};
use pcce::bath::{BathSpec, BathSystem, HyperfineMode};
use pcce::cce::{
    conventional_cce, partition_for, prepare_bath, run_pcce, Averaging, BathPreparation,
    BathStateMode, CceConfig,
};
use pcce::curve::{geometric_grid, DecayCurve};
use pcce::exact::{exact_hahn_echo, ExactConfig};
use pcce::partitioning::{constrained_kmeans, partition_bath_whole};
use proptest::prelude::*;

fn small_bath(n: usize, mode: HyperfineMode, seed: u64) -> BathSystem {
    let spec = BathSpec {
        concentration_ppm: 20.0,
        layer_thickness: 10.0,
        bath_radius: 25.0,
        shell_thickness: 0.0,
        hyperfine_mode: mode,
        seed,
    };
    prepare_bath(&spec, BathPreparation::Nearest { n }, 1, seed).unwrap()
}

fn grid() -> Vec<f64> {
    geometric_grid(0.1, 200.0, 20)
}

#[test]
fn single_cluster_over_whole_bath_is_exact() {
    for seed in [3, 4] {
        let sys = small_bath(6, HyperfineMode::NoHyperfine, seed);
        let mut c = CceConfig::recommended(3, 2, grid());
        c.averaging = Averaging::Normal;
        c.normal_samples = 1;
        c.bath_state_mode = BathStateMode::MaximallyMixed;
        let p = partition_for(&sys, &c, seed).unwrap();
        let pcce = run_pcce(&sys, &p, &c, seed).unwrap().curve;
        let exact = exact_hahn_echo(&sys, &ExactConfig::dense(), &grid(), seed)
            .unwrap()
            .curve;
        assert!(
            pcce.max_deviation(&exact) < 1e-10,
            "deviation {}",
            pcce.max_deviation(&exact)
        );
    }
}

#[test]
fn pcce_with_singleton_partitions_is_conventional_cce() {
    let sys = small_bath(8, HyperfineMode::P1, 11);
    let c = CceConfig::recommended(2, 1, grid());
    let p = partition_for(&sys, &c, 11).unwrap();
    let a = run_pcce(&sys, &p, &c, 11).unwrap().curve;
    let b = conventional_cce(&sys, &c, 11).unwrap();
    assert!(a.max_deviation(&b) < 1e-12);
}

#[test]
fn runs_are_reproducible_from_the_seed() {
    let sys = small_bath(8, HyperfineMode::NoHyperfine, 5);
    let c = CceConfig::recommended(2, 2, grid());
    let p = partition_for(&sys, &c, 5).unwrap();
    let a = run_pcce(&sys, &p, &c, 5).unwrap().curve;
    let b = run_pcce(&sys, &p, &c, 5).unwrap().curve;
    assert_eq!(a.mx, b.mx);
    let other = run_pcce(&sys, &p, &c, 6).unwrap().curve;
    assert_ne!(a.mx, other.mx);
}

#[test]
fn dense_and_trotter_agree_on_a_small_bath() {
    let sys = small_bath(5, HyperfineMode::NoHyperfine, 8);
    let times = geometric_grid(0.5, 20.0, 6);
    let dense = exact_hahn_echo(&sys, &ExactConfig::dense(), &times, 8)
        .unwrap()
        .curve;
    let trotter = exact_hahn_echo(&sys, &ExactConfig::trotter(), &times, 8)
        .unwrap()
        .curve;
    assert!(dense.max_deviation(&trotter) < 1e-3);
}

#[test]
fn curve_csv_round_trips_through_a_file() {
    let curve = DecayCurve::stretched_exponential(&grid(), 40.0, 0.8);
    let mut file = tempfile::NamedTempFile::new().unwrap();
    curve.write_csv(file.as_file_mut()).unwrap();
    let back = DecayCurve::read_csv(std::io::BufReader::new(file.reopen().unwrap())).unwrap();
    assert_eq!(back.times, curve.times);
    assert_eq!(back.mx, curve.mx);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn ising_baths_never_decay(seed in 0u64..1000, k in prop::sample::select(vec![1usize, 2, 3])) {
        let sys = small_bath(6, HyperfineMode::NoHyperfine, seed).without_flipflops();
        let mut c = CceConfig::recommended(2, k, grid());
        c.normal_samples = 2;
        c.internal_samples = 2;
        let p = partition_bath_whole(&sys, k, seed).unwrap();
        for v in run_pcce(&sys, &p, &c, seed).unwrap().curve.mx {
            prop_assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn coherence_starts_at_one(seed in 0u64..1000, k in 1usize..=2) {
        let sys = small_bath(6, HyperfineMode::P1, seed);
        let mut c = CceConfig::recommended(2, k, vec![0.0, 1.0, 10.0]);
        c.partition_mode = pcce::cce::PartitionMode::WholeBath;
        c.normal_samples = 2;
        c.internal_samples = 2;
        let p = partition_for(&sys, &c, seed).unwrap();
        let curve = run_pcce(&sys, &p, &c, seed).unwrap().curve;
        assert_abs_diff_eq!(curve.mx[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn kmeans_groups_have_exactly_k_points(
        seed in 0u64..1000,
        groups in 1usize..6,
        k in 1usize..5,
        coords in prop::collection::vec(-50.0f64..50.0, 60),
    ) {
        let points: Vec<Vector3<f64>> =
            (0..groups * k).map(|i| Vector3::new(coords[3 * i], coords[3 * i + 1], coords[3 * i + 2])).collect();
        let res = constrained_kmeans(&points, k, seed).unwrap();
        let mut counts = vec![0; groups];
        for l in res.labels {
            counts[l] += 1;
        }
        prop_assert!(counts.iter().all(|&c| c == k));
    }

    #[test]
    fn fit_recovers_model_parameters(t2 in 1.0f64..1e4, p in 0.4f64..2.5) {
        let curve = DecayCurve::stretched_exponential(&geometric_grid(t2 / 100.0, 3.0 * t2, 60), t2, p);
        let f = fit_stretched_exponential(&curve, WindowMode::Auto).unwrap();
        prop_assert!(((f.p - p) / p).abs() < 1e-6);
        prop_assert!(((f.t2 - t2) / t2).abs() < 1e-6);
    }
}
