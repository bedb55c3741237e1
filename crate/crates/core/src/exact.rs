//! Brute-force Hahn echo of the whole NV + bath system for small baths.
//!
//! Two independent propagators are provided so each can check the other:
//! `Dense` diagonalizes the conserved blocks of the full Hamiltonian and is
//! exact for every τ; `Trotter` steps a state vector over the joint NV–bath
//! space with a symmetric second-order splitting into the diagonal part and
//! pairwise flip-flop rotations.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bath::BathSystem;
use crate::cce::meanfield_vector;
use crate::curve::{validate_grid, DecayCurve};
use crate::linalg::random_state;
use crate::rng::{self, tag};
use crate::spin_algebra::{build_hamiltonian, EchoKernel, EffectiveHamiltonian};
use crate::{Error, Result};

pub const DENSE_MAX_SPINS: usize = 13;
pub const TROTTER_MAX_SPINS: usize = 21;
/// Largest bath evaluated by an exact basis-state sum in Trotter mode.
pub const TROTTER_EXACT_TRACE_MAX_SPINS: usize = 10;
pub const DEFAULT_TYPICALITY_SAMPLES: usize = 16;
pub const SELF_CHECK_TOLERANCE: f64 = 1e-3;
const MAX_HALVINGS: usize = 10;
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactMethod {
    Dense,
    Trotter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactBathState {
    /// Exact trace where affordable, typicality otherwise.
    #[default]
    Auto,
    ExactTrace,
    Typicality,
}

fn default_samples() -> usize {
    DEFAULT_TYPICALITY_SAMPLES
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactConfig {
    pub method: ExactMethod,
    /// Trotter step, μs; `1/(50 max|J|)` when absent.
    #[serde(default)]
    pub trotter_dt: Option<f64>,
    /// Halve the step until halving changes no point by more than 1e−3.
    #[serde(default = "default_true")]
    pub self_check: bool,
    #[serde(default)]
    pub bath_state: ExactBathState,
    #[serde(default = "default_samples")]
    pub typicality_samples: usize,
    /// Maximum number of bath spins.
    #[serde(default)]
    pub max_spins: Option<usize>,
}

impl ExactConfig {
    pub fn dense() -> Self {
        Self {
            method: ExactMethod::Dense,
            trotter_dt: None,
            self_check: true,
            bath_state: ExactBathState::Auto,
            typicality_samples: DEFAULT_TYPICALITY_SAMPLES,
            max_spins: None,
        }
    }

    pub fn trotter() -> Self {
        Self {
            method: ExactMethod::Trotter,
            ..Self::dense()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(dt) = self.trotter_dt {
            if !(dt > 0.0) {
                return Err(Error::InvalidInput("trotter_dt must be positive".into()));
            }
        }
        if self.typicality_samples == 0 {
            return Err(Error::InvalidInput(
                "typicality_samples must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn spin_cap(&self) -> usize {
        let hard = match self.method {
            ExactMethod::Dense => DENSE_MAX_SPINS,
            ExactMethod::Trotter => TROTTER_MAX_SPINS,
        };
        self.max_spins.map_or(hard, |m| m.min(hard))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypicalityResult {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Standard error below 0.01 at every point.
    pub converged: bool,
}

/// Averages `evolve(ψ)` over `n_samples` random pure states of dimension `dim`.
pub fn typicality_average<R, F>(
    evolve: F,
    dim: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<TypicalityResult>
where
    R: Rng + ?Sized,
    F: Fn(&[Complex64]) -> Result<Vec<f64>>,
{
    if n_samples == 0 {
        return Err(Error::InvalidInput(
            "typicality needs at least one sample".into(),
        ));
    }
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        samples.push(evolve(&random_state(dim, rng))?);
    }
    let nt = samples[0].len();
    let n = n_samples as f64;
    let mut mean = vec![0.0; nt];
    let mut stderr = vec![0.0; nt];
    for t in 0..nt {
        let m = samples.iter().map(|s| s[t]).sum::<f64>() / n;
        mean[t] = m;
        if n_samples > 1 {
            let var = samples.iter().map(|s| (s[t] - m).powi(2)).sum::<f64>() / (n - 1.0);
            stderr[t] = (var / n).sqrt();
        }
    }
    let converged = stderr.iter().all(|&s| s < 0.01);
    Ok(TypicalityResult {
        mean,
        stderr,
        converged,
    })
}

#[derive(Debug, Clone)]
pub struct ExactResult {
    pub curve: DecayCurve,
    /// Trotter step actually used (μs); `None` for dense propagation.
    pub dt: Option<f64>,
    pub converged: bool,
}

/// Hamiltonian of the NV and every dynamic spin; static spins enter as mean
/// fields of configuration `seed`.
pub fn full_hamiltonian(system: &BathSystem, seed: u64) -> Result<EffectiveHamiltonian> {
    let dynamic = system.dynamic_indices();
    let subset: Vec<usize> = std::iter::once(0)
        .chain(dynamic.iter().map(|&i| i + 1))
        .collect();
    // spins outside the dynamic set (if any) act as frozen mean fields
    let mf = meanfield_vector(system, rng::derive(seed, &[tag::NORMAL, 0]));
    build_hamiltonian(&subset, &system.couplings, &mf, usize::MAX)
}

/// Hahn echo of all dynamic spins of `system` with the NV.
pub fn exact_hahn_echo(
    system: &BathSystem,
    config: &ExactConfig,
    times: &[f64],
    seed: u64,
) -> Result<ExactResult> {
    config.validate()?;
    validate_grid(times)?;
    let n = system.dynamic_count();
    if n > config.spin_cap() {
        return Err(Error::Capacity {
            dim: 1 << (n + 1),
            cap: 1 << (config.spin_cap() + 1),
        });
    }
    let h = full_hamiltonian(system, seed)?;
    let typicality = match config.bath_state {
        ExactBathState::ExactTrace => false,
        ExactBathState::Typicality => true,
        ExactBathState::Auto => {
            config.method == ExactMethod::Trotter && n > TROTTER_EXACT_TRACE_MAX_SPINS
        }
    };
    let mut state_rng = rng::stream(rng::derive(seed, &[tag::TYPICALITY]));
    let dim = 1usize << n;
    match config.method {
        ExactMethod::Dense => {
            let kernel = EchoKernel::new(&h)?;
            if typicality {
                let r = typicality_average(
                    |psi| kernel.mx_pure(psi, times),
                    dim,
                    config.typicality_samples,
                    &mut state_rng,
                )?;
                Ok(finish(times, r, None))
            } else {
                Ok(ExactResult {
                    curve: DecayCurve::new(times.to_vec(), kernel.mx_mixed(times)),
                    dt: None,
                    converged: true,
                })
            }
        }
        ExactMethod::Trotter => {
            let trotter = TrotterSystem::new(&h);
            let mut dt = config.trotter_dt.unwrap_or_else(|| trotter.default_dt());
            let states: Vec<Vec<Complex64>> = if typicality {
                (0..config.typicality_samples)
                    .map(|_| random_state(dim, &mut state_rng))
                    .collect()
            } else {
                (0..dim)
                    .map(|b| {
                        let mut v = vec![Complex64::new(0.0, 0.0); dim];
                        v[b] = Complex64::new(1.0, 0.0);
                        v
                    })
                    .collect()
            };
            let eval = |dt: f64| -> Vec<Vec<f64>> {
                states
                    .iter()
                    .map(|s| {
                        times
                            .iter()
                            .map(|&t| trotter.echo(s, 0.5 * t, dt))
                            .collect()
                    })
                    .collect()
            };
            let mut current = eval(dt);
            if config.self_check {
                let mut ok = false;
                for _ in 0..MAX_HALVINGS {
                    let finer = eval(0.5 * dt);
                    let change = mean_curve(&current)
                        .iter()
                        .zip(mean_curve(&finer))
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    dt *= 0.5;
                    current = finer;
                    if change <= SELF_CHECK_TOLERANCE {
                        ok = true;
                        break;
                    }
                }
                if !ok {
                    return Err(Error::TrotterStepTooLarge(dt));
                }
            }
            if typicality {
                let n = current.len() as f64;
                let mean = mean_curve(&current);
                let stderr = (0..times.len())
                    .map(|t| {
                        if current.len() < 2 {
                            return 0.0;
                        }
                        let var = current
                            .iter()
                            .map(|c| (c[t] - mean[t]).powi(2))
                            .sum::<f64>()
                            / (n - 1.0);
                        (var / n).sqrt()
                    })
                    .collect::<Vec<_>>();
                let converged = stderr.iter().all(|&s| s < 0.01);
                Ok(finish(
                    times,
                    TypicalityResult {
                        mean,
                        stderr,
                        converged,
                    },
                    Some(dt),
                ))
            } else {
                Ok(ExactResult {
                    curve: DecayCurve::new(times.to_vec(), mean_curve(&current)),
                    dt: Some(dt),
                    converged: true,
                })
            }
        }
    }
}

fn finish(times: &[f64], r: TypicalityResult, dt: Option<f64>) -> ExactResult {
    let mut curve = DecayCurve::new(times.to_vec(), r.mean);
    curve.variance = r.stderr.iter().map(|s| s * s).collect();
    ExactResult {
        curve,
        dt,
        converged: r.converged,
    }
}

fn mean_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let n = curves.len() as f64;
    (0..curves[0].len())
        .map(|t| curves.iter().map(|c| c[t]).sum::<f64>() / n)
        .collect()
}

/// Trotterized propagation on the joint space; bit `p` of a basis index is
/// subset member `p` (1 = bath up / NV |0⟩).
#[derive(Debug, Clone)]
pub struct TrotterSystem {
    members: usize,
    nv_bit: usize,
    /// Diagonal energy of each basis state, MHz.
    diagonal: Vec<f64>,
    /// `(p, q, c)` flip-flop amplitudes.
    flipflops: Vec<(usize, usize, f64)>,
    max_coupling: f64,
}

impl TrotterSystem {
    pub fn new(h: &EffectiveHamiltonian) -> Self {
        let members = h.subset.len();
        let nv_bit = h.nv_position().expect("subset contains the NV");
        let z = |state: usize, p: usize| -> f64 {
            let up = state >> p & 1 == 1;
            if p == nv_bit {
                if up {
                    0.0
                } else {
                    -1.0
                }
            } else if up {
                0.5
            } else {
                -0.5
            }
        };
        let diagonal = (0..1usize << members)
            .map(|s| {
                let mut e: f64 = h
                    .static_fields
                    .iter()
                    .enumerate()
                    .map(|(p, f)| f * z(s, p))
                    .sum();
                for &(p, q, j) in &h.ising_terms {
                    e += j * z(s, p) * z(s, q);
                }
                e
            })
            .collect();
        let max_coupling = h
            .ising_terms
            .iter()
            .map(|t| t.2.abs())
            .chain(h.flipflop_terms.iter().map(|t| 4.0 * t.2.abs()))
            .fold(0.0, f64::max);
        Self {
            members,
            nv_bit,
            diagonal,
            flipflops: h.flipflop_terms.clone(),
            max_coupling,
        }
    }

    /// `1 / (50 max|J|)` μs.
    pub fn default_dt(&self) -> f64 {
        if self.max_coupling > 0.0 {
            1.0 / (50.0 * self.max_coupling)
        } else {
            1.0
        }
    }

    fn apply_diagonal(&self, psi: &mut [Complex64], dt: f64) {
        for (a, e) in psi.iter_mut().zip(&self.diagonal) {
            let (s, c) = (TWO_PI * e * dt).sin_cos();
            *a *= Complex64::new(c, -s);
        }
    }

    fn apply_flipflop(&self, psi: &mut [Complex64], p: usize, q: usize, c: f64, dt: f64) {
        let (s, co) = (TWO_PI * c * dt).sin_cos();
        let (bp, bq) = (1usize << p, 1usize << q);
        for i in 0..psi.len() {
            // visit each |…1_p…0_q…⟩ ↔ |…0_p…1_q…⟩ pair once
            if i & bp != 0 && i & bq == 0 {
                let j = i ^ bp ^ bq;
                let (x, y) = (psi[i], psi[j]);
                psi[i] = x * co - Complex64::new(0.0, s) * y;
                psi[j] = y * co - Complex64::new(0.0, s) * x;
            }
        }
    }

    /// One symmetric step `e^{−iD dt/2} Π_p e^{−iF_p dt/2} Π_p^rev e^{−iF_p dt/2} e^{−iD dt/2}`.
    fn step(&self, psi: &mut [Complex64], dt: f64) {
        self.apply_diagonal(psi, 0.5 * dt);
        for &(p, q, c) in &self.flipflops {
            self.apply_flipflop(psi, p, q, c, 0.5 * dt);
        }
        for &(p, q, c) in self.flipflops.iter().rev() {
            self.apply_flipflop(psi, p, q, c, 0.5 * dt);
        }
        self.apply_diagonal(psi, 0.5 * dt);
    }

    /// Evolves for `tau` with steps no longer than `dt`.
    pub fn evolve(&self, psi: &mut [Complex64], tau: f64, dt: f64) {
        if tau <= 0.0 {
            return;
        }
        let n = (tau / dt).ceil().max(1.0) as usize;
        let h = tau / n as f64;
        for _ in 0..n {
            self.step(psi, h);
        }
    }

    /// Joint state `(|0⟩ + |−1⟩)/√2 ⊗ bath`; bath amplitudes indexed by the
    /// bath members in subset order.
    pub fn initial_state(&self, bath: &[Complex64]) -> Vec<Complex64> {
        let mut psi = vec![Complex64::new(0.0, 0.0); 1 << self.members];
        let amp = std::f64::consts::FRAC_1_SQRT_2;
        for (b, &a) in bath.iter().enumerate() {
            let low = b & ((1 << self.nv_bit) - 1);
            let full = ((b >> self.nv_bit) << (self.nv_bit + 1)) | low;
            psi[full] = a * amp;
            psi[full | 1 << self.nv_bit] = a * amp;
        }
        psi
    }

    /// Ideal π pulse `−iσx` on the NV.
    pub fn pulse(&self, psi: &mut [Complex64]) {
        let bit = 1usize << self.nv_bit;
        let mi = Complex64::new(0.0, -1.0);
        for i in 0..psi.len() {
            if i & bit == 0 {
                let j = i | bit;
                let (x, y) = (psi[i], psi[j]);
                psi[i] = mi * y;
                psi[j] = mi * x;
            }
        }
    }

    /// `2⟨I0x⟩ / ⟨ψ|ψ⟩`.
    pub fn mx(&self, psi: &[Complex64]) -> f64 {
        let bit = 1usize << self.nv_bit;
        let mut acc = 0.0;
        let mut norm = 0.0;
        for i in 0..psi.len() {
            norm += psi[i].norm_sqr();
            if i & bit != 0 {
                acc += (psi[i].conj() * psi[i ^ bit]).re;
            }
        }
        2.0 * acc / norm
    }

    /// Full echo for one bath state at half-time `tau`.
    pub fn echo(&self, bath: &[Complex64], tau: f64, dt: f64) -> f64 {
        let mut psi = self.initial_state(bath);
        self.evolve(&mut psi, tau, dt);
        self.pulse(&mut psi);
        self.evolve(&mut psi, tau, dt);
        self.mx(&psi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{generate_bath, BathSpec, HyperfineMode};
    use crate::curve::geometric_grid;
    use crate::spin_algebra::{hahn_echo_mx, BathState, PhysicalConstants};
    use nalgebra::Vector3;

    fn bench(n: usize, seed: u64) -> BathSystem {
        let spec = BathSpec {
            concentration_ppm: 20.0,
            layer_thickness: 10.0,
            bath_radius: 20.0,
            shell_thickness: 0.0,
            hyperfine_mode: HyperfineMode::NoHyperfine,
            seed,
        };
        generate_bath(&spec).unwrap().nearest(n).unwrap()
    }

    fn pair_system() -> BathSystem {
        let pos = [Vector3::new(3.0, 0.0, 2.0), Vector3::new(4.0, 1.5, 0.0)];
        BathSystem::from_positions(&pos, &[2, 2], PhysicalConstants::default()).unwrap()
    }

    #[test]
    fn ising_bath_is_refocused_by_both_methods() {
        let sys = bench(6, 1).without_flipflops();
        let times = geometric_grid(1.0, 100.0, 4);
        for cfg in [ExactConfig::dense(), ExactConfig::trotter()] {
            let r = exact_hahn_echo(&sys, &cfg, &times, 1).unwrap();
            assert!(
                r.curve.mx.iter().all(|v| (v - 1.0).abs() < 1e-9),
                "{:?}",
                r.curve.mx
            );
        }
    }

    #[test]
    fn pair_matches_reference_echo() {
        let sys = pair_system();
        let times = geometric_grid(0.1, 20.0, 8);
        let h = full_hamiltonian(&sys, 0).unwrap();
        for cfg in [
            ExactConfig::dense(),
            ExactConfig {
                trotter_dt: Some(1e-4),
                self_check: false,
                ..ExactConfig::trotter()
            },
        ] {
            let r = exact_hahn_echo(&sys, &cfg, &times, 0).unwrap();
            for (t, v) in times.iter().zip(&r.curve.mx) {
                let want = hahn_echo_mx(&h, &BathState::MaximallyMixed, 0.5 * t).unwrap();
                let tol = if cfg.method == ExactMethod::Dense {
                    1e-8
                } else {
                    1e-6
                };
                assert!(
                    (want - v).abs() < tol,
                    "{:?} at {t}: {want} vs {v}",
                    cfg.method
                );
            }
        }
    }

    #[test]
    fn trotter_preserves_norm() {
        let sys = bench(6, 2);
        let h = full_hamiltonian(&sys, 0).unwrap();
        let tr = TrotterSystem::new(&h);
        let bath = random_state(1 << 6, &mut rng::stream(3));
        let mut psi = tr.initial_state(&bath);
        tr.evolve(&mut psi, 7.3, tr.default_dt());
        tr.pulse(&mut psi);
        tr.evolve(&mut psi, 7.3, tr.default_dt());
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn trotter_error_is_second_order() {
        let sys = bench(6, 4);
        let h = full_hamiltonian(&sys, 0).unwrap();
        let tr = TrotterSystem::new(&h);
        let kernel = EchoKernel::new(&h).unwrap();
        let bath = random_state(1 << 6, &mut rng::stream(5));
        let times = geometric_grid(1.0, 40.0, 5);
        let exact = kernel.mx_pure(&bath, &times).unwrap();
        let err = |dt: f64| {
            times
                .iter()
                .zip(&exact)
                .map(|(&t, e)| (tr.echo(&bath, 0.5 * t, dt) - e).abs())
                .fold(0.0, f64::max)
        };
        let dt = 4.0 * tr.default_dt();
        let order = (err(dt) / err(0.5 * dt)).log2();
        assert!((1.7..=2.3).contains(&order), "order {order}");
    }

    #[test]
    fn dense_and_self_checked_trotter_agree() {
        let sys = bench(7, 6);
        let times = geometric_grid(1.0, 60.0, 6);
        let mut d = ExactConfig::dense();
        d.bath_state = ExactBathState::Typicality;
        d.typicality_samples = 2;
        let mut t = ExactConfig::trotter();
        t.bath_state = ExactBathState::Typicality;
        t.typicality_samples = 2;
        let a = exact_hahn_echo(&sys, &d, &times, 8).unwrap();
        let b = exact_hahn_echo(&sys, &t, &times, 8).unwrap();
        assert!(a.curve.max_deviation(&b.curve) < 1e-3);
        assert!(b.dt.unwrap() > 0.0);
    }

    #[test]
    fn typicality_converges_to_trace_for_one_spin_bath() {
        // NV plus one bath spin: the echo is flat, so use a 2-spin bath whose
        // 4×4 trace is known from the dense kernel.
        let sys = pair_system();
        let h = full_hamiltonian(&sys, 0).unwrap();
        let kernel = EchoKernel::new(&h).unwrap();
        let times = geometric_grid(0.5, 20.0, 5);
        let exact = kernel.mx_mixed(&times);
        let r = typicality_average(
            |psi| kernel.mx_pure(psi, &times),
            4,
            4000,
            &mut rng::stream(1),
        )
        .unwrap();
        for ((m, s), e) in r.mean.iter().zip(&r.stderr).zip(&exact) {
            assert!((m - e).abs() < 4.0 * s + 1e-12, "{m} vs {e} ± {s}");
        }
        assert!(r.converged);
    }

    #[test]
    fn state_independent_observable_has_zero_spread() {
        let r = typicality_average(|_| Ok(vec![1.0, 0.5]), 8, 10, &mut rng::stream(2)).unwrap();
        assert_eq!(r.stderr, vec![0.0, 0.0]);
    }

    #[test]
    fn doubling_samples_shrinks_stderr() {
        let sys = bench(5, 9);
        let h = full_hamiltonian(&sys, 0).unwrap();
        let kernel = EchoKernel::new(&h).unwrap();
        let times = [0.0, 30.0];
        let f = |psi: &[Complex64]| kernel.mx_pure(psi, &times);
        let a = typicality_average(f, 32, 400, &mut rng::stream(3)).unwrap();
        let b = typicality_average(f, 32, 800, &mut rng::stream(4)).unwrap();
        let ratio = a.stderr[1] / b.stderr[1];
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn capacity_is_enforced() {
        let sys = bench(8, 1);
        let cfg = ExactConfig {
            max_spins: Some(6),
            ..ExactConfig::dense()
        };
        assert!(matches!(
            exact_hahn_echo(&sys, &cfg, &[0.0, 1.0], 0),
            Err(Error::Capacity { .. })
        ));
    }
}
