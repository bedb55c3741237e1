//! Conventional spin-resolved CCE up to third order, written out explicitly.

use super::{spin_cluster_signal, spin_set_key, Averaging, CceConfig};
use crate::bath::BathSystem;
use crate::curve::DecayCurve;
use crate::rng::{self, tag};
use crate::{Error, Result};

struct Signals {
    single: Vec<Vec<f64>>,
    pair: Vec<((usize, usize), Vec<f64>)>,
    triple: Vec<((usize, usize, usize), Vec<f64>)>,
}

/// CCE-N (N ≤ 3) over the dynamic spins of `system`, clusters limited to spins
/// pairwise within the dipole radius. Uses the same mean-field streams as
/// [`super::run_pcce`], so it reproduces pCCE(N, 1).
pub fn conventional_cce(system: &BathSystem, config: &CceConfig, seed: u64) -> Result<DecayCurve> {
    config.validate()?;
    let order = config.order_n;
    if order > 3 {
        return Err(Error::InvalidInput(
            "conventional CCE supports orders 1 to 3".into(),
        ));
    }
    let r_d = config.resolved_rd(&system.spec);
    let dynamic = system.dynamic_indices();
    let n = dynamic.len();
    let close = |a: usize, b: usize| {
        (system.spins[dynamic[a]].position - system.spins[dynamic[b]].position).norm() <= r_d
    };
    let nt = config.time_grid.len();
    let (outer, inner) = match config.averaging {
        Averaging::Normal => (config.normal_samples, 1),
        Averaging::Internal => (1, config.internal_samples),
        Averaging::Combined => (config.normal_samples, config.internal_samples),
    };

    let signal = |spins: &[usize], o: usize| -> Result<Vec<f64>> {
        let spins: Vec<usize> = spins.iter().map(|&a| dynamic[a]).collect();
        if config.averaging == Averaging::Normal {
            return spin_cluster_signal(
                system,
                &spins,
                rng::derive(seed, &[tag::NORMAL, o as u64]),
                config,
            );
        }
        let key = spin_set_key(system, &spins);
        let mut acc = vec![0.0; nt];
        for j in 0..inner {
            let cs = rng::derive(seed, &[tag::INTERNAL, o as u64, j as u64, key]);
            for (a, v) in acc
                .iter_mut()
                .zip(spin_cluster_signal(system, &spins, cs, config)?)
            {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= inner as f64);
        Ok(acc)
    };

    let guard = config.division_guard;
    let divide = |num: f64, factors: &[f64]| -> f64 {
        let d: f64 = factors.iter().product();
        if factors.iter().any(|f| f.abs() < guard) || d.abs() < guard {
            1.0
        } else {
            num / d
        }
    };

    let mut curves = Vec::with_capacity(outer);
    for o in 0..outer {
        let mut s = Signals {
            single: Vec::with_capacity(n),
            pair: vec![],
            triple: vec![],
        };
        for a in 0..n {
            s.single.push(signal(&[a], o)?);
        }
        if order >= 2 {
            for a in 0..n {
                for b in a + 1..n {
                    if close(a, b) {
                        s.pair.push(((a, b), signal(&[a, b], o)?));
                    }
                }
            }
        }
        if order >= 3 {
            for a in 0..n {
                for b in a + 1..n {
                    for c in b + 1..n {
                        if close(a, b) && close(a, c) && close(b, c) {
                            s.triple.push(((a, b, c), signal(&[a, b, c], o)?));
                        }
                    }
                }
            }
        }

        let mut total = vec![1.0; nt];
        let mut l2 = std::collections::HashMap::new();
        for t in 0..nt {
            for m in &s.single {
                total[t] *= m[t];
            }
            for &((a, b), ref m) in &s.pair {
                let l = divide(m[t], &[s.single[a][t], s.single[b][t]]);
                l2.insert((a, b, t), l);
                total[t] *= l;
            }
            for &((a, b, c), ref m) in &s.triple {
                let factors = [
                    s.single[a][t],
                    s.single[b][t],
                    s.single[c][t],
                    l2[&(a, b, t)],
                    l2[&(a, c, t)],
                    l2[&(b, c, t)],
                ];
                total[t] *= divide(m[t], &factors);
            }
        }
        curves.push(total);
    }
    let mut curve = DecayCurve::mean_of(&curves, &config.time_grid)?;
    curve.n_normal = outer;
    curve.n_internal = inner;
    Ok(curve)
}
