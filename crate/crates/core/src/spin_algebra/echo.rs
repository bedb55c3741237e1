use num_complex::Complex64;

use super::hamiltonian::EffectiveHamiltonian;
use crate::linalg::{expm, hermiticity_defect, CMatrix};
use crate::{Error, Result};

/// Largest subset dimension evaluated with a dense matrix exponential.
pub const DENSE_PROPAGATOR_CAP: usize = 1 << 10;

/// NV conventions: `I0z = diag(0, −1)` on `{|0⟩, |−1⟩}`, initial state
/// `(|0⟩ + |−1⟩)/√2`, ideal instantaneous π pulse about x.
#[derive(Debug, Clone, Copy, Default)]
pub struct NvConvention;

impl NvConvention {
    /// Basis order `(|0⟩, |−1⟩)`.
    pub fn iz0() -> [f64; 2] {
        [0.0, -1.0]
    }

    pub fn initial_state() -> [Complex64; 2] {
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        [a, a]
    }

    /// `exp(−iπσx/2) = −iσx`.
    pub fn pulse() -> [[Complex64; 2]; 2] {
        let z = Complex64::new(0.0, 0.0);
        let m = Complex64::new(0.0, -1.0);
        [[z, m], [m, z]]
    }

    /// `⟨I0x(0)⟩ = 1/2` in the initial state, so `Mx = 2⟨I0x(2τ)⟩`.
    pub fn initial_ix() -> f64 {
        let s = Self::initial_state();
        (s[0].conj() * s[1]).re
    }
}

/// Initial state of the bath members of a subset.
#[derive(Debug, Clone)]
pub enum BathState {
    /// Infinite-temperature state `1/d`.
    MaximallyMixed,
    /// A pure bath state (e.g. a canonical-typicality sample), indexed by the
    /// bath members of the subset in subset order. Normalized internally.
    Pure(Vec<Complex64>),
}

/// Bit of the NV's `|0⟩` state in the subset basis is 1, `|−1⟩` is 0.
fn nv_full_index(nv_pos: usize, nv_is_zero: bool, bath_index: usize) -> usize {
    let low = bath_index & ((1 << nv_pos) - 1);
    let high = (bath_index >> nv_pos) << (nv_pos + 1);
    low | high | ((nv_is_zero as usize) << nv_pos)
}

/// `Tr[ρ(2τ) I0x]` after `U(τ) πx U(τ)` with `U(τ) = exp(−i 2π H τ)`.
///
/// Reference implementation on the full subset Hilbert space using one
/// matrix exponential per call. The returned value is complex so callers can
/// verify that the imaginary part vanishes.
pub fn hahn_echo_trace(h: &EffectiveHamiltonian, bath: &BathState, tau: f64) -> Result<Complex64> {
    let nv_pos = h
        .nv_position()
        .ok_or_else(|| Error::InvalidInput("the NV must belong to the subset".into()))?;
    if !(tau >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "tau must be non-negative, got {tau}"
        )));
    }
    let dim = h.dimension();
    if dim > DENSE_PROPAGATOR_CAP {
        return Err(Error::Capacity {
            dim,
            cap: DENSE_PROPAGATOR_CAP,
        });
    }
    let hm = h.dense_matrix();
    let defect = hermiticity_defect(&hm);
    if defect > 1e-12 {
        return Err(Error::NonHermitian(defect));
    }
    let phase = Complex64::new(0.0, -2.0 * std::f64::consts::PI * tau);
    let u = expm(&(&hm * phase));

    let nv_mask = 1usize << nv_pos;
    let pulse = NvConvention::pulse();
    // π pulse: full-space matrix acting on the NV bit only
    let mut p = CMatrix::zeros(dim, dim);
    for s in 0..dim {
        let bit = (s & nv_mask != 0) as usize;
        // NV basis order (|0⟩, |−1⟩) ↔ bit (1, 0)
        let row_of = |b: usize| 1 - b;
        for out_bit in 0..2 {
            let amp = pulse[row_of(out_bit)][row_of(bit)];
            if amp.norm() > 0.0 {
                let t = (s & !nv_mask) | (out_bit * nv_mask);
                p[(t, s)] += amp;
            }
        }
    }
    let v = &u * &p * &u;

    let bath_dim = dim >> 1;
    let nv0 = NvConvention::initial_state();
    let mut rho0 = CMatrix::zeros(dim, dim);
    match bath {
        BathState::MaximallyMixed => {
            let w = 1.0 / bath_dim as f64;
            for b in 0..bath_dim {
                let i0 = nv_full_index(nv_pos, true, b);
                let i1 = nv_full_index(nv_pos, false, b);
                for (ia, ca) in [(i0, nv0[0]), (i1, nv0[1])] {
                    for (ib, cb) in [(i0, nv0[0]), (i1, nv0[1])] {
                        rho0[(ia, ib)] += ca * cb.conj() * w;
                    }
                }
            }
        }
        BathState::Pure(beta) => {
            if beta.len() != bath_dim {
                return Err(Error::InvalidInput(format!(
                    "bath state has {} amplitudes, expected {bath_dim}",
                    beta.len()
                )));
            }
            let norm2: f64 = beta.iter().map(|z| z.norm_sqr()).sum();
            if !(norm2 > 0.0) {
                return Err(Error::InvalidInput("bath state has zero norm".into()));
            }
            let mut psi = vec![Complex64::new(0.0, 0.0); dim];
            for (b, &amp) in beta.iter().enumerate() {
                psi[nv_full_index(nv_pos, true, b)] = nv0[0] * amp;
                psi[nv_full_index(nv_pos, false, b)] = nv0[1] * amp;
            }
            for i in 0..dim {
                for j in 0..dim {
                    rho0[(i, j)] = psi[i] * psi[j].conj() / norm2;
                }
            }
        }
    }
    let rho = &v * rho0 * v.adjoint();

    // I0x = σx/2 on the NV bit
    let mut tr = Complex64::new(0.0, 0.0);
    for s in 0..dim {
        tr += rho[(s, s ^ nv_mask)] * 0.5;
    }
    Ok(tr)
}

/// `Mx(2τ) = Tr[ρ(2τ) I0x] / ⟨I0x(0)⟩`.
pub fn hahn_echo_mx(h: &EffectiveHamiltonian, bath: &BathState, tau: f64) -> Result<f64> {
    let tr = hahn_echo_trace(h, bath, tau)?;
    Ok(tr.re / NvConvention::initial_ix())
}
