//! Sector-resolved spectral evaluation of the Hahn echo.
//!
//! `I0z` commutes with the Hamiltonian, so `H = |0⟩⟨0| ⊗ H₀ + |−1⟩⟨−1| ⊗ H₋₁`
//! with real symmetric bath operators. Both conserve the number of up spins
//! of every subgroup, so they share a block structure. With `U_m = exp(−i2πH_mτ)`,
//!
//! `Mx(2τ) = Re Tr[ρ_B U₋₁† U₀† U₋₁ U₀]`.
//!
//! For each block, `H₀ = A Λ Aᵀ`, `H₋₁ = B M Bᵀ` and `W = AᵀB`. Writing
//! `Ũ = Wᵀ e^{−iΛ·} W` and `P = |Ũ|²` (elementwise),
//! `Tr[U₋₁† U₀† U₋₁ U₀] = Σ_ik P_ik cos(φ_i − φ_k)` with `φ = 2π M τ`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::hamiltonian::EffectiveHamiltonian;
use super::z_value;
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone)]
enum Block {
    /// No flip-flop couples the states: the echo refocuses exactly.
    Diagonal,
    Dense {
        eval_a: DVector<f64>,
        eval_b: DVector<f64>,
        vec_a: DMatrix<f64>,
        vec_b: DMatrix<f64>,
        w: DMatrix<f64>,
        wt: DMatrix<f64>,
    },
}

#[derive(Debug, Clone)]
struct Sector {
    /// Bath basis indices of the block's states.
    states: Vec<usize>,
    block: Block,
}

/// Prepared echo evaluator for one effective Hamiltonian.
#[derive(Debug, Clone)]
pub struct EchoKernel {
    bath_dim: usize,
    sectors: Vec<Sector>,
}

impl EchoKernel {
    /// Diagonalizes every conserved block of `h`. The NV must be in the subset.
    pub fn new(h: &EffectiveHamiltonian) -> Result<Self> {
        let nv_pos = h
            .nv_position()
            .ok_or_else(|| Error::InvalidInput("the NV must belong to the subset".into()))?;
        let members: Vec<usize> = (0..h.subset.len()).filter(|&p| p != nv_pos).collect();
        let nb = members.len();
        let mut bit_of = vec![usize::MAX; h.subset.len()];
        for (q, &p) in members.iter().enumerate() {
            bit_of[p] = q;
        }
        let bath_dim = 1usize << nb;
        let z = |s: usize, q: usize| z_value(false, s >> q & 1 == 1);

        // Diagonal parts of H₀ and H₋₁ (NV Iz = 0 and −1).
        let mut diag_a = vec![0.0; bath_dim];
        let mut diag_b = vec![0.0; bath_dim];
        for s in 0..bath_dim {
            let mut ea = 0.0;
            let mut nv_field = h.static_fields[nv_pos];
            for &(i, k, j) in &h.ising_terms {
                if i == nv_pos {
                    nv_field += j * z(s, bit_of[k]);
                } else if k == nv_pos {
                    nv_field += j * z(s, bit_of[i]);
                } else {
                    ea += j * z(s, bit_of[i]) * z(s, bit_of[k]);
                }
            }
            for (q, &p) in members.iter().enumerate() {
                ea += h.static_fields[p] * z(s, q);
            }
            diag_a[s] = ea;
            diag_b[s] = ea - nv_field;
        }

        let flips: Vec<(usize, usize, f64)> = h
            .flipflop_terms
            .iter()
            .map(|&(i, k, c)| {
                if i == nv_pos || k == nv_pos {
                    Err(Error::InvalidInput("flip-flop term involves the NV".into()))
                } else {
                    Ok((bit_of[i], bit_of[k], c))
                }
            })
            .collect::<Result<_>>()?;

        // Conserved quantity: up-count per subgroup among flip-flopping members.
        let mut label_rank: BTreeMap<u8, usize> = BTreeMap::new();
        for &(i, k, _) in &flips {
            for q in [i, k] {
                let next = label_rank.len();
                label_rank.entry(h.labels[members[q]]).or_insert(next);
            }
        }
        let mut masks = vec![0usize; label_rank.len()];
        for (q, &p) in members.iter().enumerate() {
            if let Some(&r) = label_rank.get(&h.labels[p]) {
                masks[r] |= 1 << q;
            }
        }
        let key_of =
            |s: usize| -> Vec<u32> { masks.iter().map(|m| (s & m).count_ones()).collect() };

        let mut groups: BTreeMap<Vec<u32>, Vec<usize>> = BTreeMap::new();
        if flips.is_empty() {
            groups.insert(Vec::new(), (0..bath_dim).collect());
        } else {
            for s in 0..bath_dim {
                groups.entry(key_of(s)).or_default().push(s);
            }
        }

        let mut local = vec![usize::MAX; bath_dim];
        let mut sectors = Vec::with_capacity(groups.len());
        for (_, states) in groups {
            for (l, &s) in states.iter().enumerate() {
                local[s] = l;
            }
            let d = states.len();
            let mut off = Vec::new();
            for (l, &s) in states.iter().enumerate() {
                for &(i, k, c) in &flips {
                    if (s >> i & 1) != (s >> k & 1) {
                        let t = s ^ (1 << i) ^ (1 << k);
                        off.push((local[t], l, c));
                    }
                }
            }
            let block = if off.is_empty() {
                Block::Diagonal
            } else {
                let mut ha = DMatrix::<f64>::zeros(d, d);
                for &(r, c, v) in &off {
                    ha[(r, c)] += v;
                }
                let mut hb = ha.clone();
                for (l, &s) in states.iter().enumerate() {
                    ha[(l, l)] = diag_a[s];
                    hb[(l, l)] = diag_b[s];
                }
                let ea = ha.symmetric_eigen();
                let eb = hb.symmetric_eigen();
                let wt_a = ea.eigenvectors.transpose();
                let w = &wt_a * &eb.eigenvectors;
                let wt = w.transpose();
                Block::Dense {
                    eval_a: ea.eigenvalues,
                    eval_b: eb.eigenvalues,
                    vec_a: ea.eigenvectors,
                    vec_b: eb.eigenvectors,
                    w,
                    wt,
                }
            };
            sectors.push(Sector { states, block });
        }
        Ok(Self { bath_dim, sectors })
    }

    pub fn bath_dim(&self) -> usize {
        self.bath_dim
    }

    /// Largest conserved block.
    pub fn max_block(&self) -> usize {
        self.sectors
            .iter()
            .map(|s| s.states.len())
            .max()
            .unwrap_or(0)
    }

    /// Whether every block is diagonal (pure Ising dynamics).
    pub fn is_ising(&self) -> bool {
        self.sectors
            .iter()
            .all(|s| matches!(s.block, Block::Diagonal))
    }

    /// `Mx` on a grid of total echo times `2τ` for the maximally mixed bath.
    pub fn mx_mixed(&self, times: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; times.len()];
        for sector in &self.sectors {
            let d = sector.states.len();
            match &sector.block {
                Block::Diagonal => out.iter_mut().for_each(|v| *v += d as f64),
                Block::Dense {
                    eval_a,
                    eval_b,
                    w,
                    wt,
                    ..
                } => {
                    // columns 0..d hold cos-weighted W, d..2d sin-weighted W
                    let mut scaled = DMatrix::<f64>::zeros(d, 2 * d);
                    let mut prod = DMatrix::<f64>::zeros(d, 2 * d);
                    let mut ca = vec![0.0; d];
                    let mut sa = vec![0.0; d];
                    let mut cb = vec![0.0; d];
                    let mut sb = vec![0.0; d];
                    for (ti, &t) in times.iter().enumerate() {
                        let tau = 0.5 * t;
                        for r in 0..d {
                            (sa[r], ca[r]) = (TWO_PI * eval_a[r] * tau).sin_cos();
                            (sb[r], cb[r]) = (TWO_PI * eval_b[r] * tau).sin_cos();
                        }
                        // Ũ = Wᵀ diag(e^{−iφ_a}) W, split into real and imaginary parts
                        let (dc_all, ds_all) = scaled.as_mut_slice().split_at_mut(d * d);
                        for ((src, dc), ds) in w
                            .as_slice()
                            .chunks_exact(d)
                            .zip(dc_all.chunks_exact_mut(d))
                            .zip(ds_all.chunks_exact_mut(d))
                        {
                            for r in 0..d {
                                dc[r] = ca[r] * src[r];
                                ds[r] = sa[r] * src[r];
                            }
                        }
                        prod.gemm(1.0, wt, &scaled, 0.0);
                        let (re, im) = prod.as_slice().split_at(d * d);
                        let mut acc = 0.0;
                        for (i, (re_col, im_col)) in
                            re.chunks_exact(d).zip(im.chunks_exact(d)).enumerate()
                        {
                            let (ci, si) = (cb[i], sb[i]);
                            let mut col_acc = 0.0;
                            for k in 0..d {
                                let p = re_col[k] * re_col[k] + im_col[k] * im_col[k];
                                col_acc += p * (cb[k] * ci + sb[k] * si);
                            }
                            acc += col_acc;
                        }
                        out[ti] += acc;
                    }
                }
            }
        }
        let norm = self.bath_dim as f64;
        out.iter_mut().for_each(|v| *v /= norm);
        out
    }

    /// `Mx` on a grid of total echo times for a pure bath state (bath members
    /// in subset order, bit `q` ↔ `q`-th bath member).
    pub fn mx_pure(&self, state: &[Complex64], times: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.bath_dim {
            return Err(Error::InvalidInput(format!(
                "bath state has {} amplitudes, expected {}",
                state.len(),
                self.bath_dim
            )));
        }
        let norm2: f64 = state.iter().map(|z| z.norm_sqr()).sum();
        if !(norm2 > 0.0) {
            return Err(Error::InvalidInput("bath state has zero norm".into()));
        }
        let mut out = vec![0.0; times.len()];
        for sector in &self.sectors {
            let beta: Vec<Complex64> = sector.states.iter().map(|&s| state[s]).collect();
            match &sector.block {
                Block::Diagonal => {
                    let w: f64 = beta.iter().map(|z| z.norm_sqr()).sum();
                    out.iter_mut().for_each(|v| *v += w);
                }
                Block::Dense {
                    eval_a,
                    eval_b,
                    vec_a,
                    vec_b,
                    ..
                } => {
                    for (ti, &t) in times.iter().enumerate() {
                        let tau = 0.5 * t;
                        let ua = |v: &[Complex64]| propagate(vec_a, eval_a, tau, v);
                        let ub = |v: &[Complex64]| propagate(vec_b, eval_b, tau, v);
                        let y = ub(&ua(&beta));
                        let z = ua(&ub(&beta));
                        let overlap: Complex64 = z.iter().zip(&y).map(|(a, b)| a.conj() * b).sum();
                        out[ti] += overlap.re;
                    }
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= norm2);
        Ok(out)
    }
}

/// `V e^{−i2πΛτ} Vᵀ v` for real orthogonal `V`.
fn propagate(
    vecs: &DMatrix<f64>,
    evals: &DVector<f64>,
    tau: f64,
    v: &[Complex64],
) -> Vec<Complex64> {
    let d = v.len();
    let mut coeff = vec![Complex64::new(0.0, 0.0); d];
    for (k, c) in coeff.iter_mut().enumerate() {
        let col = vecs.column(k);
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..d {
            acc += v[i] * col[i];
        }
        let (s, cs) = (TWO_PI * evals[k] * tau).sin_cos();
        *c = acc * Complex64::new(cs, -s);
    }
    let mut out = vec![Complex64::new(0.0, 0.0); d];
    for (k, c) in coeff.iter().enumerate() {
        let col = vecs.column(k);
        for i in 0..d {
            out[i] += *c * col[i];
        }
    }
    out
}
