use num_complex::Complex64;

use super::coupling::{CouplingTable, NV_LABEL};
use super::z_value;
use crate::linalg::CMatrix;
use crate::{Error, Result};

/// Default cap on the Hilbert-space dimension of a subset.
pub const DEFAULT_DIMENSION_CAP: usize = 1 << 14;

/// Rotating-frame Hamiltonian of a spin subset with static mean fields.
///
/// Term indices refer to positions in `subset`, not to table indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveHamiltonian {
    /// Table indices of the participating spins (0 = NV).
    pub subset: Vec<usize>,
    /// `J_ik I_iz I_kz` for every in-subset pair.
    pub ising_terms: Vec<(usize, usize, f64)>,
    /// `c (I_i⁺ I_k⁻ + I_i⁻ I_k⁺)` with `c = −J_ik / 4`, allowed bath pairs only.
    pub flipflop_terms: Vec<(usize, usize, f64)>,
    /// Longitudinal field `h_i` (MHz) from the frozen spins outside the subset.
    pub static_fields: Vec<f64>,
    /// Subgroup label per member ([`NV_LABEL`] for the NV).
    pub labels: Vec<u8>,
}

impl EffectiveHamiltonian {
    /// Position of the NV within the subset, if present.
    pub fn nv_position(&self) -> Option<usize> {
        self.subset.iter().position(|&s| s == 0)
    }

    pub fn dimension(&self) -> usize {
        1usize << self.subset.len()
    }

    /// Dense matrix in the full subset basis (member `p` ↔ bit `p`), MHz.
    pub fn dense_matrix(&self) -> CMatrix {
        let n = self.subset.len();
        let dim = 1usize << n;
        let is_nv: Vec<bool> = self.subset.iter().map(|&s| s == 0).collect();
        let z = |state: usize, p: usize| z_value(is_nv[p], state >> p & 1 == 1);
        let mut h = CMatrix::zeros(dim, dim);
        for s in 0..dim {
            let mut diag = 0.0;
            for &(i, k, jik) in &self.ising_terms {
                diag += jik * z(s, i) * z(s, k);
            }
            for (p, &hp) in self.static_fields.iter().enumerate() {
                diag += hp * z(s, p);
            }
            h[(s, s)] = Complex64::new(diag, 0.0);
            for &(i, k, c) in &self.flipflop_terms {
                if (s >> i & 1) != (s >> k & 1) {
                    let t = s ^ (1 << i) ^ (1 << k);
                    h[(t, s)] += Complex64::new(c, 0.0);
                }
            }
        }
        h
    }
}

/// Builds the effective Hamiltonian of `subset`.
///
/// `meanfield[k]` is the frozen `I_kz` value (±1/2) of table entry `k`; entries
/// for members of the subset and for the NV are ignored.
pub fn build_hamiltonian(
    subset: &[usize],
    table: &CouplingTable,
    meanfield: &[f64],
    dimension_cap: usize,
) -> Result<EffectiveHamiltonian> {
    let n = table.len();
    if meanfield.len() != n {
        return Err(Error::InvalidInput(format!(
            "mean-field vector has {} entries, table has {n}",
            meanfield.len()
        )));
    }
    let mut inside = vec![false; n];
    for &s in subset {
        if s >= n || inside[s] {
            return Err(Error::InvalidInput(format!(
                "invalid or repeated subset index {s}"
            )));
        }
        inside[s] = true;
    }
    if subset.len() >= usize::BITS as usize - 1 || (1usize << subset.len()) > dimension_cap {
        return Err(Error::Capacity {
            dim: 1usize
                .checked_shl(subset.len() as u32)
                .unwrap_or(usize::MAX),
            cap: dimension_cap,
        });
    }

    let mut ising_terms = Vec::new();
    let mut flipflop_terms = Vec::new();
    for (p, &a) in subset.iter().enumerate() {
        for (q, &b) in subset.iter().enumerate().skip(p + 1) {
            let j = table.j(a, b);
            ising_terms.push((p, q, j));
            if table.flipflop_allowed(a, b) {
                flipflop_terms.push((p, q, -0.25 * j));
            }
        }
    }
    let static_fields = subset
        .iter()
        .map(|&a| {
            table
                .row(a)
                .iter()
                .enumerate()
                .skip(1)
                .filter(|&(k, _)| !inside[k])
                .map(|(k, &j)| j * meanfield[k])
                .sum()
        })
        .collect();
    let labels = subset
        .iter()
        .map(|&a| if a == 0 { NV_LABEL } else { table.label(a) })
        .collect();
    Ok(EffectiveHamiltonian {
        subset: subset.to_vec(),
        ising_terms,
        flipflop_terms,
        static_fields,
        labels,
    })
}
