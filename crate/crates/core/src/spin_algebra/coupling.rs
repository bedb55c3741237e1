use nalgebra::Vector3;

use super::constants::{dipolar_coupling, PhysicalConstants};
use crate::Result;

/// Subgroup label carried by the NV entry (index 0).
pub const NV_LABEL: u8 = u8::MAX;

/// Pairwise dipolar constants over `{NV} ∪ bath`; index 0 is the NV.
#[derive(Debug, Clone)]
pub struct CouplingTable {
    n: usize,
    j: Vec<f64>,
    labels: Vec<u8>,
    flipflops_enabled: bool,
}

impl CouplingTable {
    /// `positions` are bath-spin positions relative to the NV at the origin.
    pub fn from_geometry(
        positions: &[Vector3<f64>],
        labels: &[u8],
        constants: &PhysicalConstants,
    ) -> Result<Self> {
        assert_eq!(positions.len(), labels.len());
        let n = positions.len() + 1;
        let mut j = vec![0.0; n * n];
        let origin = Vector3::zeros();
        let pos = |i: usize| if i == 0 { &origin } else { &positions[i - 1] };
        for a in 0..n {
            for b in (a + 1)..n {
                let v = dipolar_coupling(&(pos(b) - pos(a)), constants)?;
                j[a * n + b] = v;
                j[b * n + a] = v;
            }
        }
        let mut all_labels = Vec::with_capacity(n);
        all_labels.push(NV_LABEL);
        all_labels.extend_from_slice(labels);
        Ok(Self {
            n,
            j,
            labels: all_labels,
            flipflops_enabled: true,
        })
    }

    /// Builds a table from explicit couplings (row-major, `(n+1)²`, index 0 = NV).
    pub fn from_matrix(j: Vec<f64>, labels: &[u8]) -> Self {
        let n = labels.len() + 1;
        assert_eq!(j.len(), n * n, "coupling matrix must be (n+1)²");
        let mut all_labels = vec![NV_LABEL];
        all_labels.extend_from_slice(labels);
        let mut t = Self {
            n,
            j,
            labels: all_labels,
            flipflops_enabled: true,
        };
        for a in 0..n {
            t.j[a * n + a] = 0.0;
            for b in (a + 1)..n {
                assert!(
                    t.j[a * n + b] == t.j[b * n + a],
                    "coupling matrix must be symmetric"
                );
            }
        }
        t
    }

    /// Number of entries including the NV.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bath_len(&self) -> usize {
        self.n - 1
    }

    #[inline]
    pub fn j(&self, a: usize, b: usize) -> f64 {
        self.j[a * self.n + b]
    }

    #[inline]
    pub fn row(&self, a: usize) -> &[f64] {
        &self.j[a * self.n..(a + 1) * self.n]
    }

    #[inline]
    pub fn label(&self, a: usize) -> u8 {
        self.labels[a]
    }

    /// Flip-flops happen only between bath spins of the same subgroup.
    #[inline]
    pub fn flipflop_allowed(&self, a: usize, b: usize) -> bool {
        self.flipflops_enabled && a != 0 && b != 0 && a != b && self.labels[a] == self.labels[b]
    }

    pub fn flipflops_enabled(&self) -> bool {
        self.flipflops_enabled
    }

    /// Copy with every flip-flop term switched off (pure Ising bath).
    pub fn without_flipflops(&self) -> Self {
        Self {
            flipflops_enabled: false,
            ..self.clone()
        }
    }

    /// Largest |J| over bath-bath pairs.
    pub fn max_bath_coupling(&self) -> f64 {
        let mut m = 0.0f64;
        for a in 1..self.n {
            for b in (a + 1)..self.n {
                m = m.max(self.j(a, b).abs());
            }
        }
        m
    }
}
