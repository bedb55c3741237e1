//! Hahn-echo decoherence of an NV-center electron spin in dipolar spin baths.
//!
//! The crate implements the partition cluster-correlation expansion pCCE(N, K):
//! the bath is split into equal-size, spatially compact partitions by a
//! constrained k-means, and the cluster-correlation expansion is applied to
//! those partitions instead of single spins. An exact engine (dense spectral
//! propagation or second-order Trotter with canonical typicality) serves as the
//! reference for small baths, and the analysis module extracts the
//! stretched-exponential parameters `(p, T2)` from decay curves.
//!
//! Units: couplings and fields in MHz, times in microseconds, lengths in nm.

pub mod analysis;
pub mod bath;
pub mod cce;
pub mod curve;
pub mod error;
pub mod exact;
pub mod linalg;
pub mod partitioning;
pub mod rng;
pub mod spin_algebra;

pub use error::{Error, Result};
