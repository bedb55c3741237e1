//! Spin operators, secular dipolar Hamiltonians and Hahn-echo evolution for
//! subsets of `{NV} ∪ bath`.
//!
//! Index 0 of a [`CouplingTable`] is always the NV electron spin. The NV is
//! reduced to the two-level subspace `{|0⟩, |−1⟩}` with `I0z = diag(0, −1)`.
//! Within a subset, basis bit `1` means bath spin up (`+1/2`) or NV in `|0⟩`,
//! bit `0` means bath spin down (`−1/2`) or NV in `|−1⟩`; member `p` of the
//! subset maps to bit `p` of the basis index.

mod constants;
mod coupling;
mod echo;
mod hamiltonian;
mod kernel;

pub use constants::{dipolar_coupling, PhysicalConstants};
pub use coupling::{CouplingTable, NV_LABEL};
pub use echo::{hahn_echo_mx, hahn_echo_trace, BathState, NvConvention, DENSE_PROPAGATOR_CAP};
pub use hamiltonian::{build_hamiltonian, EffectiveHamiltonian, DEFAULT_DIMENSION_CAP};
pub use kernel::EchoKernel;

/// `I_z` eigenvalue of a member for basis bit `bit`.
#[inline]
pub(crate) fn z_value(is_nv: bool, bit: bool) -> f64 {
    match (is_nv, bit) {
        (true, true) => 0.0,
        (true, false) => -1.0,
        (false, true) => 0.5,
        (false, false) => -0.5,
    }
}
