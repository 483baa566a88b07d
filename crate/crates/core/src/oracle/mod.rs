//! Brute-force cross-checks for the Fourier pricer: path simulation, Monte
//! Carlo cash-flow and European option estimates, and finite-difference
//! solvers on the same exercise dates.

mod fd;
mod simulate;

pub use fd::{cn_propagate, lattice_bermudan, LatticeSpec};
pub use simulate::{
    european_mc, independent_limit_transition, simulate_chain, simulate_dcf, simulate_ou,
    ChainPaths, McEstimate, OuPaths, SimConfig,
};
