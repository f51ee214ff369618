//! Power allocation for energy-harvesting transmitters over parallel
//! Gaussian channels with arbitrary (finite or Gaussian) input distributions.
//!
//! The offline optimum ([`nda_solve`], [`fsa_solve`]) shares one water level
//! per epoch; each stream's power is the water level minus a
//! constellation-dependent mercury level. [`online_solve`] is the causal
//! counterpart.

mod allocation;
mod error;
pub mod evaluation;
mod offline;
mod online;
mod scenario;
pub mod signal;
mod waterflow;

pub use allocation::{Allocation, Epoch, RunStats};
pub use error::{Error, ErrorClass, Result};
pub use offline::{
    build_pools, directional_waterfilling, fsa_solve, kkt_verify, nda_solve, Check, EccOracle, KktReport, Pool,
};
pub use online::{detect_events, online_solve};
pub use scenario::{generate, Arrival, GainModel, GenerateParams, Scenario};
pub use waterflow::{classical_wf, mercury_level, power_at_level, solve_epoch, EpochProblem, EpochSolution};

/// Shortest round-trip decimal form of `x`, switching to exponent notation
/// outside `[1e-5, 1e16)`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) || !a.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}
