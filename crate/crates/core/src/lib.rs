//! Exact numerics for two spin ensembles coupled by the two-axis two-spin
//! countertwisting interaction `H = S1+ S2+ + S1- S2-`.
//!
//! The initial state `|N, N>` only ever populates equal-Fock pairs `|k, k>`,
//! so most routines work on the `N + 1` sector amplitudes. Full
//! `(N+1)^2`-dimensional representations exist for cross-checking.

pub mod analysis;
pub mod bell;
pub mod entanglement;
pub mod error;
pub mod evolution;
pub mod observables;
pub mod spin_core;
pub mod wigner;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
