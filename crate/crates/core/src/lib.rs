//! Simulator of collective neutrino flavor oscillations in the extended
//! (non-axisymmetric) neutrino bulb model.
//!
//! Neutrinos are emitted half-isotropically from a sphere of radius `R`
//! and propagate along straight trajectories labelled by the emission
//! variable `u = sin^2(theta_0)` and the azimuthal angle `phi`. The flavor
//! state of every beam evolves in radius under a vacuum Hamiltonian plus
//! the self-coupling potential generated by all other beams, which makes
//! the problem a large ensemble of coupled nonlinear Schroedinger-type
//! ODEs.
//!
//! The crate mirrors a three-level parallel decomposition:
//! ranks (simulated in-process) own contiguous polar-angle ranges,
//! worker threads process angle chunks within a rank, and the energy loop
//! is the innermost, SIMD-friendly axis (amplitudes are stored as split
//! real/imaginary arrays). Moment reductions are performed in a fixed
//! chunk order so results are bitwise identical for any rank or thread
//! count.

// `!(x > 0.0)` is used deliberately so NaN fails validation; the
// indexed 0..3 loops walk two arrays in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod bench;
pub mod cli;
pub mod config;
pub mod grid;
pub mod hamiltonian;
pub mod integrator;
pub mod runner;
pub mod snapshot;
pub mod state;
pub mod topology;
pub mod validate;

mod error;

pub use error::{Error, Result};
