//! Global control Lyapunov functions computed pointwise.
//!
//! The value of an exit-time optimal control problem, whose target is a
//! sublevel set of a local CLF, concatenated with that local CLF gives a
//! global CLF on the domain of asymptotic null-controllability. This crate
//! evaluates it (and the related stabilizing control action) at individual
//! states by integrating Pontryagin characteristics, using a reverse-time
//! shooting problem to initialize a derivative-free costate search.
//!
//! Module map:
//! - [`system`]: control systems, box control sets, extremal controls
//! - [`numerics`]: Powell minimization, bisection, root bracketing
//! - [`integrator`]: Dormand–Prince 5(4) with dense output and events
//! - [`local_clf`]: quadratic/analytic local CLFs, Lyapunov/Riccati solvers, level search
//! - [`characteristics`]: Hamiltonian and forward/reverse characteristics
//! - [`shooting`]: reverse-time shooting for initial costate guesses
//! - [`value_eval`]: the per-state pipeline, grids, ball targets
//! - [`mpc`]: closed-loop sampled-data simulation with Itô noise
//! - [`report`]: CSV/JSON emission shared with the CLI

pub mod characteristics;
pub mod error;
pub mod integrator;
pub mod local_clf;
pub mod mpc;
pub mod numerics;
pub mod par;
pub mod report;
pub mod rng;
pub mod shooting;
pub mod system;
pub mod value_eval;

pub use error::{Error, Result};
