//! Optimal control of a plant driven by a local controller with full state
//! access and a remote controller that only receives the state packets that
//! survive an i.i.d. erasure channel.
//!
//! The crate solves the coupled Riccati recursions for the pair of
//! controllers (finite horizon and stationary), checks mean-square
//! stabilizability and boundedness, and validates the closed-form costs by
//! seeded Monte Carlo simulation.

pub mod analysis;
pub mod cli;
pub mod controller;
pub mod estimator;
pub mod linalg;
pub mod model;
pub mod riccati;
pub mod simulate;

pub use controller::{GainSchedule, StageGain};
pub use model::NcsModel;
pub use riccati::{FiniteHorizonSolution, StationaryGains};
pub use simulate::{Aggregates, SimConfig, Trace};
