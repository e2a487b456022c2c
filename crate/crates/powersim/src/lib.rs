//! Desk-scale forced-oscillation simulator.
//!
//! Generators use the classical model (constant EMF behind transient
//! reactance), loads are constant impedances, and the network is reduced to
//! generator internal nodes before integrating the swing equations.
//!
//! The pipeline for one scenario is [`powerflow::solve_powerflow`] →
//! [`reduce::reduce_network`] → [`dynamics::integrate`];
//! [`scenario::generate_dataset`] repeats it over randomised draws and
//! produces labelled training and testing sets.

pub mod dynamics;
pub mod error;
pub mod grid;
pub mod powerflow;
pub mod reduce;
pub mod scenario;

pub use error::{Result, SimError};
pub use grid::GridModel;
pub use scenario::{generate_dataset, GeneratedData, ScenarioConfig};
