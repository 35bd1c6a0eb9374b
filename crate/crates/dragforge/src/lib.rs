//! Derivative-based pulse shaping for frequency-selective quantum control.
//!
//! Constructs DRAG-family control waveforms that suppress off-resonant
//! transitions (crosstalk, leakage ladders, counter-rotating sidebands) and
//! verifies them by direct time-ordered propagation of the driven system.
//!
//! Natural units throughout: `hbar = 1`, frequencies in angular units, time
//! in inverse-frequency units.

pub mod envelope;
pub mod experiments;
pub mod jet;
pub mod metrics;
pub mod models;
pub mod propagator;
pub mod quad;
pub mod shaping;
pub mod spectrum;

mod error;

pub use error::DragError;

pub type Result<T> = std::result::Result<T, DragError>;
