//! Staged low-voltage ride-through simulation of a DFIG behind a grid
//! reactance, and transient synchronization stability assessment of its PLL
//! by equal areas, basins of attraction and direct simulation.

pub mod boa;
pub mod cct;
#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod eac;
pub mod error;
pub mod gse;
pub mod integrate;
pub mod model;
pub mod params;
pub mod report;
pub mod sim;
pub mod study;

pub use error::ModelError;
pub use params::SystemParams;
pub use sim::{simulate, Scenario};
