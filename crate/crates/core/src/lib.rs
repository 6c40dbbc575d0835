//! Learning evolution PDEs together with their discretisations.
//!
//! A model stacks forward-Euler blocks `U ← U + δt·F(D U)`, where `D` is a
//! bank of moment-constrained convolution filters and `F` a symbolic network
//! whose function can be read back as an explicit polynomial.

pub mod config;
pub mod diff;
pub mod error;
pub mod grid;
pub mod io;
pub mod loss;
pub mod model;
pub mod moments;
pub mod optim;
pub mod report;
pub mod simulator;
pub mod symnet;
pub mod trainer;

pub use error::{Error, Result};
pub use grid::{Field, Grid, Kernel, State};
pub use model::{ModelSpec, PdeNetModel};
pub use simulator::{PdeSpec, SystemKind, TrajectorySet};
