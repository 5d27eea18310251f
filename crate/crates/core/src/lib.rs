//! Multi-lane macroscopic traffic on a line whose speed laws and number of
//! lanes change at `x = 0`.
//!
//! Each lane carries an LWR density `rho_j` driven by the flux `u v(u)` of its
//! side of the junction, and neighbouring lanes exchange vehicles at a rate
//! set by their velocity gap. The solver alternates a Godunov transport step
//! with an explicit lane-change step; [`diagnostics`] turns the discrete
//! properties of that scheme (bounds, conservation, entropy, time continuity,
//! local BV, L1 stability) into executable checks.

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod io;
pub mod model;
pub mod numerics;
pub mod solver;

pub use error::{Error, Result};
pub use grid::Grid;
pub use model::{FluxProfile, LaneTopology, Side, SideProfiles, SpeedLaw, VelocityConstants};
pub use numerics::{InterfaceKind, StateField};
pub use solver::{run, run_with, Numerics, Piece, PieceValue, RunOptions, RunResult, Scenario, Simulation};
