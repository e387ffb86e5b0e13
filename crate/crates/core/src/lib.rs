//! Dissipative dynamics of wedge disclinations in the unit disk.
//!
//! Positions and times are nondimensional: the disk has unit radius and time is scaled by
//! the mobility and elastic energy scale (see [`model::PhysicalScales`]).

pub mod flow;
pub mod geometry;
pub mod glide;
pub mod model;
pub mod ode;
pub mod pairlab;
pub mod scenarios;
pub mod tracefile;
pub mod verify;

pub use flow::{simulate, Event, EventKind, IntegratorSettings, Trace};
pub use geometry::Vec2;
pub use glide::{integrate_inclusion, GlideSet};
pub use model::{energy, total_force, Configuration, Disclination, FrankAngle};
