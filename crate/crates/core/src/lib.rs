//! Multiclass spatial birth-and-death (SBD) model of a bandwidth-partitioned
//! wireless network on a square torus.
//!
//! Users are receiver/transmitter dipoles. Each user transmits on a subset
//! (its *class*) of `K` orthogonal bands and is slowed down by the shot-noise
//! interference of transmitters sharing at least one band. The crate provides:
//!
//! * the model primitives ([`geometry`], [`pathloss`], [`profile`]) and the
//!   closed-form stability quantities ([`stability`], [`combinatorics`]);
//! * deterministic quadrature for the torus integrals ([`quadrature`]);
//! * an exact event-driven simulator and a pathwise monotone coupling ([`sim`]);
//! * the tessellated bounding chains ([`lattice`]) and their fluid model ([`fluid`]);
//! * stationary-density fixed points ([`heuristics`]) and trajectory
//!   post-processing ([`stats`]).
//!
//! The crate is `no_std` and only needs `alloc`.
#![cfg_attr(not(test), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod combinatorics;
pub mod error;
pub mod fluid;
pub mod geometry;
pub mod heuristics;
pub mod lattice;
pub(crate) mod math;
pub mod pathloss;
pub mod profile;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod stability;
pub mod stats;

pub use error::{Error, Result};
pub use geometry::{torus_distance, Point, TorusDomain};
pub use pathloss::PathLoss;
pub use profile::{ClassProfile, ClassSet, SymmetricProfile};
