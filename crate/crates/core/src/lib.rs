//! Simulation-based optimal control of algal growth in open-channel raceway
//! ponds.
//!
//! The crate couples a free-surface flow solver driven by a paddlewheel body
//! force with an eight-species nutrient/algae/oxygen transport model, wraps
//! the coupled run into a penalized objective of the initial water height and
//! the paddlewheel angular speed, and minimizes it with Nelder–Mead.

pub mod error;
pub mod geometry;
pub mod hydro;
pub mod bio;
pub mod reactor;
pub mod objective;
pub mod optimizer;
pub mod config;
pub mod io;
pub mod cli;
