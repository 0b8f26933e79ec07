//! Neural state estimation for power distribution grids.
//!
//! The crate covers the whole benchmark pipeline: grid description and
//! switch fusion ([`grid_model`]), ground-truth generation by AC power flow
//! ([`powerflow`]), observability and topology scenarios ([`scenario_gen`]),
//! a small reverse-mode autodiff engine ([`nn_core`]), the four message
//! passing architectures ([`gnn`]), heat-diffusion feature propagation
//! ([`feature_prop`]) and the grid-search harness ([`bench`]).

pub mod bench;
pub mod cli;
pub mod exec;
pub mod feature_prop;
pub mod gnn;
pub mod grid_model;
pub mod nn_core;
pub mod powerflow;
pub mod scenario_gen;
