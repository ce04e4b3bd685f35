//! Discrete stochastic epidemics on graphs.
//!
//! Individuals live on the nodes of a graph and move between them along a
//! reversible Markov chain whose stationary law is prescribed per node
//! ([`graph`]). Inside each node the epidemic advances as a chain-binomial
//! SIR (or SEI) process ([`sim`]). The conditional expectation of one step is
//! available in closed form and its iterates propagate expected states
//! ([`forecast`]); letting the step length go to zero yields Laplacian-coupled
//! SIR differential systems ([`ode`]). [`verify`] checks the variance and
//! concentration bounds of the chain by Monte Carlo, and [`calibrate`] fits
//! model parameters to active-case time series.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, the command
//! line and thread fan-out live in the `epigraph` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod calibrate;
pub mod error;
pub mod forecast;
pub mod graph;
pub mod matrix;
pub mod ode;
pub mod rng;
pub mod series;
pub mod sim;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{GraphSpec, GroupGraph, Laplacian, TransitionMatrix};
pub use matrix::Matrix;
pub use series::{Compartment, TimeSeries};
