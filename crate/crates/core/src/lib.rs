//! Simulation of an inverted pendulum on a horizontally accelerated pivot
//! with Coulomb friction in the hinge, together with a shooting procedure
//! that finds initial conditions whose motion never falls.

pub mod cli;
pub mod fingerprint;
pub mod integrator;
pub mod model;
pub mod output;
pub mod scenario;
pub mod verification;
pub mod wazewski;
