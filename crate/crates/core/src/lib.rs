//! Adaptive social learning over strongly connected networks.

pub mod graph;
pub mod learning;
pub mod likelihood;
pub mod mc;
pub mod netstats;
pub mod quadrature;
pub mod rng;
pub mod scenario;
pub mod series;
pub mod stats;
