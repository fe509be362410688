//! Monte Carlo harness for the distributed robust filters: scenario
//! configuration, simulation, metrics and report writing.

pub mod config;
pub mod metrics;
pub mod report;
pub mod runner;
