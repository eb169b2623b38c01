//! Command-line front end: seeded runs, sweeps, reports, the live server
//! and the acceptance experiments.

pub mod acceptance;
pub mod commands;
