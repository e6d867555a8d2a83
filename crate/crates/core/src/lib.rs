//! Simulator for hybrid PON/xDSL access networks with drop-point buffering.

pub mod cli;
pub mod dba;
pub mod engine;
pub mod flowcontrol;
pub mod model;
pub mod ordering;
pub mod schedule;
pub mod time;
pub mod traffic;
