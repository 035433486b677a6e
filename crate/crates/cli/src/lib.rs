//! Library surface of the experiment runner, kept separate from the binary
//! so integration tests can drive runs directly.

pub mod compare;
pub mod config;
pub mod runner;
pub mod svg;
