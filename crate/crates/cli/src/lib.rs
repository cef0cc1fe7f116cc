//! Command-line and HTTP front ends for fairaudit experiments.

pub mod numfmt;
pub mod service;
