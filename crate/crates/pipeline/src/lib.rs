//! Batch analysis of emitter decay campaigns and the band-structure theory
//! chain behind them.

pub mod analysis;
pub mod config;
pub mod error;
pub mod ingest;
pub mod plot;
pub mod report;
pub mod synth;
pub mod theory;

pub use pcw_core;
