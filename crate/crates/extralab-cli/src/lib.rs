//! Library side of the benchmark CLI: configuration schema, suite runner,
//! and SVG plotting. The `extralab` binary is a thin command dispatcher
//! over these modules.

pub mod config;
pub mod suite;
pub mod svg;
