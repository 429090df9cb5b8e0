//! Scenario loading, result emission, and orchestration around
//! [`evcoord_core`]: everything that touches the filesystem lives here.
//!
//! A scenario is one JSON file referencing CSV data files (fleet, prices,
//! baseline load, thermal disturbances, optionally an explicit communication
//! graph) plus a feeder description JSON. [`scenario::load`] validates the
//! bundle and assembles the core problem objects; [`run`] drives the
//! distributed routine, the centralized oracle, the price-based/network-aware
//! case comparison, and failure-parameter sweeps, emitting plot-ready CSV
//! traces and a JSON metadata echo.

pub mod outputs;
pub mod run;
pub mod scenario;
