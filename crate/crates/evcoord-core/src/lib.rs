//! Core algorithms for network-aware EV charge/discharge coordination on an
//! unbalanced radial distribution feeder.
//!
//! The crate models the physical side (linearized power flow sensitivities,
//! transformer thermal response, per-EV battery feasibility) and the
//! coordination side (per-agent convex subproblems and a dual-consensus ADMM
//! routine that tolerates random agent dropouts and message losses). A
//! centralized solver for the same coupled problem is included as a reference
//! oracle.
//!
//! Everything here is `no_std + alloc`: pure computation, no IO. The
//! companion `evcoord` crate carries scenario files, CSV/JSON formats, and
//! the command-line interface.

#![cfg_attr(not(any(test, feature = "parallel")), no_std)]

extern crate alloc;

pub mod agent;
pub mod central;
pub mod commnet;
pub mod coupling;
pub mod engine;
pub mod feeder;
pub mod fleet;
pub mod linalg;
pub mod localqp;
pub mod problem;
pub mod thermal;
