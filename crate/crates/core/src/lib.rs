// SPDX-License-Identifier: Apache-2.0

//! Fault impact probability (FIP) toolkit for gate-level sequential circuits.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod fault_sim;
pub mod netlist;
pub mod provenance;
pub mod stgcn;
pub mod stgraph;
pub mod testability;
pub mod tpi;
pub mod trainer;

pub use error::{Error, Result};
