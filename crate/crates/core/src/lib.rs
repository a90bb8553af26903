//! Hierarchical graph forecasting on a periodic latitude-longitude grid.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod config;
pub mod cost;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod hier;
pub mod interaction;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod series;

pub use error::{Error, Result};
