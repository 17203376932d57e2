//! Competitive multi-head reservoir computing for continual learning of
//! dynamical systems.
//!
//! A fixed random reservoir embeds trajectories; several linear readout heads
//! compete to predict the next state. Only the winning head is updated, via
//! additive ridge-regression statistics, so heads that specialised on earlier
//! environments are never overwritten. A jump in a head's prediction error
//! flags a new environment and recruits a fresh head.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod decimal;
pub mod dynsys;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod federated;
pub mod io;
pub mod multihead;
pub mod report;
pub mod reservoir;
pub mod seeds;

pub use error::{Error, Result};
