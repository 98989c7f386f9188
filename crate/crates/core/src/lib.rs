//! A desk-scale auto-tuning laboratory: synthetic tuning tasks measured on
//! simulated devices, a learned ranking cost model pretrained on one device
//! and adapted to another by lottery-ticket style parameter partitioning.

pub mod cli;
pub mod config;
pub mod controller;
pub mod data;
pub mod error;
pub mod lottery;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod search;
pub mod space;
pub mod tuner;

pub use error::{Error, Result};
