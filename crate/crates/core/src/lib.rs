//! Uplink cell-free massive MIMO OFDM simulator with oscillator phase noise.

pub mod combining;
pub mod config;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod network;
pub mod ofdm;
pub mod phase_noise;
pub mod rng;
pub mod se;
pub mod validate;

pub use error::{Result, SimError};
