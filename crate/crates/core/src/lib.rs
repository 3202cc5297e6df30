//! Hybrid LQR and ensemble soft actor-critic control of a planar wheeled
//! inverted pendulum.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod fusion;
pub mod lqr;
pub mod nn;
pub mod sac;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};
