//! Unsupervised audio source separation by guided reverse diffusion.
//!
//! Each source has its own score prior. Reverse diffusion runs per source,
//! and a reconstruction loss ties the summed clean estimates back to the
//! observed mixture.

pub mod error;
pub mod fixture;
pub mod guidance;
pub mod metrics;
pub mod prior;
pub mod schedule;
pub mod separator;
pub mod signal;
pub mod tfnet;
pub mod trace;

pub use error::{Error, Result};
pub use schedule::{NoiseSchedule, ScheduleParams};
