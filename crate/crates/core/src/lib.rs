//! Delay-Doppler OTFS simulation and estimation-theory toolkit.
//!
//! The crate models uplink multi-user OTFS on an `N x M` delay-Doppler grid
//! with embedded pilots, samples sparse channels from exponential
//! power-delay / uniform power-Doppler priors, estimates them with a
//! threshold detector, and evaluates the posterior Cramér-Rao bound (PCRB)
//! for each user. The [`allocator`] splits a total pilot power budget to
//! minimise the average normalised PCRB, and [`harness`] drives the Monte
//! Carlo experiments that compare estimator NMSE against the bound.
//!
//! ```
//! use otfs_pcrb::{OtfsConfig, UserProfile, DDIndex};
//! use otfs_pcrb::pcrb::phi;
//!
//! let profile = UserProfile::new(1, 0, 4, 3, DDIndex::new(16, 2), 1.0e4);
//! let value = phi(&profile, 1.0);
//! assert!((value.value - 6.0 * (4f64.exp() - 1.0) / 4.0).abs() < 1e-9);
//! ```

pub mod allocator;
pub mod channel;
pub mod config;
pub mod error;
pub mod estimator;
pub mod grid;
pub mod harness;
pub mod pcrb;
pub mod rng;
pub mod waveform;

pub use num_complex::Complex64;

pub use channel::{ChannelPath, ChannelRealization};
pub use config::{wrap_index, DDIndex, OtfsConfig, UserProfile};
pub use error::{Error, Result};
pub use estimator::{ChannelEstimate, ThresholdRule};
pub use grid::{DDGrid, TfGrid};
pub use rng::{spawn_rng, Purpose, RandomStream, StreamId};
pub use waveform::{Frame, SymplecticFft};

/// Converts decibels to a linear power ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear power ratio to decibels.
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}
