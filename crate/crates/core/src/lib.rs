//! Digital twin of a four-channel piezoresistive whisker flow sensor.
//!
//! The crate is organised along the measurement chain:
//!
//! - [`flowfield`]: velocity field of an oscillating rigid sphere (dipole source).
//! - [`sensor_model`]: flow or tip force to gauge resistance, quarter-bridge
//!   voltage, and seeded simulation of the bench and tank experiments.
//! - [`dsp`]: rational resampling, segmentation, windowed amplitude spectra
//!   and interpolated peak extraction.
//! - [`calibration`]: linear calibration fits, limit of detection, cyclic drift
//!   and frequency-tracking statistics.
//! - [`localization`]: amplitude forward model and inversion for source
//!   distance, transverse offset and dominant flow axis.
//!
//! Channel numbering follows the hardware: channels 1 and 3 sit on the
//! principal bending axis `e1`, channels 2 and 4 on the orthogonal axis `e2`.
//! Arrays are zero-indexed, so channel `k` lives at index `k - 1`.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod dsp;
mod error;
pub mod flowfield;
pub mod localization;
pub mod lsq;
pub mod record;
pub mod sensor_model;

pub use error::{Error, Result};
pub use record::{RecordMeta, SignalUnit, TimeSeriesRecord};

/// Number of strain-gauge channels on the sensor base.
pub const CHANNELS: usize = 4;
