//! Transduction from flow (or a directly applied tip force) to the four
//! digitized bridge voltages.
//!
//! The mechanics are lumped: the whole whisker/PDMS/gauge stack is described by
//! a 4×2 sensitivity matrix `K` [Ω/N] mapping the in-plane tip force
//! `(F1, F2)` to the resistance changes of the four gauges (`R = R0 + K·F`).
//! Each gauge sits in its own quarter bridge followed by an instrumentation
//! amplifier and a clamping ADC.

mod noise;
mod simulate;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::flowfield::FlowSample;
use crate::{Error, Result, CHANNELS};

pub use noise::AmbientNoise;
pub use simulate::{
    rig_point, simulate_dipole_trial, simulate_fatigue, simulate_static_sweep, static_force_grid, DipoleTrial,
    FatigueProtocol, FatigueRun, SensorModel, StaticReading,
};

/// Principal bending axis that each channel responds to (0 = `e1`, 1 = `e2`).
pub const PRINCIPAL_AXIS: [usize; CHANNELS] = [0, 1, 0, 1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WhiskerGeometry {
    /// Whisker length [m].
    pub length: f64,
    /// Whisker diameter [m].
    pub diameter: f64,
    /// Distance from the base to the point where the flow is sampled [m].
    pub sensing_point_offset: f64,
}

impl Default for WhiskerGeometry {
    fn default() -> Self {
        Self {
            length: 0.100,
            diameter: 0.005,
            sensing_point_offset: 0.100,
        }
    }
}

impl WhiskerGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::invalid("length", "must be positive"));
        }
        if !(self.diameter > 0.0 && self.diameter.is_finite()) {
            return Err(Error::invalid("diameter", "must be positive"));
        }
        if !(self.sensing_point_offset > 0.0 && self.sensing_point_offset <= self.length) {
            return Err(Error::invalid("sensing_point_offset", "must lie in (0, length]"));
        }
        Ok(())
    }
}

/// Per-channel linear transduction constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelCalibration {
    /// Baseline gauge resistance `R0` [Ω].
    pub r0: f64,
    /// Rows are channels 1..4, columns the `e1`/`e2` force components [Ω/N].
    pub sensitivity: [[f64; 2]; CHANNELS],
    /// Resistance noise standard deviation [Ω].
    pub sigma_r: f64,
}

impl Default for ChannelCalibration {
    fn default() -> Self {
        // Column 1 is the measured bench calibration. Column 2 was never
        // measured; it mirrors column 1 around the mean principal magnitude.
        Self {
            r0: 1050.0,
            sensitivity: [[483.63, -10.34], [-10.34, 505.37], [-527.10, -3.68], [-3.68, -505.37]],
            sigma_r: 0.044,
        }
    }
}

impl ChannelCalibration {
    pub fn validate(&self) -> Result<()> {
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return Err(Error::invalid("r0", "must be positive"));
        }
        if !(self.sigma_r >= 0.0 && self.sigma_r.is_finite()) {
            return Err(Error::invalid("sigma_r", "must be non-negative"));
        }
        let k = &self.sensitivity;
        if k.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sensitivity", "entries must be finite"));
        }
        if k[0][0] * k[2][0] >= 0.0 {
            return Err(Error::invalid(
                "sensitivity",
                "channels 1 and 3 must have opposite-sign e1 sensitivity",
            ));
        }
        if k[1][1] * k[3][1] >= 0.0 {
            return Err(Error::invalid(
                "sensitivity",
                "channels 2 and 4 must have opposite-sign e2 sensitivity",
            ));
        }
        let min_principal = self.principal_magnitudes().into_iter().fold(f64::INFINITY, f64::min);
        for (ch, row) in k.iter().enumerate() {
            let off = row[1 - PRINCIPAL_AXIS[ch]].abs();
            if off >= 0.05 * min_principal {
                return Err(Error::invalid(
                    "sensitivity",
                    format!("channel {} off-axis entry {off} exceeds 5% of {min_principal}", ch + 1),
                ));
            }
        }
        Ok(())
    }

    /// `|K[ch][principal]|` for each channel.
    pub fn principal_magnitudes(&self) -> [f64; CHANNELS] {
        std::array::from_fn(|ch| self.sensitivity[ch][PRINCIPAL_AXIS[ch]].abs())
    }
}

/// Bridge excitation, amplifier and digitizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutChain {
    /// Bridge excitation [V].
    pub excitation_voltage: f64,
    pub amplifier_gain: f64,
    /// Digitizer rate [Hz].
    pub sample_rate: f64,
    /// Symmetric ADC input range [V].
    pub adc_saturation: f64,
}

impl ReadoutChain {
    /// Bench configuration used for the static and cyclic bending tests.
    pub fn bench() -> Self {
        Self {
            excitation_voltage: 5.0,
            amplifier_gain: 23.5,
            sample_rate: 6250.0,
            adc_saturation: 10.0,
        }
    }

    /// Tank configuration used for the dipole experiments.
    pub fn underwater() -> Self {
        Self {
            amplifier_gain: 166.0,
            ..Self::bench()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("excitation_voltage", self.excitation_voltage),
            ("amplifier_gain", self.amplifier_gain),
            ("sample_rate", self.sample_rate),
            ("adc_saturation", self.adc_saturation),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(())
    }

    /// Rejects sampling that gives fewer than 20 samples per period of `max_frequency`.
    pub fn check_oversampling(&self, max_frequency: f64) -> Result<()> {
        if self.sample_rate < 20.0 * max_frequency {
            return Err(Error::invalid(
                "sample_rate",
                format!(
                    "{} Hz is below 20x the highest simulated frequency {max_frequency} Hz",
                    self.sample_rate
                ),
            ));
        }
        Ok(())
    }

    /// Small-signal bridge-plus-amplifier gain `gain·Vex/(4·R0)` [V/Ω].
    pub fn small_signal_gain(&self, r0: f64) -> f64 {
        self.amplifier_gain * self.excitation_voltage / (4.0 * r0)
    }
}

/// Lumped, quasi-steady flow-to-force transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DragModel {
    /// Force per unit in-plane flow speed [N/(m/s)].
    pub linear_drag_gain: f64,
    /// Fraction of the orthogonal force component that reaches each axis a
    /// quarter period late (housing deformation under water). Zero disables it.
    #[serde(default)]
    pub quadrature_coupling: f64,
}

impl DragModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.linear_drag_gain > 0.0 && self.linear_drag_gain.is_finite()) {
            return Err(Error::invalid("linear_drag_gain", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.quadrature_coupling) {
            return Err(Error::invalid("quadrature_coupling", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Orthonormal sensor frame: whisker axis plus the two in-plane bending axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFrame {
    pub whisker_axis: Vector3<f64>,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
}

impl SensorFrame {
    /// Frame with the given whisker axis; `e1` is the component of `e1_hint`
    /// normal to the axis and `e2 = axis × e1`.
    pub fn new(whisker_axis: Vector3<f64>, e1_hint: Vector3<f64>) -> Result<Self> {
        let axis = whisker_axis
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("whisker_axis", "must be non-zero"))?;
        let e1 = (e1_hint - axis * axis.dot(&e1_hint))
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("e1", "must not be parallel to the whisker axis"))?;
        let e2 = axis.cross(&e1);
        Ok(Self {
            whisker_axis: axis,
            e1,
            e2,
        })
    }

    /// Tank frame: whisker along `z`, channels 1/3 along the longitudinal
    /// axis `x`, channels 2/4 along the transverse axis `y`.
    pub fn rig() -> Self {
        Self {
            whisker_axis: Vector3::z(),
            e1: Vector3::x(),
            e2: Vector3::y(),
        }
    }

    /// In-plane components `(v·e1, v·e2)`.
    pub fn project(&self, v: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(v.dot(&self.e1), v.dot(&self.e2))
    }
}

/// Direction of the source's reciprocating motion in the tank frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveAxis {
    /// Along the source–sensor line (`x`).
    Longitudinal,
    /// Orthogonal to it (`y`).
    Transverse,
}

impl DriveAxis {
    pub const ALL: [DriveAxis; 2] = [DriveAxis::Longitudinal, DriveAxis::Transverse];

    pub fn unit(self) -> Vector3<f64> {
        match self {
            DriveAxis::Longitudinal => Vector3::x(),
            DriveAxis::Transverse => Vector3::y(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DriveAxis::Longitudinal => "longitudinal",
            DriveAxis::Transverse => "transverse",
        }
    }
}

/// Noise-free resistance changes `K·F` [Ω].
pub fn force_to_delta_r(force: &Vector2<f64>, cal: &ChannelCalibration) -> [f64; CHANNELS] {
    std::array::from_fn(|ch| {
        let k = &cal.sensitivity[ch];
        k[0] * force.x + k[1] * force.y
    })
}

/// Digitized quarter-bridge output of one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeReading {
    pub volts: f64,
    pub saturated: bool,
}

fn check_resistance(delta_r: f64, r0: f64) -> Result<()> {
    if !delta_r.is_finite() || r0 + delta_r <= 0.0 {
        return Err(Error::Domain(format!(
            "non-physical gauge resistance R0 + dR = {r0} + {delta_r}"
        )));
    }
    Ok(())
}

/// Unclamped amplifier output `gain·Vex·ΔR / (4·R0 + 2·ΔR)`.
pub(crate) fn bridge_unclamped(delta_r: f64, chain: &ReadoutChain, r0: f64) -> f64 {
    chain.amplifier_gain * chain.excitation_voltage * delta_r / (4.0 * r0 + 2.0 * delta_r)
}

pub(crate) fn clamp_adc(volts: f64, chain: &ReadoutChain) -> BridgeReading {
    let lim = chain.adc_saturation;
    BridgeReading {
        volts: volts.clamp(-lim, lim),
        saturated: volts.abs() >= lim,
    }
}

/// Quarter-bridge voltage for a gauge resistance change, clamped to the ADC range.
pub fn bridge_output(delta_r: f64, chain: &ReadoutChain, cal: &ChannelCalibration) -> Result<BridgeReading> {
    check_resistance(delta_r, cal.r0)?;
    Ok(clamp_adc(bridge_unclamped(delta_r, chain, cal.r0), chain))
}

/// Inverts [`bridge_output`] for an unsaturated reading.
pub fn delta_r_from_bridge(volts: f64, chain: &ReadoutChain, r0: f64) -> Result<f64> {
    let full = chain.amplifier_gain * chain.excitation_voltage;
    let denom = full - 2.0 * volts;
    if denom <= 0.0 || !volts.is_finite() {
        return Err(Error::Domain(format!("bridge voltage {volts} V is not invertible")));
    }
    Ok(4.0 * r0 * volts / denom)
}

/// Drag force on the whisker from the flow component normal to its axis,
/// expressed in the sensor `(e1, e2)` frame.
pub fn flow_to_tip_force(sample: &FlowSample, drag: &DragModel, frame: &SensorFrame) -> Vector2<f64> {
    frame.project(&sample.velocity) * drag.linear_drag_gain
}
