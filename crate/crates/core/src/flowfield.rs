//! Potential-flow velocity field of a periodically oscillating rigid sphere.
//!
//! For a sphere of radius `a` oscillating along the unit axis `u` with
//! velocity `U cos(2πft + φ)`, the quasi-static doublet field at offset `r`
//! from the sphere center is
//!
//! ```text
//! v(r, t) = a³ / (2|r|³) · (3(u·r̂)r̂ − u) · U cos(2πft + φ)
//! ```
//!
//! The direction of `v` at a fixed point does not change over time; only its
//! signed magnitude oscillates. Viscosity, wall reflections and wake effects
//! are not modelled.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const AXIS_NORM_TOL: f64 = 1e-12;

/// Oscillating-sphere flow source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipoleSource {
    /// Sphere center [m].
    pub center: Vector3<f64>,
    /// Unit vector of the reciprocating motion.
    pub drive_axis: Vector3<f64>,
    /// Sphere radius `a` [m].
    pub radius: f64,
    /// Velocity amplitude `U` [m/s].
    pub velocity_amplitude: f64,
    /// Drive frequency [Hz].
    pub frequency: f64,
    /// Drive phase [rad].
    pub phase: f64,
}

impl DipoleSource {
    /// Builds a validated source. `drive_axis` is normalised; it must be non-zero.
    pub fn new(
        center: Vector3<f64>,
        drive_axis: Vector3<f64>,
        radius: f64,
        velocity_amplitude: f64,
        frequency: f64,
        phase: f64,
    ) -> Result<Self> {
        let norm = drive_axis.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::invalid("drive_axis", "must be a finite non-zero vector"));
        }
        let src = Self {
            center,
            drive_axis: drive_axis / norm,
            radius,
            velocity_amplitude,
            frequency,
            phase,
        };
        src.validate()?;
        Ok(src)
    }

    pub fn validate(&self) -> Result<()> {
        if (self.drive_axis.norm() - 1.0).abs() > AXIS_NORM_TOL {
            return Err(Error::invalid("drive_axis", "must be a unit vector"));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::invalid("radius", "must be positive"));
        }
        if !(self.velocity_amplitude.is_finite() && self.velocity_amplitude >= 0.0) {
            return Err(Error::invalid("velocity_amplitude", "must be non-negative"));
        }
        if !(self.frequency.is_finite() && self.frequency > 0.0) {
            return Err(Error::invalid("frequency", "must be positive"));
        }
        if !self.phase.is_finite() {
            return Err(Error::invalid("phase", "must be finite"));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("center", "must be finite"));
        }
        Ok(())
    }

    /// Copy of this source with a different velocity amplitude.
    pub fn with_velocity_amplitude(&self, velocity_amplitude: f64) -> Self {
        Self {
            velocity_amplitude,
            ..self.clone()
        }
    }

    /// Offset from the center and its length, rejecting points on or inside the sphere.
    fn offset(&self, point: &Vector3<f64>) -> Result<(Vector3<f64>, f64)> {
        let r = point - self.center;
        let dist = r.norm();
        if !dist.is_finite() {
            return Err(Error::Domain("evaluation point must be finite".into()));
        }
        if dist <= self.radius {
            return Err(Error::InsideSource {
                point: [point.x, point.y, point.z],
                distance: dist,
                radius: self.radius,
            });
        }
        Ok((r, dist))
    }

    /// Velocity vector at the instant of peak drive, `v(r, t)` with `cos(...) = 1`.
    pub fn velocity_amplitude_at(&self, point: &Vector3<f64>) -> Result<Vector3<f64>> {
        let (r, dist) = self.offset(point)?;
        let r_hat = r / dist;
        let u = &self.drive_axis;
        let shape = r_hat * (3.0 * u.dot(&r_hat)) - u;
        let scale = self.radius.powi(3) / (2.0 * dist.powi(3));
        Ok(shape * (scale * self.velocity_amplitude))
    }

    /// Drive waveform `cos(2πft + φ)`.
    pub fn drive(&self, t: f64) -> f64 {
        (2.0 * PI * self.frequency * t + self.phase).cos()
    }
}

/// One evaluation of the flow field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSample {
    pub velocity: Vector3<f64>,
    pub point: Vector3<f64>,
    pub time: f64,
}

/// Instantaneous dipole velocity at `point` and time `t`.
pub fn dipole_velocity(src: &DipoleSource, point: &Vector3<f64>, t: f64) -> Result<FlowSample> {
    if !t.is_finite() {
        return Err(Error::Domain("time must be finite".into()));
    }
    let amplitude = src.velocity_amplitude_at(point)?;
    Ok(FlowSample {
        velocity: amplitude * src.drive(t),
        point: *point,
        time: t,
    })
}

/// Maximum speed over one drive period at `point`.
pub fn peak_speed_envelope(src: &DipoleSource, point: &Vector3<f64>) -> Result<f64> {
    Ok(src.velocity_amplitude_at(point)?.norm())
}
