use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    bridge_output, bridge_unclamped, clamp_adc, delta_r_from_bridge, flow_to_tip_force, force_to_delta_r, AmbientNoise,
    ChannelCalibration, DragModel, ReadoutChain, SensorFrame, WhiskerGeometry,
};
use crate::flowfield::{dipole_velocity, DipoleSource};
use crate::{Error, RecordMeta, Result, SignalUnit, TimeSeriesRecord, CHANNELS};

fn gaussian(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::invalid("sigma_r", e.to_string()))
}

/// Everything between the flow at the whisker and the digitized voltages.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub geometry: WhiskerGeometry,
    pub calibration: ChannelCalibration,
    pub readout: ReadoutChain,
    pub drag: DragModel,
    pub ambient: AmbientNoise,
    pub frame: SensorFrame,
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.calibration.validate()?;
        self.readout.validate()?;
        self.drag.validate()?;
        self.ambient.validate()
    }

    /// Same model with all stochastic terms switched off.
    pub fn noise_free(&self) -> Self {
        let mut m = self.clone();
        m.calibration.sigma_r = 0.0;
        m.ambient.rms = 0.0;
        m
    }

    /// Tip force at time `t`, including the quadrature housing coupling.
    fn tip_force(&self, src: &DipoleSource, point: &Vector3<f64>, t: f64) -> Result<Vector2<f64>> {
        let direct = flow_to_tip_force(&dipole_velocity(src, point, t)?, &self.drag, &self.frame);
        let c = self.drag.quadrature_coupling;
        if c == 0.0 {
            return Ok(direct);
        }
        let quarter = 0.25 / src.frequency;
        let late = flow_to_tip_force(&dipole_velocity(src, point, t - quarter)?, &self.drag, &self.frame);
        Ok(direct + Vector2::new(late.y, late.x) * c)
    }
}

/// Sensing point for a source–sensor geometry `(L, T)` in the tank frame.
///
/// `L` runs along `x` and `T` along `y`; the whisker stands along `z` with
/// its sensing point level with the source center.
pub fn rig_point(src: &DipoleSource, longitudinal: f64, transverse: f64) -> Vector3<f64> {
    src.center + Vector3::new(longitudinal, transverse, 0.0)
}

/// Equally spaced `e1` loads `0, step, 2·step, …, max`.
pub fn static_force_grid(max: f64, step: f64) -> Vec<Vector2<f64>> {
    let n = (max / step).round() as usize;
    (0..=n).map(|k| Vector2::new(k as f64 * step, 0.0)).collect()
}

/// One settled reading of the static bending test.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticReading {
    pub force: Vector2<f64>,
    pub resistance: [f64; CHANNELS],
    pub volts: [f64; CHANNELS],
    pub saturated: bool,
}

/// Quasi-static tip loading: one settled reading per force step.
pub fn simulate_static_sweep(
    forces: &[Vector2<f64>],
    cal: &ChannelCalibration,
    chain: &ReadoutChain,
    seed: u64,
) -> Result<Vec<StaticReading>> {
    if forces.is_empty() {
        return Err(Error::InsufficientData("static sweep needs at least one force".into()));
    }
    cal.validate()?;
    chain.validate()?;
    let noise = gaussian(cal.sigma_r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    forces
        .iter()
        .map(|force| {
            let clean = force_to_delta_r(force, cal);
            let mut resistance = [0.0; CHANNELS];
            let mut volts = [0.0; CHANNELS];
            let mut saturated = false;
            for ch in 0..CHANNELS {
                let dr = clean[ch] + noise.sample(&mut rng);
                let reading = bridge_output(dr, chain, cal)?;
                resistance[ch] = cal.r0 + dr;
                volts[ch] = reading.volts;
                saturated |= reading.saturated;
            }
            Ok(StaticReading {
                force: *force,
                resistance,
                volts,
                saturated,
            })
        })
        .collect()
}

/// Cyclic bending protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FatigueProtocol {
    pub cycles: usize,
    /// Reciprocation frequency [Hz].
    pub stroke_frequency: f64,
    /// Peak alternating tip force along `e1` [N].
    pub load_amplitude: f64,
    /// Linear baseline drift per channel [ppm of R0 per cycle].
    pub drift_ppm_per_cycle: [f64; CHANNELS],
    /// Logging rate [Hz].
    pub sample_rate: f64,
}

impl Default for FatigueProtocol {
    fn default() -> Self {
        Self {
            cycles: 10_000,
            stroke_frequency: 1.5,
            load_amplitude: 0.18,
            drift_ppm_per_cycle: [2.0, 0.0, 1.1, 0.0],
            sample_rate: 100.0,
        }
    }
}

/// Simulated fatigue record (gauge resistances [Ω]) plus cycle start markers.
#[derive(Debug, Clone, PartialEq)]
pub struct FatigueRun {
    pub record: TimeSeriesRecord,
    /// Fractional sample positions of each cycle start, from the known drive phase.
    pub markers: Vec<f64>,
}

/// Cyclic loading with linear baseline drift, logged as resistance.
///
/// The load is `A·sin(2π f t)` on `e1`, so each cycle starts at a rising zero
/// crossing. Samples go through the bridge and ADC and are converted back to
/// resistance, as a logger reporting ohms would.
pub fn simulate_fatigue(
    protocol: &FatigueProtocol,
    cal: &ChannelCalibration,
    chain: &ReadoutChain,
    seed: u64,
) -> Result<FatigueRun> {
    if protocol.cycles < 1 {
        return Err(Error::invalid("cycles", "must be at least 1"));
    }
    if !(protocol.stroke_frequency > 0.0 && protocol.sample_rate > 2.0 * protocol.stroke_frequency) {
        return Err(Error::invalid(
            "stroke_frequency",
            "must be positive and below the Nyquist rate",
        ));
    }
    cal.validate()?;
    chain.validate()?;
    let fs = protocol.sample_rate;
    let f = protocol.stroke_frequency;
    let samples_per_cycle = fs / f;
    let len = (protocol.cycles as f64 * samples_per_cycle).ceil() as usize;
    let noise = gaussian(cal.sigma_r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut channels: [Vec<f64>; CHANNELS] = std::array::from_fn(|_| Vec::with_capacity(len));
    for n in 0..len {
        let t = n as f64 / fs;
        let cycles_elapsed = f * t;
        let force = Vector2::new(protocol.load_amplitude * (2.0 * PI * f * t).sin(), 0.0);
        let clean = force_to_delta_r(&force, cal);
        for ch in 0..CHANNELS {
            let drift = cal.r0 * protocol.drift_ppm_per_cycle[ch] * 1e-6 * cycles_elapsed;
            let dr = clean[ch] + drift + noise.sample(&mut rng);
            let reading = bridge_output(dr, chain, cal)?;
            let recovered = delta_r_from_bridge(reading.volts, chain, cal.r0)?;
            channels[ch].push(cal.r0 + recovered);
        }
    }
    let markers = (0..protocol.cycles).map(|k| k as f64 * samples_per_cycle).collect();
    let record = TimeSeriesRecord::new(
        fs,
        channels,
        RecordMeta {
            seed: Some(seed),
            source_frequency: Some(f),
            amplifier_gain: Some(chain.amplifier_gain),
            unit: SignalUnit::Ohms,
            ..Default::default()
        },
    )?;
    Ok(FatigueRun { record, markers })
}

/// One dipole-excitation trial in the tank.
#[derive(Debug, Clone, PartialEq)]
pub struct DipoleTrial {
    pub source: DipoleSource,
    /// Longitudinal distance `L` [m].
    pub longitudinal: f64,
    /// Transverse offset `T` [m].
    pub transverse: f64,
    /// Record length [s].
    pub duration: f64,
    pub trial_index: u32,
}

/// Simulates the four amplifier outputs for a dipole trial at the readout
/// sample rate.
///
/// Chain per sample: dipole velocity at the sensing point, drag force in the
/// sensor frame, `K·F` plus resistance noise, quarter bridge, ambient tank
/// noise, ADC clamp.
pub fn simulate_dipole_trial(trial: &DipoleTrial, model: &SensorModel, seed: u64) -> Result<TimeSeriesRecord> {
    model.validate()?;
    trial.source.validate()?;
    let src = &trial.source;
    if !(trial.duration >= 2.0 / src.frequency) {
        return Err(Error::invalid(
            "duration",
            format!("must cover at least two drive periods ({} s)", 2.0 / src.frequency),
        ));
    }
    model.readout.check_oversampling(src.frequency)?;
    let point = rig_point(src, trial.longitudinal, trial.transverse);
    // fails early if the sensing point is inside the sphere
    src.velocity_amplitude_at(&point)?;

    let chain = &model.readout;
    let cal = &model.calibration;
    let fs = chain.sample_rate;
    let len = (trial.duration * fs).round() as usize;
    let noise = gaussian(cal.sigma_r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ambient: [Vec<f64>; CHANNELS] = std::array::from_fn(|_| model.ambient.generate(len, fs, &mut rng));
    let mut channels: [Vec<f64>; CHANNELS] = std::array::from_fn(|_| Vec::with_capacity(len));
    #[allow(clippy::needless_range_loop)]
    for n in 0..len {
        let t = n as f64 / fs;
        let force = model.tip_force(src, &point, t)?;
        let clean = force_to_delta_r(&force, cal);
        for ch in 0..CHANNELS {
            let dr = clean[ch] + noise.sample(&mut rng);
            if cal.r0 + dr <= 0.0 {
                return Err(Error::Domain(format!(
                    "channel {} resistance change {dr} ohm is non-physical",
                    ch + 1
                )));
            }
            let v = bridge_unclamped(dr, chain, cal.r0) + ambient[ch][n];
            channels[ch].push(clamp_adc(v, chain).volts);
        }
    }
    TimeSeriesRecord::new(
        fs,
        channels,
        RecordMeta {
            seed: Some(seed),
            source_frequency: Some(src.frequency),
            longitudinal: Some(trial.longitudinal),
            transverse: Some(trial.transverse),
            amplifier_gain: Some(chain.amplifier_gain),
            trial: Some(trial.trial_index),
            unit: SignalUnit::Volts,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::super::DriveAxis;
    use super::*;

    fn model() -> SensorModel {
        SensorModel {
            geometry: WhiskerGeometry::default(),
            calibration: ChannelCalibration::default(),
            readout: ReadoutChain::underwater(),
            drag: DragModel {
                linear_drag_gain: 10.0,
                quadrature_coupling: 0.0,
            },
            ambient: AmbientNoise::default(),
            frame: SensorFrame::rig(),
        }
    }

    fn source(axis: DriveAxis, u: f64) -> DipoleSource {
        DipoleSource::new(Vector3::zeros(), axis.unit(), 0.005, u, 10.0, 0.0).unwrap()
    }

    fn trial(src: DipoleSource, l: f64) -> DipoleTrial {
        DipoleTrial {
            source: src,
            longitudinal: l,
            transverse: 0.0,
            duration: 1.0,
            trial_index: 0,
        }
    }

    #[test]
    fn grid_has_ten_steps() {
        let g = static_force_grid(0.18, 0.02);
        assert_eq!(g.len(), 10);
        assert_eq!(g[0].x, 0.0);
        assert!((g[9].x - 0.18).abs() < 1e-15);
    }

    #[test]
    fn noiseless_static_sweep_is_exact() {
        let cal = ChannelCalibration {
            sigma_r: 0.0,
            ..Default::default()
        };
        let rows = simulate_static_sweep(&static_force_grid(0.18, 0.02), &cal, &ReadoutChain::bench(), 1).unwrap();
        for row in &rows {
            for ch in 0..CHANNELS {
                let want = cal.r0 + cal.sensitivity[ch][0] * row.force.x;
                assert!((row.resistance[ch] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_static_sweep_rejected() {
        assert!(simulate_static_sweep(&[], &ChannelCalibration::default(), &ReadoutChain::bench(), 1).is_err());
    }

    #[test]
    fn static_sweep_deterministic() {
        let g = static_force_grid(0.18, 0.02);
        let a = simulate_static_sweep(&g, &ChannelCalibration::default(), &ReadoutChain::bench(), 9).unwrap();
        let b = simulate_static_sweep(&g, &ChannelCalibration::default(), &ReadoutChain::bench(), 9).unwrap();
        let c = simulate_static_sweep(&g, &ChannelCalibration::default(), &ReadoutChain::bench(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn dipole_trial_inside_sphere_rejected() {
        let t = trial(source(DriveAxis::Longitudinal, 0.1), 0.004);
        assert!(matches!(
            simulate_dipole_trial(&t, &model(), 0),
            Err(Error::InsideSource { .. })
        ));
    }

    #[test]
    fn dipole_trial_too_short_rejected() {
        let mut t = trial(source(DriveAxis::Longitudinal, 0.1), 0.02);
        t.duration = 0.15;
        assert!(simulate_dipole_trial(&t, &model(), 0).is_err());
    }

    #[test]
    fn zero_drive_is_pure_bridge_noise() {
        let t = trial(source(DriveAxis::Longitudinal, 0.0), 0.02);
        let m = model();
        let rec = simulate_dipole_trial(&t, &m, 5).unwrap();
        let expected = m.readout.small_signal_gain(m.calibration.r0) * m.calibration.sigma_r;
        for ch in 0..CHANNELS {
            let x = &rec.channels[ch];
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt();
            assert!((sd / expected - 1.0).abs() < 0.05, "ch{} sd {sd} vs {expected}", ch + 1);
        }
    }

    #[test]
    fn dipole_trial_is_bit_reproducible() {
        let t = trial(source(DriveAxis::Transverse, 0.1), 0.02);
        let mut m = model();
        m.ambient.rms = 0.2;
        m.drag.quadrature_coupling = 0.3;
        let a = simulate_dipole_trial(&t, &m, 77).unwrap();
        let b = simulate_dipole_trial(&t, &m, 77).unwrap();
        assert_eq!(a, b);
    }

    fn peak_to_peak(x: &[f64]) -> f64 {
        let max = x.iter().cloned().fold(f64::MIN, f64::max);
        let min = x.iter().cloned().fold(f64::MAX, f64::min);
        max - min
    }

    #[test]
    fn doubling_distance_divides_amplitude_by_eight() {
        let m = model().noise_free();
        let src = source(DriveAxis::Longitudinal, 0.1);
        let near = simulate_dipole_trial(&trial(src.clone(), 0.020), &m, 0).unwrap();
        let far = simulate_dipole_trial(&trial(src, 0.040), &m, 0).unwrap();
        let ratio = peak_to_peak(&near.channels[0]) / peak_to_peak(&far.channels[0]);
        // bridge nonlinearity is ~ΔR/R0 ≲ 0.1% here
        assert!((ratio - 8.0).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn output_linear_in_drive_for_small_signals() {
        let m = model().noise_free();
        let a = simulate_dipole_trial(&trial(source(DriveAxis::Longitudinal, 0.05), 0.03), &m, 0).unwrap();
        let b = simulate_dipole_trial(&trial(source(DriveAxis::Longitudinal, 0.10), 0.03), &m, 0).unwrap();
        let ratio = peak_to_peak(&b.channels[0]) / peak_to_peak(&a.channels[0]);
        assert!((ratio - 2.0).abs() < 2.0 * 0.001, "{ratio}");
    }

    #[test]
    fn fatigue_channels_one_and_three_phase_opposed() {
        let cal = ChannelCalibration {
            sigma_r: 0.0,
            ..Default::default()
        };
        let p = FatigueProtocol {
            cycles: 30,
            drift_ppm_per_cycle: [0.0; 4],
            ..Default::default()
        };
        let run = simulate_fatigue(&p, &cal, &ReadoutChain::bench(), 0).unwrap();
        assert_eq!(run.markers.len(), 30);
        let r = &run.record;
        assert_eq!(r.meta.unit, SignalUnit::Ohms);
        for w in run.markers.windows(2) {
            let (a, b) = (w[0].ceil() as usize, w[1].ceil() as usize);
            let argmax1 = (a..b)
                .max_by(|&i, &j| r.channels[0][i].total_cmp(&r.channels[0][j]))
                .unwrap();
            let argmin3 = (a..b)
                .min_by(|&i, &j| r.channels[2][i].total_cmp(&r.channels[2][j]))
                .unwrap();
            assert_eq!(argmax1, argmin3);
            assert!(r.channels[0][argmax1] > cal.r0);
            assert!(r.channels[2][argmin3] < cal.r0);
            // the sampled extremum is within half a sample of the true peak
            let peak = w[0] + 0.25 * (w[1] - w[0]);
            assert!((argmax1 as f64 - peak).abs() <= 0.5 + 1e-9);
        }
    }
}
