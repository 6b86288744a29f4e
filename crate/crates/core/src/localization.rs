//! Amplitude forward model of the four channels and its inversion for
//! source distance `L`, transverse offset `|T|` and dominant flow axis.
//!
//! Geometry follows the tank frame: the source sits at the origin, the
//! sensing point at `(L, T, 0)`, channels 1/3 respond to flow along `x` and
//! channels 2/4 to flow along `y`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dsp::{noise_peak_factor, AnalysisSettings};
use crate::flowfield::DipoleSource;
use crate::lsq::{gauss_newton, LsqOptions};
use crate::sensor_model::{DriveAxis, SensorModel, PRINCIPAL_AXIS};
use crate::{Error, Result, CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardModelParams {
    /// Volts per (m/s) of flow along each channel's axis.
    pub gains: [f64; CHANNELS],
    /// Sign of each channel's response along its principal axis.
    pub polarity: [f64; CHANNELS],
    /// Quarter-period cross-axis coupling (see `DragModel`).
    pub quadrature_coupling: f64,
    pub decay_exponent: f64,
    /// RMS noise amplitude of a spectral bin [V].
    pub floors: [f64; CHANNELS],
    /// Reference source radius [m].
    pub source_radius: f64,
    /// Reference source velocity amplitude [m/s].
    pub velocity_amplitude: f64,
}

impl ForwardModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.gains.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::invalid("gains", "must be positive"));
        }
        if self.floors.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
            return Err(Error::invalid("floors", "must be non-negative"));
        }
        if !(self.decay_exponent > 0.0 && self.decay_exponent.is_finite()) {
            return Err(Error::invalid("decay_exponent", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.quadrature_coupling) {
            return Err(Error::invalid("quadrature_coupling", "must lie in [0, 1)"));
        }
        if self.polarity.iter().any(|p| p.abs() != 1.0) {
            return Err(Error::invalid("polarity", "must be +1 or -1"));
        }
        if !(self.source_radius > 0.0 && self.velocity_amplitude >= 0.0) {
            return Err(Error::invalid(
                "source",
                "radius must be positive, velocity non-negative",
            ));
        }
        Ok(())
    }

    /// Derives the model from a sensor description.
    ///
    /// Floors are the RMS amplitude the known-frequency analysis reports on
    /// noise alone: the Hann-bin level of ambient plus resistance noise at
    /// `frequency`, raised by the search bias of [`noise_peak_factor`].
    pub fn from_sensor(
        model: &SensorModel,
        source_radius: f64,
        velocity_amplitude: f64,
        frequency: f64,
        settings: &AnalysisSettings,
    ) -> Result<Self> {
        model.validate()?;
        let cal = &model.calibration;
        let chain = &model.readout;
        let g_bridge = chain.small_signal_gain(cal.r0);
        let principal = cal.principal_magnitudes();
        let fs = chain.sample_rate;
        let white = (g_bridge * cal.sigma_r).powi(2) / fs;
        let psd = model.ambient.psd(frequency, fs) + white;
        // single bin: E|A|^2 = 4·P·fs·Σw²/(Σw)², which is 6·P/T for Hann
        let fs_out = settings.output_rate;
        let w = settings
            .window
            .coefficients((settings.window_seconds * fs_out).round() as usize);
        let (s1, s2) = w.iter().fold((0.0, 0.0), |(a, b), v| (a + v, b + v * v));
        let bin = (4.0 * psd * fs_out * s2 / (s1 * s1)).sqrt();
        let floor = bin * noise_peak_factor(settings, frequency)?;
        let params = Self {
            gains: std::array::from_fn(|i| g_bridge * model.drag.linear_drag_gain * principal[i]),
            polarity: std::array::from_fn(|i| cal.sensitivity[i][PRINCIPAL_AXIS[i]].signum()),
            quadrature_coupling: model.drag.quadrature_coupling,
            decay_exponent: 3.0,
            floors: [floor; CHANNELS],
            source_radius,
            velocity_amplitude,
        };
        params.validate()?;
        Ok(params)
    }

    fn source(&self, drive: DriveAxis) -> Result<DipoleSource> {
        DipoleSource::new(
            Vector3::zeros(),
            drive.unit(),
            self.source_radius,
            self.velocity_amplitude,
            1.0,
            0.0,
        )
    }

    /// Noise-free per-channel signal amplitudes (no floor).
    ///
    /// Each channel sees only the flow along its principal axis; the small
    /// cross-axis sensitivities are left out so the model stays exactly
    /// mirror-symmetric in `T`.
    pub fn signal_amplitudes(&self, drive: DriveAxis, longitudinal: f64, transverse: f64) -> Result<[f64; CHANNELS]> {
        let src = self.source(drive)?;
        let point = Vector3::new(longitudinal, transverse, 0.0);
        let mut v = src.velocity_amplitude_at(&point)?;
        if self.decay_exponent != 3.0 {
            v *= (self.source_radius / point.norm()).powf(self.decay_exponent - 3.0);
        }
        let c = self.quadrature_coupling;
        Ok(std::array::from_fn(|i| {
            let (direct, crossed) = if PRINCIPAL_AXIS[i] == 0 { (v.x, v.y) } else { (v.y, v.x) };
            self.gains[i] * (self.polarity[i] * direct).hypot(c * crossed)
        }))
    }
}

/// Expected spectral amplitude of each channel: signal and noise floor add
/// in quadrature.
pub fn forward_amplitudes(
    params: &ForwardModelParams,
    drive: DriveAxis,
    longitudinal: f64,
    transverse: f64,
) -> Result<[f64; CHANNELS]> {
    let s = params.signal_amplitudes(drive, longitudinal, transverse)?;
    Ok(std::array::from_fn(|i| s[i].hypot(params.floors[i])))
}

/// `A = A0 / L^n + floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub a0: f64,
    pub exponent: f64,
    pub floor: f64,
    /// RMS relative residual.
    pub residual: f64,
    pub converged: bool,
    /// False when the amplitudes carry no distance information; `exponent`
    /// and `a0` are then zero and `floor` is the mean amplitude.
    pub identifiable: bool,
}

impl DecayFit {
    pub fn predict(&self, l: f64) -> f64 {
        self.a0 / l.powf(self.exponent) + self.floor
    }
}

/// Best `(A0, floor ≥ 0)` for fixed `n` under relative weighting.
fn linear_decay_solve(ls: &[f64], amps: &[f64], n: f64) -> (f64, f64, f64) {
    let (mut sxx, mut sx1, mut s11, mut sxy, mut s1y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (l, a) in ls.iter().zip(amps) {
        let w = 1.0 / (a * a);
        let x = l.powf(-n);
        sxx += w * x * x;
        sx1 += w * x;
        s11 += w;
        sxy += w * x * a;
        s1y += w * a;
    }
    let det = sxx * s11 - sx1 * sx1;
    let (mut a0, mut floor) = ((sxy * s11 - s1y * sx1) / det, (s1y * sxx - sxy * sx1) / det);
    if !(floor >= 0.0) || !det.is_finite() || det <= 0.0 {
        floor = 0.0;
        a0 = sxy / sxx;
    }
    let cost = ls
        .iter()
        .zip(amps)
        .map(|(l, a)| ((a0 * l.powf(-n) + floor - a) / a).powi(2))
        .sum();
    (a0, floor, cost)
}

/// Fits the distance decay of a sweep by nonlinear least squares on
/// relative residuals, seeded from a grid over the exponent.
pub fn fit_decay(ls: &[f64], amplitudes: &[f64]) -> Result<DecayFit> {
    if ls.len() != amplitudes.len() {
        return Err(Error::invalid("fit_decay", "distance and amplitude lengths differ"));
    }
    if ls.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::Domain("distances must be positive".into()));
    }
    if amplitudes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::Domain("amplitudes must be positive".into()));
    }
    let mut distinct = ls.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    if distinct.len() < 4 {
        return Err(Error::InsufficientData(
            "decay fit needs at least four distinct distances".into(),
        ));
    }
    let mean = amplitudes.iter().sum::<f64>() / amplitudes.len() as f64;
    let (lo, hi) = amplitudes
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), a| (lo.min(*a), hi.max(*a)));
    if hi - lo <= 1e-9 * hi {
        return Ok(DecayFit {
            a0: 0.0,
            exponent: 0.0,
            floor: mean,
            residual: 0.0,
            converged: true,
            identifiable: false,
        });
    }

    // work in units of the smallest distance so A0 stays well scaled
    let l_ref = distinct[0];
    let xs: Vec<f64> = ls.iter().map(|l| l / l_ref).collect();
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    for k in 0..=300 {
        let n = 0.2 + 0.025 * k as f64;
        let (a0, floor, cost) = linear_decay_solve(&xs, amplitudes, n);
        if cost < best.0 && a0 > 0.0 {
            best = (cost, a0, n, floor);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Domain("amplitudes do not decay with distance".into()));
    }
    let (_, a0, n, floor) = best;
    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        let (a0, n, floor) = (p[0].exp(), p[1], p[2]);
        if !(n > 0.0 && floor >= 0.0) {
            return None;
        }
        Some(
            xs.iter()
                .zip(amplitudes)
                .map(|(x, a)| (a0 * x.powf(-n) + floor - a) / a)
                .collect(),
        )
    };
    let x0 = [a0.ln(), n, floor.max(1e-12 * hi)];
    let (params, converged) = match gauss_newton(residuals, &x0, &LsqOptions::default()) {
        Ok(sol) => (sol.params, true),
        Err(Error::NonConvergence { best, .. }) => (best, false),
        Err(e) => return Err(e),
    };
    let cost: f64 = residuals(&params)
        .map(|r| r.iter().map(|v| v * v).sum())
        .unwrap_or(f64::INFINITY);
    let fit = DecayFit {
        a0: params[0].exp() * l_ref.powf(params[1]),
        exponent: params[1],
        floor: params[2],
        residual: (cost / ls.len() as f64).sqrt(),
        converged,
        identifiable: true,
    };
    if !converged {
        return Err(Error::NonConvergence {
            iterations: LsqOptions::default().max_iterations,
            cost,
            best: vec![fit.a0, fit.exponent, fit.floor],
        });
    }
    Ok(fit)
}

/// Ratio of the stronger to the weaker pair RMS below which the axis call
/// is flagged ambiguous.
pub const AMBIGUITY_RATIO: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisCall {
    pub axis: DriveAxis,
    /// Stronger pair RMS over weaker pair RMS (infinite if the weaker is zero).
    pub ratio: f64,
    pub ambiguous: bool,
}

/// Dominant flow axis from pair RMS: channels 1/3 against channels 2/4.
pub fn classify_axis(amp: &[f64; CHANNELS]) -> Result<AxisCall> {
    if amp.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
        return Err(Error::Domain("amplitudes must be non-negative".into()));
    }
    if amp.iter().all(|a| *a == 0.0) {
        return Err(Error::Domain("all amplitudes are zero".into()));
    }
    let pair = |axis: usize| {
        let (s, n) = (0..CHANNELS)
            .filter(|&i| PRINCIPAL_AXIS[i] == axis)
            .fold((0.0, 0), |(s, n), i| (s + amp[i] * amp[i], n + 1));
        (s / n as f64).sqrt()
    };
    let (long, trans) = (pair(0), pair(1));
    let (axis, hi, lo) = if long > trans {
        (DriveAxis::Longitudinal, long, trans)
    } else {
        (DriveAxis::Transverse, trans, long)
    };
    let ratio = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    Ok(AxisCall {
        axis,
        ratio,
        ambiguous: ratio < AMBIGUITY_RATIO,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryEstimate {
    pub frequency: f64,
    /// Estimated `L` [m].
    pub longitudinal: f64,
    /// Estimated `|T|` [m].
    pub transverse_abs: f64,
    /// Drive interpretation with the lower misfit.
    pub drive: DriveAxis,
    /// Dominant flow axis seen by the channels.
    pub flow_axis: AxisCall,
    /// RMS relative amplitude residual.
    pub residual: f64,
    pub in_range: bool,
    /// Set when no channel rises above its floor; the geometry fields are then meaningless.
    pub out_of_range: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizeGrid {
    pub l_min: f64,
    pub l_max: f64,
    pub t_max: f64,
    pub step: f64,
}

impl Default for LocalizeGrid {
    fn default() -> Self {
        Self {
            l_min: 0.005,
            l_max: 0.060,
            t_max: 0.040,
            step: 0.001,
        }
    }
}

/// Largest `|T|/L` explored per drive hypothesis. Amplitudes alone cannot
/// tell a point from its image across the angle where the drive-parallel
/// flow component vanishes, so each hypothesis is confined to the side
/// containing its own axis.
pub fn cone_slope(drive: DriveAxis) -> f64 {
    match drive {
        DriveAxis::Longitudinal => std::f64::consts::SQRT_2,
        DriveAxis::Transverse => std::f64::consts::FRAC_1_SQRT_2,
    }
}

/// Margin above the channel floor (as a ratio) for a channel to count as
/// carrying signal.
const SIGNAL_MARGIN: f64 = 1.05;

fn relative_residuals(
    params: &ForwardModelParams,
    drive: DriveAxis,
    obs: &[f64; CHANNELS],
    l: f64,
    t: f64,
) -> Option<Vec<f64>> {
    if !(l > 0.0) || t.abs() >= cone_slope(drive) * l {
        return None;
    }
    if l.hypot(t) <= params.source_radius * 1.000001 {
        return None;
    }
    let model = forward_amplitudes(params, drive, l, t).ok()?;
    Some(model.iter().zip(obs).map(|(m, o)| (m - o) / o).collect())
}

/// Inverts four channel amplitudes into source geometry.
///
/// Each drive hypothesis is scored on a coarse `(L, |T|)` grid, refined by
/// Gauss–Newton from the best cell, and the lowest-misfit hypothesis wins.
pub fn localize(
    amplitudes: &[f64; CHANNELS],
    frequency: f64,
    params: &ForwardModelParams,
    hypotheses: &[DriveAxis],
    grid: &LocalizeGrid,
) -> Result<GeometryEstimate> {
    params.validate()?;
    if hypotheses.is_empty() {
        return Err(Error::invalid("hypotheses", "at least one drive axis is required"));
    }
    if !(grid.step > 0.0 && grid.l_min > 0.0 && grid.l_max > grid.l_min && grid.t_max >= 0.0) {
        return Err(Error::invalid("grid", "bounds must be ordered and the step positive"));
    }
    let flow_axis = classify_axis(amplitudes)?;
    let all_floor = amplitudes
        .iter()
        .zip(&params.floors)
        .all(|(a, f)| *a <= SIGNAL_MARGIN * f);
    if all_floor || amplitudes.iter().any(|a| *a <= 0.0) {
        return Ok(GeometryEstimate {
            frequency,
            longitudinal: f64::INFINITY,
            transverse_abs: 0.0,
            drive: hypotheses[0],
            flow_axis,
            residual: 0.0,
            in_range: false,
            out_of_range: true,
        });
    }

    let nl = ((grid.l_max - grid.l_min) / grid.step).round() as usize;
    let nt = (grid.t_max / grid.step).round() as usize;
    let mut best: Option<(f64, DriveAxis, f64, f64)> = None;
    for &drive in hypotheses {
        let mut seed: Option<(f64, f64, f64)> = None;
        for i in 0..=nl {
            let l = grid.l_min + i as f64 * grid.step;
            for j in 0..=nt {
                let t = j as f64 * grid.step;
                if let Some(r) = relative_residuals(params, drive, amplitudes, l, t) {
                    let cost: f64 = r.iter().map(|v| v * v).sum();
                    if seed.is_none_or(|s| cost < s.0) {
                        seed = Some((cost, l, t));
                    }
                }
            }
        }
        let Some((grid_cost, l0, t0)) = seed else { continue };
        // start just inside the cone so the refinement sees a feasible point
        let t_start = t0.min(0.999 * cone_slope(drive) * l0);
        let refined = gauss_newton(
            |p| relative_residuals(params, drive, amplitudes, p[0], p[1]),
            &[l0, t_start],
            &LsqOptions::default(),
        );
        let (cost, l, t) = match refined {
            Ok(sol) if sol.cost <= grid_cost => (sol.cost, sol.params[0], sol.params[1]),
            Err(Error::NonConvergence { best, cost, .. }) if cost <= grid_cost => (cost, best[0], best[1]),
            _ => (grid_cost, l0, t0),
        };
        if best.is_none_or(|b| cost < b.0) {
            best = Some((cost, drive, l, t));
        }
    }
    let (cost, drive, l, t) = best.ok_or_else(|| Error::Domain("no feasible grid cell for any hypothesis".into()))?;
    let range = operational_range(params, drive, 3.0)?;
    Ok(GeometryEstimate {
        frequency,
        longitudinal: l,
        transverse_abs: t.abs(),
        drive,
        flow_axis,
        residual: (cost / CHANNELS as f64).sqrt(),
        in_range: l <= range,
        out_of_range: false,
    })
}

/// Distance along `T = 0` beyond which the strongest channel's noise-free
/// amplitude stays below `threshold_factor × floor`. Infinite when the
/// floors are zero.
pub fn operational_range(params: &ForwardModelParams, drive: DriveAxis, threshold_factor: f64) -> Result<f64> {
    params.validate()?;
    if !(threshold_factor >= 1.0) {
        return Err(Error::Domain(format!(
            "detection threshold {threshold_factor}x lies below the noise floor"
        )));
    }
    if params.floors.iter().all(|f| *f == 0.0) {
        return Ok(f64::INFINITY);
    }
    let detectable = |l: f64| -> Result<bool> {
        let a = forward_amplitudes(params, drive, l, 0.0)?;
        Ok(a.iter()
            .zip(&params.floors)
            .any(|(a, f)| *f > 0.0 && *a >= threshold_factor * f))
    };
    let mut lo = params.source_radius * (1.0 + 1e-9);
    if !detectable(lo)? {
        return Ok(lo);
    }
    let mut hi = 2.0 * lo;
    while detectable(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Ok(f64::INFINITY);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if detectable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params() -> ForwardModelParams {
        ForwardModelParams {
            gains: [1600.0, 1680.0, 1750.0, 1680.0],
            polarity: [1.0, 1.0, -1.0, -1.0],
            quadrature_coupling: 0.39,
            decay_exponent: 3.0,
            floors: [0.087; CHANNELS],
            source_radius: 0.005,
            velocity_amplitude: 0.1,
        }
    }

    fn noiseless() -> ForwardModelParams {
        ForwardModelParams {
            floors: [0.0; CHANNELS],
            ..params()
        }
    }

    #[test]
    fn longitudinal_on_axis_favours_principal_pair() {
        let a = forward_amplitudes(&params(), DriveAxis::Longitudinal, 0.02, 0.0).unwrap();
        assert!(a[0] > a[1] && a[2] > a[3]);
    }

    #[test]
    fn transverse_on_axis_favours_orthogonal_pair() {
        let a = forward_amplitudes(&params(), DriveAxis::Transverse, 0.02, 0.0).unwrap();
        assert!(a[1] > a[0] && a[3] > a[2]);
        // quadrature coupling leaks c·(direct) into the principal pair
        assert_relative_eq!(a[0] / a[3], 0.39, max_relative = 0.05);
    }

    #[test]
    fn zero_drive_gives_floors() {
        let p = ForwardModelParams {
            velocity_amplitude: 0.0,
            ..params()
        };
        let a = forward_amplitudes(&p, DriveAxis::Longitudinal, 0.02, 0.005).unwrap();
        assert_eq!(a, p.floors);
    }

    #[test]
    fn inside_sphere_is_an_error() {
        assert!(forward_amplitudes(&params(), DriveAxis::Longitudinal, 0.004, 0.0).is_err());
    }

    #[test]
    fn synthetic_decay_recovered() {
        let ls: Vec<f64> = (1..=5).map(|k| 0.01 * k as f64).collect();
        let amps: Vec<f64> = ls.iter().map(|l| 5e-6 / l.powi(3) + 0.01).collect();
        let fit = fit_decay(&ls, &amps).unwrap();
        assert!((fit.exponent - 3.0).abs() <= 0.05, "{fit:?}");
        assert_relative_eq!(fit.floor, 0.01, max_relative = 1e-3);
        assert!(fit.converged && fit.identifiable);
    }

    #[test]
    fn constant_amplitudes_unidentifiable() {
        let fit = fit_decay(&[0.01, 0.02, 0.03, 0.04], &[0.2; 4]).unwrap();
        assert!(!fit.identifiable);
        assert_eq!(fit.floor, 0.2);
    }

    #[test]
    fn decay_fit_preconditions() {
        assert!(fit_decay(&[0.01, 0.02, 0.03], &[3.0, 2.0, 1.0]).is_err());
        assert!(fit_decay(&[0.01, 0.02, 0.03, 0.03], &[3.0, 2.0, 1.0, 1.0]).is_err());
        assert!(fit_decay(&[0.01, 0.02, 0.03, 0.04], &[3.0, 2.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn axis_classification_examples() {
        let c = classify_axis(&[0.9, 0.1, 0.8, 0.1]).unwrap();
        assert_eq!(c.axis, DriveAxis::Longitudinal);
        // RMS(0.9, 0.8) / RMS(0.1, 0.1)
        assert_relative_eq!(c.ratio, (0.725f64).sqrt() / 0.1, max_relative = 1e-12);
        let c = classify_axis(&[0.56, 1.3, 0.6, 1.41]).unwrap();
        assert_eq!(c.axis, DriveAxis::Transverse);
        assert!(classify_axis(&[1.0; 4]).unwrap().ambiguous);
        assert!(classify_axis(&[0.0; 4]).is_err());
    }

    #[test]
    fn localize_on_axis_round_trip() {
        let p = params();
        let a = forward_amplitudes(&p, DriveAxis::Longitudinal, 0.02, 0.0).unwrap();
        let est = localize(&a, 10.0, &p, &[DriveAxis::Longitudinal], &LocalizeGrid::default()).unwrap();
        assert!((est.longitudinal - 0.02).abs() <= 0.002, "{est:?}");
        assert!(est.transverse_abs <= 0.002);
        assert!(est.in_range && !est.out_of_range);
    }

    #[test]
    fn symmetric_pairs_give_zero_offset() {
        let p = noiseless();
        let a = forward_amplitudes(&p, DriveAxis::Transverse, 0.025, 0.0).unwrap();
        let est = localize(&a, 10.0, &p, &[DriveAxis::Transverse], &LocalizeGrid::default()).unwrap();
        assert!(est.transverse_abs < 1e-4, "{est:?}");
    }

    #[test]
    fn floor_only_input_is_out_of_range() {
        let p = params();
        let est = localize(&p.floors, 10.0, &p, &DriveAxis::ALL, &LocalizeGrid::default()).unwrap();
        assert!(est.out_of_range && !est.in_range);
    }

    #[test]
    fn range_without_floor_is_infinite() {
        assert_eq!(
            operational_range(&noiseless(), DriveAxis::Longitudinal, 3.0).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn range_threshold_below_floor_rejected() {
        assert!(operational_range(&params(), DriveAxis::Longitudinal, 0.5).is_err());
    }

    #[test]
    fn doubling_drive_extends_range_by_cube_root_two() {
        let p = params();
        let r1 = operational_range(&p, DriveAxis::Longitudinal, 3.0).unwrap();
        let p2 = ForwardModelParams {
            velocity_amplitude: 0.2,
            ..p
        };
        let r2 = operational_range(&p2, DriveAxis::Longitudinal, 3.0).unwrap();
        assert_relative_eq!(r2 / r1, 2f64.cbrt(), max_relative = 1e-9);
    }

    proptest! {
        #[test]
        fn mirror_symmetric_in_t(l in 0.008f64..0.06, t in 0.0f64..0.04, long in any::<bool>()) {
            let d = if long { DriveAxis::Longitudinal } else { DriveAxis::Transverse };
            let a = forward_amplitudes(&params(), d, l, t).unwrap();
            let b = forward_amplitudes(&params(), d, l, -t).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn strongest_channel_decreases_with_distance(l in 0.006f64..0.08, dl in 1e-4f64..0.01) {
            let max = |l: f64| {
                forward_amplitudes(&params(), DriveAxis::Longitudinal, l, 0.0)
                    .unwrap()
                    .into_iter()
                    .fold(0.0, f64::max)
            };
            prop_assert!(max(l + dl) < max(l));
        }

        #[test]
        fn classification_scale_invariant(
            a in prop::array::uniform4(0.01f64..5.0),
            k in prop::sample::select(vec![0.25, 0.5, 2.0, 4.0, 1024.0]),
        ) {
            let x = classify_axis(&a).unwrap();
            let y = classify_axis(&a.map(|v| v * k)).unwrap();
            prop_assert_eq!(x.axis, y.axis);
            prop_assert_eq!(x.ratio, y.ratio);
        }

        #[test]
        fn noiseless_round_trip(l in 0.010f64..0.040, frac in 0.0f64..0.6, long in any::<bool>()) {
            let d = if long { DriveAxis::Longitudinal } else { DriveAxis::Transverse };
            let t = frac * l;
            let p = noiseless();
            let a = forward_amplitudes(&p, d, l, t).unwrap();
            let est = localize(&a, 10.0, &p, &[d], &LocalizeGrid::default()).unwrap();
            prop_assert!((est.longitudinal - l).abs() <= 0.002, "{:?}", est);
            prop_assert!((est.transverse_abs - t).abs() <= 0.002, "{:?}", est);
        }
    }
}
