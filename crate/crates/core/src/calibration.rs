//! Metrology: linear calibration, limit of detection, cyclic drift and
//! frequency-tracking statistics.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, TimeSeriesRecord};

/// Ordinary least-squares line `R = R0 + k·F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    /// Residual standard deviation (`n − 2` denominator, zero for two points).
    pub residual_std: f64,
    pub n_points: usize,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::invalid("fit_linear", "abscissa and ordinate lengths differ"));
    }
    if n < 2 {
        return Err(Error::InsufficientData("a line needs at least two points".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Domain("abscissa values are all identical".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if n == 2 || ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    let residual_std = if n > 2 { (ss_res / (nf - 2.0)).sqrt() } else { 0.0 };
    Ok(LinearFit {
        intercept,
        slope,
        r_squared,
        residual_std,
        n_points: n,
    })
}

/// Smallest resolvable force `3·σ_y / |S|` [N].
pub fn limit_of_detection(sigma_y: f64, sensitivity: f64) -> Result<f64> {
    if !(sigma_y >= 0.0 && sigma_y.is_finite()) {
        return Err(Error::Domain("noise level must be non-negative".into()));
    }
    if sensitivity == 0.0 || !sensitivity.is_finite() {
        return Err(Error::Domain("sensitivity must be finite and non-zero".into()));
    }
    Ok(3.0 * sigma_y / sensitivity.abs())
}

/// Extremes tracked for one loading cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleExtremum {
    pub cycle: usize,
    /// Peak of channel 1 within the cycle.
    pub max_ch1: f64,
    /// Trough of channel 3 within the cycle.
    pub min_ch3: f64,
    /// Fractional sample position of the channel-1 peak.
    pub t_max_ch1: f64,
    /// Fractional sample position of the channel-3 trough.
    pub t_min_ch3: f64,
}

/// Offset plus fundamental fitted over one cycle: returns
/// `(offset, amplitude, phase of the maximum in radians)`.
fn harmonic_fit(x: &[f64], first: usize, start: f64, period: f64) -> Option<(f64, f64, f64)> {
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for (i, v) in x.iter().enumerate() {
        let theta = 2.0 * PI * ((first + i) as f64 - start) / period;
        let row = Vector3::new(1.0, theta.cos(), theta.sin());
        ata += row * row.transpose();
        atb += row * *v;
    }
    let coef = ata.lu().solve(&atb)?;
    let amp = coef[1].hypot(coef[2]);
    Some((coef[0], amp, coef[2].atan2(coef[1])))
}

/// Per-cycle maximum of channel 1 and minimum of channel 3.
///
/// `markers` are (possibly fractional) sample positions of cycle starts. The
/// last cycle is assumed to last as long as the one before it; an incomplete
/// trailing cycle is dropped. Extremes come from a per-cycle offset-plus-
/// fundamental fit, which is insensitive to where the samples fall relative
/// to the true peak.
pub fn cycle_extrema(record: &TimeSeriesRecord, markers: &[f64]) -> Result<Vec<CycleExtremum>> {
    if markers.len() < 2 {
        return Err(Error::InsufficientData("need at least two cycle markers".into()));
    }
    let len = record.len() as f64;
    for (i, m) in markers.iter().enumerate() {
        if !(m.is_finite() && *m >= 0.0 && *m < len) {
            return Err(Error::Domain(format!(
                "cycle marker {i} at {m} lies outside the record"
            )));
        }
    }
    if markers.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("cycle markers must be strictly increasing".into()));
    }
    let last_period = markers[markers.len() - 1] - markers[markers.len() - 2];
    let mut out = Vec::with_capacity(markers.len());
    for (k, &start) in markers.iter().enumerate() {
        let end = markers.get(k + 1).copied().unwrap_or(start + last_period);
        if end > len + 1e-6 {
            break;
        }
        let first = start.ceil() as usize;
        let stop = (end.ceil() as usize).min(record.len());
        if stop < first + 3 {
            return Err(Error::Domain(format!("cycle {k} spans fewer than three samples")));
        }
        let period = end - start;
        let fit = |ch: usize| {
            harmonic_fit(&record.channels[ch][first..stop], first, start, period)
                .ok_or_else(|| Error::Domain(format!("cycle {k}: singular harmonic fit")))
        };
        let (off1, amp1, ph1) = fit(0)?;
        let (off3, amp3, ph3) = fit(2)?;
        let phase_to_pos = |phase: f64| start + phase.rem_euclid(2.0 * PI) / (2.0 * PI) * period;
        out.push(CycleExtremum {
            cycle: k,
            max_ch1: off1 + amp1,
            min_ch3: off3 - amp3,
            t_max_ch1: phase_to_pos(ph1),
            t_min_ch3: phase_to_pos(ph3 + PI),
        });
    }
    Ok(out)
}

/// Drift of one tracked extremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftMetric {
    /// `|mean(last block) − mean(first block)| / baseline × 100`.
    pub cumulative_offset_pct: f64,
    /// Cumulative offset spread over the run [ppm per cycle].
    pub drift_ppm_per_cycle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub max_ch1: DriftMetric,
    pub min_ch3: DriftMetric,
    pub baseline: f64,
    pub n_cycles: usize,
    pub block: usize,
}

pub const DEFAULT_DRIFT_BLOCK: usize = 100;

/// Block-mean drift of a per-cycle series relative to `baseline`.
pub fn series_drift(series: &[f64], baseline: f64, block: usize) -> Result<DriftMetric> {
    if block == 0 {
        return Err(Error::invalid("block", "must be positive"));
    }
    if series.len() < 2 * block {
        return Err(Error::InsufficientData(format!(
            "drift needs at least {} cycles, got {}",
            2 * block,
            series.len()
        )));
    }
    if !(baseline != 0.0 && baseline.is_finite()) {
        return Err(Error::Domain("baseline must be finite and non-zero".into()));
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = mean(&series[..block]);
    let last = mean(&series[series.len() - block..]);
    let pct = (last - first).abs() / baseline.abs() * 100.0;
    Ok(DriftMetric {
        cumulative_offset_pct: pct,
        drift_ppm_per_cycle: pct * 1e4 / series.len() as f64,
    })
}

/// Drift of the channel-1 maxima and channel-3 minima.
pub fn drift_metrics(extrema: &[CycleExtremum], baseline: f64, block: usize) -> Result<DriftReport> {
    let maxima: Vec<f64> = extrema.iter().map(|e| e.max_ch1).collect();
    let minima: Vec<f64> = extrema.iter().map(|e| e.min_ch3).collect();
    Ok(DriftReport {
        max_ch1: series_drift(&maxima, baseline, block)?,
        min_ch3: series_drift(&minima, baseline, block)?,
        baseline,
        n_cycles: extrema.len(),
        block,
    })
}

/// Agreement between commanded and detected frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqTrackReport {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub max_abs_err: f64,
    pub median_abs_err: f64,
    pub mean_abs_err: f64,
    pub rmse: f64,
    pub n_points: usize,
}

pub fn freq_tracking_metrics(commanded: &[f64], detected: &[f64]) -> Result<FreqTrackReport> {
    if commanded.len() != detected.len() {
        return Err(Error::invalid("freq_tracking", "commanded and detected lengths differ"));
    }
    if commanded.len() < 3 {
        return Err(Error::InsufficientData(
            "frequency tracking needs at least three points".into(),
        ));
    }
    let fit = fit_linear(commanded, detected)?;
    let mut errs: Vec<f64> = commanded.iter().zip(detected).map(|(c, d)| (d - c).abs()).collect();
    let n = errs.len() as f64;
    let mean_abs_err = errs.iter().sum::<f64>() / n;
    let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    errs.sort_by(f64::total_cmp);
    let m = errs.len();
    let median_abs_err = if m % 2 == 1 {
        errs[m / 2]
    } else {
        0.5 * (errs[m / 2 - 1] + errs[m / 2])
    };
    Ok(FreqTrackReport {
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        max_abs_err: errs[m - 1],
        median_abs_err,
        mean_abs_err,
        rmse,
        n_points: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor_model::{simulate_fatigue, ChannelCalibration, FatigueProtocol, ReadoutChain};
    use crate::RecordMeta;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid() -> Vec<f64> {
        (0..10).map(|k| 0.02 * k as f64).collect()
    }

    #[test]
    fn exact_line_recovered() {
        let x = grid();
        let y: Vec<f64> = x.iter().map(|f| 1050.0 + 483.63 * f).collect();
        let fit = fit_linear(&x, &y).unwrap();
        assert_relative_eq!(fit.slope, 483.63, max_relative = 1e-12);
        assert_relative_eq!(fit.intercept, 1050.0, max_relative = 1e-12);
        assert_eq!(fit.r_squared, 1.0);
        assert_eq!(fit.n_points, 10);
    }

    #[test]
    fn two_points_interpolate() {
        let fit = fit_linear(&[0.0, 2.0], &[1.0, 5.0]).unwrap();
        assert_eq!(fit.slope, 2.0);
        assert_eq!(fit.intercept, 1.0);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn degenerate_fits_rejected() {
        assert!(fit_linear(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_linear(&[1.0], &[1.0]).is_err());
        assert!(fit_linear(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn lod_values() {
        assert_eq!(limit_of_detection(0.0, 483.63).unwrap(), 0.0);
        // 3 * 0.044 / 483.63
        assert_relative_eq!(
            limit_of_detection(0.044, 483.63).unwrap(),
            2.7293592208e-4,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            limit_of_detection(0.044, -527.10).unwrap(),
            0.132 / 527.10,
            max_relative = 1e-12
        );
        assert!(limit_of_detection(0.044, 0.0).is_err());
    }

    #[test]
    fn lod_homogeneous() {
        let base = limit_of_detection(0.03, 300.0).unwrap();
        assert_eq!(limit_of_detection(0.06, 300.0).unwrap(), 2.0 * base);
        assert_eq!(limit_of_detection(0.03, 600.0).unwrap(), base / 2.0);
    }

    fn sine_record(cycles: usize, fs: f64, f: f64, drift_per_cycle: f64) -> (TimeSeriesRecord, Vec<f64>) {
        let spc = fs / f;
        let n = (cycles as f64 * spc).ceil() as usize;
        let ch1: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                1000.0 + 50.0 * (2.0 * PI * f * t).sin() + drift_per_cycle * f * t
            })
            .collect();
        let ch3: Vec<f64> = ch1.iter().map(|v| 2000.0 - v).collect();
        let rec = TimeSeriesRecord::new(fs, [ch1.clone(), ch1, ch3.clone(), ch3], RecordMeta::default()).unwrap();
        (rec, (0..cycles).map(|k| k as f64 * spc).collect())
    }

    #[test]
    fn noiseless_cycle_maxima_constant() {
        let (rec, markers) = sine_record(50, 100.0, 1.5, 0.0);
        let ex = cycle_extrema(&rec, &markers).unwrap();
        assert_eq!(ex.len(), 50);
        for e in &ex {
            assert!((e.max_ch1 - 1050.0).abs() <= 1e-9 * 1050.0);
            assert!((e.min_ch3 - 950.0).abs() <= 1e-9 * 950.0);
            assert!((e.t_max_ch1 - e.t_min_ch3).abs() < 1e-6);
        }
    }

    #[test]
    fn drift_slope_recovered_from_extrema() {
        let (rec, markers) = sine_record(300, 100.0, 1.5, 0.01);
        let ex = cycle_extrema(&rec, &markers).unwrap();
        let idx: Vec<f64> = ex.iter().map(|e| e.cycle as f64).collect();
        let maxima: Vec<f64> = ex.iter().map(|e| e.max_ch1).collect();
        let fit = fit_linear(&idx, &maxima).unwrap();
        assert_relative_eq!(fit.slope, 0.01, max_relative = 1e-3);
        assert!(fit.r_squared > 0.9999);
    }

    #[test]
    fn marker_validation() {
        let (rec, _) = sine_record(5, 100.0, 1.5, 0.0);
        assert!(cycle_extrema(&rec, &[0.0]).is_err());
        assert!(cycle_extrema(&rec, &[0.0, 66.0, 10_000.0]).is_err());
        assert!(cycle_extrema(&rec, &[66.0, 0.0]).is_err());
    }

    #[test]
    fn ten_thousand_cycle_record_yields_ten_thousand_pairs() {
        let run = simulate_fatigue(
            &FatigueProtocol::default(),
            &ChannelCalibration::default(),
            &ReadoutChain::bench(),
            3,
        )
        .unwrap();
        let ex = cycle_extrema(&run.record, &run.markers).unwrap();
        assert_eq!(ex.len(), 10_000);
    }

    #[test]
    fn drift_of_flat_series_is_zero() {
        let m = series_drift(&vec![1137.0; 500], 1050.0, 100).unwrap();
        assert_eq!(m.cumulative_offset_pct, 0.0);
        assert_eq!(m.drift_ppm_per_cycle, 0.0);
    }

    #[test]
    fn drift_of_known_ramp() {
        // +1.05 ohm over 10,000 cycles: block means sit 9,900 cycles apart
        let n = 10_000;
        let series: Vec<f64> = (0..n).map(|k| 1137.0 + 1.05 * k as f64 / n as f64).collect();
        let m = series_drift(&series, 1050.0, 100).unwrap();
        assert_relative_eq!(m.cumulative_offset_pct, 0.1 * 0.99, max_relative = 1e-9);
        assert_relative_eq!(m.drift_ppm_per_cycle, 0.1 * 0.99, max_relative = 1e-9);
        assert!((m.cumulative_offset_pct - 0.1).abs() / 0.1 < 0.02);
    }

    #[test]
    fn drift_needs_two_blocks() {
        assert!(series_drift(&[1.0; 199], 1.0, 100).is_err());
    }

    #[test]
    fn perfect_tracking() {
        let c: Vec<f64> = (1..=45).map(f64::from).collect();
        let r = freq_tracking_metrics(&c, &c).unwrap();
        assert_relative_eq!(r.slope, 1.0, max_relative = 1e-12);
        assert_eq!(r.r_squared, 1.0);
        assert_eq!(
            (r.max_abs_err, r.mean_abs_err, r.rmse, r.median_abs_err),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn constant_bias_tracking() {
        let c: Vec<f64> = (1..=45).map(f64::from).collect();
        let d: Vec<f64> = c.iter().map(|v| v + 0.05).collect();
        let r = freq_tracking_metrics(&c, &d).unwrap();
        assert_relative_eq!(r.slope, 1.0, max_relative = 1e-12);
        assert_relative_eq!(r.intercept, 0.05, epsilon = 1e-10);
        assert_relative_eq!(r.rmse, 0.05, epsilon = 1e-10);
    }

    #[test]
    fn tracking_degenerate_inputs() {
        assert!(freq_tracking_metrics(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(freq_tracking_metrics(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]).is_err());
    }

    proptest! {
        #[test]
        fn fit_scale_equivariant(scale in 0.01f64..100.0, ys in prop::collection::vec(-10.0f64..10.0, 10)) {
            let x = grid();
            let xs: Vec<f64> = x.iter().map(|v| v * scale).collect();
            let a = fit_linear(&x, &ys).unwrap();
            let b = fit_linear(&xs, &ys).unwrap();
            prop_assert!((b.slope * scale - a.slope).abs() <= 1e-9 * a.slope.abs().max(1e-9));
            prop_assert!((a.r_squared - b.r_squared).abs() <= 1e-12);
        }

        #[test]
        fn drift_invariant_to_common_scaling(c in 0.001f64..1000.0, slope in -0.01f64..0.01) {
            let series: Vec<f64> = (0..400).map(|k| 1000.0 + slope * k as f64).collect();
            let scaled: Vec<f64> = series.iter().map(|v| v * c).collect();
            let a = series_drift(&series, 1050.0, 100).unwrap();
            let b = series_drift(&scaled, 1050.0 * c, 100).unwrap();
            prop_assert!((a.cumulative_offset_pct - b.cumulative_offset_pct).abs() <= 1e-9 * a.cumulative_offset_pct.max(1e-12));
        }

        #[test]
        fn tracking_error_ordering(errs in prop::collection::vec(-0.2f64..0.2, 3..60)) {
            let c: Vec<f64> = (0..errs.len()).map(|i| 1.0 + i as f64 * 0.5).collect();
            let d: Vec<f64> = c.iter().zip(&errs).map(|(a, e)| a + e).collect();
            let r = freq_tracking_metrics(&c, &d).unwrap();
            prop_assert!(r.mean_abs_err <= r.rmse + 1e-15);
            prop_assert!(r.rmse <= r.max_abs_err + 1e-15);
        }
    }
}
