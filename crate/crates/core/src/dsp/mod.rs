//! Tank-record processing chain: anti-alias resampling, fixed windows,
//! mean removal, windowed FFT and interpolated peak extraction.

mod resample;
mod spectrum;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, TimeSeriesRecord, CHANNELS};

pub use resample::{rational_ratio, resample_to, RationalResampler, PASSBAND_FRACTION, STOPBAND_FRACTION};
pub use spectrum::{
    amplitude_spectrum, detect_dominant, harmonic_levels, peak_near, windowed_energy, HarmonicLevel, HarmonicReport,
    PeakEstimate, Spectrum, Window, WindowDescriptor, MIN_SPECTRUM_LEN, SIGNIFICANCE_FACTOR,
};

/// Fixed-length slice of a record.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Start time relative to the record start [s].
    pub start_time: f64,
    pub sample_rate: f64,
    pub channels: [Vec<f64>; CHANNELS],
}

impl Segment {
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Amplitude spectrum of every channel.
    pub fn spectra(&self, window: Window) -> Result<[Spectrum; CHANNELS]> {
        let mut out = Vec::with_capacity(CHANNELS);
        for ch in &self.channels {
            out.push(amplitude_spectrum(ch, self.sample_rate, window)?);
        }
        Ok(out.try_into().expect("CHANNELS spectra"))
    }
}

/// Cuts `record` into windows of `window_seconds` every `hop_seconds`;
/// a trailing partial window is dropped.
pub fn segment(record: &TimeSeriesRecord, window_seconds: f64, hop_seconds: f64) -> Result<Vec<Segment>> {
    if !(window_seconds > 0.0 && hop_seconds > 0.0) {
        return Err(Error::invalid("window", "window and hop must be positive"));
    }
    let fs = record.sample_rate;
    let win = (window_seconds * fs).round() as usize;
    let hop = (hop_seconds * fs).round() as usize;
    if win == 0 || hop == 0 {
        return Err(Error::invalid("window", "window and hop must span at least one sample"));
    }
    if record.len() < win {
        return Err(Error::InsufficientData(format!(
            "record of {:.3} s is shorter than one {window_seconds} s window",
            record.duration()
        )));
    }
    Ok((0..=(record.len() - win) / hop)
        .map(|k| {
            let start = k * hop;
            Segment {
                start_time: start as f64 / fs,
                sample_rate: fs,
                channels: std::array::from_fn(|ch| record.channels[ch][start..start + win].to_vec()),
            }
        })
        .collect())
}

/// Subtracts the per-channel mean.
pub fn detrend_mean(seg: &Segment) -> Result<Segment> {
    if seg.is_empty() {
        return Err(Error::InsufficientData("cannot detrend an empty segment".into()));
    }
    Ok(Segment {
        start_time: seg.start_time,
        sample_rate: seg.sample_rate,
        channels: std::array::from_fn(|ch| remove_mean(&seg.channels[ch])),
    })
}

pub fn remove_mean(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

/// Mean and sample standard deviation over repeated trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub mean: f64,
    /// `n − 1` denominator; zero for a single trial.
    pub std: f64,
    pub n: usize,
    /// Set when `n == 1` and `std` carries no information.
    pub single_trial: bool,
}

pub fn aggregate_trials(values: &[f64]) -> Result<TrialStats> {
    let n = values.len();
    if n == 0 {
        return Err(Error::InsufficientData("no trial values to aggregate".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(TrialStats {
        mean,
        std,
        n,
        single_trial: n == 1,
    })
}

/// Settings of the tank-record analysis chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSettings {
    /// Rate after anti-alias resampling [Hz].
    pub output_rate: f64,
    pub window_seconds: f64,
    pub hop_seconds: f64,
    pub window: Window,
    /// Search band for the dominant peak [Hz].
    pub band: (f64, f64),
    /// Half-width of the search around an expected frequency [Hz].
    pub search_halfwidth: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            output_rate: 100.0,
            window_seconds: 10.0,
            hop_seconds: 10.0,
            window: Window::Hann,
            band: (0.5, 49.5),
            search_halfwidth: 0.5,
        }
    }
}

/// Per-channel peaks of one analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPeaks {
    pub start_time: f64,
    pub peaks: [PeakEstimate; CHANNELS],
}

impl WindowPeaks {
    pub fn amplitudes(&self) -> [f64; CHANNELS] {
        self.peaks.map(|p| p.amplitude)
    }
}

/// Resampled and edge-trimmed copy of `record`; records already at the
/// output rate pass through.
pub fn condition(record: &TimeSeriesRecord, settings: &AnalysisSettings) -> Result<TimeSeriesRecord> {
    if (record.sample_rate - settings.output_rate).abs() <= 1e-9 * settings.output_rate {
        return Ok(record.clone());
    }
    let rs = RationalResampler::new(record.sample_rate, settings.output_rate)?;
    let channels = std::array::from_fn(|ch| rs.process(&record.channels[ch]));
    let out = TimeSeriesRecord::new(settings.output_rate, channels, record.meta.clone())?;
    let settle = (rs.settle_time() * settings.output_rate).ceil() / settings.output_rate;
    out.trimmed(settle)
}

/// Runs the full chain: resample, window, remove the mean, Hann spectrum,
/// interpolated peak. With `expected` the peak is sought near that frequency
/// on every channel; otherwise the dominant peak in `settings.band`.
pub fn analyze(
    record: &TimeSeriesRecord,
    settings: &AnalysisSettings,
    expected: Option<f64>,
) -> Result<Vec<WindowPeaks>> {
    let conditioned = condition(record, settings)?;
    let segments = segment(&conditioned, settings.window_seconds, settings.hop_seconds)?;
    segments
        .iter()
        .map(|seg| {
            let spectra = detrend_mean(seg)?.spectra(settings.window)?;
            let mut peaks = Vec::with_capacity(CHANNELS);
            for spec in &spectra {
                peaks.push(match expected {
                    Some(f) => peak_near(spec, f, settings.search_halfwidth)?,
                    None => detect_dominant(spec, settings.band)?,
                });
            }
            Ok(WindowPeaks {
                start_time: seg.start_time,
                peaks: peaks.try_into().expect("CHANNELS peaks"),
            })
        })
        .collect()
}

/// Noise-only bias of the known-frequency search.
///
/// `peak_near` reports the largest bin within `search_halfwidth`, so on
/// noise it reads above a single bin. Returns `sqrt(E[A_peak²] / E[A_bin²])`
/// for white noise, estimated with a fixed seed so the result is
/// deterministic.
pub fn noise_peak_factor(settings: &AnalysisSettings, frequency: f64) -> Result<f64> {
    const REPS: usize = 400;
    let fs = settings.output_rate;
    let n = (settings.window_seconds * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut peak_sq, mut bin_sq) = (0.0, 0.0);
    let mut x = vec![0.0; n];
    for _ in 0..REPS {
        for v in x.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let spec = amplitude_spectrum(&x, fs, settings.window)?;
        let p = peak_near(&spec, frequency, settings.search_halfwidth)?;
        let bin = (frequency / spec.df).round() as usize;
        peak_sq += p.amplitude * p.amplitude;
        bin_sq += spec.magnitudes[bin] * spec.magnitudes[bin];
    }
    Ok((peak_sq / bin_sq).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RecordMeta;
    use std::f64::consts::PI;

    fn constant_record(seconds: f64, fs: f64, value: f64) -> TimeSeriesRecord {
        let n = (seconds * fs).round() as usize;
        let x = vec![value; n];
        TimeSeriesRecord::new(fs, [x.clone(), x.clone(), x.clone(), x], RecordMeta::default()).unwrap()
    }

    #[test]
    fn non_overlapping_windows() {
        let segs = segment(&constant_record(60.0, 100.0, 0.0), 10.0, 10.0).unwrap();
        assert_eq!(segs.len(), 6);
        assert!(segs.iter().all(|s| s.len() == 1000));
    }

    #[test]
    fn short_record_rejected() {
        assert!(segment(&constant_record(9.99, 100.0, 0.0), 10.0, 10.0).is_err());
    }

    #[test]
    fn overlapping_windows_start_times() {
        let segs = segment(&constant_record(25.0, 100.0, 0.0), 10.0, 5.0).unwrap();
        let starts: Vec<f64> = segs.iter().map(|s| s.start_time).collect();
        assert_eq!(starts, vec![0.0, 5.0, 10.0, 15.0]);
    }

    #[test]
    fn detrend_constant_and_offset_sine() {
        let segs = segment(&constant_record(10.0, 100.0, 2.5), 10.0, 10.0).unwrap();
        let d = detrend_mean(&segs[0]).unwrap();
        assert!(d.channels.iter().flatten().all(|v| *v == 0.0));

        let sine: Vec<f64> = (0..1000).map(|i| (2.0 * PI * i as f64 / 100.0).sin()).collect();
        let shifted: Vec<f64> = sine.iter().map(|v| v + 3.0).collect();
        let out = remove_mean(&shifted);
        for (a, b) in out.iter().zip(&sine) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn detrend_ramp_keeps_slope() {
        // mean of 0..n-1 is (n-1)/2
        let ramp: Vec<f64> = (0..101).map(f64::from).collect();
        let out = remove_mean(&ramp);
        for (i, v) in out.iter().enumerate() {
            assert!((v - (i as f64 - 50.0)).abs() < 1e-12);
        }
        let mean: f64 = out.iter().sum::<f64>() / out.len() as f64;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn trial_statistics() {
        let s = aggregate_trials(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((s.mean, s.std), (1.0, 0.0));
        let s = aggregate_trials(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        let s = aggregate_trials(&[4.2]).unwrap();
        assert!(s.single_trial && s.std == 0.0);
        assert!(aggregate_trials(&[]).is_err());
    }

    #[test]
    fn search_bias_grows_with_halfwidth() {
        let narrow = AnalysisSettings {
            search_halfwidth: 0.1,
            ..AnalysisSettings::default()
        };
        let wide = AnalysisSettings::default();
        let a = noise_peak_factor(&narrow, 10.0).unwrap();
        let b = noise_peak_factor(&wide, 10.0).unwrap();
        assert!(a >= 1.0 && a < b && b < 2.5, "{a} {b}");
        assert_eq!(b, noise_peak_factor(&wide, 10.0).unwrap());
    }
}
