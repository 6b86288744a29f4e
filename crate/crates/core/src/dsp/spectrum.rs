use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Minimum segment length accepted by [`amplitude_spectrum`].
pub const MIN_SPECTRUM_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    pub fn name(self) -> &'static str {
        match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        }
    }

    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }

    /// Normalised magnitude response of the main lobe at `offset` bins.
    fn kernel(self, offset: f64) -> f64 {
        let sinc = if offset == 0.0 {
            1.0
        } else {
            (PI * offset).sin() / (PI * offset)
        };
        match self {
            Window::Rectangular => sinc.abs(),
            Window::Hann => {
                let d = 1.0 - offset * offset;
                if d.abs() < 1e-12 {
                    0.5
                } else {
                    (sinc / d).abs()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDescriptor {
    pub name: String,
    /// Mean window value; peaks are divided by it.
    pub coherent_gain: f64,
}

/// Single-sided amplitude spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Bin spacing [Hz].
    pub df: f64,
    /// Amplitude estimate per bin [signal units]; `len = n/2 + 1`.
    pub magnitudes: Vec<f64>,
    pub window: WindowDescriptor,
    window_kind: Window,
    /// Segment length the spectrum was computed from.
    pub segment_len: usize,
    window_sum: f64,
}

impl Spectrum {
    /// Assembles a spectrum from precomputed magnitudes (e.g. for tests or
    /// externally computed spectra).
    pub fn from_magnitudes(df: f64, magnitudes: Vec<f64>, window: Window) -> Result<Self> {
        if !(df > 0.0) || magnitudes.len() < 2 {
            return Err(Error::invalid("spectrum", "needs df > 0 and at least two bins"));
        }
        if magnitudes.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::invalid("spectrum", "magnitudes must be non-negative"));
        }
        let n = 2 * (magnitudes.len() - 1);
        let coeffs = window.coefficients(n);
        let sum: f64 = coeffs.iter().sum();
        Ok(Self {
            df,
            magnitudes,
            window: WindowDescriptor {
                name: window.name().into(),
                coherent_gain: sum / n as f64,
            },
            window_kind: window,
            segment_len: n,
            window_sum: sum,
        })
    }

    pub fn nyquist(&self) -> f64 {
        self.df * (self.segment_len as f64 / 2.0)
    }

    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.df
    }

    fn is_edge_bin(&self, k: usize) -> bool {
        k == 0 || (self.segment_len.is_multiple_of(2) && k == self.segment_len / 2)
    }

    /// Energy `(1/N) Σ |X_k|²` over the full two-sided DFT, reconstructed
    /// from the single-sided magnitudes.
    pub fn energy(&self) -> f64 {
        let n = self.segment_len as f64;
        self.magnitudes
            .iter()
            .enumerate()
            .map(|(k, m)| {
                if self.is_edge_bin(k) {
                    (m * self.window_sum).powi(2)
                } else {
                    2.0 * (m * self.window_sum / 2.0).powi(2)
                }
            })
            .sum::<f64>()
            / n
    }

    pub fn median_magnitude(&self, lo_bin: usize, hi_bin: usize) -> f64 {
        let mut v: Vec<f64> = self.magnitudes[lo_bin..=hi_bin].to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

/// `Σ (w·x)²` for the given window.
pub fn windowed_energy(samples: &[f64], window: Window) -> f64 {
    let w = window.coefficients(samples.len());
    samples.iter().zip(&w).map(|(x, w)| (x * w).powi(2)).sum()
}

/// Windowed single-sided amplitude spectrum, corrected for coherent gain so
/// an on-bin sine of amplitude `A` peaks at `A`.
pub fn amplitude_spectrum(samples: &[f64], sample_rate: f64, window: Window) -> Result<Spectrum> {
    let n = samples.len();
    if n < MIN_SPECTRUM_LEN {
        return Err(Error::InsufficientData(format!(
            "spectrum needs at least {MIN_SPECTRUM_LEN} samples, got {n}"
        )));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::invalid("sample_rate", "must be positive"));
    }
    let coeffs = window.coefficients(n);
    let window_sum: f64 = coeffs.iter().sum();
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .zip(&coeffs)
        .map(|(x, w)| Complex::new(x * w, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let bins = n / 2 + 1;
    let magnitudes = (0..bins)
        .map(|k| {
            let scale = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
                1.0
            } else {
                2.0
            };
            scale * buf[k].norm() / window_sum
        })
        .collect();
    Ok(Spectrum {
        df: sample_rate / n as f64,
        magnitudes,
        window: WindowDescriptor {
            name: window.name().into(),
            coherent_gain: window_sum / n as f64,
        },
        window_kind: window,
        segment_len: n,
        window_sum,
    })
}

/// Interpolated spectral peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEstimate {
    /// Refined frequency [Hz].
    pub frequency: f64,
    /// Refined amplitude [signal units].
    pub amplitude: f64,
    pub bin_index: usize,
    /// Three-point refinement was applied.
    pub interpolated: bool,
    /// Another bin in the band tied with the maximum; the lowest frequency won.
    pub ambiguous: bool,
    /// Amplitude is at least [`SIGNIFICANCE_FACTOR`] times the band median.
    pub significant: bool,
}

pub const SIGNIFICANCE_FACTOR: f64 = 4.0;

fn band_bins(spec: &Spectrum, lo: f64, hi: f64) -> Result<(usize, usize)> {
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(Error::Domain(format!("invalid search band [{lo}, {hi}] Hz")));
    }
    if hi > spec.nyquist() * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "search band upper edge {hi} Hz exceeds Nyquist {} Hz",
            spec.nyquist()
        )));
    }
    let last = spec.magnitudes.len() - 1;
    let k_lo = (lo.max(0.0) / spec.df - 1e-9).ceil() as usize;
    let k_hi = ((hi / spec.df + 1e-9).floor() as usize).min(last);
    if k_lo > k_hi {
        return Err(Error::Domain(format!("no spectral bins in [{lo}, {hi}] Hz")));
    }
    Ok((k_lo, k_hi))
}

fn locate_peak(spec: &Spectrum, k_lo: usize, k_hi: usize) -> PeakEstimate {
    let mags = &spec.magnitudes;
    let mut k = k_lo;
    for i in k_lo + 1..=k_hi {
        if mags[i] > mags[k] {
            k = i;
        }
    }
    let peak = mags[k];
    let ambiguous = (k_lo..=k_hi)
        .filter(|&i| i != k)
        .any(|i| (mags[i] - peak).abs() <= 1e-12 * peak.max(f64::MIN_POSITIVE));

    let mut est = PeakEstimate {
        frequency: spec.frequency(k),
        amplitude: peak,
        bin_index: k,
        interpolated: false,
        ambiguous,
        significant: peak >= SIGNIFICANCE_FACTOR * spec.median_magnitude(k_lo, k_hi),
    };
    if k == 0 || k + 1 >= mags.len() {
        return est;
    }
    let (a, b, c) = (mags[k - 1], peak, mags[k + 1]);
    if a <= 0.0 || b <= 0.0 || c <= 0.0 {
        return est;
    }
    let (la, lb, lc) = (a.ln(), b.ln(), c.ln());
    let denom = la - 2.0 * lb + lc;
    if denom >= 0.0 {
        return est;
    }
    let delta = (0.5 * (la - lc) / denom).clamp(-0.5, 0.5);
    est.frequency = (k as f64 + delta) * spec.df;
    // the parabola vertex underestimates the Hann main lobe curvature, so the
    // amplitude is corrected with the window's own kernel at the refined offset
    est.amplitude = b / spec.window_kind.kernel(delta);
    est.interpolated = true;
    est
}

/// Largest bin within `f_target ± search_halfwidth`, refined by three-point
/// parabolic interpolation on log magnitude.
pub fn peak_near(spec: &Spectrum, f_target: f64, search_halfwidth: f64) -> Result<PeakEstimate> {
    let (lo, hi) = band_bins(spec, f_target - search_halfwidth, f_target + search_halfwidth)?;
    Ok(locate_peak(spec, lo, hi))
}

/// Dominant interpolated peak within `[band.0, band.1]` Hz.
pub fn detect_dominant(spec: &Spectrum, band: (f64, f64)) -> Result<PeakEstimate> {
    let (lo, hi) = band_bins(spec, band.0, band.1)?;
    Ok(locate_peak(spec, lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicLevel {
    pub order: u32,
    pub frequency: f64,
    pub amplitude: f64,
}

/// Harmonic amplitudes for reporting only; they never enter the response metric.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HarmonicReport {
    pub levels: Vec<HarmonicLevel>,
    /// Orders that could not be measured, with the reason.
    pub excluded: Vec<(u32, String)>,
}

/// Levels at `2·f0 … n·f0`, searched within `± search_halfwidth` of each.
pub fn harmonic_levels(spec: &Spectrum, f0: f64, n_harmonics: u32, search_halfwidth: f64) -> Result<HarmonicReport> {
    if !(f0 > 0.0) {
        return Err(Error::Domain("fundamental must be positive".into()));
    }
    let mut report = HarmonicReport::default();
    for order in 2..=n_harmonics {
        let f = f0 * order as f64;
        if f + search_halfwidth > spec.nyquist() {
            report
                .excluded
                .push((order, format!("{f} Hz exceeds Nyquist {} Hz", spec.nyquist())));
            continue;
        }
        let peak = peak_near(spec, f, search_halfwidth)?;
        report.levels.push(HarmonicLevel {
            order,
            frequency: peak.frequency,
            amplitude: peak.amplitude,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn sine(freq: f64, amp: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    #[test]
    fn bin_layout() {
        let s = amplitude_spectrum(&vec![0.0; 1000], 100.0, Window::Hann).unwrap();
        assert_eq!(s.magnitudes.len(), 501);
        assert!((s.df - 0.1).abs() < 1e-15);
        assert_eq!(s.window.name, "hann");
        assert!((s.window.coherent_gain - 0.5).abs() < 1e-12);
        assert!(s.magnitudes.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn too_short_rejected() {
        assert!(amplitude_spectrum(&[1.0; 15], 100.0, Window::Hann).is_err());
    }

    #[test]
    fn on_bin_sine_amplitude() {
        let s = amplitude_spectrum(&sine(10.0, 1.0, 100.0, 1000), 100.0, Window::Hann).unwrap();
        assert!((s.magnitudes[100] - 1.0).abs() < 0.005);
        let p = peak_near(&s, 10.0, 0.5).unwrap();
        assert!((p.frequency - 10.0).abs() < 0.01);
        assert!((p.amplitude - 1.0).abs() < 0.005);
    }

    #[test]
    fn off_bin_sine_interpolated() {
        let s = amplitude_spectrum(&sine(10.05, 0.7, 100.0, 1000), 100.0, Window::Hann).unwrap();
        let p = peak_near(&s, 10.0, 0.5).unwrap();
        assert!(p.interpolated);
        assert!((p.frequency - 10.05).abs() < 0.03, "{}", p.frequency);
        assert!((p.amplitude / 0.7 - 1.0).abs() < 0.02, "{}", p.amplitude);
    }

    #[test]
    fn amplitude_fidelity_across_bin_offsets() {
        for i in 0..=20 {
            let f = 12.0 + 0.1 * i as f64 / 20.0;
            let s = amplitude_spectrum(&sine(f, 1.0, 100.0, 1000), 100.0, Window::Hann).unwrap();
            let p = peak_near(&s, f, 0.5).unwrap();
            assert!((p.amplitude - 1.0).abs() < 0.02, "{f}: {}", p.amplitude);
            assert!((p.frequency - f).abs() < 0.01, "{f}: {}", p.frequency);
        }
    }

    #[test]
    fn parseval_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for n in [16, 17, 1000, 1001] {
            let x: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let s = amplitude_spectrum(&x, 100.0, Window::Hann).unwrap();
            let e = windowed_energy(&x, Window::Hann);
            assert!((s.energy() - e).abs() <= 1e-9 * e, "n={n}");
        }
    }

    #[test]
    fn equal_peaks_break_to_lower_frequency() {
        let mut m = vec![0.01; 101];
        m[40] = 1.0;
        m[60] = 1.0;
        let s = Spectrum::from_magnitudes(0.1, m, Window::Hann).unwrap();
        let p = peak_near(&s, 5.0, 2.5).unwrap();
        assert_eq!(p.bin_index, 40);
        assert!(p.ambiguous);
        let single = peak_near(&s, 4.0, 0.5).unwrap();
        assert!(!single.ambiguous);
    }

    #[test]
    fn empty_band_and_nyquist_violations() {
        let s = amplitude_spectrum(&sine(10.0, 1.0, 100.0, 1000), 100.0, Window::Hann).unwrap();
        assert!(peak_near(&s, 49.8, 0.5).is_err());
        assert!(detect_dominant(&s, (20.0, 10.0)).is_err());
        assert!(peak_near(&s, 10.03, 0.01).is_err());
    }

    #[test]
    fn noise_peak_is_flagged_insignificant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..1000).map(|_| normal.sample(&mut rng)).collect();
        let s = amplitude_spectrum(&x, 100.0, Window::Hann).unwrap();
        let p = detect_dominant(&s, (1.0, 50.0)).unwrap();
        assert!(!p.significant);
        let t = amplitude_spectrum(&sine(21.3, 1.0, 100.0, 1000), 100.0, Window::Hann).unwrap();
        assert!(detect_dominant(&t, (1.0, 50.0)).unwrap().significant);
    }

    #[test]
    fn harmonics_of_pure_and_clipped_sines() {
        let pure = amplitude_spectrum(&sine(5.0, 1.0, 100.0, 1000), 100.0, Window::Hann).unwrap();
        let h = harmonic_levels(&pure, 5.0, 4, 0.3).unwrap();
        assert_eq!(h.levels.len(), 3);
        assert!(h.levels.iter().all(|l| l.amplitude < 1e-6));

        let clipped: Vec<f64> = sine(5.0, 1.0, 100.0, 1000)
            .into_iter()
            .map(|v| v.clamp(-0.6, 0.6))
            .collect();
        let c = amplitude_spectrum(&clipped, 100.0, Window::Hann).unwrap();
        let h = harmonic_levels(&c, 5.0, 3, 0.3).unwrap();
        assert!(h.levels[1].amplitude > 1e-2, "{:?}", h.levels);
    }

    #[test]
    fn harmonics_above_nyquist_excluded() {
        let s = amplitude_spectrum(&sine(30.0, 1.0, 100.0, 1000), 100.0, Window::Hann).unwrap();
        let h = harmonic_levels(&s, 30.0, 2, 0.3).unwrap();
        assert!(h.levels.is_empty());
        assert_eq!(h.excluded.len(), 1);
        assert_eq!(h.excluded[0].0, 2);
    }
}
