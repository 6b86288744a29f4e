use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Band-limited background disturbance added to each amplifier output in
/// the tank (flow turbulence, rig vibration). Modelled as independent
/// first-order low-pass Gaussian noise per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmbientNoise {
    /// Stationary RMS level [V].
    pub rms: f64,
    /// -3 dB corner of the noise spectrum [Hz].
    pub corner_hz: f64,
}

impl Default for AmbientNoise {
    fn default() -> Self {
        Self {
            rms: 0.0,
            corner_hz: 10.0,
        }
    }
}

impl AmbientNoise {
    pub fn validate(&self) -> Result<()> {
        if !(self.rms >= 0.0 && self.rms.is_finite()) {
            return Err(Error::invalid("ambient.rms", "must be non-negative"));
        }
        if !(self.corner_hz > 0.0 && self.corner_hz.is_finite()) {
            return Err(Error::invalid("ambient.corner_hz", "must be positive"));
        }
        Ok(())
    }

    fn pole(&self, sample_rate: f64) -> f64 {
        (-2.0 * PI * self.corner_hz / sample_rate).exp()
    }

    /// Two-sided power spectral density [V²/Hz] at `frequency` for noise
    /// generated at `sample_rate`.
    pub fn psd(&self, frequency: f64, sample_rate: f64) -> f64 {
        let a = self.pole(sample_rate);
        let w = 2.0 * PI * frequency / sample_rate;
        self.rms * self.rms * (1.0 - a * a) / (sample_rate * (1.0 - 2.0 * a * w.cos() + a * a))
    }

    /// Generates `len` samples of the AR(1) process, started in steady state.
    pub(crate) fn generate<R: Rng>(&self, len: usize, sample_rate: f64, rng: &mut R) -> Vec<f64> {
        if self.rms == 0.0 {
            return vec![0.0; len];
        }
        let a = self.pole(sample_rate);
        let drive = self.rms * (1.0 - a * a).sqrt();
        let z: f64 = StandardNormal.sample(rng);
        let mut x = self.rms * z;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(x);
            let w: f64 = StandardNormal.sample(rng);
            x = a * x + drive * w;
        }
        out
    }

    /// RMS level giving a target two-sided PSD at `frequency`.
    pub fn rms_for_psd(psd: f64, frequency: f64, corner_hz: f64, sample_rate: f64) -> f64 {
        let unit = AmbientNoise { rms: 1.0, corner_hz };
        (psd / unit.psd(frequency, sample_rate)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psd_integrates_to_variance() {
        let n = AmbientNoise {
            rms: 0.7,
            corner_hz: 10.0,
        };
        let fs = 6250.0;
        let steps = 200_000;
        let df = fs / steps as f64;
        let total: f64 = (0..steps)
            .map(|k| n.psd(-fs / 2.0 + (k as f64 + 0.5) * df, fs) * df)
            .sum();
        assert!((total - 0.49).abs() < 1e-6, "{total}");
    }

    #[test]
    fn generated_variance_matches() {
        let n = AmbientNoise {
            rms: 0.5,
            corner_hz: 50.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = n.generate(400_000, 6250.0, &mut rng);
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!((var.sqrt() - 0.5).abs() < 0.02, "{}", var.sqrt());
    }

    #[test]
    fn rms_for_psd_inverts() {
        let n = AmbientNoise {
            rms: 0.9,
            corner_hz: 10.0,
        };
        let p = n.psd(10.0, 6250.0);
        let r = AmbientNoise::rms_for_psd(p, 10.0, 10.0, 6250.0);
        assert!((r - 0.9).abs() < 1e-12);
    }
}
