//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc low-pass.

use std::f64::consts::PI;

use crate::{Error, Result, TimeSeriesRecord};

const MAX_UP: usize = 512;
const MAX_DOWN: usize = 100_000;
/// Design stopband attenuation [dB]; the contract is 60 dB.
const DESIGN_ATTENUATION_DB: f64 = 70.0;
/// Passband edge as a fraction of the output rate.
pub const PASSBAND_FRACTION: f64 = 0.45;
/// Stopband edge as a fraction of the output rate (output Nyquist).
pub const STOPBAND_FRACTION: f64 = 0.5;

/// Smallest `(up, down)` with `input_rate · up / down == output_rate`.
pub fn rational_ratio(input_rate: f64, output_rate: f64) -> Result<(usize, usize)> {
    if !(input_rate > 0.0 && output_rate > 0.0 && input_rate.is_finite() && output_rate.is_finite()) {
        return Err(Error::Config("sample rates must be positive and finite".into()));
    }
    for up in 1..=MAX_UP {
        let down = up as f64 * input_rate / output_rate;
        let rounded = down.round();
        if rounded >= 1.0 && (down - rounded).abs() <= 1e-9 * down && rounded as usize <= MAX_DOWN {
            return Ok((up, rounded as usize));
        }
    }
    Err(Error::Config(format!(
        "{input_rate} Hz -> {output_rate} Hz is not a rational ratio with up <= {MAX_UP}, down <= {MAX_DOWN}"
    )))
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn kaiser_beta(attenuation_db: f64) -> f64 {
    if attenuation_db > 50.0 {
        0.1102 * (attenuation_db - 8.7)
    } else if attenuation_db >= 21.0 {
        0.5842 * (attenuation_db - 21.0).powf(0.4) + 0.07886 * (attenuation_db - 21.0)
    } else {
        0.0
    }
}

/// Polyphase resampler by the rational factor `up / down`.
#[derive(Debug, Clone)]
pub struct RationalResampler {
    pub up: usize,
    pub down: usize,
    pub input_rate: f64,
    pub output_rate: f64,
    /// Prototype filter at `input_rate · up`, scaled so every polyphase
    /// branch has unit DC gain.
    taps: Vec<f64>,
    delay: usize,
}

impl RationalResampler {
    pub fn new(input_rate: f64, output_rate: f64) -> Result<Self> {
        if output_rate >= input_rate {
            return Err(Error::Config(format!(
                "target rate {output_rate} Hz must be below the record rate {input_rate} Hz"
            )));
        }
        let (up, down) = rational_ratio(input_rate, output_rate)?;
        let fs_up = input_rate * up as f64;
        let f_pass = PASSBAND_FRACTION * output_rate;
        let f_stop = STOPBAND_FRACTION * output_rate;
        let cutoff = 0.5 * (f_pass + f_stop);
        let transition = 2.0 * PI * (f_stop - f_pass) / fs_up;
        let mut len = ((DESIGN_ATTENUATION_DB - 7.95) / (2.285 * transition)).ceil() as usize + 1;
        if len.is_multiple_of(2) {
            len += 1;
        }
        let beta = kaiser_beta(DESIGN_ATTENUATION_DB);
        let delay = (len - 1) / 2;
        let norm = bessel_i0(beta);
        let wc = 2.0 * cutoff / fs_up;
        let mut taps: Vec<f64> = (0..len)
            .map(|k| {
                let m = k as f64 - delay as f64;
                let sinc = if m == 0.0 { wc } else { (PI * wc * m).sin() / (PI * m) };
                let ratio = m / delay as f64;
                let window = bessel_i0(beta * (1.0 - ratio * ratio).max(0.0).sqrt()) / norm;
                sinc * window
            })
            .collect();
        for branch in 0..up {
            let sum: f64 = taps.iter().skip(branch).step_by(up).sum();
            for t in taps.iter_mut().skip(branch).step_by(up) {
                *t /= sum;
            }
        }
        Ok(Self {
            up,
            down,
            input_rate,
            output_rate,
            taps,
            delay,
        })
    }

    pub fn filter_len(&self) -> usize {
        self.taps.len()
    }

    /// Time for edge transients to clear at either end of a record [s].
    pub fn settle_time(&self) -> f64 {
        self.delay as f64 / (self.input_rate * self.up as f64)
    }

    /// Output sample `m` is aligned with time `m / output_rate`; the filter's
    /// group delay is compensated and the input is zero-extended at the edges.
    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        let len = input.len();
        if len == 0 {
            return Vec::new();
        }
        let up = self.up as isize;
        let n_taps = self.taps.len() as isize;
        let out_len = (len * self.up).div_ceil(self.down);
        (0..out_len)
            .map(|m| {
                let j0 = (m * self.down + self.delay) as isize;
                let i_lo = ((j0 - n_taps + 1).max(0) + up - 1) / up;
                let i_hi = (j0 / up).min(len as isize - 1);
                let mut acc = 0.0;
                let mut i = i_lo;
                while i <= i_hi {
                    acc += self.taps[(j0 - up * i) as usize] * input[i as usize];
                    i += 1;
                }
                acc
            })
            .collect()
    }
}

/// Resamples every channel of `record` to `target_rate`.
pub fn resample_to(record: &TimeSeriesRecord, target_rate: f64) -> Result<TimeSeriesRecord> {
    let rs = RationalResampler::new(record.sample_rate, target_rate)?;
    let channels = std::array::from_fn(|ch| rs.process(&record.channels[ch]));
    TimeSeriesRecord::new(target_rate, channels, record.meta.clone())
}
