use serde::{Deserialize, Serialize};

use crate::{Error, Result, CHANNELS};

/// Physical unit of the samples held in a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalUnit {
    #[default]
    Volts,
    Ohms,
}

impl SignalUnit {
    pub fn symbol(self) -> &'static str {
        match self {
            SignalUnit::Volts => "V",
            SignalUnit::Ohms => "Ohm",
        }
    }
}

/// Scenario descriptor carried alongside the samples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecordMeta {
    pub seed: Option<u64>,
    /// Source drive frequency [Hz].
    pub source_frequency: Option<f64>,
    /// Longitudinal distance [m].
    pub longitudinal: Option<f64>,
    /// Transverse offset [m].
    pub transverse: Option<f64>,
    pub amplifier_gain: Option<f64>,
    pub trial: Option<u32>,
    pub unit: SignalUnit,
}

/// Uniformly sampled four-channel record.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesRecord {
    pub sample_rate: f64,
    pub channels: [Vec<f64>; CHANNELS],
    pub meta: RecordMeta,
}

impl TimeSeriesRecord {
    pub fn new(sample_rate: f64, channels: [Vec<f64>; CHANNELS], meta: RecordMeta) -> Result<Self> {
        let rec = Self {
            sample_rate,
            channels,
            meta,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::invalid("sample_rate", "must be positive"));
        }
        let n = self.channels[0].len();
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("channels", "all channels must have equal length"));
        }
        for (ch, data) in self.channels.iter().enumerate() {
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    "channels",
                    format!("non-finite sample at channel {} index {i}", ch + 1),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    /// Time stamp of sample `i`.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.sample_rate
    }

    /// Drops `seconds` worth of samples from both ends (filter settling).
    pub fn trimmed(&self, seconds: f64) -> Result<Self> {
        let k = (seconds * self.sample_rate).round() as usize;
        if 2 * k >= self.len() {
            return Err(Error::InsufficientData(format!(
                "cannot trim {seconds} s from each end of a {:.3} s record",
                self.duration()
            )));
        }
        let channels = self.channels.clone().map(|c| c[k..c.len() - k].to_vec());
        Ok(Self {
            sample_rate: self.sample_rate,
            channels,
            meta: self.meta.clone(),
        })
    }

    /// Largest absolute sample value per channel.
    pub fn peak_abs(&self) -> [f64; CHANNELS] {
        std::array::from_fn(|ch| self.channels[ch].iter().fold(0.0f64, |m, v| m.max(v.abs())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unequal_channels_rejected() {
        let r = TimeSeriesRecord::new(
            100.0,
            [vec![0.0; 3], vec![0.0; 3], vec![0.0; 2], vec![0.0; 3]],
            RecordMeta::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn nan_rejected() {
        let r = TimeSeriesRecord::new(
            100.0,
            [vec![0.0, f64::NAN], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]],
            RecordMeta::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn trim_both_ends() {
        let data: Vec<f64> = (0..100).map(f64::from).collect();
        let r = TimeSeriesRecord::new(
            10.0,
            [data.clone(), data.clone(), data.clone(), data],
            RecordMeta::default(),
        )
        .unwrap();
        let t = r.trimmed(1.0).unwrap();
        assert_eq!(t.len(), 80);
        assert_eq!(t.channels[0][0], 10.0);
        assert!(r.trimmed(5.0).is_err());
    }
}
