//! Record CSV: `# key=value` metadata lines, a column header, one row per sample.

use std::fmt::Write as _;
use std::path::Path;

use whisker_core::{RecordMeta, SignalUnit, TimeSeriesRecord, CHANNELS};

use crate::CliError;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

fn column_header(unit: SignalUnit) -> String {
    let suffix = match unit {
        SignalUnit::Volts => "V",
        SignalUnit::Ohms => "Ohm",
    };
    let mut h = String::from("t_s");
    for ch in 1..=CHANNELS {
        let _ = write!(h, ",ch{ch}_{suffix}");
    }
    h
}

pub fn record_to_csv(record: &TimeSeriesRecord) -> String {
    let m = &record.meta;
    let mut out = String::with_capacity(record.len() * 96 + 256);
    let _ = writeln!(out, "# schema_version={RECORD_SCHEMA_VERSION}");
    let _ = writeln!(out, "# sample_rate_hz={}", record.sample_rate);
    let _ = writeln!(out, "# unit={}", m.unit.symbol());
    if let Some(v) = m.seed {
        let _ = writeln!(out, "# seed={v}");
    }
    if let Some(v) = m.longitudinal {
        let _ = writeln!(out, "# L_mm={}", v * 1e3);
    }
    if let Some(v) = m.transverse {
        let _ = writeln!(out, "# T_mm={}", v * 1e3);
    }
    if let Some(v) = m.source_frequency {
        let _ = writeln!(out, "# f_hz={v}");
    }
    if let Some(v) = m.amplifier_gain {
        let _ = writeln!(out, "# gain={v}");
    }
    if let Some(v) = m.trial {
        let _ = writeln!(out, "# trial={v}");
    }
    out.push_str(&column_header(m.unit));
    out.push('\n');
    for i in 0..record.len() {
        let _ = write!(out, "{}", i as f64 / record.sample_rate);
        for ch in &record.channels {
            let _ = write!(out, ",{}", ch[i]);
        }
        out.push('\n');
    }
    out
}

pub fn write_record(path: &Path, record: &TimeSeriesRecord) -> Result<(), CliError> {
    std::fs::write(path, record_to_csv(record)).map_err(|e| CliError::io(path, e))
}

fn ingest_error(line: usize, msg: impl Into<String>) -> CliError {
    CliError::Ingest(format!("line {line}: {}", msg.into()))
}

/// Parses a record CSV produced by [`record_to_csv`] or a lab logger using
/// the same layout.
pub fn parse_record(text: &str) -> Result<TimeSeriesRecord, CliError> {
    let mut meta = RecordMeta::default();
    let mut sample_rate: Option<f64> = None;
    let mut header_seen = false;
    let mut times: Vec<f64> = Vec::new();
    let mut channels: [Vec<f64>; CHANNELS] = Default::default();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if header_seen {
                continue;
            }
            let Some((key, value)) = comment.trim().split_once('=') else {
                continue;
            };
            let value = value.trim();
            let num = || {
                value
                    .parse::<f64>()
                    .map_err(|_| ingest_error(line_no, format!("metadata `{key}` is not a number: {value}")))
            };
            match key.trim() {
                "schema_version" => {
                    if value != RECORD_SCHEMA_VERSION.to_string() {
                        return Err(ingest_error(line_no, format!("unsupported schema_version {value}")));
                    }
                }
                "sample_rate_hz" => sample_rate = Some(num()?),
                "unit" => {
                    meta.unit = match value {
                        "V" => SignalUnit::Volts,
                        "Ohm" | "ohm" => SignalUnit::Ohms,
                        other => return Err(ingest_error(line_no, format!("unknown unit `{other}`"))),
                    }
                }
                "seed" => {
                    meta.seed = Some(
                        value
                            .parse()
                            .map_err(|_| ingest_error(line_no, format!("seed is not an integer: {value}")))?,
                    )
                }
                "L_mm" => meta.longitudinal = Some(num()? * 1e-3),
                "T_mm" => meta.transverse = Some(num()? * 1e-3),
                "f_hz" => meta.source_frequency = Some(num()?),
                "gain" => meta.amplifier_gain = Some(num()?),
                "trial" => {
                    meta.trial = Some(
                        value
                            .parse()
                            .map_err(|_| ingest_error(line_no, format!("trial is not an integer: {value}")))?,
                    )
                }
                _ => {}
            }
            continue;
        }
        if !header_seen {
            let expected = column_header(meta.unit);
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != CHANNELS + 1 {
                return Err(ingest_error(
                    line_no,
                    format!(
                        "header has {} channel columns, expected {CHANNELS}",
                        cols.len().saturating_sub(1)
                    ),
                ));
            }
            if cols.join(",") != expected {
                return Err(ingest_error(
                    line_no,
                    format!("header `{line}` does not match `{expected}`"),
                ));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != CHANNELS + 1 {
            return Err(ingest_error(
                line_no,
                format!("row has {} columns, expected {}", fields.len(), CHANNELS + 1),
            ));
        }
        let mut values = [0.0; CHANNELS + 1];
        for (k, f) in fields.iter().enumerate() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| ingest_error(line_no, format!("column {} is not a number: `{f}`", k + 1)))?;
            if !v.is_finite() {
                return Err(ingest_error(line_no, format!("column {} is not finite", k + 1)));
            }
            values[k] = v;
        }
        if let Some(prev) = times.last() {
            if values[0] <= *prev {
                return Err(ingest_error(line_no, format!("time {} does not increase", values[0])));
            }
        }
        times.push(values[0]);
        for ch in 0..CHANNELS {
            channels[ch].push(values[ch + 1]);
        }
    }
    if !header_seen {
        return Err(CliError::Ingest("missing column header".into()));
    }
    let fs = match sample_rate {
        Some(fs) => fs,
        None if times.len() >= 2 => (times.len() - 1) as f64 / (times[times.len() - 1] - times[0]),
        None => {
            return Err(CliError::Ingest(
                "missing sample_rate_hz and too few rows to infer it".into(),
            ))
        }
    };
    TimeSeriesRecord::new(fs, channels, meta).map_err(|e| CliError::Ingest(e.to_string()))
}

pub fn read_record(path: &Path) -> Result<TimeSeriesRecord, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_record(&text).map_err(|e| match e {
        CliError::Ingest(msg) => CliError::Ingest(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Minimal CSV table writer for result tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub comments: Vec<String>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            comments: vec![format!("schema_version={RECORD_SCHEMA_VERSION}")],
        }
    }

    pub fn comment(&mut self, text: impl Into<String>) {
        self.comments.push(text.into());
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join(","));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> TimeSeriesRecord {
        let ch: [Vec<f64>; CHANNELS] =
            std::array::from_fn(|k| (0..50).map(|i| ((i * (k + 1)) as f64 * 0.37).sin() / 3.0).collect());
        TimeSeriesRecord::new(
            6250.0,
            ch,
            RecordMeta {
                seed: Some(9),
                source_frequency: Some(10.0),
                longitudinal: Some(0.02),
                transverse: Some(-0.0025),
                amplifier_gain: Some(166.0),
                trial: Some(3),
                unit: SignalUnit::Volts,
            },
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let r = record();
        let back = parse_record(&record_to_csv(&r)).unwrap();
        assert_eq!(back.channels, r.channels);
        assert_eq!(back.sample_rate, r.sample_rate);
        assert_eq!(back.meta.seed, Some(9));
        assert_eq!(back.meta.trial, Some(3));
        assert!((back.meta.longitudinal.unwrap() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn five_channels_rejected() {
        let text = "# sample_rate_hz=100\nt_s,ch1_V,ch2_V,ch3_V,ch4_V,ch5_V\n0,1,2,3,4,5\n";
        let msg = parse_record(text).unwrap_err().to_string();
        assert!(msg.contains("expected 4"), "{msg}");
    }

    #[test]
    fn short_row_names_line() {
        let text = "# sample_rate_hz=100\nt_s,ch1_V,ch2_V,ch3_V,ch4_V\n0,1,2,3,4\n0.01,1,2,3\n";
        let msg = parse_record(text).unwrap_err().to_string();
        assert!(msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn nan_and_time_reversal_rejected() {
        let nan = "# sample_rate_hz=100\nt_s,ch1_V,ch2_V,ch3_V,ch4_V\n0,1,2,3,4\n0.01,1,NaN,3,4\n";
        assert!(parse_record(nan).unwrap_err().to_string().contains("line 4"));
        let back = "# sample_rate_hz=100\nt_s,ch1_V,ch2_V,ch3_V,ch4_V\n0.01,1,2,3,4\n0.0,1,2,3,4\n";
        assert!(parse_record(back)
            .unwrap_err()
            .to_string()
            .contains("does not increase"));
    }

    #[test]
    fn ohm_records_use_ohm_columns() {
        let mut r = record();
        r.meta.unit = SignalUnit::Ohms;
        let text = record_to_csv(&r);
        assert!(text.contains("t_s,ch1_Ohm,ch2_Ohm,ch3_Ohm,ch4_Ohm"));
        assert_eq!(parse_record(&text).unwrap().meta.unit, SignalUnit::Ohms);
    }
}
