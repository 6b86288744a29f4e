//! Experiment reports and target comparison.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// How `value` is compared with `target ± tolerance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// `|value − target| ≤ tolerance`
    #[default]
    TwoSided,
    /// `value ≤ target + tolerance`
    Upper,
    /// `value ≥ target − tolerance`
    Lower,
}

/// JSON has no NaN or infinity; non-finite values travel as `null`.
mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    #[serde(with = "finite_or_null")]
    pub value: f64,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub bound: Bound,
    pub pass: bool,
    pub informational: bool,
}

impl Metric {
    pub fn check(name: impl Into<String>, value: f64, target: f64, tolerance: f64, bound: Bound) -> Self {
        let mut m = Self {
            name: name.into(),
            value,
            target: Some(target),
            tolerance: Some(tolerance),
            bound,
            pass: false,
            informational: false,
        };
        m.pass = m.evaluate();
        m
    }

    pub fn within(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        Self::check(name, value, target, tolerance, Bound::TwoSided)
    }

    pub fn within_rel(name: impl Into<String>, value: f64, target: f64, rel: f64) -> Self {
        Self::check(name, value, target, rel * target.abs(), Bound::TwoSided)
    }

    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::check(name, value, limit, 0.0, Bound::Upper)
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::check(name, value, limit, 0.0, Bound::Lower)
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self::within(name, if ok { 1.0 } else { 0.0 }, 1.0, 0.0)
    }

    pub fn info(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target: None,
            tolerance: None,
            bound: Bound::TwoSided,
            pass: true,
            informational: true,
        }
    }

    /// Informational metric that still records a reference value.
    pub fn info_vs(name: impl Into<String>, value: f64, target: f64) -> Self {
        Self {
            target: Some(target),
            ..Self::info(name, value)
        }
    }

    fn evaluate(&self) -> bool {
        if self.informational {
            return true;
        }
        let (Some(t), Some(tol)) = (self.target, self.tolerance) else {
            return false;
        };
        if !self.value.is_finite() {
            return false;
        }
        match self.bound {
            Bound::TwoSided => (self.value - t).abs() <= tol,
            Bound::Upper => self.value <= t + tol,
            Bound::Lower => self.value >= t - tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub experiment: String,
    pub config_digest: String,
    pub seed: Option<u64>,
    pub metrics: Vec<Metric>,
    pub artifacts: Vec<String>,
}

impl ExperimentReport {
    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub lines: Vec<String>,
    pub failed: Vec<String>,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.failed.is_empty()
    }
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 || (1e-3..1e5).contains(&v.abs()) {
        format!("{v:.4}")
    } else {
        format!("{v:.4e}")
    }
}

/// Re-evaluates every metric and lists the failures; informational
/// metrics never fail.
pub fn compare_to_targets(report: &ExperimentReport) -> Comparison {
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for m in &report.metrics {
        let pass = m.evaluate();
        let status = if m.informational {
            "INFO"
        } else if pass {
            "PASS"
        } else {
            "FAIL"
        };
        let reference = match (m.target, m.tolerance, m.bound) {
            (Some(t), Some(tol), Bound::TwoSided) => format!("target {} ± {}", fmt_num(t), fmt_num(tol)),
            (Some(t), Some(tol), Bound::Upper) => format!("limit ≤ {}", fmt_num(t + tol)),
            (Some(t), Some(tol), Bound::Lower) => format!("limit ≥ {}", fmt_num(t - tol)),
            (Some(t), None, _) => format!("reference {}", fmt_num(t)),
            _ => String::new(),
        };
        lines.push(format!(
            "[{status}] {:<32} {:>14}  {reference}",
            m.name,
            fmt_num(m.value)
        ));
        if !pass {
            failed.push(m.name.clone());
        }
    }
    Comparison { lines, failed }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(metrics: Vec<Metric>) -> ExperimentReport {
        ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            experiment: "static_sweep".into(),
            config_digest: "0".repeat(64),
            seed: Some(1),
            metrics,
            artifacts: vec![],
        }
    }

    #[test]
    fn all_on_target_passes() {
        let c = compare_to_targets(&report(vec![
            Metric::within_rel("slope_ch1", 483.63, 483.63, 0.005),
            Metric::at_most("rmse", 0.04, 0.05),
            Metric::at_least("r_squared", 0.9999, 0.999),
        ]));
        assert!(c.passed());
    }

    #[test]
    fn off_target_fails_by_name() {
        let c = compare_to_targets(&report(vec![Metric::within_rel(
            "slope_ch1",
            483.63 * 1.05,
            483.63,
            0.005,
        )]));
        assert_eq!(c.failed, vec!["slope_ch1".to_string()]);
    }

    #[test]
    fn informational_never_fails() {
        let c = compare_to_targets(&report(vec![
            Metric::info("seconds", f64::NAN),
            Metric::info_vs("x", 9.0, 1.0),
        ]));
        assert!(c.passed());
    }

    #[test]
    fn tampered_pass_flag_is_rechecked() {
        let mut m = Metric::within("x", 2.0, 1.0, 0.1);
        m.pass = true;
        assert!(!compare_to_targets(&report(vec![m])).passed());
    }

    #[test]
    fn json_has_expected_keys() {
        let v: serde_json::Value = serde_json::from_str(&report(vec![Metric::flag("ok", true)]).to_json()).unwrap();
        for key in ["schema_version", "config_digest", "metrics", "artifacts"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let m = &v["metrics"][0];
        for key in ["name", "value", "target", "tolerance", "pass", "informational"] {
            assert!(m.get(key).is_some(), "{key}");
        }
    }
}
