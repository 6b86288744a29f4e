//! Scenario configuration (JSON, versioned, unknown keys rejected).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use whisker_core::dsp::AnalysisSettings;
use whisker_core::localization::LocalizeGrid;
use whisker_core::sensor_model::{
    AmbientNoise, ChannelCalibration, DragModel, DriveAxis, FatigueProtocol, ReadoutChain, SensorFrame, SensorModel,
    WhiskerGeometry,
};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Fitted tank defaults; regenerate with `whisker fit-defaults`.
pub const DEFAULT_DRAG_GAIN: f64 = 18.03;
pub const DEFAULT_QUADRATURE_COUPLING: f64 = 0.410;
pub const DEFAULT_AMBIENT_RMS: f64 = 0.5204;
pub const DEFAULT_AMBIENT_CORNER_HZ: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    StaticSweep,
    Fatigue,
    FreqSweep,
    LongitudinalSweep,
    TransverseSweep,
    Localize,
    FitDefaults,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::StaticSweep => "static_sweep",
            Self::Fatigue => "fatigue",
            Self::FreqSweep => "freq_sweep",
            Self::LongitudinalSweep => "longitudinal_sweep",
            Self::TransverseSweep => "transverse_sweep",
            Self::Localize => "localize",
            Self::FitDefaults => "fit_defaults",
        }
    }
}

/// Reference dipole used by the tank experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    /// Sphere radius [m].
    pub radius: f64,
    /// Surface velocity amplitude [m/s].
    pub velocity_amplitude: f64,
    /// Drive frequency [Hz].
    pub frequency: f64,
    pub phase: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            radius: 0.005,
            velocity_amplitude: 0.1,
            frequency: 10.0,
            phase: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StaticConfig {
    pub max_force: f64,
    pub step: f64,
}

impl Default for StaticConfig {
    fn default() -> Self {
        Self {
            max_force: 0.18,
            step: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreqSweepConfig {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    /// Offsets cycled over successive points to land off the FFT bins [Hz].
    pub offsets: Vec<f64>,
    /// Geometry of the sweep [m].
    pub longitudinal: f64,
    pub transverse: f64,
    /// Permits sweeping above 45 Hz by raising the analysis rate to 250 Hz.
    pub allow_full_range: bool,
    /// Trials per frequency.
    pub trials: u32,
}

impl Default for FreqSweepConfig {
    fn default() -> Self {
        Self {
            start: 1.0,
            stop: 45.0,
            step: 0.5,
            offsets: vec![0.05, -0.05],
            longitudinal: 0.02,
            transverse: 0.0,
            allow_full_range: false,
            trials: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialConfig {
    /// Longitudinal sweep distances [mm].
    pub longitudinal_mm: Vec<f64>,
    /// Transverse sweep offsets [mm].
    pub transverse_mm: Vec<f64>,
    /// Fixed distance of the transverse sweep [mm].
    pub transverse_at_l_mm: f64,
    /// Simulated record length per trial [s].
    pub trial_duration: f64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            longitudinal_mm: vec![10.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0],
            transverse_mm: (-12..=12).map(|k| 2.5 * k as f64).collect(),
            transverse_at_l_mm: 20.0,
            trial_duration: 11.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizationConfig {
    pub grid: LocalizeGrid,
    /// Random round-trip points.
    pub points: usize,
    /// Validated envelope: `L` range [m] and largest `|T|/L`.
    pub l_min: f64,
    pub l_max: f64,
    pub max_t_over_l: f64,
    /// Detection threshold as a multiple of the floor.
    pub threshold_factor: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            grid: LocalizeGrid::default(),
            points: 100,
            l_min: 0.010,
            l_max: 0.040,
            max_t_over_l: 0.6,
            threshold_factor: 3.0,
        }
    }
}

/// One target of the tank-parameter fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Anchor {
    /// Spectral amplitude of one channel (1-based) at a geometry [m], [V].
    Amplitude {
        drive: DriveAxis,
        longitudinal: f64,
        transverse: f64,
        channel: usize,
        volts: f64,
    },
    /// Operational range along `T = 0` [m].
    Range {
        drive: DriveAxis,
        meters: f64,
        threshold_factor: f64,
    },
}

impl Anchor {
    pub fn label(&self) -> String {
        match self {
            Anchor::Amplitude {
                drive,
                longitudinal,
                transverse,
                channel,
                ..
            } => format!(
                "{}_L{}mm_T{}mm_ch{channel}",
                drive.name(),
                longitudinal * 1e3,
                transverse * 1e3
            ),
            Anchor::Range { drive, .. } => format!("{}_range", drive.name()),
        }
    }

    pub fn target(&self) -> f64 {
        match self {
            Anchor::Amplitude { volts, .. } => *volts,
            Anchor::Range { meters, .. } => *meters,
        }
    }
}

pub fn default_anchors() -> Vec<Anchor> {
    vec![
        Anchor::Amplitude {
            drive: DriveAxis::Transverse,
            longitudinal: 0.02,
            transverse: 0.0,
            channel: 4,
            volts: 1.41,
        },
        Anchor::Amplitude {
            drive: DriveAxis::Transverse,
            longitudinal: 0.02,
            transverse: 0.0,
            channel: 1,
            volts: 0.56,
        },
        Anchor::Range {
            drive: DriveAxis::Longitudinal,
            meters: 0.045,
            threshold_factor: 3.0,
        },
    ]
}

fn bench() -> ReadoutChain {
    ReadoutChain::bench()
}

fn underwater() -> ReadoutChain {
    ReadoutChain::underwater()
}

fn default_drag() -> DragModel {
    DragModel {
        linear_drag_gain: DEFAULT_DRAG_GAIN,
        quadrature_coupling: DEFAULT_QUADRATURE_COUPLING,
    }
}

fn default_ambient() -> AmbientNoise {
    AmbientNoise {
        rms: DEFAULT_AMBIENT_RMS,
        corner_hz: DEFAULT_AMBIENT_CORNER_HZ,
    }
}

fn default_trials() -> u32 {
    10
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub seed: Option<u64>,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub geometry: WhiskerGeometry,
    #[serde(default)]
    pub calibration: ChannelCalibration,
    /// Readout for the bench tests (static, fatigue).
    #[serde(default = "bench")]
    pub bench_readout: ReadoutChain,
    /// Readout for the tank tests.
    #[serde(default = "underwater")]
    pub tank_readout: ReadoutChain,
    #[serde(default = "default_drag")]
    pub drag: DragModel,
    #[serde(default = "default_ambient")]
    pub ambient: AmbientNoise,
    #[serde(default)]
    pub dsp: AnalysisSettings,
    #[serde(default)]
    pub localization: LocalizationConfig,
    #[serde(default)]
    pub static_sweep: StaticConfig,
    #[serde(default)]
    pub fatigue: FatigueProtocol,
    #[serde(default)]
    pub freq_sweep: FreqSweepConfig,
    #[serde(default)]
    pub spatial: SpatialConfig,
    #[serde(default = "default_anchors")]
    pub anchors: Vec<Anchor>,
}

impl ScenarioConfig {
    pub fn new(experiment: ExperimentKind, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment,
            seed: Some(seed),
            trials: default_trials(),
            source: SourceConfig::default(),
            geometry: WhiskerGeometry::default(),
            calibration: ChannelCalibration::default(),
            bench_readout: bench(),
            tank_readout: underwater(),
            drag: default_drag(),
            ambient: default_ambient(),
            dsp: AnalysisSettings::default(),
            localization: LocalizationConfig::default(),
            static_sweep: StaticConfig::default(),
            fatigue: FatigueProtocol::default(),
            freq_sweep: FreqSweepConfig::default(),
            spatial: SpatialConfig::default(),
            anchors: default_anchors(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "at `schema_version`: expected {SCHEMA_VERSION}, found {}",
                self.schema_version
            )));
        }
        if self.trials == 0 {
            return Err(CliError::Config("at `trials`: must be at least 1".into()));
        }
        let at = |field: &str, e: whisker_core::Error| CliError::Config(format!("at `{field}`: {e}"));
        self.geometry.validate().map_err(|e| at("geometry", e))?;
        self.calibration.validate().map_err(|e| at("calibration", e))?;
        self.bench_readout.validate().map_err(|e| at("bench_readout", e))?;
        self.tank_readout.validate().map_err(|e| at("tank_readout", e))?;
        self.drag.validate().map_err(|e| at("drag", e))?;
        self.ambient.validate().map_err(|e| at("ambient", e))?;
        let f = &self.freq_sweep;
        if !(f.start > 0.0 && f.stop > f.start && f.step > 0.0) {
            return Err(CliError::Config(
                "at `freq_sweep`: need 0 < start < stop and step > 0".into(),
            ));
        }
        if f.stop > 45.0 && !f.allow_full_range {
            return Err(CliError::Config(
                "at `freq_sweep.stop`: above 45 Hz requires `allow_full_range`".into(),
            ));
        }
        if f.trials == 0 {
            return Err(CliError::Config("at `freq_sweep.trials`: must be at least 1".into()));
        }
        Ok(())
    }

    /// Seed for simulated runs; mandatory.
    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Config("at `seed`: a seed is required for simulated runs".into()))
    }

    /// Tank sensor model built from the config blocks.
    pub fn tank_model(&self) -> SensorModel {
        SensorModel {
            geometry: self.geometry.clone(),
            calibration: self.calibration.clone(),
            readout: self.tank_readout.clone(),
            drag: self.drag.clone(),
            ambient: self.ambient.clone(),
            frame: SensorFrame::rig(),
        }
    }

    /// Canonical JSON used for the report digest.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical_json().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ScenarioConfig::from_json(r#"{"experiment": "static_sweep", "seed": 7}"#).unwrap();
        assert_eq!(cfg.trials, 10);
        assert_eq!(cfg.bench_readout.amplifier_gain, 23.5);
        assert_eq!(cfg.tank_readout.amplifier_gain, 166.0);
        assert_eq!(cfg, ScenarioConfig::new(ExperimentKind::StaticSweep, 7));
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err =
            ScenarioConfig::from_json(r#"{"experiment": "fatigue", "seed": 1, "fatigue": {"cycles": 5, "bogus": 1}}"#)
                .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fatigue") && msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn invalid_value_is_a_config_error() {
        let err =
            ScenarioConfig::from_json(r#"{"experiment": "fatigue", "seed": 1, "drag": {"linear_drag_gain": -1}}"#)
                .unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn full_range_needs_override() {
        let text = r#"{"experiment": "freq_sweep", "seed": 1, "freq_sweep": {"stop": 50.0}}"#;
        assert!(ScenarioConfig::from_json(text).is_err());
        let text = r#"{"experiment": "freq_sweep", "seed": 1, "freq_sweep": {"stop": 50.0, "allow_full_range": true}}"#;
        assert!(ScenarioConfig::from_json(text).is_ok());
    }

    #[test]
    fn digest_tracks_content() {
        let a = ScenarioConfig::new(ExperimentKind::Fatigue, 1);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = Some(2);
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn round_trips_through_json() {
        let a = ScenarioConfig::new(ExperimentKind::Localize, 3);
        let b = ScenarioConfig::from_json(&a.canonical_json()).unwrap();
        assert_eq!(a, b);
    }
}
