//! Fit of the tank parameters (drag gain, quadrature coupling, noise floor)
//! to anchor amplitudes and ranges.
//!
//! The source radius and velocity stay fixed: only the product of drag gain
//! and velocity is observable, so `U` is the gauge choice.

use serde::Serialize;
use whisker_core::dsp::noise_peak_factor;
use whisker_core::localization::{forward_amplitudes, operational_range, ForwardModelParams};
use whisker_core::lsq::{gauss_newton, LsqOptions};
use whisker_core::sensor_model::{AmbientNoise, DragModel, DriveAxis};
use whisker_core::CHANNELS;

use crate::config::{Anchor, ScenarioConfig};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorResidual {
    pub name: String,
    pub target: f64,
    pub model: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefaultsFit {
    pub drag: DragModel,
    pub ambient: AmbientNoise,
    /// Bin noise floor implied by the fit [V].
    pub floor: f64,
    pub params: ForwardModelParams,
    pub residuals: Vec<AnchorResidual>,
    pub cost: f64,
}

#[derive(Serialize)]
struct Fragment<'a> {
    drag: &'a DragModel,
    ambient: &'a AmbientNoise,
}

impl DefaultsFit {
    /// `drag` and `ambient` blocks ready to paste into a scenario config.
    pub fn config_fragment(&self) -> String {
        let mut s = serde_json::to_string_pretty(&Fragment {
            drag: &self.drag,
            ambient: &self.ambient,
        })
        .expect("fragment serializes");
        s.push('\n');
        s
    }
}

/// Forward-model parameters for a scenario, with an optional floor override.
pub fn forward_params(
    cfg: &ScenarioConfig,
    drag: &DragModel,
    floor: Option<f64>,
) -> Result<ForwardModelParams, CliError> {
    let mut model = cfg.tank_model();
    model.drag = drag.clone();
    let mut p = ForwardModelParams::from_sensor(
        &model,
        cfg.source.radius,
        cfg.source.velocity_amplitude,
        cfg.source.frequency,
        &cfg.dsp,
    )?;
    if let Some(f) = floor {
        p.floors = [f; CHANNELS];
    }
    Ok(p)
}

fn anchor_value(p: &ForwardModelParams, anchor: &Anchor) -> Option<f64> {
    match anchor {
        Anchor::Amplitude {
            drive,
            longitudinal,
            transverse,
            channel,
            ..
        } => forward_amplitudes(p, *drive, *longitudinal, *transverse)
            .ok()
            .map(|a| a[channel - 1]),
        Anchor::Range {
            drive,
            threshold_factor,
            ..
        } => operational_range(p, *drive, *threshold_factor).ok(),
    }
}

/// Ambient RMS that, together with the resistance noise, yields `floor`.
pub fn ambient_for_floor(cfg: &ScenarioConfig, floor: f64) -> Result<AmbientNoise, CliError> {
    let model = cfg.tank_model();
    let chain = &model.readout;
    let fs = chain.sample_rate;
    let white = (chain.small_signal_gain(model.calibration.r0) * model.calibration.sigma_r).powi(2) / fs;
    let bin = floor / noise_peak_factor(&cfg.dsp, cfg.source.frequency)?;
    let psd = bin * bin * cfg.dsp.window_seconds / 6.0 - white;
    if psd < 0.0 {
        return Err(CliError::Runtime(format!(
            "fitted floor {floor} V lies below the resistance-noise floor"
        )));
    }
    Ok(AmbientNoise {
        rms: AmbientNoise::rms_for_psd(psd, cfg.source.frequency, cfg.ambient.corner_hz, fs),
        corner_hz: cfg.ambient.corner_hz,
    })
}

pub fn fit_default_params(cfg: &ScenarioConfig) -> Result<DefaultsFit, CliError> {
    let anchors = &cfg.anchors;
    if anchors.is_empty() {
        return Err(CliError::Config("at `anchors`: at least one anchor is required".into()));
    }
    for (i, a) in anchors.iter().enumerate() {
        if let Anchor::Amplitude { channel, .. } = a {
            if !(1..=CHANNELS).contains(channel) {
                return Err(CliError::Config(format!(
                    "at `anchors[{i}].channel`: must be 1..={CHANNELS}"
                )));
            }
        }
        if !(a.target() > 0.0) {
            return Err(CliError::Config(format!("at `anchors[{i}]`: target must be positive")));
        }
    }

    let build = |x: &[f64]| -> Option<ForwardModelParams> {
        let c = x[1];
        if !(0.0..0.95).contains(&c) {
            return None;
        }
        let drag = DragModel {
            linear_drag_gain: x[0].exp(),
            quadrature_coupling: c,
        };
        forward_params(cfg, &drag, Some(x[2].exp())).ok()
    };
    let residuals = |x: &[f64]| -> Option<Vec<f64>> {
        let p = build(x)?;
        anchors
            .iter()
            .map(|a| anchor_value(&p, a).map(|v| (v - a.target()) / a.target()))
            .collect()
    };

    // seed: unit drag gain scaled to the largest amplitude anchor
    let probe = DragModel {
        linear_drag_gain: 1.0,
        quadrature_coupling: 0.3,
    };
    let unit = forward_params(cfg, &probe, Some(0.0))?;
    let mut scale: f64 = 1.0;
    for a in anchors {
        if let Anchor::Amplitude { .. } = a {
            if let Some(v) = anchor_value(&unit, a) {
                if v > 0.0 {
                    scale = scale.max(a.target() / v);
                }
            }
        }
    }
    let top = anchors
        .iter()
        .filter(|a| matches!(a, Anchor::Amplitude { .. }))
        .map(Anchor::target)
        .fold(0.0, f64::max);
    let floor0 = if top > 0.0 { top / 20.0 } else { 0.05 };
    let x0 = [scale.ln(), 0.3, floor0.ln()];

    let opts = LsqOptions {
        max_iterations: 400,
        ..Default::default()
    };
    let sol = gauss_newton(residuals, &x0, &opts).map_err(|e| match e {
        whisker_core::Error::NonConvergence { cost, best, .. } => CliError::Runtime(format!(
            "parameter fit did not converge: cost {cost:.3e} at ln C = {:.4}, c = {:.4}, ln floor = {:.4}",
            best[0], best[1], best[2]
        )),
        other => other.into(),
    })?;
    let x = sol.params;
    let params = build(&x).ok_or_else(|| CliError::Runtime("fit ended outside the model domain".into()))?;
    let drag = DragModel {
        linear_drag_gain: x[0].exp(),
        quadrature_coupling: x[1],
    };
    let floor = x[2].exp();
    let ambient = ambient_for_floor(cfg, floor)?;
    let residuals = anchors
        .iter()
        .map(|a| {
            let model = anchor_value(&params, a).unwrap_or(f64::NAN);
            AnchorResidual {
                name: a.label(),
                target: a.target(),
                model,
                relative_error: (model - a.target()) / a.target(),
            }
        })
        .collect();
    Ok(DefaultsFit {
        drag,
        ambient,
        floor,
        params,
        residuals,
        cost: sol.cost,
    })
}

/// Strongest-channel forward amplitudes along `T = 0` for a drive.
pub fn on_axis_peak(p: &ForwardModelParams, drive: DriveAxis, l: f64) -> Result<f64, CliError> {
    Ok(forward_amplitudes(p, drive, l, 0.0)?.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentKind, DEFAULT_AMBIENT_RMS, DEFAULT_DRAG_GAIN, DEFAULT_QUADRATURE_COUPLING};

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::new(ExperimentKind::FitDefaults, 1)
    }

    #[test]
    fn anchors_reproduced() {
        let fit = fit_default_params(&cfg()).unwrap();
        for r in &fit.residuals {
            assert!(r.relative_error.abs() < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn shipped_defaults_match_fit() {
        let fit = fit_default_params(&cfg()).unwrap();
        assert!((fit.drag.linear_drag_gain - DEFAULT_DRAG_GAIN).abs() / DEFAULT_DRAG_GAIN < 0.01);
        assert!((fit.drag.quadrature_coupling - DEFAULT_QUADRATURE_COUPLING).abs() < 0.005);
        assert!((fit.ambient.rms - DEFAULT_AMBIENT_RMS).abs() / DEFAULT_AMBIENT_RMS < 0.01);
    }

    #[test]
    fn doubled_amplitude_anchors_double_the_gain() {
        let base = fit_default_params(&cfg()).unwrap();
        let mut c = cfg();
        for a in &mut c.anchors {
            if let Anchor::Amplitude { volts, .. } = a {
                *volts *= 2.0;
            }
        }
        let doubled = fit_default_params(&c).unwrap();
        let ratio = doubled.drag.linear_drag_gain / base.drag.linear_drag_gain;
        assert!((ratio - 2.0).abs() < 1e-4, "{ratio}");
        assert!((doubled.floor / base.floor - 2.0).abs() < 1e-4);
        assert!((doubled.drag.quadrature_coupling - base.drag.quadrature_coupling).abs() < 1e-6);
        assert!(doubled.cost <= base.cost + 1e-12);
    }

    #[test]
    fn empty_anchor_set_rejected() {
        let mut c = cfg();
        c.anchors.clear();
        assert!(matches!(fit_default_params(&c), Err(CliError::Config(_))));
    }

    #[test]
    fn fragment_parses_back() {
        let fit = fit_default_params(&cfg()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fit.config_fragment()).unwrap();
        assert!(v["drag"]["linear_drag_gain"].as_f64().unwrap() > 0.0);
        assert!(v["ambient"]["rms"].as_f64().unwrap() > 0.0);
    }
}
