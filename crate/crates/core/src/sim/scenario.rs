use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::control::ControllerConfig;
use crate::error::{Error, Result};
use crate::observability::Tolerances;
use crate::observer::ObserverConfig;
use crate::power::{PlantFile, PlantModel};
use crate::reconfig::{FaultEvent, SelectionConfig, SubsystemId};

/// Plant given by path (relative to the scenario file) or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantSource {
    Path(String),
    Inline(Box<PlantFile>),
}

/// Rectangular step in mechanical power on one machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub subsystem: SubsystemId,
    pub t_start: f64,
    pub duration: f64,
    pub delta_pm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
}

fn default_alpha() -> f64 {
    100.0
}
fn default_xi() -> f64 {
    50.0
}
fn default_true() -> bool {
    true
}
fn default_settling() -> f64 {
    10.0
}
fn default_recovery_window() -> f64 {
    5.0
}
fn default_bank_cap() -> usize {
    crate::reconfig::DEFAULT_BANK_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub plant: PlantSource,
    /// Simulated time, s.
    pub horizon: f64,
    /// Fixed integration step, s.
    pub dt: f64,
    #[serde(default)]
    pub faults: Vec<FaultEvent>,
    #[serde(default)]
    pub observer: ObserverConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    /// Exciter ceiling: each field input is clamped to `u₀ ± field_limit`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_limit: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(rename = "J_max", default, skip_serializing_if = "Option::is_none")]
    pub j_max: Option<f64>,
    #[serde(default)]
    pub tol: Tolerances,
    /// Half-width of uniform measurement noise; 0 disables it.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    /// Initial deviation from the operating point, empty for zero.
    #[serde(default)]
    pub initial_state: Vec<f64>,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
    /// When false, diagnosed faults are logged but nothing is switched.
    #[serde(default = "default_true")]
    pub reconfiguration: bool,
    /// Stop once any state deviation exceeds this magnitude.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_limit: Option<f64>,
    /// Minimum simulated time after the last diagnosis.
    #[serde(default = "default_settling")]
    pub settling_window: f64,
    /// Trailing window used to judge recovery, s.
    #[serde(default = "default_recovery_window")]
    pub recovery_window: f64,
    #[serde(default = "default_bank_cap")]
    pub bank_cap: usize,
    #[serde(default)]
    pub output: OutputPaths,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads a scenario and resolves a relative plant path against the
    /// scenario's directory.
    pub fn load(path: &Path) -> Result<(Self, PlantModel)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::param("scenario", format!("{}: {e}", path.display())))?;
        let scn = Self::from_json(&text)?;
        let plant = scn.resolve_plant(path.parent())?;
        scn.validate(&plant)?;
        Ok((scn, plant))
    }

    pub fn resolve_plant(&self, base: Option<&Path>) -> Result<PlantModel> {
        match &self.plant {
            PlantSource::Inline(f) => (**f).clone().try_into(),
            PlantSource::Path(p) => {
                let mut full = PathBuf::from(p);
                if full.is_relative() {
                    if let Some(b) = base {
                        full = b.join(full);
                    }
                }
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| Error::param("plant", format!("{}: {e}", full.display())))?;
                PlantModel::from_json(&text)
            }
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig { alpha: self.alpha, xi: self.xi, j_max: self.j_max, tol: self.tol, excluded: Vec::new() }
    }

    pub fn validate(&self, plant: &PlantModel) -> Result<()> {
        let n = plant.n();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", "must be finite and > 0"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::param("horizon", "must be finite and > 0"));
        }
        if self.steps() == 0 {
            return Err(Error::param("horizon", "shorter than one step"));
        }
        for (k, f) in self.faults.iter().enumerate() {
            f.validate(k, n, 1)?;
            if k > 0 && f.t_fault < self.faults[k - 1].t_fault {
                return Err(Error::param(format!("faults[{k}].t_fault"), "fault events must be time-ordered"));
            }
        }
        if !(self.settling_window >= 0.0) {
            return Err(Error::param("settling_window", "must be >= 0"));
        }
        if let Some(last) = self.faults.iter().map(FaultEvent::t_diagnosed).reduce(f64::max) {
            if self.horizon < last + self.settling_window {
                return Err(Error::param(
                    "horizon",
                    format!("must cover the last diagnosis at {last} s plus the {} s settling window", self.settling_window),
                ));
            }
        }
        if !(self.recovery_window > 0.0) {
            return Err(Error::param("recovery_window", "must be > 0"));
        }
        self.selection().validate()?;
        self.observer.validate()?;
        if !self.observer.initial_offset.is_empty() && self.observer.initial_offset.len() != 3 * n {
            return Err(Error::param("observer.initial_offset", format!("expected {} entries", 3 * n)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::param("noise", "must be finite and >= 0"));
        }
        if !self.initial_state.is_empty() && self.initial_state.len() != 3 * n {
            return Err(Error::param("initial_state", format!("expected {} entries", 3 * n)));
        }
        if self.initial_state.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("initial_state", "must be finite"));
        }
        for (k, d) in self.disturbances.iter().enumerate() {
            if d.subsystem.0 == 0 || d.subsystem.0 > n {
                return Err(Error::param(format!("disturbances[{k}].subsystem"), format!("unknown subsystem id {}", d.subsystem)));
            }
            if !(d.t_start >= 0.0 && d.duration >= 0.0 && d.delta_pm.is_finite()) {
                return Err(Error::param(format!("disturbances[{k}]"), "t_start, duration must be >= 0 and delta_pm finite"));
            }
        }
        if let Some(l) = self.field_limit {
            if !(l > 0.0) {
                return Err(Error::param("field_limit", "must be > 0"));
            }
        }
        if let Some(l) = self.divergence_limit {
            if !(l > 0.0) {
                return Err(Error::param("divergence_limit", "must be > 0"));
            }
        }
        if let super::control::ControllerConfig::Gains(g) = &self.controller {
            if g.len() != n {
                return Err(Error::param("controller.gains", format!("expected {n} rows")));
            }
        }
        if let super::control::ControllerConfig::Poles(p) = &self.controller {
            if !p.is_empty() && p.len() != n {
                return Err(Error::param("controller.poles", format!("expected {n} pole sets")));
            }
        }
        Ok(())
    }
}

/// The shipped 5-machine desk plant.
pub fn desk_plant() -> PlantModel {
    PlantModel::from_json(include_str!("../../data/desk5.json")).expect("shipped plant parses")
}

/// The shipped two-fault desk scenario with its plant inlined.
pub fn desk_scenario() -> Scenario {
    let mut s = Scenario::from_json(include_str!("../../data/desk_scenario.json")).expect("shipped scenario parses");
    let file: PlantFile = serde_json::from_str(include_str!("../../data/desk5.json")).expect("shipped plant parses");
    s.plant = PlantSource::Inline(Box::new(file));
    s
}
