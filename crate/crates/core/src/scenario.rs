//! Scenario files: one JSON document describing a pendulum, its pivot law,
//! the initial data, and the run settings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::fingerprint;
use crate::integrator::{IntegrateError, RegionGuard, Tolerances};
use crate::model::{ModelError, Params, Pendulum, PivotLaw, State};
use crate::wazewski::{check_non_intersecting, ShootConfig, ShootError, SigmaCurve};

pub const DEFAULT_HORIZON: f64 = 50.0;
pub const DEFAULT_MAX_ITERS: usize = 200;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
}

impl ScenarioError {
    fn invalid(field: &str, reason: impl std::fmt::Display) -> Self {
        ScenarioError::Validation { field: field.into(), reason: reason.to_string() }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            ScenarioError::Validation { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    /// Open strip `0 < q < pi`: touching the boundary is an exit.
    Strict,
    /// Closed strip `0 <= q <= pi` with friction deciding at the corners.
    #[default]
    Closed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Initial {
    Point {
        q0: f64,
        p0: f64,
        #[serde(default)]
        t0: f64,
    },
    Curve {
        #[serde(default)]
        sigma: SigmaCurve,
        #[serde(default)]
        t0: f64,
    },
    Family {
        sigmas: Vec<SigmaCurve>,
        #[serde(default)]
        t0: f64,
    },
}

impl Initial {
    pub fn t0(&self) -> f64 {
        match self {
            Initial::Point { t0, .. } | Initial::Curve { t0, .. } | Initial::Family { t0, .. } => *t0,
        }
    }

    /// Curves to shoot along: one for `curve`, all of them for `family`.
    pub fn curves(&self) -> Option<Vec<SigmaCurve>> {
        match self {
            Initial::Point { .. } => None,
            Initial::Curve { sigma, .. } => Some(vec![sigma.clone()]),
            Initial::Family { sigmas, .. } => Some(sigmas.clone()),
        }
    }
}

fn default_horizon() -> f64 {
    DEFAULT_HORIZON
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub params: Params,
    #[serde(default)]
    pub pivot: PivotLaw,
    pub initial: Initial,
    /// Duration (s) counted from the initial time.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub mode: RegionMode,
    /// Angle interval for `simulate`; shooting always uses `[0, pi]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<[f64; 2]>,
    /// Bisection step limit for `shoot` and `sweep`.
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn model_field(e: &ModelError) -> &'static str {
    match e {
        ModelError::InvalidParams { name, .. } => name,
        ModelError::InvalidPivot(_) => "pivot",
        _ => "params",
    }
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.params.validate().map_err(|e| ScenarioError::invalid(model_field(&e), e))?;
        self.pivot.validate().map_err(|e| ScenarioError::invalid("pivot", e))?;
        self.tolerances.validate().map_err(|e| match e {
            IntegrateError::InvalidTolerances(r) => ScenarioError::invalid("tolerances", r),
            other => ScenarioError::invalid("tolerances", other),
        })?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ScenarioError::invalid("horizon", format!("must be > 0, got {}", self.horizon)));
        }
        if !self.initial.t0().is_finite() {
            return Err(ScenarioError::invalid("initial.t0", "must be finite"));
        }
        match &self.initial {
            Initial::Point { q0, p0, .. } => {
                if !(q0.is_finite() && p0.is_finite()) {
                    return Err(ScenarioError::invalid("initial.point", "q0 and p0 must be finite"));
                }
            }
            Initial::Curve { sigma, .. } => {
                sigma.validate().map_err(|e| ScenarioError::invalid("initial.curve.sigma", curve_reason(e)))?;
            }
            Initial::Family { sigmas, .. } => {
                if sigmas.is_empty() {
                    return Err(ScenarioError::invalid("initial.family.sigmas", "must not be empty"));
                }
                for (i, s) in sigmas.iter().enumerate() {
                    s.validate().map_err(|e| {
                        ScenarioError::invalid(&format!("initial.family.sigmas[{i}]"), curve_reason(e))
                    })?;
                }
                check_non_intersecting(sigmas)
                    .map_err(|e| ScenarioError::invalid("initial.family.sigmas", e))?;
            }
        }
        if let Some([lo, hi]) = self.guard {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(ScenarioError::invalid("guard", format!("need lo < hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn pendulum(&self) -> Pendulum {
        Pendulum { params: self.params, pivot: self.pivot.clone() }
    }

    pub fn t0(&self) -> f64 {
        self.initial.t0()
    }

    /// Absolute end time.
    pub fn t_end(&self) -> f64 {
        self.t0() + self.horizon
    }

    pub fn initial_state(&self) -> Option<State> {
        match self.initial {
            Initial::Point { q0, p0, t0 } => Some(State::slipping(q0, p0, t0)),
            _ => None,
        }
    }

    pub fn region_guard(&self) -> Option<RegionGuard> {
        self.guard.map(|[lo, hi]| match self.mode {
            RegionMode::Strict => RegionGuard::open(lo, hi),
            RegionMode::Closed => RegionGuard::closed(lo, hi),
        })
    }

    pub fn shoot_config(&self) -> ShootConfig {
        ShootConfig {
            t0: self.t0(),
            horizon: self.t_end(),
            tol: self.tolerances,
            strict: self.mode == RegionMode::Strict,
        }
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }

    /// Pretty JSON with every default written out; loads back to an equal
    /// scenario.
    pub fn normalized(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

fn curve_reason(e: ShootError) -> String {
    match e {
        ShootError::InvalidCurve(r) => r,
        other => other.to_string(),
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    Scenario::from_json_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "params": {"l": 1.0, "mu": 0.5},
        "pivot": {"kind": "constant", "a": 0.0},
        "initial": {"point": {"q0": 1.0, "p0": 0.0}}
    }"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let sc = Scenario::from_json_str(MINIMAL).unwrap();
        assert_eq!(sc.horizon, 50.0);
        let t = sc.tolerances;
        assert_eq!((t.rel_tol, t.abs_tol, t.event_tol, t.stick_band), (1e-9, 1e-11, 1e-10, 1e-8));
        assert_eq!((sc.params.m, sc.params.g), (1.0, 9.8));
        assert_eq!(sc.mode, RegionMode::Closed);
        assert_eq!(sc.initial_state(), Some(State::slipping(1.0, 0.0, 0.0)));
    }

    #[test]
    fn normalized_dump_round_trips() {
        let sc = Scenario::from_json_str(MINIMAL).unwrap();
        let dump = sc.normalized();
        assert!(dump.contains("\"stick_band\""));
        let back = Scenario::from_json_str(&dump).unwrap();
        assert_eq!(back, sc);
        assert_eq!(back.fingerprint(), sc.fingerprint());
        assert_eq!(back.normalized(), dump);
    }

    #[test]
    fn negative_mu_names_the_field() {
        let text = MINIMAL.replace("\"mu\": 0.5", "\"mu\": -0.1");
        let err = Scenario::from_json_str(&text).unwrap_err();
        assert_eq!(err.field(), Some("mu"));
    }

    #[test]
    fn zero_curve_start_is_rejected() {
        let text = r#"{"params": {"l": 1.0, "mu": 0.5},
            "initial": {"curve": {"sigma": {"kind": "linear", "slope": 1.0, "offset": 0.0}}}}"#;
        let err = Scenario::from_json_str(text).unwrap_err();
        assert_eq!(err.field(), Some("initial.curve.sigma"));
        assert!(err.to_string().contains("sigma endpoint sign"), "{err}");
    }

    #[test]
    fn default_curve_and_family() {
        let sc = Scenario::from_json_str(r#"{"params": {"l": 1.0, "mu": 0.5}, "initial": {"curve": {}}}"#).unwrap();
        assert_eq!(sc.initial.curves().unwrap(), vec![SigmaCurve::default()]);
        let crossing = r#"{"params": {"l": 1.0, "mu": 0.5}, "initial": {"family": {"sigmas": [
            {"kind": "linear", "slope": 1.0, "offset": -1.5707963267948966},
            {"kind": "linear", "slope": 2.0, "offset": -3.141592653589793}]}}}"#;
        let err = Scenario::from_json_str(crossing).unwrap_err();
        assert_eq!(err.field(), Some("initial.family.sigmas"));
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = Scenario::from_json_str("{\n  \"params\": {\"l\": 1.0, \"mu\": 0.5},\n  \"initial\": oops\n}").unwrap_err();
        match err {
            ScenarioError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        let unknown = MINIMAL.replace("\"pivot\"", "\"pivott\"");
        assert!(matches!(Scenario::from_json_str(&unknown), Err(ScenarioError::Parse { .. })));
    }

    #[test]
    fn bad_tolerances_rejected() {
        let text = MINIMAL.replace(
            "\"initial\"",
            "\"tolerances\": {\"rel_tol\": 1e-9, \"abs_tol\": 1e-8, \"event_tol\": 1e-10, \"stick_band\": 1e-9}, \"initial\"",
        );
        let err = Scenario::from_json_str(&text).unwrap_err();
        assert_eq!(err.field(), Some("tolerances"));
    }
}
