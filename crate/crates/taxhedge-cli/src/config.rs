//! Scenario configuration: JSON schema, validation, and conversion into the
//! core model types.
//!
//! Validation is total before any computation: `validate` walks the whole
//! document and returns every violation it finds, each tagged with the path
//! to the offending field.

use serde::{Deserialize, Serialize};

use taxhedge::cashflow::{PaymentSpec, TaxExpenseSpec};
use taxhedge::market::Scenario;
use taxhedge::markov::MarkovModel;
use taxhedge::term_structure::VasicekParams;
use taxhedge::time::{segments_to_step_function, PiecewiseConstant, TimeGrid};

pub const DEFAULT_GRID_STEPS: usize = 1000;
pub const DEFAULT_QUAD_POINTS: usize = 200;
pub const DEFAULT_PATHS: usize = 100_000;
pub const DEFAULT_REPORTING_NODES: usize = 101;
pub const DEFAULT_ILLUSTRATION_PATHS: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegmentConfig {
    pub start: f64,
    pub end: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VasicekConfig {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub r0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IntensityConfig {
    pub from: String,
    pub to: String,
    pub segments: Vec<SegmentConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SojournConfig {
    pub state: String,
    pub segments: Vec<SegmentConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TransitionPaymentConfig {
    pub from: String,
    pub to: String,
    pub segments: Vec<SegmentConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct PaymentsConfig {
    #[serde(default)]
    pub initial_premium: f64,
    #[serde(default)]
    pub sojourn: Vec<SojournConfig>,
    #[serde(default)]
    pub transition: Vec<TransitionPaymentConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExpenseConfig {
    pub state: String,
    pub segments: Vec<SegmentConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaxExpenseConfig {
    pub gamma: f64,
    #[serde(default)]
    pub expense: Vec<ExpenseConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MonteCarloConfig {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_paths() -> usize {
    DEFAULT_PATHS
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { paths: DEFAULT_PATHS, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OutputsConfig {
    #[serde(default = "default_reporting_nodes")]
    pub reporting_nodes: usize,
    /// Extra fixed short rates the reserve curve is also evaluated at.
    #[serde(default)]
    pub rate_scenarios: Vec<f64>,
    /// Number of per-path illustration tables in the hedge report.
    #[serde(default = "default_illustration_paths")]
    pub illustration_paths: usize,
}

fn default_reporting_nodes() -> usize {
    DEFAULT_REPORTING_NODES
}

fn default_illustration_paths() -> usize {
    DEFAULT_ILLUSTRATION_PATHS
}

impl Default for OutputsConfig {
    fn default() -> Self {
        Self {
            reporting_nodes: DEFAULT_REPORTING_NODES,
            rate_scenarios: Vec::new(),
            illustration_paths: DEFAULT_ILLUSTRATION_PATHS,
        }
    }
}

/// The scenario document as written by users.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioConfig {
    pub horizon: f64,
    pub states: Vec<String>,
    pub vasicek: VasicekConfig,
    #[serde(default)]
    pub intensities: Vec<IntensityConfig>,
    #[serde(default)]
    pub payments: PaymentsConfig,
    pub tax_expense: TaxExpenseConfig,
    #[serde(default = "default_grid_steps")]
    pub grid_steps: usize,
    #[serde(default = "default_quad_points")]
    pub quad_points: usize,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
}

fn default_grid_steps() -> usize {
    DEFAULT_GRID_STEPS
}

fn default_quad_points() -> usize {
    DEFAULT_QUAD_POINTS
}

/// One violation, tagged with the path to the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl ScenarioConfig {
    /// Parse a JSON document into a validated configuration. Either the
    /// config is fully valid or *all* violations are reported.
    pub fn parse(text: &str) -> Result<Self, Vec<ValidationError>> {
        let config: ScenarioConfig = serde_json::from_str(text).map_err(|e| {
            vec![ValidationError { path: "$".into(), message: format!("invalid JSON: {e}") }]
        })?;
        let errors = config.validate();
        if errors.is_empty() {
            Ok(config)
        } else {
            Err(errors)
        }
    }

    fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn validate(&self) -> Vec<ValidationError> {
        fn err(errors: &mut Vec<ValidationError>, path: &str, message: String) {
            errors.push(ValidationError { path: path.into(), message });
        }
        fn check_segments(
            errors: &mut Vec<ValidationError>,
            horizon: f64,
            path: String,
            segments: &[SegmentConfig],
            nonnegative: bool,
        ) {
            if let Err(e) = build_step_function(segments, horizon) {
                errors.push(ValidationError { path, message: e });
            } else if nonnegative {
                if let Some((i, s)) = segments.iter().enumerate().find(|(_, s)| s.value < 0.0) {
                    errors.push(ValidationError {
                        path: format!("{path}[{i}].value"),
                        message: format!("must be nonnegative, got {}", s.value),
                    });
                }
            }
        }

        let mut errors = Vec::new();
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            err(&mut errors, "horizon", format!("must be positive and finite, got {}", self.horizon));
        }
        if self.states.is_empty() {
            err(&mut errors, "states", "at least one state is required".into());
        }
        for (i, s) in self.states.iter().enumerate() {
            if s.is_empty() {
                err(&mut errors, &format!("states[{i}]"), "state names must be non-empty".into());
            }
            if self.states[..i].contains(s) {
                err(&mut errors, &format!("states[{i}]"), format!("duplicate state name \"{s}\""));
            }
        }

        let v = &self.vasicek;
        if !(v.kappa.is_finite() && v.kappa > 0.0) {
            err(&mut errors, "vasicek.kappa", format!("must be positive and finite, got {}", v.kappa));
        }
        if !(v.sigma.is_finite() && v.sigma >= 0.0) {
            err(&mut errors, "vasicek.sigma", format!("must be nonnegative and finite, got {}", v.sigma));
        }
        if !v.theta.is_finite() {
            err(&mut errors, "vasicek.theta", "must be finite".into());
        }
        if !v.r0.is_finite() {
            err(&mut errors, "vasicek.r0", "must be finite".into());
        }

        for (i, intensity) in self.intensities.iter().enumerate() {
            let base = format!("intensities[{i}]");
            if self.state_index(&intensity.from).is_none() {
                errors.push(ValidationError {
                    path: format!("{base}.from"),
                    message: format!("unknown state \"{}\"", intensity.from),
                });
            }
            if self.state_index(&intensity.to).is_none() {
                errors.push(ValidationError {
                    path: format!("{base}.to"),
                    message: format!("unknown state \"{}\"", intensity.to),
                });
            }
            if intensity.from == intensity.to {
                errors.push(ValidationError {
                    path: base.clone(),
                    message: "transition must connect distinct states".into(),
                });
            }
            check_segments(&mut errors, self.horizon, format!("{base}.segments"), &intensity.segments, true);
        }

        for (i, sojourn) in self.payments.sojourn.iter().enumerate() {
            let base = format!("payments.sojourn[{i}]");
            if self.state_index(&sojourn.state).is_none() {
                errors.push(ValidationError {
                    path: format!("{base}.state"),
                    message: format!("unknown state \"{}\"", sojourn.state),
                });
            }
            check_segments(&mut errors, self.horizon, format!("{base}.segments"), &sojourn.segments, false);
        }
        for (i, tr) in self.payments.transition.iter().enumerate() {
            let base = format!("payments.transition[{i}]");
            if self.state_index(&tr.from).is_none() {
                errors.push(ValidationError {
                    path: format!("{base}.from"),
                    message: format!("unknown state \"{}\"", tr.from),
                });
            }
            if self.state_index(&tr.to).is_none() {
                errors.push(ValidationError {
                    path: format!("{base}.to"),
                    message: format!("unknown state \"{}\"", tr.to),
                });
            }
            check_segments(&mut errors, self.horizon, format!("{base}.segments"), &tr.segments, false);
        }
        if !self.payments.initial_premium.is_finite() {
            err(&mut errors, "payments.initial_premium", "must be finite".into());
        }

        if !(self.tax_expense.gamma.is_finite() && (0.0..1.0).contains(&self.tax_expense.gamma)) {
            err(&mut errors, "tax_expense.gamma", "gamma must lie in [0,1)".into());
        }
        for (i, expense) in self.tax_expense.expense.iter().enumerate() {
            let base = format!("tax_expense.expense[{i}]");
            if self.state_index(&expense.state).is_none() {
                errors.push(ValidationError {
                    path: format!("{base}.state"),
                    message: format!("unknown state \"{}\"", expense.state),
                });
            }
            check_segments(&mut errors, self.horizon, format!("{base}.segments"), &expense.segments, true);
        }

        if self.grid_steps < 1 {
            err(&mut errors, "grid_steps", "must be at least 1".into());
        }
        if self.quad_points < 2 {
            err(&mut errors, "quad_points", "must be at least 2".into());
        }
        if self.monte_carlo.paths < 2 {
            err(&mut errors, "monte_carlo.paths", "must be at least 2".into());
        }
        if self.outputs.reporting_nodes < 2 {
            err(&mut errors, "outputs.reporting_nodes", "must be at least 2".into());
        }
        for (i, r) in self.outputs.rate_scenarios.iter().enumerate() {
            if !r.is_finite() {
                err(&mut errors, &format!("outputs.rate_scenarios[{i}]"), "must be finite".into());
            }
        }
        errors
    }

    /// Build the core scenario; the config must already be valid.
    pub fn to_scenario(&self) -> Result<Scenario, Vec<ValidationError>> {
        let errors = self.validate();
        if !errors.is_empty() {
            return Err(errors);
        }
        let horizon = self.horizon;
        let n = self.states.len();
        let to_core = |e: taxhedge::Error| {
            vec![ValidationError { path: "$".into(), message: e.to_string() }]
        };

        let vasicek = VasicekParams::new(
            self.vasicek.kappa,
            self.vasicek.theta,
            self.vasicek.sigma,
            self.vasicek.r0,
        )
        .map_err(to_core)?;

        let intensities = self
            .intensities
            .iter()
            .map(|i| {
                let f = build_step_function(&i.segments, horizon).expect("validated");
                (
                    self.state_index(&i.from).expect("validated"),
                    self.state_index(&i.to).expect("validated"),
                    f,
                )
            })
            .collect();
        let model = MarkovModel::new(n, horizon, intensities).map_err(to_core)?;

        let sojourn = self
            .payments
            .sojourn
            .iter()
            .map(|s| {
                (
                    self.state_index(&s.state).expect("validated"),
                    build_step_function(&s.segments, horizon).expect("validated"),
                )
            })
            .collect();
        let transition = self
            .payments
            .transition
            .iter()
            .map(|t| {
                (
                    self.state_index(&t.from).expect("validated"),
                    self.state_index(&t.to).expect("validated"),
                    build_step_function(&t.segments, horizon).expect("validated"),
                )
            })
            .collect();
        let payments =
            PaymentSpec::new(n, horizon, self.payments.initial_premium, sojourn, transition)
                .map_err(to_core)?;

        let zero = PiecewiseConstant::constant(0.0, horizon).expect("positive horizon");
        let mut expense = vec![zero; n];
        for e in &self.tax_expense.expense {
            let idx = self.state_index(&e.state).expect("validated");
            expense[idx] = build_step_function(&e.segments, horizon).expect("validated");
        }
        let tax_expense =
            TaxExpenseSpec::new(self.tax_expense.gamma, expense).map_err(to_core)?;

        Scenario::new(vasicek, model, payments, tax_expense).map_err(to_core)
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::uniform(self.horizon, self.grid_steps).expect("validated horizon and steps")
    }

    /// Canonical serialization used for hashing and round-trips.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn build_step_function(
    segments: &[SegmentConfig],
    horizon: f64,
) -> Result<PiecewiseConstant, String> {
    let triples: Vec<(f64, f64, f64)> =
        segments.iter().map(|s| (s.start, s.end, s.value)).collect();
    segments_to_step_function(&triples, horizon).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
        "horizon": 10.0,
        "states": ["active", "dead"],
        "vasicek": {"kappa": 0.1, "theta": 0.03, "sigma": 0.01, "r0": 0.02},
        "intensities": [
            {"from": "active", "to": "dead",
             "segments": [{"start": 0.0, "end": 10.0, "value": 0.01}]}
        ],
        "payments": {
            "transition": [
                {"from": "active", "to": "dead",
                 "segments": [{"start": 0.0, "end": 10.0, "value": 1.0}]}
            ]
        },
        "tax_expense": {
            "gamma": 0.153,
            "expense": [
                {"state": "active",
                 "segments": [{"start": 0.0, "end": 10.0, "value": 0.005}]}
            ]
        }
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let config = ScenarioConfig::parse(MINIMAL).unwrap();
        assert_eq!(config.grid_steps, 1000);
        assert_eq!(config.quad_points, 200);
        assert_eq!(config.monte_carlo.paths, 100_000);
        assert_eq!(config.monte_carlo.seed, 0);
        let scenario = config.to_scenario().unwrap();
        assert_eq!(scenario.model.n_states(), 2);
        assert_eq!(scenario.tax_expense.gamma, 0.153);
    }

    #[test]
    fn gamma_out_of_range_is_rejected() {
        let text = MINIMAL.replace("\"gamma\": 0.153", "\"gamma\": 1.0");
        let errors = ScenarioConfig::parse(&text).unwrap_err();
        assert!(errors
            .iter()
            .any(|e| e.path == "tax_expense.gamma" && e.message.contains("[0,1)")));
    }

    #[test]
    fn segment_past_horizon_names_offender() {
        let text = MINIMAL.replace(
            r#"{"from": "active", "to": "dead",
             "segments": [{"start": 0.0, "end": 10.0, "value": 0.01}]}"#,
            r#"{"from": "active", "to": "dead",
             "segments": [{"start": 0.0, "end": 12.0, "value": 0.01}]}"#,
        );
        let errors = ScenarioConfig::parse(&text).unwrap_err();
        assert!(
            errors
                .iter()
                .any(|e| e.path == "intensities[0].segments" && e.message.contains("after the horizon")),
            "{errors:?}"
        );
    }

    #[test]
    fn all_errors_are_collected() {
        let text = MINIMAL
            .replace("\"gamma\": 0.153", "\"gamma\": 2.0")
            .replace(
                r#""from": "active", "to": "dead",
             "segments": [{"start": 0.0, "end": 10.0, "value": 0.01}]"#,
                r#""from": "ghost", "to": "dead",
             "segments": [{"start": 0.0, "end": 10.0, "value": -0.01}]"#,
            );
        let errors = ScenarioConfig::parse(&text).unwrap_err();
        assert!(errors.len() >= 3, "expected several errors, got {errors:?}");
        assert!(errors.iter().any(|e| e.path == "tax_expense.gamma"));
        assert!(errors.iter().any(|e| e.path == "intensities[0].from"));
        assert!(errors.iter().any(|e| e.path.contains("segments")));
    }

    #[test]
    fn round_trip_is_identity() {
        let config = ScenarioConfig::parse(MINIMAL).unwrap();
        let json = config.to_json();
        let reparsed = ScenarioConfig::parse(&json).unwrap();
        assert_eq!(config, reparsed);
    }
}
