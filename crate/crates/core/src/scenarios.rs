//! Bundled scenario presets and the fixtures that state what a run of each
//! must show.
//!
//! Presets are `.scn` files (scenario TOML). A fixture is a small TOML
//! manifest naming a preset, the exit status its run should reach and a list
//! of properties, each checked against the run report by a named checker.

use crate::ensemble::Report;
use crate::model::{Scenario, ScenarioError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! bundle {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../scenarios/", $name, ".scn")))),*]
    };
}

/// `(name, source)` of every bundled scenario.
pub const SCENARIOS: &[(&str, &str)] = bundle!(
    "free_gaussian",
    "double_slit",
    "harmonic_ground",
    "vacuum",
    "stern_gerlach_50_50",
    "stern_gerlach_25_75",
    "qed_toy_emission",
    "qed_toy_grid",
    "moving_node",
);

macro_rules! fixtures {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../scenarios/", $name, ".fixture.toml")))),*]
    };
}

/// `(name, manifest)` of every fixture.
pub const FIXTURES: &[(&str, &str)] = fixtures!(
    "free_gaussian",
    "double_slit",
    "harmonic_ground",
    "vacuum_stationary",
    "stern_gerlach_50_50",
    "stern_gerlach_25_75",
    "qed_toy_emission",
    "qed_toy_grid",
    "moving_node",
);

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("no bundled scenario named `{0}`")]
    UnknownScenario(String),
    #[error("no fixture named `{0}`")]
    UnknownFixture(String),
    #[error("fixture {name}: {message}")]
    Manifest { name: String, message: String },
    #[error("checker `{checker}` needs {what}, which the run did not produce")]
    MissingOutput { checker: String, what: &'static str },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

pub fn scenario_names() -> impl Iterator<Item = &'static str> {
    SCENARIOS.iter().map(|(n, _)| *n)
}

pub fn scenario_source(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load_scenario(name: &str) -> Result<Scenario, FixtureError> {
    let src = scenario_source(name).ok_or_else(|| FixtureError::UnknownScenario(name.into()))?;
    Ok(Scenario::from_toml_str(src)?)
}

/// Exit status a fixture's run is expected to reach.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certification {
    Certified,
    Diagnostics,
}

/// Implemented property checkers. Each reduces the report to one measured
/// number compared against the tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checker {
    /// Largest distance over noise floor ratio; at most the tolerance.
    EquivarianceRatio,
    /// Largest `|frequency - weight|` in standard errors.
    BornRule,
    /// Largest `|weight - quadrature weight|` in standard errors.
    BranchWeightQuadrature,
    /// Fraction of trajectories that left their branch after separation.
    BranchExchange,
    /// Largest relative full-versus-branch velocity difference after separation.
    CollapseVelocity,
    MaxDisplacement,
    NormDrift,
    EnergyDrift,
    /// Node events recorded; at least the tolerance.
    NodeEventsPresent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Property {
    pub name: String,
    pub checker: Checker,
    pub tolerance: f64,
    /// Where the expected value comes from.
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    #[serde(skip)]
    pub name: String,
    pub scenario: String,
    pub certification: Certification,
    #[serde(rename = "property")]
    pub properties: Vec<Property>,
}

impl Fixture {
    pub fn scenario(&self) -> Result<Scenario, FixtureError> {
        load_scenario(&self.scenario)
    }
}

pub fn fixture_names() -> impl Iterator<Item = &'static str> {
    FIXTURES.iter().map(|(n, _)| *n)
}

pub fn load_fixture(name: &str) -> Result<Fixture, FixtureError> {
    let src = FIXTURES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| FixtureError::UnknownFixture(name.into()))?;
    let mut f: Fixture =
        toml::from_str(src).map_err(|e| FixtureError::Manifest { name: name.into(), message: e.message().into() })?;
    f.name = name.into();
    if scenario_source(&f.scenario).is_none() {
        return Err(FixtureError::UnknownScenario(f.scenario));
    }
    Ok(f)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: String,
    /// `None` for the exit-status verdict.
    pub checker: Option<Checker>,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn missing(checker: &str, what: &'static str) -> FixtureError {
    FixtureError::MissingOutput { checker: checker.into(), what }
}

fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn measure(checker: Checker, report: &Report) -> Result<f64, FixtureError> {
    let name = format!("{checker:?}");
    Ok(match checker {
        Checker::EquivarianceRatio => {
            let ratios: Vec<f64> = report.checkpoints.iter().filter_map(|c| c.ratio).collect();
            if ratios.is_empty() {
                return Err(missing(&name, "checkpoint distances"));
            }
            ratios.into_iter().fold(0.0, f64::max)
        }
        Checker::BornRule => {
            let b = report.branches.as_ref().ok_or_else(|| missing(&name, "branch statistics"))?;
            max_abs(b.z_scores.iter().copied())
        }
        Checker::BranchWeightQuadrature => {
            let b = report.branches.as_ref().ok_or_else(|| missing(&name, "branch statistics"))?;
            max_abs(
                b.weights
                    .iter()
                    .zip(&b.quadrature_weights)
                    .zip(&b.standard_errors)
                    .map(|((w, q), se)| (w - q) / se),
            )
        }
        Checker::BranchExchange => {
            let c = report.collapse.as_ref().ok_or_else(|| missing(&name, "collapse statistics"))?;
            if c.separated_at.is_none() {
                return Err(missing(&name, "branch separation"));
            }
            1.0 - c.stayed_fraction
        }
        Checker::CollapseVelocity => {
            let c = report.collapse.as_ref().ok_or_else(|| missing(&name, "collapse statistics"))?;
            if c.separated_at.is_none() {
                return Err(missing(&name, "branch separation"));
            }
            c.max_relative
        }
        Checker::MaxDisplacement => report.max_displacement,
        Checker::NormDrift => report.conservation.max_norm_drift_per_step,
        Checker::EnergyDrift => report.conservation.max_relative_energy_drift,
        Checker::NodeEventsPresent => report.nodes.events as f64,
    })
}

/// One verdict per property plus a final verdict on the exit status.
pub fn check_fixture(fixture: &Fixture, report: &Report) -> Result<Vec<Verdict>, FixtureError> {
    if report.scenario != fixture.scenario {
        return Err(FixtureError::Manifest {
            name: fixture.name.clone(),
            message: format!("report belongs to scenario {}", report.scenario),
        });
    }
    let mut out = Vec::with_capacity(fixture.properties.len() + 1);
    for p in &fixture.properties {
        let measured = measure(p.checker, report)?;
        let passed = match p.checker {
            Checker::NodeEventsPresent => measured >= p.tolerance,
            _ => measured <= p.tolerance,
        };
        out.push(Verdict { property: p.name.clone(), checker: Some(p.checker), measured, tolerance: p.tolerance, passed });
    }
    let want = match fixture.certification {
        Certification::Certified => 0,
        Certification::Diagnostics => 2,
    };
    let code = report.exit_code();
    out.push(Verdict {
        property: format!("exit status {want}"),
        checker: None,
        measured: code as f64,
        tolerance: want as f64,
        passed: code == want,
    });
    Ok(out)
}
