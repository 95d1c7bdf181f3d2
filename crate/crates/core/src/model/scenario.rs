//! Declarative scenario documents and their validation.
//!
//! A scenario is a TOML document with the tables `model`, `initial_state`,
//! `domain`, `time` and optionally `ensemble`, `node_policy`, `branches` and
//! `overlay`. Unknown keys are rejected by name.

use super::hamiltonian::{ComplexMatrix, HamiltonianSpec, ModelError, ModelKind, Potential};
use super::state::{InitialState, StateContext};
use crate::linalg::{hermitian_defect, max_abs, CMatrix};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use thiserror::Error;

/// Largest grid (points times internal dimension) the dense exact scheme accepts.
pub const EXACT_SCHEME_MAX_DIM: usize = 2048;
/// Largest number-basis dimension the Fock solver accepts.
pub const FOCK_MAX_DIM: usize = 200_000;
/// Hermite evaluation stays accurate up to this occupation number.
pub const FOCK_MAX_OCCUPATION: usize = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    /// Periodic tensor-product grid, one axis per beable coordinate.
    Grid { axes: Vec<AxisSpec> },
    /// Truncated number basis; `n_max` has one entry or one per coordinate.
    Fock {
        #[serde(default = "default_n_max")]
        n_max: Vec<usize>,
    },
}

fn default_n_max() -> Vec<usize> {
    vec![16]
}

impl Domain {
    pub fn n_max(&self, dim: usize) -> Option<Vec<usize>> {
        match self {
            Domain::Fock { n_max } if n_max.len() == 1 => Some(vec![n_max[0]; dim]),
            Domain::Fock { n_max } => Some(n_max.clone()),
            Domain::Grid { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Strang splitting on grids, exact exponentiation in the number basis.
    #[default]
    Auto,
    Strang,
    /// Fourth-order composition of Strang steps.
    Yoshida4,
    /// Dense eigendecomposition of the discretized Hamiltonian.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    /// Trajectory (RK4) step.
    pub dt: f64,
    pub t_final: f64,
    /// Wavefunction steps per half trajectory step.
    #[serde(default = "one_usize")]
    pub substeps: usize,
    #[serde(default)]
    pub scheme: Scheme,
}

impl TimeSpec {
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDistribution {
    /// `|Psi(q, 0)|^2`.
    #[default]
    Equilibrium,
    /// Every trajectory starts at the same point.
    Point { at: Vec<f64> },
    /// Independent normal coordinates.
    Gaussian { center: Vec<f64>, width: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialDistribution,
    /// Fixed starting points for the first trajectories.
    #[serde(default)]
    pub pinned: Vec<Vec<f64>>,
    /// Checkpoints at `k T / checkpoints`, `k = 1..=checkpoints`, plus `t = 0`.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    /// Bootstrap replicates for the equivariance noise floor.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    /// Trajectories written to the CSV export.
    #[serde(default = "default_export")]
    pub export_trajectories: usize,
    /// Keep every n-th trajectory step in the export.
    #[serde(default = "one_usize")]
    pub record_every: usize,
}

fn default_samples() -> usize {
    1000
}
fn default_checkpoints() -> usize {
    5
}
fn default_bootstrap() -> usize {
    100
}
fn default_export() -> usize {
    100
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            seed: 0,
            initial: InitialDistribution::Equilibrium,
            pinned: Vec::new(),
            checkpoints: default_checkpoints(),
            bootstrap: default_bootstrap(),
            export_trajectories: default_export(),
            record_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePolicy {
    /// Relative density floor: the policy applies where `rho < epsilon * max rho`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Speed cap; defaults to ten times the characteristic velocity.
    #[serde(default)]
    pub v_max: Option<f64>,
    /// Consecutive node steps after which a trajectory is reported as dwelling.
    #[serde(default = "default_dwell")]
    pub max_dwell_steps: usize,
}

fn default_epsilon() -> f64 {
    1e-12
}
fn default_dwell() -> usize {
    25
}

impl Default for NodePolicy {
    fn default() -> Self {
        Self { epsilon: default_epsilon(), v_max: None, max_dwell_steps: default_dwell() }
    }
}

/// How a branch of the wavefunction is singled out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum BranchSpec {
    /// `P Psi` for an orthogonal projector `P` on the internal index that
    /// commutes with the Hamiltonian.
    Projector { name: String, matrix: ComplexMatrix },
    /// `<phi|Psi(0)> phi(t)` for a supplied state `phi` evolved alongside.
    Component { name: String, state: InitialState },
    /// Connected regions where `rho > level * max rho` (1-D and 2-D grids).
    Superlevel { level: f64 },
}

/// Operator field `matrix * exp(-|x - center|^2 / (2 width^2))` whose local
/// expectation value is recorded at `points`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlaySpec {
    pub matrix: ComplexMatrix,
    #[serde(default)]
    pub center: [f64; 3],
    pub width: f64,
    pub points: Vec<[f64; 3]>,
}

impl OverlaySpec {
    pub fn profile(&self, x: &[f64; 3]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        (-r2 / (2.0 * self.width * self.width)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub model: HamiltonianSpec,
    pub initial_state: InitialState,
    pub domain: Domain,
    pub time: TimeSpec,
    #[serde(default)]
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub node_policy: NodePolicy,
    #[serde(default)]
    pub branches: Vec<BranchSpec>,
    #[serde(default)]
    pub overlay: Option<OverlaySpec>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse { message: String, line: usize, column: usize },
    #[error("override `{0}` must have the form key.path=value")]
    Override(String),
    #[error("override key `{0}` does not name a table entry")]
    OverridePath(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One validation finding with a stable code.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: String,
    pub message: String,
}

impl Diagnostic {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.into(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

fn line_column(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Dotted key of the `key = value` line holding `offset`, prefixed by the
/// enclosing table header. Best effort: multi-line values are not followed.
fn key_at(src: &str, offset: usize) -> Option<String> {
    let offset = offset.min(src.len());
    let start = src[..offset].rfind('\n').map_or(0, |i| i + 1);
    let line = src[start..].lines().next().unwrap_or("");
    let (key, _) = line.split_once('=')?;
    let key = key.trim();
    if key.is_empty() || key.starts_with('[') || key.starts_with('#') || key.contains(['{', '"', ',']) {
        return None;
    }
    let table = src[..start].lines().rev().map(str::trim).find(|l| l.starts_with('[')).map(|l| l.trim_matches(['[', ']']).trim());
    Some(match table {
        Some(t) if !t.is_empty() => format!("{t}.{key}"),
        _ => key.to_string(),
    })
}

fn parse_error(src: &str, err: toml::de::Error) -> ScenarioError {
    let span = err.span();
    let (line, column) = span.clone().map_or((0, 0), |s| line_column(src, s.start));
    let mut message = err.message().to_string();
    if let Some(key) = span.and_then(|s| key_at(src, s.start)) {
        let leaf = key.rsplit('.').next().unwrap_or(&key);
        if !message.contains(&format!("`{leaf}`")) {
            message = format!("key `{key}`: {message}");
        }
    }
    ScenarioError::Parse { message, line, column }
}

/// Sets `key.path = value` in a parsed document. The value is read as a TOML
/// literal when possible and as a bare string otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), ScenarioError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| ScenarioError::Override(assignment.into()))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(ScenarioError::Override(assignment.into()));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("just inserted"),
        Err(_) => toml::Value::String(raw.into()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut table = doc;
    for part in parts {
        let entry = table.entry(part).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| ScenarioError::OverridePath(key.into()))?;
    }
    table.insert(last.into(), value);
    Ok(())
}

impl Scenario {
    pub fn from_toml_str(src: &str) -> Result<Self, ScenarioError> {
        toml::from_str(src).map_err(|e| parse_error(src, e))
    }

    pub fn from_toml_with_overrides(src: &str, overrides: &[String]) -> Result<Self, ScenarioError> {
        if overrides.is_empty() {
            return Self::from_toml_str(src);
        }
        let mut doc: toml::Table = src.parse().map_err(|e| parse_error(src, e))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let merged = toml::to_string(&doc).expect("tables serialize");
        Self::from_toml_str(&merged)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self, ScenarioError> {
        let src = std::fs::read_to_string(path)?;
        Self::from_toml_with_overrides(&src, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// sha256 of the canonical JSON form, independent of file formatting.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Checkpoint times including `t = 0`.
    pub fn checkpoint_times(&self) -> Vec<f64> {
        let n = self.ensemble.checkpoints;
        (0..=n).map(|k| self.time.t_final * k as f64 / n as f64).collect()
    }
}

fn model_error_code(e: &ModelError) -> &'static str {
    match e {
        ModelError::NonHermitian { .. } => "NONHERMITIAN_BLOCK",
        ModelError::ModeBasis(_) | ModelError::UnknownQuadrature(_) => "MODE_BASIS",
        ModelError::BlockShape { .. } | ModelError::CouplingCoordinate { .. } => "DIMENSION_MISMATCH",
        ModelError::Invalid(_) => "MODEL",
    }
}

fn potential_frequencies(p: &Potential) -> &[f64] {
    match p {
        Potential::Harmonic { frequency, .. } => frequency,
        _ => &[],
    }
}

/// Grid points lying within `fraction` of either end of each axis.
fn boundary_points(axes: &[AxisSpec], fraction: f64) -> Vec<Vec<f64>> {
    let coords: Vec<Vec<f64>> = axes
        .iter()
        .map(|a| {
            let dx = (a.max - a.min) / a.points as f64;
            (0..a.points).map(|i| a.min + i as f64 * dx).collect()
        })
        .collect();
    let near = |d: usize, x: f64| {
        let a = &axes[d];
        let band = fraction * (a.max - a.min);
        x <= a.min + band || x >= a.max - band
    };
    let total: usize = axes.iter().map(|a| a.points).product();
    let mut out = Vec::new();
    let mut idx = vec![0usize; axes.len()];
    for _ in 0..total {
        let x: Vec<f64> = idx.iter().enumerate().map(|(d, &i)| coords[d][i]).collect();
        if x.iter().enumerate().any(|(d, &v)| near(d, v)) {
            out.push(x);
        }
        for d in (0..axes.len()).rev() {
            idx[d] += 1;
            if idx[d] < axes[d].points {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Checks every invariant a run relies on. Returns an empty list exactly when
/// the scenario can be run.
pub fn validate_scenario(s: &Scenario) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let t = &s.time;
    if !(t.dt.is_finite() && t.dt > 0.0) {
        out.push(Diagnostic::new("INVALID_TIMESTEP", format!("dt must be positive, got {}", t.dt)));
    }
    if !(t.t_final.is_finite() && t.t_final >= 0.0) {
        out.push(Diagnostic::new("INVALID_FINAL_TIME", format!("t_final must be non-negative, got {}", t.t_final)));
    }
    if t.substeps == 0 {
        out.push(Diagnostic::new("INVALID_TIMESTEP", "substeps must be at least 1"));
    }
    if t.dt > 0.0 && t.t_final >= 0.0 {
        let ratio = t.t_final / t.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            out.push(Diagnostic::new(
                "TRAJECTORY_STEP_MISMATCH",
                format!("t_final / dt = {ratio} is not an integer"),
            ));
        }
    }
    if s.ensemble.samples == 0 {
        out.push(Diagnostic::new("INVALID_SAMPLE_COUNT", "ensemble.samples must be at least 1"));
    }
    if s.ensemble.checkpoints == 0 {
        out.push(Diagnostic::new("CHECKPOINTS", "ensemble.checkpoints must be at least 1"));
    } else if t.dt > 0.0 && t.t_final > 0.0 {
        let steps = t.steps();
        if steps % s.ensemble.checkpoints != 0 {
            out.push(Diagnostic::new(
                "CHECKPOINTS",
                format!("{steps} trajectory steps do not divide into {} checkpoints", s.ensemble.checkpoints),
            ));
        }
    }
    if s.ensemble.record_every == 0 {
        out.push(Diagnostic::new("INVALID_SAMPLE_COUNT", "ensemble.record_every must be at least 1"));
    }
    let np = &s.node_policy;
    if !(np.epsilon > 0.0 && np.epsilon < 1.0) {
        out.push(Diagnostic::new("NODE_POLICY", "node_policy.epsilon must lie in (0, 1)"));
    }
    if let Some(v) = np.v_max {
        if !(v.is_finite() && v > 0.0) {
            out.push(Diagnostic::new("NODE_POLICY", "node_policy.v_max must be positive"));
        }
    }

    // Physical parameters with dedicated codes come before resolution.
    let masses: Vec<f64> = match &s.model {
        HamiltonianSpec::ParticleSchrodinger(p) => p.masses.clone(),
        HamiltonianSpec::Pauli(p) => vec![p.mass],
        HamiltonianSpec::FieldMode(_) => Vec::new(),
    };
    if masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        out.push(Diagnostic::new("NONPOSITIVE_MASS", "masses must be positive"));
    }
    let freqs = match &s.model {
        HamiltonianSpec::ParticleSchrodinger(p) => potential_frequencies(&p.potential),
        HamiltonianSpec::Pauli(p) => potential_frequencies(&p.potential),
        HamiltonianSpec::FieldMode(_) => &[],
    };
    if freqs.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        out.push(Diagnostic::new("NONPOSITIVE_FREQUENCY", "potential frequencies must be positive"));
    }
    if !out.iter().any(|d| d.code == "NONPOSITIVE_MASS" || d.code == "NONPOSITIVE_FREQUENCY") {
        if let Err(e) = s.model.resolve() {
            out.push(Diagnostic::new(model_error_code(&e), e.to_string()));
        }
    }
    let Ok(model) = s.model.resolve() else {
        return out;
    };
    let dim = model.beable_dim();

    match &s.domain {
        Domain::Grid { axes } => {
            if axes.len() > 3 {
                out.push(Diagnostic::new("GRID_DIMENSION", format!("grid solvers support at most 3 axes, got {}", axes.len())));
            }
            if axes.len() != dim {
                out.push(Diagnostic::new(
                    "DIMENSION_MISMATCH",
                    format!("domain has {} axes but the model has {dim} beable coordinates", axes.len()),
                ));
            }
            for (d, a) in axes.iter().enumerate() {
                if !(a.min.is_finite() && a.max.is_finite() && a.max > a.min) {
                    out.push(Diagnostic::new("AXIS_ORDER", format!("axis {d} must have min < max")));
                }
                if a.points < 8 {
                    out.push(Diagnostic::new("AXIS_POINTS", format!("axis {d} needs at least 8 points, got {}", a.points)));
                }
            }
            let total: usize = axes.iter().map(|a| a.points).product::<usize>() * model.internal_dim;
            if t.scheme == Scheme::Exact && total > EXACT_SCHEME_MAX_DIM {
                out.push(Diagnostic::new(
                    "SCHEME",
                    format!("exact scheme supports at most {EXACT_SCHEME_MAX_DIM} unknowns, got {total}"),
                ));
            }
        }
        Domain::Fock { n_max } => {
            if model.kind() != ModelKind::FieldMode {
                out.push(Diagnostic::new("FOCK_REQUIRES_FIELD_MODE", "the Fock solver needs a field_mode model"));
            } else if n_max.len() != 1 && n_max.len() != dim {
                out.push(Diagnostic::new("DIMENSION_MISMATCH", format!("n_max needs 1 or {dim} entries")));
            } else {
                let n = s.domain.n_max(dim).expect("fock domain");
                if n.iter().any(|&k| k == 0 || k > FOCK_MAX_OCCUPATION) {
                    out.push(Diagnostic::new(
                        "FOCK_TRUNCATION",
                        format!("n_max must lie in 1..={FOCK_MAX_OCCUPATION}"),
                    ));
                } else {
                    let size = n.iter().map(|k| k + 1).try_fold(model.internal_dim, |acc, k| acc.checked_mul(k));
                    if size.is_none_or(|s| s > FOCK_MAX_DIM) {
                        out.push(Diagnostic::new("FOCK_TRUNCATION", format!("number basis exceeds {FOCK_MAX_DIM} states")));
                    }
                }
            }
            if matches!(t.scheme, Scheme::Strang | Scheme::Yoshida4) {
                out.push(Diagnostic::new("SCHEME", "splitting schemes apply to grid domains only"));
            }
        }
    }

    let ctx = StateContext::from_model(&model);
    let state_ok = match s.initial_state.check(&ctx) {
        Ok(()) => true,
        Err(e) => {
            out.push(Diagnostic::new("INITIAL_STATE", e.to_string()));
            false
        }
    };
    if state_ok {
        if let Domain::Grid { axes } = &s.domain {
            let axes_ok = axes.len() == dim && axes.iter().all(|a| a.max > a.min && a.points >= 8);
            if axes_ok {
                let worst = boundary_points(axes, 0.05)
                    .iter()
                    .map(|x| s.initial_state.evaluate(x, &ctx).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
                    .fold(0.0, f64::max);
                if worst > 1e-10 {
                    out.push(Diagnostic::new(
                        "BOUNDARY_AMPLITUDE",
                        format!("|psi| reaches {worst:.3e} within 5% of the boundary (limit 1e-10)"),
                    ));
                }
            }
        }
    }

    check_distribution(s, dim, &mut out);
    check_branches(s, &model, &ctx, &mut out);
    if let Some(o) = &s.overlay {
        let fd = model.internal_dim;
        if o.matrix.0.nrows() != fd || o.matrix.0.ncols() != fd {
            out.push(Diagnostic::new("OVERLAY", format!("overlay matrix must be {fd}x{fd}")));
        } else if hermitian_defect(&o.matrix.0) > super::HERMITIAN_TOL {
            out.push(Diagnostic::new("NONHERMITIAN_BLOCK", "overlay matrix is not Hermitian"));
        }
        if !(o.width > 0.0) {
            out.push(Diagnostic::new("OVERLAY", "overlay width must be positive"));
        }
        if o.points.is_empty() {
            out.push(Diagnostic::new("OVERLAY", "overlay needs at least one point"));
        }
    }
    out
}

fn check_distribution(s: &Scenario, dim: usize, out: &mut Vec<Diagnostic>) {
    match &s.ensemble.initial {
        InitialDistribution::Equilibrium => {}
        InitialDistribution::Point { at } => {
            if at.len() != dim {
                out.push(Diagnostic::new("DIMENSION_MISMATCH", format!("ensemble.initial.at needs {dim} entries")));
            }
        }
        InitialDistribution::Gaussian { center, width } => {
            if center.len() != dim || width.len() != dim || width.iter().any(|w| !(*w > 0.0)) {
                out.push(Diagnostic::new(
                    "DIMENSION_MISMATCH",
                    format!("ensemble.initial needs {dim} centers and positive widths"),
                ));
            }
        }
    }
    if s.ensemble.pinned.iter().any(|p| p.len() != dim) {
        out.push(Diagnostic::new("DIMENSION_MISMATCH", format!("pinned points need {dim} coordinates")));
    }
    if s.ensemble.pinned.len() > s.ensemble.samples {
        out.push(Diagnostic::new("INVALID_SAMPLE_COUNT", "more pinned points than samples"));
    }
}

fn check_branches(s: &Scenario, model: &super::Model, ctx: &StateContext, out: &mut Vec<Diagnostic>) {
    let fd = model.internal_dim;
    let superlevel = s.branches.iter().filter(|b| matches!(b, BranchSpec::Superlevel { .. })).count();
    if superlevel > 0 && s.branches.len() > 1 {
        out.push(Diagnostic::new("BRANCHES", "superlevel branches cannot be mixed with other rules"));
    }
    for b in &s.branches {
        match b {
            BranchSpec::Projector { name, matrix } => {
                let p = &matrix.0;
                if p.nrows() != fd || p.ncols() != fd {
                    out.push(Diagnostic::new("BRANCHES", format!("projector {name} must be {fd}x{fd}")));
                    continue;
                }
                if hermitian_defect(p) > 1e-12 || max_abs(&(p * p - p)) > 1e-12 {
                    out.push(Diagnostic::new("BRANCHES", format!("{name} is not an orthogonal projector")));
                    continue;
                }
                if !projector_commutes(p, model, s) {
                    out.push(Diagnostic::new(
                        "BRANCHES",
                        format!("projector {name} does not commute with the Hamiltonian"),
                    ));
                }
            }
            BranchSpec::Component { name, state } => {
                if let Err(e) = state.check(ctx) {
                    out.push(Diagnostic::new("BRANCHES", format!("component {name}: {e}")));
                }
            }
            BranchSpec::Superlevel { level } => {
                if !(*level > 0.0 && *level < 1.0) {
                    out.push(Diagnostic::new("BRANCHES", "superlevel level must lie in (0, 1)"));
                }
                if !matches!(&s.domain, Domain::Grid { axes } if axes.len() <= 2) {
                    out.push(Diagnostic::new("BRANCHES", "superlevel branches need a 1-D or 2-D grid"));
                }
            }
        }
    }
}

/// Commutation is checked on a spread of configurations; the kinetic term acts
/// trivially on the internal index.
fn projector_commutes(p: &CMatrix, model: &super::Model, s: &Scenario) -> bool {
    let dim = model.beable_dim();
    let span: Vec<(f64, f64)> = match &s.domain {
        Domain::Grid { axes } => axes.iter().map(|a| (a.min, a.max)).collect(),
        Domain::Fock { .. } => vec![(-5.0, 5.0); dim],
    };
    for i in 0..7 {
        let x: Vec<f64> = span
            .iter()
            .enumerate()
            .map(|(d, (lo, hi))| lo + (hi - lo) * ((0.37 * (i + 1) as f64 + 0.21 * d as f64).fract()))
            .collect();
        let h = model.internal_matrix(&x);
        let scale = 1.0 + max_abs(&h);
        let commutator = p * &h - &h * p;
        if commutator.iter().any(|z: &Complex64| z.norm() > 1e-12 * scale) {
            return false;
        }
    }
    true
}
