//! A full scenario run: build the solver, draw the ensemble, integrate in
//! lockstep and collect every statistic the report carries.

use super::{
    binomial_standard_error, sample_equilibrium, trajectory_rng, DensityTable, EnsembleError, EquivarianceReference,
    SamplingMethod, MIN_TRAJECTORIES,
};
use crate::beables::{branch_analysis, local_expectation, membership, superlevel_analysis, BranchState, QuadratureLattice};
use crate::fock::{FockEvolver, FockSnapshot, FockWavefunction, LEAKAGE_THRESHOLD};
use crate::grid::{Axis, FftNd, GridEvolver, GridScheme, GridSnapshot, GridWavefunction};
use crate::guidance::{
    integrate_ensemble, velocity_from, DriverConfig, Evolver, ExitReason, NodeGuard, PilotWave, PointValue, SolverError,
    Trajectory, TrajectoryState,
};
use crate::linalg::CMatrix;
use crate::model::{validate_scenario, BranchSpec, Domain, InitialDistribution, InitialState, Model, Scenario};
use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Branches count as separated once every pairwise overlap drops below this.
pub const COLLAPSE_OVERLAP: f64 = 1e-6;
/// Largest relative difference between full and branch velocity accepted
/// after separation.
pub const COLLAPSE_VELOCITY_TOLERANCE: f64 = 1e-8;
/// Checkpoint distance may exceed the noise floor by at most this factor.
const FLOOR_FACTOR: f64 = 2.0;
/// Grid probability near the boundary that triggers a truncation warning.
const GRID_EDGE_THRESHOLD: f64 = 1e-10;

/// The two solver families behind one evolver interface.
#[derive(Clone, Debug)]
pub enum SolverState {
    Grid(GridEvolver),
    Fock(FockEvolver),
}

impl SolverState {
    /// Lattice on which densities are tabulated: the grid nodes, or a box
    /// around the current support for the number basis.
    pub fn lattice(&self, snapshot: &dyn PilotWave) -> QuadratureLattice {
        match self {
            SolverState::Grid(g) => QuadratureLattice::from_grid(&g.state.grid),
            SolverState::Fock(_) => {
                let d = snapshot.dim();
                QuadratureLattice::over_box(&snapshot.support_box(), fock_points(d))
            }
        }
    }

    pub fn density_table(&self, snapshot: &dyn PilotWave) -> Result<DensityTable, EnsembleError> {
        let lattice = self.lattice(snapshot);
        match self {
            SolverState::Grid(g) => DensityTable::from_masses(&lattice, g.state.nodal_density()),
            SolverState::Fock(_) => DensityTable::from_wave(snapshot, &lattice),
        }
    }

    /// `<self|other>` for states of the same shape.
    pub fn inner(&self, other: &Self) -> Result<Complex64, EnsembleError> {
        match (self, other) {
            (SolverState::Grid(a), SolverState::Grid(b)) if a.state.data.len() == b.state.data.len() => {
                Ok(a.state.inner(&b.state))
            }
            (SolverState::Fock(a), SolverState::Fock(b)) if a.state.amplitudes.len() == b.state.amplitudes.len() => {
                Ok(crate::linalg::inner(&a.state.amplitudes, &b.state.amplitudes))
            }
            _ => Err(EnsembleError::Setup("states live on different representations".into())),
        }
    }

    pub fn scale(&mut self, s: f64) {
        match self {
            SolverState::Grid(g) => g.state.scale(s),
            SolverState::Fock(f) => f.state.amplitudes.iter_mut().for_each(|a| *a *= s),
        }
    }

    fn grid_snapshot(&self) -> Option<GridSnapshot> {
        match self {
            SolverState::Grid(g) => Some(GridSnapshot::new(&g.state, &FftNd::new(&g.state.grid.shape()))),
            SolverState::Fock(_) => None,
        }
    }
}

fn fock_points(dim: usize) -> usize {
    match dim {
        1 => 2001,
        2 => 301,
        _ => 41,
    }
}

impl Evolver for SolverState {
    fn time(&self) -> f64 {
        match self {
            SolverState::Grid(e) => e.time(),
            SolverState::Fock(e) => e.time(),
        }
    }
    fn advance(&mut self, dt: f64) -> Result<(), SolverError> {
        match self {
            SolverState::Grid(e) => e.advance(dt),
            SolverState::Fock(e) => e.advance(dt),
        }
    }
    fn snapshot(&self) -> Arc<dyn PilotWave> {
        match self {
            SolverState::Grid(e) => e.snapshot(),
            SolverState::Fock(e) => Arc::new(FockSnapshot::new(e.state.clone())),
        }
    }
    fn norm_sqr(&self) -> f64 {
        match self {
            SolverState::Grid(e) => e.norm_sqr(),
            SolverState::Fock(e) => e.norm_sqr(),
        }
    }
    fn energy(&self) -> f64 {
        match self {
            SolverState::Grid(e) => e.energy(),
            SolverState::Fock(e) => e.energy(),
        }
    }
    fn project(&self, p: &CMatrix) -> Self {
        match self {
            SolverState::Grid(e) => SolverState::Grid(e.project(p)),
            SolverState::Fock(e) => SolverState::Fock(e.project(p)),
        }
    }
    fn characteristic_velocity(&self) -> f64 {
        match self {
            SolverState::Grid(e) => e.characteristic_velocity(),
            SolverState::Fock(e) => e.characteristic_velocity(),
        }
    }
    fn edge_probability(&self) -> f64 {
        match self {
            SolverState::Grid(e) => e.edge_probability(),
            SolverState::Fock(e) => e.edge_probability(),
        }
    }
}

/// Evolver for `state` on the scenario's domain.
pub fn build_state_evolver(scenario: &Scenario, model: &Model, state: &InitialState) -> Result<SolverState, EnsembleError> {
    let setup = |e: &dyn std::fmt::Display| EnsembleError::Setup(e.to_string());
    match &scenario.domain {
        Domain::Grid { axes } => {
            let axes: Vec<Axis> = axes.iter().map(|a| Axis::new(a.min, a.max, a.points)).collect();
            let psi = GridWavefunction::from_initial_state(state, model, &axes).map_err(|e| setup(&e))?;
            Ok(SolverState::Grid(GridEvolver::new(model, psi, GridScheme::from_scheme(scenario.time.scheme))?))
        }
        Domain::Fock { .. } => {
            let n_max = scenario.domain.n_max(model.beable_dim()).expect("fock domain");
            let psi = FockWavefunction::from_initial_state(state, model, &n_max).map_err(|e| setup(&e))?;
            Ok(SolverState::Fock(FockEvolver::new(model, psi)?))
        }
    }
}

/// Resolved model and the evolver of the scenario's initial state. Refuses
/// scenarios with validation findings.
pub fn build_evolver(scenario: &Scenario) -> Result<(Model, SolverState), EnsembleError> {
    let diagnostics = validate_scenario(scenario);
    if !diagnostics.is_empty() {
        let list: Vec<String> = diagnostics.iter().map(|d| d.to_string()).collect();
        return Err(EnsembleError::Setup(list.join("; ")));
    }
    let model = scenario.model.resolve().map_err(|e| EnsembleError::Setup(e.to_string()))?;
    let evolver = build_state_evolver(scenario, &model, &scenario.initial_state)?;
    Ok((model, evolver))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointReport {
    pub time: f64,
    pub step: usize,
    pub active: usize,
    /// Histogram total-variation distance; absent below the sample minimum.
    pub distance: Option<f64>,
    /// Upper bootstrap quantile of the distance for fresh samples.
    pub floor: Option<f64>,
    pub floor_mean: Option<f64>,
    pub ratio: Option<f64>,
    pub bin_widths: Vec<f64>,
    pub joint_histogram: bool,
    pub edge_probability: f64,
    pub norm: f64,
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    pub names: Vec<String>,
    /// Exact weights where known, quadrature otherwise.
    pub weights: Vec<f64>,
    pub quadrature_weights: Vec<f64>,
    /// Fraction of trajectories inside each branch at the final time.
    pub frequencies: Vec<f64>,
    pub counts: Vec<usize>,
    pub standard_errors: Vec<f64>,
    pub z_scores: Vec<f64>,
    /// Largest pairwise overlap at the final time.
    pub final_overlap: f64,
    pub residual: f64,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    /// First step time at which all branch overlaps were below the threshold.
    pub separated_at: Option<f64>,
    /// `max |v - v_branch| / |v_branch|` over trajectories and later steps.
    pub max_relative: f64,
    /// The same difference relative to `|v_branch| + v_rms` of the ensemble.
    pub max_scale_relative: f64,
    pub median_relative: f64,
    pub p99_relative: f64,
    pub points_checked: usize,
    /// Fraction of checked points above the velocity tolerance.
    pub fraction_above_tolerance: f64,
    /// Trajectories that kept their branch from separation to the end.
    pub stayed_fraction: f64,
    pub velocity_ok: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub initial_norm: f64,
    pub initial_energy: f64,
    pub max_norm_drift_per_step: f64,
    pub max_relative_energy_drift: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub events: usize,
    pub trajectories_affected: usize,
    /// `(trajectory, time, density)` of the first events.
    pub first_events: Vec<(usize, f64, f64)>,
    pub longest_dwell: usize,
    pub v_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlayReport {
    pub trajectory: usize,
    pub time: f64,
    pub points: Vec<[f64; 3]>,
    pub values: Vec<f64>,
    pub max_imaginary: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub equivariance: Option<bool>,
    pub born_rule: Option<bool>,
    pub collapse: Option<bool>,
    pub no_nodes: bool,
    pub no_exits: bool,
    pub certified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub digest: String,
    pub version: String,
    pub seed: u64,
    pub samples: usize,
    pub dim: usize,
    pub labels: Vec<String>,
    pub sampling: Option<SamplingMethod>,
    pub checkpoints: Vec<CheckpointReport>,
    pub branches: Option<BranchReport>,
    pub collapse: Option<CollapseReport>,
    pub conservation: ConservationReport,
    pub max_displacement: f64,
    pub nodes: NodeReport,
    pub exits: Vec<(usize, ExitReason)>,
    pub overlay: Option<OverlayReport>,
    pub certification: CertificationReport,
    pub diagnostics: Vec<String>,
}

impl Report {
    /// Exit status of the command line front end: 2 flags an uncertified run
    /// or any node event.
    pub fn exit_code(&self) -> i32 {
        if self.certification.certified && self.nodes.events == 0 {
            0
        } else {
            2
        }
    }
}

pub struct RunOutput {
    pub report: Report,
    /// Recorded trajectories with their ensemble index.
    pub trajectories: Vec<(usize, Trajectory)>,
    pub final_positions: Vec<Vec<f64>>,
    pub samples: Vec<CheckpointSample>,
}

/// Ensemble positions and the quantum marginals at one checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointSample {
    pub time: f64,
    /// Active trajectories with their ensemble index.
    pub positions: Vec<(usize, Vec<f64>)>,
    /// Per coordinate, `(x, density)` on the quadrature lattice.
    pub marginals: Vec<Vec<(f64, f64)>>,
}

fn marginals(table: &DensityTable) -> Vec<Vec<(f64, f64)>> {
    (0..table.dim())
        .map(|d| {
            let m = table.marginal(d);
            let (lo, h, n) = m.lattice.axes[0];
            (0..n).map(|i| (lo + i as f64 * h, m.mass[i] / h)).collect()
        })
        .collect()
}

fn initial_positions(
    scenario: &Scenario,
    evolver: &SolverState,
    snapshot: &dyn PilotWave,
) -> Result<(Vec<Vec<f64>>, Option<SamplingMethod>), EnsembleError> {
    let ens = &scenario.ensemble;
    let n = ens.samples;
    let (mut points, method) = match &ens.initial {
        InitialDistribution::Equilibrium => {
            let table = evolver.density_table(snapshot)?;
            let (p, m) = sample_equilibrium(snapshot, &table, n, ens.seed)?;
            (p, Some(m))
        }
        InitialDistribution::Point { at } => (vec![at.clone(); n], None),
        InitialDistribution::Gaussian { center, width } => {
            let points = (0..n)
                .map(|i| {
                    let mut rng = trajectory_rng(ens.seed, i as u64);
                    center
                        .iter()
                        .zip(width)
                        .map(|(c, w)| Normal::new(*c, *w).expect("validated width").sample(&mut rng))
                        .collect()
                })
                .collect();
            (points, None)
        }
    };
    for (p, pin) in points.iter_mut().zip(&ens.pinned) {
        p.clone_from(pin);
    }
    Ok((points, method))
}

/// How the branches of a run are produced at each step.
enum BranchSource {
    Projectors(Vec<(String, CMatrix)>),
    Components(Vec<(String, SolverState)>),
    Superlevel(f64),
}

struct BranchTracker {
    source: BranchSource,
    exact: Vec<Option<f64>>,
    separated_at: Option<f64>,
    /// Branch of each trajectory at separation.
    assigned: Vec<Option<usize>>,
    stayed: Vec<bool>,
    relative: Vec<f64>,
    max_scale_relative: f64,
}

impl BranchTracker {
    fn new(scenario: &Scenario, model: &Model, evolver: &SolverState, n: usize) -> Result<Option<Self>, EnsembleError> {
        if scenario.branches.is_empty() {
            return Ok(None);
        }
        let norm = evolver.norm_sqr();
        let mut projectors = Vec::new();
        let mut components = Vec::new();
        let mut exact = Vec::new();
        let mut superlevel = None;
        for b in &scenario.branches {
            match b {
                BranchSpec::Projector { name, matrix } => {
                    exact.push(Some(evolver.project(&matrix.0).norm_sqr() / norm));
                    projectors.push((name.clone(), matrix.0.clone()));
                }
                BranchSpec::Component { name, state } => {
                    let mut phi = build_state_evolver(scenario, model, state)?;
                    let c = phi.inner(evolver)? / phi.norm_sqr();
                    phi.scale(c.norm());
                    exact.push(Some(c.norm_sqr() * phi.norm_sqr() / norm));
                    components.push((name.clone(), phi));
                }
                BranchSpec::Superlevel { level } => superlevel = Some(*level),
            }
        }
        let source = if let Some(level) = superlevel {
            BranchSource::Superlevel(level)
        } else if !components.is_empty() && projectors.is_empty() {
            BranchSource::Components(components)
        } else if components.is_empty() {
            BranchSource::Projectors(projectors)
        } else {
            return Err(EnsembleError::Setup("projector and component branches cannot be mixed".into()));
        };
        Ok(Some(Self {
            source,
            exact,
            separated_at: None,
            assigned: vec![None; n],
            stayed: vec![true; n],
            relative: Vec::new(),
            max_scale_relative: 0.0,
        }))
    }

    fn advance(&mut self, h: f64, substeps: usize) -> Result<(), SolverError> {
        if let BranchSource::Components(list) = &mut self.source {
            for (_, e) in list {
                for _ in 0..2 * substeps {
                    e.advance(h / (2.0 * substeps as f64))?;
                }
            }
        }
        Ok(())
    }

    fn states(&self, full: &SolverState) -> Vec<BranchState> {
        let make = |name: &str, e: &SolverState| BranchState { name: name.into(), wave: e.snapshot(), weight: None };
        match &self.source {
            BranchSource::Projectors(list) => list.iter().map(|(n, p)| make(n, &full.project(p))).collect(),
            BranchSource::Components(list) => list.iter().map(|(n, e)| make(n, e)).collect(),
            BranchSource::Superlevel(_) => Vec::new(),
        }
    }
}

fn speed(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

/// Nearest-node superlevel label of each configuration.
fn superlevel_membership(snapshot: &GridSnapshot, labels: &[Option<usize>], q: &[f64]) -> Option<usize> {
    let g = &snapshot.grid;
    let idx: Vec<usize> = g
        .axes
        .iter()
        .zip(q)
        .map(|(a, &x)| (((x - a.min) / a.dx()).round() as i64).rem_euclid(a.n as i64) as usize)
        .collect();
    labels[g.flat_index(&idx)]
}

/// Runs the scenario end to end.
pub fn run_ensemble(scenario: &Scenario) -> Result<RunOutput, EnsembleError> {
    let (model, mut evolver) = build_evolver(scenario)?;
    let ens = &scenario.ensemble;
    let n = ens.samples;
    let dim = model.beable_dim();
    let law = model.guidance_law();
    let snap0 = evolver.snapshot();
    let (positions, sampling) = initial_positions(scenario, &evolver, snap0.as_ref())?;
    let mut diagnostics = Vec::new();
    if let Some(SamplingMethod::Metropolis { rhat, .. }) = &sampling {
        diagnostics.push(format!("Metropolis initialization, split R-hat {rhat:.4}"));
    }

    let v_max = scenario.node_policy.v_max.unwrap_or(10.0 * evolver.characteristic_velocity()).max(f64::MIN_POSITIVE);
    let cfg = DriverConfig {
        h: scenario.time.dt,
        steps: scenario.time.steps(),
        substeps: scenario.time.substeps,
        record_every: ens.record_every,
        law: law.clone(),
        guard: NodeGuard { epsilon: scenario.node_policy.epsilon, v_max },
    };
    let exported = ens.export_trajectories.min(n);
    let mut states: Vec<TrajectoryState> =
        positions.iter().enumerate().map(|(i, x)| TrajectoryState::new(x.clone(), i < exported)).collect();
    let origin = positions.clone();

    let checkpoint_every = (cfg.steps / ens.checkpoints).max(1);
    let mut tracker = BranchTracker::new(scenario, &model, &evolver, n)?;
    // a handful of pinned trajectories does not change the ensemble statistics
    let equilibrium = matches!(ens.initial, InitialDistribution::Equilibrium);
    let t0 = evolver.time();
    let mut checkpoints = Vec::new();
    let mut samples = Vec::new();
    let mut conservation = ConservationReport {
        initial_norm: evolver.norm_sqr(),
        initial_energy: evolver.energy(),
        ..Default::default()
    };
    let mut last_norm = conservation.initial_norm;
    let mut max_displacement = 0.0_f64;
    let mut final_branches: Option<BranchReport> = None;
    let mut failure: Option<EnsembleError> = None;

    let fail = |e: EnsembleError, slot: &mut Option<EnsembleError>| {
        let msg = e.to_string();
        *slot = Some(e);
        SolverError::Stability(msg)
    };

    integrate_ensemble(&mut evolver, &mut states, &cfg, |step, ev, snap, st| {
        // conservation and displacement
        let norm = ev.norm_sqr();
        conservation.max_norm_drift_per_step = conservation.max_norm_drift_per_step.max((norm - last_norm).abs());
        last_norm = norm;
        let energy = ev.energy();
        let e0 = conservation.initial_energy;
        let drift = (energy - e0).abs() / if e0.abs() > 0.0 { e0.abs() } else { 1.0 };
        conservation.max_relative_energy_drift = conservation.max_relative_energy_drift.max(drift);
        for (s, o) in st.iter().zip(&origin) {
            max_displacement = max_displacement.max(speed(&s.x.iter().zip(o).map(|(a, b)| a - b).collect::<Vec<_>>()));
        }

        if let Some(tr) = tracker.as_mut() {
            if step > 0 {
                tr.advance(cfg.h, cfg.substeps)?;
            }
            if !matches!(tr.source, BranchSource::Superlevel(_)) {
                let branches = tr.states(ev);
                if tr.separated_at.is_none() {
                    let lattice = ev.lattice(snap.as_ref());
                    let a = branch_analysis(snap.as_ref(), &branches, &lattice)
                        .map_err(|e| fail(e.into(), &mut failure))?;
                    if a.max_off_diagonal_overlap() < COLLAPSE_OVERLAP {
                        tr.separated_at = Some(ev.time());
                        for (i, s) in st.iter().enumerate() {
                            tr.assigned[i] = if s.active() { membership(&branches, &s.x) } else { None };
                        }
                    }
                }
                if tr.separated_at.is_some() {
                    collapse_step(tr, snap.as_ref(), &branches, st, &law);
                }
            }
        }

        if step % checkpoint_every == 0 || step == cfg.steps {
            let active: Vec<Vec<f64>> = st.iter().filter(|s| s.active()).map(|s| s.x.clone()).collect();
            let mut cp = CheckpointReport {
                time: t0 + step as f64 * cfg.h,
                step,
                active: active.len(),
                distance: None,
                floor: None,
                floor_mean: None,
                ratio: None,
                bin_widths: Vec::new(),
                joint_histogram: dim <= 2,
                edge_probability: ev.edge_probability(),
                norm,
                energy,
            };
            let table = ev.density_table(snap.as_ref()).map_err(|e| fail(e, &mut failure))?;
            samples.push(CheckpointSample {
                time: cp.time,
                positions: st.iter().enumerate().filter(|(_, s)| s.active()).map(|(i, s)| (i, s.x.clone())).collect(),
                marginals: marginals(&table),
            });
            if active.len() >= MIN_TRAJECTORIES {
                let reference =
                    EquivarianceReference::new(snap.as_ref(), &table, active.len()).map_err(|e| fail(e, &mut failure))?;
                let distance = reference.distance(&active).map_err(|e| fail(e, &mut failure))?;
                let floor = reference
                    .noise_floor(active.len(), ens.bootstrap, ens.seed.wrapping_add(step as u64))
                    .map_err(|e| fail(e, &mut failure))?;
                cp.distance = Some(distance);
                cp.floor = Some(floor.upper);
                cp.floor_mean = Some(floor.mean);
                cp.ratio = Some(distance / floor.upper);
                cp.bin_widths = reference.bin_widths();
            }
            checkpoints.push(cp);
        }

        if step == cfg.steps {
            if let Some(tr) = tracker.as_ref() {
                final_branches = Some(final_branch_report(tr, ev, snap.as_ref(), st).map_err(|e| fail(e, &mut failure))?);
            }
        }
        Ok(())
    })
    .map_err(|e| failure.take().unwrap_or(EnsembleError::Solver(e)))?;

    // collapse summary
    let collapse = tracker.as_ref().filter(|t| !matches!(t.source, BranchSource::Superlevel(_))).map(|tr| {
        let mut rel = tr.relative.clone();
        rel.sort_by(f64::total_cmp);
        let stayed = tr.stayed.iter().zip(&tr.assigned).filter(|(s, a)| **s && a.is_some()).count();
        let assigned = tr.assigned.iter().filter(|a| a.is_some()).count();
        let max_relative = rel.last().copied().unwrap_or(0.0);
        CollapseReport {
            separated_at: tr.separated_at,
            max_relative,
            max_scale_relative: tr.max_scale_relative,
            median_relative: percentile(&rel, 0.5),
            p99_relative: percentile(&rel, 0.99),
            points_checked: rel.len(),
            fraction_above_tolerance: if rel.is_empty() {
                0.0
            } else {
                rel.iter().filter(|&&r| r >= COLLAPSE_VELOCITY_TOLERANCE).count() as f64 / rel.len() as f64
            },
            stayed_fraction: if assigned > 0 { stayed as f64 / assigned as f64 } else { 0.0 },
            velocity_ok: tr.separated_at.is_some() && max_relative < COLLAPSE_VELOCITY_TOLERANCE,
        }
    });

    // nodes and exits
    let mut nodes = NodeReport { v_max, ..Default::default() };
    let mut exits = Vec::new();
    for (i, s) in states.iter().enumerate() {
        nodes.events += s.node_events.len();
        if !s.node_events.is_empty() {
            nodes.trajectories_affected += 1;
        }
        for e in &s.node_events {
            if nodes.first_events.len() < 100 {
                nodes.first_events.push((i, e.time, e.density));
            }
        }
        nodes.longest_dwell = nodes.longest_dwell.max(s.longest_dwell);
        if let Some(x) = &s.exit {
            exits.push((i, x.clone()));
        }
    }
    if nodes.longest_dwell > scenario.node_policy.max_dwell_steps {
        diagnostics.push(format!(
            "a trajectory stayed {} consecutive steps near a node (limit {})",
            nodes.longest_dwell, scenario.node_policy.max_dwell_steps
        ));
    }
    let (edge_limit, edge_name) = match evolver {
        SolverState::Grid(_) => (GRID_EDGE_THRESHOLD, "boundary band"),
        SolverState::Fock(_) => (LEAKAGE_THRESHOLD, "top occupation shell"),
    };
    if let Some(worst) = checkpoints.iter().map(|c| c.edge_probability).reduce(f64::max) {
        if worst > edge_limit {
            diagnostics.push(format!("probability {worst:.3e} reached the {edge_name} (limit {edge_limit:.0e})"));
        }
    }

    let overlay = match &scenario.overlay {
        Some(o) => overlay_report(o, &evolver, &states)?,
        None => None,
    };

    let mut certification = CertificationReport {
        no_nodes: nodes.events == 0,
        no_exits: exits.is_empty(),
        ..Default::default()
    };
    if equilibrium && n >= MIN_TRAJECTORIES {
        certification.equivariance = Some(checkpoints.iter().all(|c| c.ratio.is_some_and(|r| r <= FLOOR_FACTOR)));
    }
    if let Some(b) = &final_branches {
        if equilibrium && !b.z_scores.is_empty() {
            certification.born_rule = Some(b.z_scores.iter().all(|z| z.abs() <= 3.0));
        }
        diagnostics.extend(b.diagnostics.iter().cloned());
    }
    if let Some(c) = &collapse {
        certification.collapse = Some(c.separated_at.is_some() && c.stayed_fraction == 1.0);
    }
    certification.certified = certification.no_nodes
        && certification.no_exits
        && [certification.equivariance, certification.born_rule, certification.collapse].iter().all(|f| f.unwrap_or(true));

    let final_positions = states.iter().map(|s| s.x.clone()).collect();
    let trajectories = states.into_iter().enumerate().filter_map(|(i, s)| s.record.map(|r| (i, r))).collect();
    let report = Report {
        scenario: scenario.name.clone(),
        digest: scenario.digest(),
        version: crate::VERSION.into(),
        seed: ens.seed,
        samples: n,
        dim,
        labels: model.coordinate_labels(),
        sampling,
        checkpoints,
        branches: final_branches,
        collapse,
        conservation,
        max_displacement,
        nodes,
        exits,
        overlay,
        certification,
        diagnostics,
    };
    Ok(RunOutput { report, trajectories, final_positions, samples })
}

/// Compares full and branch velocities of every trajectory after separation.
fn collapse_step(tr: &mut BranchTracker, full: &dyn PilotWave, branches: &[BranchState], st: &[TrajectoryState], law: &crate::model::GuidanceLaw) {
    let mut pv = PointValue::zeros(full.internal_dim(), full.dim());
    let mut pairs = Vec::new();
    for (i, s) in st.iter().enumerate() {
        if !s.active() {
            continue;
        }
        let Some(b) = membership(branches, &s.x) else { continue };
        if tr.assigned[i] != Some(b) {
            tr.stayed[i] = false;
        }
        let v = full.evaluate_into(&s.x, &mut pv).ok().and_then(|_| velocity_from(law, &pv));
        let vb = branches[b].wave.evaluate_into(&s.x, &mut pv).ok().and_then(|_| velocity_from(law, &pv));
        if let (Some(v), Some(vb)) = (v, vb) {
            pairs.push((v, vb));
        }
    }
    if pairs.is_empty() {
        return;
    }
    let v_rms = (pairs.iter().map(|(v, _)| v.iter().map(|c| c * c).sum::<f64>()).sum::<f64>() / pairs.len() as f64).sqrt();
    for (v, vb) in pairs {
        let diff = speed(&v.iter().zip(&vb).map(|(a, b)| a - b).collect::<Vec<_>>());
        let sb = speed(&vb);
        tr.relative.push(if sb > 0.0 { diff / sb } else if diff == 0.0 { 0.0 } else { f64::INFINITY });
        if v_rms + sb > 0.0 {
            tr.max_scale_relative = tr.max_scale_relative.max(diff / (sb + v_rms));
        }
    }
}

fn final_branch_report(
    tr: &BranchTracker,
    ev: &SolverState,
    snap: &dyn PilotWave,
    st: &[TrajectoryState],
) -> Result<BranchReport, EnsembleError> {
    let active: Vec<&TrajectoryState> = st.iter().filter(|s| s.active()).collect();
    let n = active.len().max(1);
    let (analysis, member): (_, Vec<Option<usize>>) = match &tr.source {
        BranchSource::Superlevel(level) => {
            let g = ev.grid_snapshot().ok_or_else(|| EnsembleError::Setup("superlevel branches need a grid".into()))?;
            let (a, labels) = superlevel_analysis(&g, *level);
            let member = active.iter().map(|s| superlevel_membership(&g, &labels, &s.x)).collect();
            (a, member)
        }
        _ => {
            let branches = tr.states(ev);
            let a = branch_analysis(snap, &branches, &ev.lattice(snap))?;
            let member = active.iter().map(|s| membership(&branches, &s.x)).collect();
            (a, member)
        }
    };
    let k = analysis.names.len();
    let mut counts = vec![0usize; k];
    for b in member.into_iter().flatten() {
        counts[b] += 1;
    }
    let weights: Vec<f64> =
        (0..k).map(|i| tr.exact.get(i).copied().flatten().unwrap_or(analysis.weights[i])).collect();
    let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let standard_errors: Vec<f64> = weights.iter().map(|&w| binomial_standard_error(w, n)).collect();
    let z_scores = frequencies
        .iter()
        .zip(&weights)
        .zip(&standard_errors)
        .map(|((f, w), se)| if *se > 0.0 { (f - w) / se } else if f == w { 0.0 } else { f64::INFINITY })
        .collect();
    let residual = (1.0 - weights.iter().sum::<f64>()).abs();
    Ok(BranchReport {
        names: analysis.names.clone(),
        weights,
        quadrature_weights: analysis.weights.clone(),
        frequencies,
        counts,
        standard_errors,
        z_scores,
        final_overlap: analysis.max_off_diagonal_overlap(),
        residual,
        diagnostics: analysis.diagnostics,
    })
}

/// Local expectation of the overlay operator along the first active
/// trajectory at the final time.
fn overlay_report(
    o: &crate::model::OverlaySpec,
    ev: &SolverState,
    states: &[TrajectoryState],
) -> Result<Option<OverlayReport>, EnsembleError> {
    let Some((i, s)) = states.iter().enumerate().find(|(_, s)| s.active()) else { return Ok(None) };
    let snap = ev.snapshot();
    let pv = snap.evaluate(&s.x)?;
    let op = |x: &[f64; 3]| o.matrix.0.map(|z| z * o.profile(x));
    match local_expectation(&pv, 0.0, &op, &o.points) {
        Ok(l) => Ok(Some(OverlayReport {
            trajectory: i,
            time: snap.time(),
            points: o.points.clone(),
            values: l.values,
            max_imaginary: l.max_imaginary,
        })),
        Err(e) => Err(EnsembleError::Setup(format!("overlay: {e}"))),
    }
}
