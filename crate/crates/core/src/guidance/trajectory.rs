use super::{EvalError, NodeGuard, PilotWave, PointValue};
use crate::linalg::CMatrix;
use crate::model::GuidanceLaw;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("incompatible input: {0}")]
    Incompatible(String),
    #[error("unstable step: {0}")]
    Stability(String),
}

/// A wavefunction that can be advanced in time and frozen into snapshots.
pub trait Evolver: Clone + Send + Sync {
    fn time(&self) -> f64;
    fn advance(&mut self, dt: f64) -> Result<(), SolverError>;
    fn snapshot(&self) -> Arc<dyn PilotWave>;
    fn norm_sqr(&self) -> f64;
    fn energy(&self) -> f64;
    /// The state with an internal-index operator applied pointwise.
    fn project(&self, p: &CMatrix) -> Self;
    /// `sqrt(sum_d <p_d^2>) / m`, a velocity scale for the node cap.
    fn characteristic_velocity(&self) -> f64;
    /// Probability held where the representation is truncated: the boundary
    /// band of a grid or the top occupation shell of a number basis.
    fn edge_probability(&self) -> f64;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEvent {
    pub time: f64,
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum ExitReason {
    Domain { time: f64, message: String },
}

/// Recorded samples of one trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub node_flags: Vec<bool>,
    pub node_events: Vec<NodeEvent>,
}

impl Trajectory {
    fn push(&mut self, t: f64, x: &[f64], node: bool) {
        self.times.push(t);
        self.points.push(x.to_vec());
        self.node_flags.push(node);
    }
}

/// Live state of one trajectory inside the lockstep driver.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryState {
    pub x: Vec<f64>,
    pub exit: Option<ExitReason>,
    pub node_events: Vec<NodeEvent>,
    pub node_last_step: bool,
    dwell: usize,
    pub longest_dwell: usize,
    pub record: Option<Trajectory>,
}

impl TrajectoryState {
    pub fn new(x: Vec<f64>, record: bool) -> Self {
        Self {
            x,
            exit: None,
            node_events: Vec::new(),
            node_last_step: false,
            dwell: 0,
            longest_dwell: 0,
            record: record.then(Trajectory::default),
        }
    }

    pub fn active(&self) -> bool {
        self.exit.is_none()
    }
}

/// Snapshot-dependent velocity with the node rule applied.
fn stage(
    psi: &dyn PilotWave,
    x: &[f64],
    law: &GuidanceLaw,
    guard: &NodeGuard,
    pv: &mut PointValue,
) -> Result<(Vec<f64>, Option<f64>), EvalError> {
    psi.evaluate_into(x, pv)?;
    let rho = pv.density();
    let (v, node) = guard.apply(super::velocity_from(law, pv), rho, psi.density_scale(), x.len());
    Ok((v, node.then_some(rho)))
}

/// Outcome of one RK4 step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub x: Vec<f64>,
    /// Smallest density among stages where the node rule fired.
    pub node_density: Option<f64>,
}

/// Classical RK4 with stages evaluated on snapshots at `t`, `t + h/2` and
/// `t + h`.
pub fn rk4_step(
    snapshots: [&dyn PilotWave; 3],
    x: &[f64],
    h: f64,
    law: &GuidanceLaw,
    guard: &NodeGuard,
) -> Result<StepReport, EvalError> {
    let n = x.len();
    let mut pv = PointValue::zeros(snapshots[0].internal_dim(), n);
    let mut node: Option<f64> = None;
    let mut note = |r: Option<f64>| {
        if let Some(rho) = r {
            node = Some(node.map_or(rho, |m: f64| m.min(rho)));
        }
    };
    let shifted = |k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + s * b).collect() };

    let (k1, r) = stage(snapshots[0], x, law, guard, &mut pv)?;
    note(r);
    let (k2, r) = stage(snapshots[1], &shifted(&k1, 0.5 * h), law, guard, &mut pv)?;
    note(r);
    let (k3, r) = stage(snapshots[1], &shifted(&k2, 0.5 * h), law, guard, &mut pv)?;
    note(r);
    let (k4, r) = stage(snapshots[2], &shifted(&k3, h), law, guard, &mut pv)?;
    note(r);
    let next = (0..n).map(|d| x[d] + h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d])).collect();
    Ok(StepReport { x: next, node_density: node })
}

/// Fixed parameters of a lockstep integration.
#[derive(Clone, Debug)]
pub struct DriverConfig {
    pub h: f64,
    pub steps: usize,
    pub substeps: usize,
    pub record_every: usize,
    pub law: GuidanceLaw,
    pub guard: NodeGuard,
}

/// Advances the wavefunction and every trajectory together. Only the three
/// snapshots of the current step are alive at any time. `observer` runs after
/// the initial state and after every step with the step index.
pub fn integrate_ensemble<E, O>(
    evolver: &mut E,
    states: &mut [TrajectoryState],
    cfg: &DriverConfig,
    mut observer: O,
) -> Result<(), SolverError>
where
    E: Evolver,
    O: FnMut(usize, &E, &Arc<dyn PilotWave>, &[TrajectoryState]) -> Result<(), SolverError>,
{
    let half = cfg.h / (2.0 * cfg.substeps as f64);
    let mut current = evolver.snapshot();
    let t0 = evolver.time();
    for s in states.iter_mut() {
        if let Some(r) = s.record.as_mut() {
            r.push(t0, &s.x, false);
        }
    }
    observer(0, evolver, &current, states)?;
    for step in 1..=cfg.steps {
        for _ in 0..cfg.substeps {
            evolver.advance(half)?;
        }
        let mid = evolver.snapshot();
        for _ in 0..cfg.substeps {
            evolver.advance(half)?;
        }
        let next = evolver.snapshot();
        let t_end = t0 + step as f64 * cfg.h;
        let snaps: [&dyn PilotWave; 3] = [current.as_ref(), mid.as_ref(), next.as_ref()];
        let record_now = step % cfg.record_every == 0 || step == cfg.steps;
        states.par_iter_mut().filter(|s| s.active()).for_each(|s| {
            match rk4_step(snaps, &s.x, cfg.h, &cfg.law, &cfg.guard) {
                Ok(rep) => {
                    s.x = rep.x;
                    s.node_last_step = rep.node_density.is_some();
                    if let Some(rho) = rep.node_density {
                        s.node_events.push(NodeEvent { time: t_end, density: rho });
                        if let Some(r) = s.record.as_mut() {
                            r.node_events.push(NodeEvent { time: t_end, density: rho });
                        }
                        s.dwell += 1;
                        s.longest_dwell = s.longest_dwell.max(s.dwell);
                    } else {
                        s.dwell = 0;
                    }
                    if record_now {
                        let node = s.node_last_step;
                        if let Some(r) = s.record.as_mut() {
                            r.push(t_end, &s.x, node);
                        }
                    }
                }
                Err(e) => s.exit = Some(ExitReason::Domain { time: t_end, message: e.to_string() }),
            }
        });
        current = next;
        observer(step, evolver, &current, states)?;
    }
    Ok(())
}

/// Integrates a single trajectory from `q0`, recording every step.
pub fn integrate_trajectory<E: Evolver>(
    q0: &[f64],
    evolver: &E,
    t_final: f64,
    h: f64,
    law: &GuidanceLaw,
    guard: NodeGuard,
) -> Result<(Trajectory, Option<ExitReason>), SolverError> {
    let mut e = evolver.clone();
    let mut states = vec![TrajectoryState::new(q0.to_vec(), true)];
    let cfg = DriverConfig {
        h,
        steps: (t_final / h).round() as usize,
        substeps: 1,
        record_every: 1,
        law: law.clone(),
        guard,
    };
    integrate_ensemble(&mut e, &mut states, &cfg, |_, _, _, _| Ok(()))?;
    let s = states.pop().expect("one trajectory");
    Ok((s.record.unwrap_or_default(), s.exit))
}
