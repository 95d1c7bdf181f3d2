use crate::grid::{superlevel_components, Grid, GridSnapshot};
use crate::guidance::{EvalError, PilotWave, PointValue};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Residual probability above which a partition is reported as incomplete.
pub const RESIDUAL_THRESHOLD: f64 = 1e-6;

/// Equal-weight lattice used for configuration-space integrals. On a grid it
/// coincides with the nodes; elsewhere it is a fine box covering the support.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureLattice {
    /// `(first point, spacing, count)` per coordinate.
    pub axes: Vec<(f64, f64, usize)>,
}

impl QuadratureLattice {
    pub fn from_grid(grid: &Grid) -> Self {
        Self { axes: grid.axes.iter().map(|a| (a.min, a.dx(), a.n)).collect() }
    }

    /// `points` nodes per coordinate spread over `[lo, hi]`.
    pub fn over_box(bounds: &[(f64, f64)], points: usize) -> Self {
        Self {
            axes: bounds
                .iter()
                .map(|&(lo, hi)| {
                    let h = (hi - lo) / (points - 1) as f64;
                    (lo, h, points)
                })
                .collect(),
        }
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.1).product()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.2).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, mut p: usize, out: &mut [f64]) {
        for d in (0..self.axes.len()).rev() {
            let (lo, h, n) = self.axes[d];
            out[d] = lo + (p % n) as f64 * h;
            p /= n;
        }
    }
}

/// One branch: a wavefunction over the same configuration space plus, when
/// known exactly, its probability.
#[derive(Clone)]
pub struct BranchState {
    pub name: String,
    pub wave: Arc<dyn PilotWave>,
    pub weight: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchAnalysis {
    pub names: Vec<String>,
    /// `int |Psi_i||Psi_j| / (||Psi_i|| ||Psi_j||)`.
    pub overlaps: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// `|1 - sum of weights|`.
    pub residual: f64,
    pub diagnostics: Vec<String>,
}

impl BranchAnalysis {
    pub fn max_off_diagonal_overlap(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (i, row) in self.overlaps.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    worst = worst.max(*v);
                }
            }
        }
        worst
    }
}

fn residual_diagnostic(residual: f64) -> Vec<String> {
    if residual > RESIDUAL_THRESHOLD {
        vec![format!("branches leave residual probability {residual:.3e} uncovered")]
    } else {
        Vec::new()
    }
}

/// Overlaps and weights of declared branches of `full`, integrated on
/// `lattice`. Exact weights supplied with a branch take precedence over the
/// quadrature.
pub fn branch_analysis(
    full: &dyn PilotWave,
    branches: &[BranchState],
    lattice: &QuadratureLattice,
) -> Result<BranchAnalysis, EvalError> {
    let k = branches.len();
    let dim = full.dim();
    let mut x = vec![0.0; dim];
    let mut pv = PointValue::zeros(full.internal_dim(), dim);
    let mut total = 0.0;
    let mut norms = vec![0.0; k];
    let mut cross = vec![vec![0.0; k]; k];
    let mut amp = vec![0.0; k];
    for p in 0..lattice.len() {
        lattice.point(p, &mut x);
        full.evaluate_into(&x, &mut pv)?;
        total += pv.density();
        for (a, b) in amp.iter_mut().zip(branches) {
            b.wave.evaluate_into(&x, &mut pv)?;
            *a = pv.density().sqrt();
        }
        for i in 0..k {
            norms[i] += amp[i] * amp[i];
            for j in 0..k {
                cross[i][j] += amp[i] * amp[j];
            }
        }
    }
    let overlaps = (0..k)
        .map(|i| (0..k).map(|j| if norms[i] > 0.0 && norms[j] > 0.0 { cross[i][j] / (norms[i] * norms[j]).sqrt() } else { 0.0 }).collect())
        .collect();
    let weights: Vec<f64> = branches.iter().zip(&norms).map(|(b, n)| b.weight.unwrap_or(n / total)).collect();
    let residual = (1.0 - weights.iter().sum::<f64>()).abs();
    Ok(BranchAnalysis {
        names: branches.iter().map(|b| b.name.clone()).collect(),
        overlaps,
        weights,
        residual,
        diagnostics: residual_diagnostic(residual),
    })
}

/// Index of the branch with the largest density at `q`, if any is nonzero.
pub fn membership(branches: &[BranchState], q: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, b) in branches.iter().enumerate() {
        let rho = b.wave.density_at(q).ok()?;
        if rho > best.map_or(0.0, |(_, r)| r) {
            best = Some((i, rho));
        }
    }
    best.map(|(i, _)| i)
}

/// Branches as the connected components of `{rho > level}` on the grid nodes.
/// Returns the analysis and the component label of every node.
pub fn superlevel_analysis(snapshot: &GridSnapshot, level: f64) -> (BranchAnalysis, Vec<Option<usize>>) {
    let rho = snapshot.nodal_density();
    let total: f64 = rho.iter().sum();
    let (labels, count) = superlevel_components(&snapshot.grid, &rho, level);
    let mut weights = vec![0.0; count];
    for (r, l) in rho.iter().zip(&labels) {
        if let Some(l) = l {
            weights[*l] += r / total;
        }
    }
    let overlaps = (0..count).map(|i| (0..count).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let residual = (1.0 - weights.iter().sum::<f64>()).abs();
    (
        BranchAnalysis {
            names: (0..count).map(|i| format!("component_{i}")).collect(),
            overlaps,
            weights,
            residual,
            diagnostics: residual_diagnostic(residual),
        },
        labels,
    )
}
