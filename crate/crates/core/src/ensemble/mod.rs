//! Equilibrium sampling, equivariance statistics and full ensemble runs.
//!
//! Every trajectory draws from its own ChaCha stream (`seed`, stream =
//! trajectory index), so results do not depend on thread count or order.

mod run;
mod stats;

pub use run::{
    build_evolver, build_state_evolver, run_ensemble, BranchReport, CertificationReport, CheckpointReport, CheckpointSample, CollapseReport,
    ConservationReport, NodeReport, OverlayReport, Report, RunOutput, SolverState, COLLAPSE_OVERLAP, COLLAPSE_VELOCITY_TOLERANCE,
};
pub use stats::{binomial_standard_error, ks_two_sample, scott_width, split_rhat};

use crate::beables::QuadratureLattice;
use crate::guidance::{EvalError, PilotWave, SolverError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest ensemble for which a histogram distance is reported.
pub const MIN_TRAJECTORIES: usize = 100;
/// Largest acceptable split-chain potential scale reduction.
pub const RHAT_THRESHOLD: f64 = 1.01;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("{n} trajectories are too few for a distance estimate (need at least {MIN_TRAJECTORIES})")]
    TooFew { n: usize },
    #[error("density vanishes on the sampling lattice")]
    EmptyDensity,
    #[error("Metropolis chains did not mix: split R-hat {rhat:.4} exceeds {RHAT_THRESHOLD}")]
    Convergence { rhat: f64 },
    #[error("{0}")]
    Setup(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("trajectory {index}: {message}")]
    Trajectory { index: usize, message: String },
}

/// Independent random stream of trajectory `index`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Probability masses of lattice cells centred on the lattice points.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityTable {
    pub lattice: QuadratureLattice,
    pub mass: Vec<f64>,
    cdf: Vec<f64>,
}

impl DensityTable {
    pub fn from_fn(lattice: &QuadratureLattice, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self, EnsembleError> {
        let mut x = vec![0.0; lattice.axes.len()];
        let mut mass = Vec::with_capacity(lattice.len());
        for p in 0..lattice.len() {
            lattice.point(p, &mut x);
            mass.push(f(&x));
        }
        Self::from_masses(lattice, mass)
    }

    /// Unnormalized nonnegative weights, one per lattice point.
    pub fn from_masses(lattice: &QuadratureLattice, mut mass: Vec<f64>) -> Result<Self, EnsembleError> {
        assert_eq!(mass.len(), lattice.len(), "one mass per lattice point");
        mass.iter_mut().for_each(|m| *m = m.max(0.0));
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(EnsembleError::EmptyDensity);
        }
        mass.iter_mut().for_each(|m| *m /= total);
        let mut acc = 0.0;
        let cdf = mass
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        Ok(Self { lattice: lattice.clone(), mass, cdf })
    }

    /// Tabulates `|Psi|^2`; points the wavefunction cannot evaluate count as
    /// zero density.
    pub fn from_wave(wave: &dyn PilotWave, lattice: &QuadratureLattice) -> Result<Self, EnsembleError> {
        Self::from_fn(lattice, |x| wave.density_at(x).unwrap_or(0.0))
    }

    pub fn dim(&self) -> usize {
        self.lattice.axes.len()
    }

    /// Inverse-CDF draw of a cell followed by a uniform position inside it.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let cell = self.cdf.partition_point(|&c| c < u).min(self.mass.len() - 1);
        let mut x = vec![0.0; self.dim()];
        self.lattice.point(cell, &mut x);
        for (xd, ax) in x.iter_mut().zip(&self.lattice.axes) {
            *xd += ax.1 * (rng.random::<f64>() - 0.5);
        }
        x
    }

    pub fn mean_std(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut x = vec![0.0; d];
        let (mut m1, mut m2) = (vec![0.0; d], vec![0.0; d]);
        for (p, w) in self.mass.iter().enumerate() {
            self.lattice.point(p, &mut x);
            for k in 0..d {
                m1[k] += w * x[k];
                m2[k] += w * x[k] * x[k];
            }
        }
        // piecewise-constant cells add h^2 / 12 to each variance
        let std = (0..d).map(|k| (m2[k] - m1[k] * m1[k] + self.lattice.axes[k].1.powi(2) / 12.0).max(0.0).sqrt()).collect();
        (m1, std)
    }

    /// One-dimensional marginal table of coordinate `d`.
    pub fn marginal(&self, d: usize) -> Self {
        let (lo, h, n) = self.lattice.axes[d];
        let mut stride = 1;
        for ax in &self.lattice.axes[d + 1..] {
            stride *= ax.2;
        }
        let mut mass = vec![0.0; n];
        for (p, m) in self.mass.iter().enumerate() {
            mass[(p / stride) % n] += m;
        }
        let lattice = QuadratureLattice { axes: vec![(lo, h, n)] };
        Self::from_fn(&lattice, |x| mass[(((x[0] - lo) / h).round() as usize).min(n - 1)]).expect("marginal of a normalized table")
    }

    /// Cell-edge bounds of the cells carrying mass, per coordinate.
    pub fn occupied_box(&self) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|d| {
                let m = if self.dim() == 1 { self.clone() } else { self.marginal(d) };
                let (lo, h, n) = m.lattice.axes[0];
                let first = m.mass.iter().position(|&v| v > 0.0).unwrap_or(0);
                let last = m.mass.iter().rposition(|&v| v > 0.0).unwrap_or(n - 1);
                (lo + (first as f64 - 0.5) * h, lo + (last as f64 + 0.5) * h)
            })
            .collect()
    }
}

/// How an ensemble was initialized from the equilibrium density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SamplingMethod {
    InverseCdf,
    Metropolis { rhat: f64, acceptance: f64 },
}

/// `n` draws from `|Psi|^2`: inverse CDF on a table for up to two
/// coordinates, random-walk Metropolis with a split-chain check otherwise.
pub fn sample_equilibrium(
    wave: &dyn PilotWave,
    table: &DensityTable,
    n: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, SamplingMethod), EnsembleError> {
    if table.dim() <= 2 {
        let points = (0..n).map(|i| table.sample(&mut trajectory_rng(seed, i as u64))).collect();
        return Ok((points, SamplingMethod::InverseCdf));
    }
    metropolis(wave, table, n, seed)
}

const CHAINS: usize = 4;
const BURN_IN: usize = 2000;
const THIN: usize = 5;

fn metropolis(wave: &dyn PilotWave, table: &DensityTable, n: usize, seed: u64) -> Result<(Vec<Vec<f64>>, SamplingMethod), EnsembleError> {
    let d = table.dim();
    let (_, std) = table.mean_std();
    let step: Vec<f64> = std.iter().map(|s| 2.38 / (d as f64).sqrt() * s).collect();
    let per_chain = n.div_ceil(CHAINS);
    let mut chains: Vec<Vec<Vec<f64>>> = Vec::with_capacity(CHAINS);
    let (mut accepted, mut proposed) = (0usize, 0usize);
    for c in 0..CHAINS {
        // chain streams sit far above any trajectory index
        let mut rng = trajectory_rng(seed, u64::MAX - c as u64);
        let mut x = table.sample(&mut rng);
        let mut rho = wave.density_at(&x).unwrap_or(0.0);
        let mut out = Vec::with_capacity(per_chain);
        for it in 0..BURN_IN + per_chain * THIN {
            let y: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + s * (2.0 * rng.random::<f64>() - 1.0) * 3f64.sqrt()).collect();
            let ry = wave.density_at(&y).unwrap_or(0.0);
            proposed += 1;
            if ry >= rho || rng.random::<f64>() * rho < ry {
                x = y;
                rho = ry;
                accepted += 1;
            }
            if it >= BURN_IN && (it - BURN_IN) % THIN == THIN - 1 {
                out.push(x.clone());
            }
        }
        chains.push(out);
    }
    let rhat = (0..d)
        .map(|k| {
            let series: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|x| x[k]).collect()).collect();
            split_rhat(&series)
        })
        .fold(0.0, f64::max);
    if !(rhat <= RHAT_THRESHOLD) {
        return Err(EnsembleError::Convergence { rhat });
    }
    let points: Vec<Vec<f64>> = chains.into_iter().flatten().take(n).collect();
    Ok((points, SamplingMethod::Metropolis { rhat, acceptance: accepted as f64 / proposed as f64 }))
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
    (-0.339_981_043_584_856_26, 0.652_145_154_862_546_2),
    (0.339_981_043_584_856_26, 0.652_145_154_862_546_2),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
];

/// Histogram bins along one coordinate.
#[derive(Clone, Debug, PartialEq)]
struct Bins {
    lo: f64,
    width: f64,
    count: usize,
}

impl Bins {
    fn index(&self, x: f64) -> Option<usize> {
        let u = (x - self.lo) / self.width;
        (u >= 0.0 && u < self.count as f64).then(|| u as usize)
    }
}

/// Bin probabilities of `|Psi(t)|^2` against which ensembles are compared:
/// the full joint histogram for up to two coordinates, averaged marginals
/// above that.
#[derive(Clone, Debug)]
pub struct EquivarianceReference {
    bins: Vec<Bins>,
    /// Joint bin probabilities (row-major), or concatenated marginals.
    probs: Vec<f64>,
    joint: bool,
    table: DensityTable,
}

impl EquivarianceReference {
    /// Bin widths follow Scott's rule for `n` samples with the standard
    /// deviations of the density itself.
    pub fn new(wave: &dyn PilotWave, table: &DensityTable, n: usize) -> Result<Self, EnsembleError> {
        let table = table.clone();
        let d = table.dim();
        let (_, std) = table.mean_std();
        let bounds = table.occupied_box();
        let bins: Vec<Bins> = (0..d)
            .map(|k| {
                let width = scott_width(std[k], n, d.min(3));
                let (lo, hi) = bounds[k];
                Bins { lo, width, count: (((hi - lo) / width).ceil() as usize).max(1) }
            })
            .collect();
        let joint = d <= 2;
        let probs = if joint { joint_probabilities(wave, &bins)? } else { marginal_probabilities(&table, &bins) };
        Ok(Self { bins, probs, joint, table })
    }

    pub fn bin_widths(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.width).collect()
    }

    pub fn joint(&self) -> bool {
        self.joint
    }

    /// Total-variation estimate in `[0, 2]`: the L1 distance between
    /// empirical and reference bin frequencies, with all mass outside the
    /// bins lumped into one extra bin.
    pub fn distance(&self, points: &[Vec<f64>]) -> Result<f64, EnsembleError> {
        let n = points.len();
        if n < MIN_TRAJECTORIES {
            return Err(EnsembleError::TooFew { n });
        }
        if self.joint {
            Ok(l1(&self.probs, &self.bins, points, None))
        } else {
            let mut offset = 0;
            let mut total = 0.0;
            for (k, b) in self.bins.iter().enumerate() {
                let probs = &self.probs[offset..offset + b.count];
                total += l1(probs, std::slice::from_ref(b), points, Some(k));
                offset += b.count;
            }
            Ok(total / self.bins.len() as f64)
        }
    }

    /// Distances of `replicates` fresh equilibrium samples of size `n`.
    pub fn noise_floor(&self, n: usize, replicates: usize, seed: u64) -> Result<NoiseFloor, EnsembleError> {
        let mut d = Vec::with_capacity(replicates.max(1));
        for r in 0..replicates.max(1) {
            let mut rng = trajectory_rng(seed ^ 0x9e37_79b9_7f4a_7c15, r as u64);
            let sample: Vec<Vec<f64>> = (0..n).map(|_| self.table.sample(&mut rng)).collect();
            d.push(self.distance(&sample)?);
        }
        d.sort_by(f64::total_cmp);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let upper = d[((d.len() - 1) as f64 * FLOOR_QUANTILE).round() as usize];
        Ok(NoiseFloor { mean, upper })
    }
}

/// Quantile of the bootstrap distances used as the noise floor.
pub const FLOOR_QUANTILE: f64 = 0.95;

/// Spread of the distance between equilibrium samples and the reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseFloor {
    pub mean: f64,
    /// The `FLOOR_QUANTILE` quantile; this is what ratios are taken against.
    pub upper: f64,
}

fn l1(probs: &[f64], bins: &[Bins], points: &[Vec<f64>], coordinate: Option<usize>) -> f64 {
    let mut counts = vec![0usize; probs.len()];
    let mut outside = 0usize;
    for x in points {
        let idx = match coordinate {
            Some(k) => bins[0].index(x[k]),
            None => bins.iter().zip(x).try_fold(0usize, |acc, (b, &v)| b.index(v).map(|i| acc * b.count + i)),
        };
        match idx {
            Some(i) => counts[i] += 1,
            None => outside += 1,
        }
    }
    let n = points.len() as f64;
    let inside: f64 = probs.iter().sum();
    let mut d: f64 = counts.iter().zip(probs).map(|(&c, p)| (c as f64 / n - p).abs()).sum();
    d += (outside as f64 / n - (1.0 - inside).max(0.0)).abs();
    d
}

/// Bin integrals of `|Psi|^2` by four-point Gauss-Legendre per coordinate.
fn joint_probabilities(wave: &dyn PilotWave, bins: &[Bins]) -> Result<Vec<f64>, EnsembleError> {
    let d = bins.len();
    let total: usize = bins.iter().map(|b| b.count).product();
    let nodes = 4usize.pow(d as u32);
    let mut probs = vec![0.0; total];
    let mut x = vec![0.0; d];
    for (cell, p) in probs.iter_mut().enumerate() {
        let mut idx = vec![0usize; d];
        let mut rest = cell;
        for k in (0..d).rev() {
            idx[k] = rest % bins[k].count;
            rest /= bins[k].count;
        }
        let mut acc = 0.0;
        for node in 0..nodes {
            let mut w = 1.0;
            let mut r = node;
            for k in (0..d).rev() {
                let (t, wt) = GAUSS4[r % 4];
                r /= 4;
                let b = &bins[k];
                x[k] = b.lo + (idx[k] as f64 + 0.5 + 0.5 * t) * b.width;
                w *= 0.5 * wt * b.width;
            }
            acc += w * wave.density_at(&x).unwrap_or(0.0);
        }
        *p = acc;
    }
    let sum: f64 = probs.iter().sum();
    if !(sum > 0.0) {
        return Err(EnsembleError::EmptyDensity);
    }
    // the bins cover the occupied box, so residual mass is quadrature error
    probs.iter_mut().for_each(|p| *p /= sum);
    Ok(probs)
}

/// Marginal bin probabilities from piecewise-constant table cells.
fn marginal_probabilities(table: &DensityTable, bins: &[Bins]) -> Vec<f64> {
    let mut out = Vec::new();
    for (k, b) in bins.iter().enumerate() {
        let m = table.marginal(k);
        let (lo, h, _) = m.lattice.axes[0];
        let mut probs = vec![0.0; b.count];
        for (i, mass) in m.mass.iter().enumerate() {
            let (a, z) = (lo + (i as f64 - 0.5) * h, lo + (i as f64 + 0.5) * h);
            for (j, p) in probs.iter_mut().enumerate() {
                let (bl, bh) = (b.lo + j as f64 * b.width, b.lo + (j + 1) as f64 * b.width);
                let overlap = (z.min(bh) - a.max(bl)).max(0.0);
                *p += mass * overlap / h;
            }
        }
        out.extend(probs);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::PointValue;
    use num_complex::Complex64;
    use std::f64::consts::PI;

    /// Product of normal amplitudes in any dimension.
    struct Normal {
        dim: usize,
        center: Vec<f64>,
        sigma: f64,
    }

    impl PilotWave for Normal {
        fn dim(&self) -> usize {
            self.dim
        }
        fn internal_dim(&self) -> usize {
            1
        }
        fn time(&self) -> f64 {
            0.0
        }
        fn evaluate_into(&self, x: &[f64], out: &mut PointValue) -> Result<(), EvalError> {
            let s = self.sigma;
            let r2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c).powi(2)).sum();
            let a = (2.0 * PI * s * s).powf(-0.25 * self.dim as f64) * (-r2 / (4.0 * s * s)).exp();
            out.values[0] = Complex64::new(a, 0.0);
            Ok(())
        }
        fn density_scale(&self) -> f64 {
            1.0
        }
        fn support_box(&self) -> Vec<(f64, f64)> {
            self.center.iter().map(|c| (c - 10.0 * self.sigma, c + 10.0 * self.sigma)).collect()
        }
    }

    fn normal(dim: usize) -> Normal {
        Normal { dim, center: vec![0.0; dim], sigma: 1.0 }
    }

    fn table(w: &dyn PilotWave, n: usize) -> DensityTable {
        DensityTable::from_wave(w, &QuadratureLattice::over_box(&w.support_box(), n)).unwrap()
    }

    #[test]
    fn gaussian_sample_moments() {
        let w = normal(1);
        let n = 100_000;
        let (pts, method) = sample_equilibrium(&w, &table(&w, 4001), n, 7).unwrap();
        assert_eq!(method, SamplingMethod::InverseCdf);
        let mean = pts.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        let var = pts.iter().map(|p| (p[0] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn categorical_branch_counts_are_binomial() {
        let lat = QuadratureLattice::over_box(&[(-20.0, 20.0)], 8001);
        let (w1, w2) = (0.3, 0.7);
        let g = |x: f64, c: f64| (-(x - c).powi(2) / 2.0).exp() / (2.0 * PI).sqrt();
        let table = DensityTable::from_fn(&lat, |x| w1 * g(x[0], -8.0) + w2 * g(x[0], 8.0)).unwrap();
        let n = 10_000;
        let left = (0..n).filter(|&i| table.sample(&mut trajectory_rng(3, i as u64))[0] < 0.0).count();
        let se = binomial_standard_error(w1, n);
        assert!((left as f64 / n as f64 - w1).abs() < 3.0 * se);
    }

    #[test]
    fn seeds_are_deterministic_and_streams_independent() {
        let w = normal(2);
        let lat = table(&w, 201);
        let (a, _) = sample_equilibrium(&w, &lat, 500, 11).unwrap();
        let (b, _) = sample_equilibrium(&w, &lat, 500, 11).unwrap();
        let (c, _) = sample_equilibrium(&w, &lat, 500, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // a longer ensemble extends a shorter one
        let (d, _) = sample_equilibrium(&w, &lat, 800, 11).unwrap();
        assert_eq!(&d[..500], &a[..]);
    }

    #[test]
    fn metropolis_in_three_dimensions_is_certified() {
        let w = Normal { dim: 3, center: vec![1.0, -2.0, 0.5], sigma: 0.7 };
        let (pts, method) = sample_equilibrium(&w, &table(&w, 41), 4000, 5).unwrap();
        let SamplingMethod::Metropolis { rhat, acceptance } = method else { panic!("expected Metropolis") };
        assert!(rhat <= RHAT_THRESHOLD && acceptance > 0.1);
        for k in 0..3 {
            let m = pts.iter().map(|p| p[k]).sum::<f64>() / pts.len() as f64;
            assert!((m - w.center[k]).abs() < 0.1, "{m}");
        }
    }

    #[test]
    fn distance_statistics() {
        let w = normal(1);
        let lat = table(&w, 4001);
        let n = 10_000;
        let reference = EquivarianceReference::new(&w, &lat, n).unwrap();
        let floor = reference.noise_floor(n, 100, 1).unwrap();
        assert!(floor.mean < floor.upper);
        let (pts, _) = sample_equilibrium(&w, &lat, n, 99).unwrap();
        assert!(reference.distance(&pts).unwrap() <= floor.upper);
        // every trajectory at one point far from the bulk
        let point = vec![vec![25.0]; n];
        assert!((reference.distance(&point).unwrap() - 2.0).abs() < 1e-12);
        let stacked = vec![vec![0.0]; n];
        assert!(reference.distance(&stacked).unwrap() > 1.8);
        assert!(matches!(reference.distance(&pts[..99]), Err(EnsembleError::TooFew { n: 99 })));
    }

    #[test]
    fn marginal_distance_in_three_dimensions() {
        let w = normal(3);
        let lat = table(&w, 41);
        let reference = EquivarianceReference::new(&w, &lat, 4000).unwrap();
        assert!(!reference.joint());
        let floor = reference.noise_floor(4000, 50, 2).unwrap();
        let (pts, _) = sample_equilibrium(&w, &lat, 4000, 3).unwrap();
        assert!(reference.distance(&pts).unwrap() <= 2.0 * floor.upper);
    }
}
