//! Small dense and Krylov linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest entry of `|m - m†|`.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    hermitian_defect(m) <= tol
}

/// Spectral decomposition `H = V diag(λ) V†` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(h: &CMatrix) -> Self {
        // Symmetrize so tiny rounding asymmetries do not leak into the vectors.
        let sym = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let n = h.nrows();
        let mut vectors = CMatrix::zeros(n, n);
        let mut values = Vec::with_capacity(n);
        for (col, &src) in order.iter().enumerate() {
            values.push(eig.eigenvalues[src]);
            vectors.set_column(col, &eig.eigenvectors.column(src));
        }
        Self { values, vectors }
    }

    /// `exp(-i H dt)`, unitary to rounding.
    pub fn propagator(&self, dt: f64) -> CMatrix {
        let n = self.values.len();
        let phases = DVector::from_iterator(n, self.values.iter().map(|&e| (-I * e * dt).exp()));
        let scaled = CMatrix::from_fn(n, n, |i, j| self.vectors[(i, j)] * phases[j]);
        scaled * self.vectors.adjoint()
    }
}

pub fn unitary_propagator(h: &CMatrix, dt: f64) -> CMatrix {
    HermitianEigen::new(h).propagator(dt)
}

pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// Krylov basis with full reorthogonalisation for a Hermitian operator.
struct Lanczos {
    basis: Vec<Vec<Complex64>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    residual_norm: f64,
}

impl Lanczos {
    fn build<F>(apply: &F, start: &[Complex64], max_dim: usize) -> Self
    where
        F: Fn(&[Complex64], &mut [Complex64]),
    {
        let n = start.len();
        let norm = norm_sqr(start).sqrt();
        let mut basis = vec![start.iter().map(|x| x / norm).collect::<Vec<_>>()];
        let mut alpha = Vec::new();
        let mut beta = Vec::new();
        let mut w = vec![Complex64::new(0.0, 0.0); n];
        let mut residual_norm = 0.0;
        for j in 0..max_dim.min(n) {
            apply(&basis[j], &mut w);
            let a = inner(&basis[j], &w).re;
            alpha.push(a);
            // Two passes of classical Gram-Schmidt keep the basis orthonormal.
            for _ in 0..2 {
                for v in &basis {
                    let c = inner(v, &w);
                    for (wi, vi) in w.iter_mut().zip(v) {
                        *wi -= c * vi;
                    }
                }
            }
            let b = norm_sqr(&w).sqrt();
            residual_norm = b;
            if j + 1 == max_dim.min(n) || b < 1e-14 * (1.0 + a.abs()) {
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        }
        Self { basis, alpha, beta, residual_norm }
    }

    fn tridiagonal_eigen(&self) -> (Vec<f64>, DMatrix<f64>) {
        let m = self.alpha.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                self.alpha[i]
            } else if i + 1 == j {
                self.beta[i]
            } else if j + 1 == i {
                self.beta[j]
            } else {
                0.0
            }
        });
        let eig = t.symmetric_eigen();
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    }
}

/// Applies `exp(-i H dt)` to `psi` with a Lanczos approximation, subdividing
/// `dt` until the a-posteriori error estimate drops below `tol`.
pub fn lanczos_propagate<F>(apply: &F, psi: &[Complex64], dt: f64, tol: f64) -> Vec<Complex64>
where
    F: Fn(&[Complex64], &mut [Complex64]),
{
    const MAX_KRYLOV: usize = 40;
    let mut state = psi.to_vec();
    let mut remaining = dt;
    let mut step = dt;
    while remaining.abs() > 0.0 {
        let h = if step.abs() > remaining.abs() { remaining } else { step };
        let norm = norm_sqr(&state).sqrt();
        if norm == 0.0 {
            return state;
        }
        let krylov = Lanczos::build(apply, &state, MAX_KRYLOV);
        let (values, vectors) = krylov.tridiagonal_eigen();
        let m = values.len();
        // y = exp(-i T h) e1
        let y: Vec<Complex64> = (0..m)
            .map(|i| {
                (0..m)
                    .map(|k| vectors[(i, k)] * vectors[(0, k)] * (-I * values[k] * h).exp())
                    .sum()
            })
            .collect();
        let err = krylov.residual_norm * y[m - 1].norm();
        if err > tol && m == MAX_KRYLOV && h.abs() > dt.abs() * 1e-6 {
            step = h / 2.0;
            continue;
        }
        let mut next = vec![Complex64::new(0.0, 0.0); state.len()];
        for (coef, v) in y.iter().zip(&krylov.basis) {
            for (out, vi) in next.iter_mut().zip(v) {
                *out += coef * vi * norm;
            }
        }
        state = next;
        remaining -= h;
    }
    state
}

/// Lowest eigenvalue of a Hermitian operator by restarted Lanczos.
pub fn lanczos_lowest<F>(apply: &F, start: &[Complex64], tol: f64, max_restarts: usize) -> (f64, Vec<Complex64>)
where
    F: Fn(&[Complex64], &mut [Complex64]),
{
    const KRYLOV: usize = 120;
    let mut v = start.to_vec();
    let mut best = (f64::INFINITY, v.clone());
    for _ in 0..max_restarts.max(1) {
        let krylov = Lanczos::build(apply, &v, KRYLOV);
        let (values, vectors) = krylov.tridiagonal_eigen();
        let (k, &lowest) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty Krylov space");
        let m = values.len();
        let mut ritz = vec![Complex64::new(0.0, 0.0); v.len()];
        for i in 0..m {
            let c = vectors[(i, k)];
            for (r, b) in ritz.iter_mut().zip(&krylov.basis[i]) {
                *r += b * c;
            }
        }
        let residual = krylov.residual_norm * vectors[(m - 1, k)].abs();
        best = (lowest, ritz.clone());
        if residual < tol * (1.0 + lowest.abs()) {
            break;
        }
        v = ritz;
    }
    best
}
