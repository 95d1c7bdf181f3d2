use super::BeableError;
use crate::guidance::PointValue;
use crate::linalg::{hermitian_defect, CMatrix};
use crate::model::HERMITIAN_TOL;
use num_complex::Complex64;

/// Values of a local expectation beable on a set of physical points.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalExpectation {
    pub values: Vec<f64>,
    /// Largest imaginary part discarded, a Hermiticity check.
    pub max_imaginary: f64,
}

/// `sum_ff' conj(Psi_f(q)) O_ff'(x) Psi_f'(q) / rho(q)` at each `x`, with the
/// wavefunction already evaluated at the actual configuration `q`.
pub fn local_expectation(
    at_q: &PointValue,
    node_floor: f64,
    operator: &dyn Fn(&[f64; 3]) -> CMatrix,
    points: &[[f64; 3]],
) -> Result<LocalExpectation, BeableError> {
    let rho = at_q.density();
    if !(rho > node_floor) {
        return Err(BeableError::Node { density: rho });
    }
    let psi = &at_q.values;
    let fd = psi.len();
    let mut values = Vec::with_capacity(points.len());
    let mut max_imaginary = 0.0_f64;
    for x in points {
        let o = operator(x);
        if o.nrows() != fd || o.ncols() != fd {
            return Err(BeableError::BlockShape { rows: o.nrows(), cols: o.ncols(), expected: fd });
        }
        let defect = hermitian_defect(&o);
        if defect > HERMITIAN_TOL {
            return Err(BeableError::NonHermitian { defect });
        }
        // a multiple of the identity has that multiple as its expectation in
        // any state; returning it directly avoids the rounding of the sum
        let d = o[(0, 0)];
        let scalar = d.im == 0.0
            && (0..fd).all(|f| (0..fd).all(|g| if f == g { o[(f, g)] == d } else { o[(f, g)] == Complex64::new(0.0, 0.0) }));
        if scalar {
            values.push(d.re);
            continue;
        }
        let mut s = Complex64::new(0.0, 0.0);
        for f in 0..fd {
            for g in 0..fd {
                s += psi[f].conj() * o[(f, g)] * psi[g];
            }
        }
        let s = s / rho;
        max_imaginary = max_imaginary.max(s.im.abs());
        values.push(s.re);
    }
    Ok(LocalExpectation { values, max_imaginary })
}
