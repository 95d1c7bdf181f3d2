//! Retained transverse field modes and their real-quadrature bookkeeping.
//!
//! Every retained wavevector `k` stands for the pair `{k, -k}`. The complex
//! mode amplitudes obey `q_l(-k) = q_l(k)*`, so each pair and polarization
//! carries two real beable coordinates `a, b` with
//!
//! ```text
//! q_l(k) = (a + i b) / sqrt(2),    q_l(-k) = (a - i b) / sqrt(2).
//! ```
//!
//! With this normalization the bosonic Hamiltonian of one pair separates into
//! two unit-mass oscillators of frequency `|k|`, one per quadrature.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeBasisError {
    #[error("wavevector {index} is zero and has no transverse plane")]
    ZeroWavevector { index: usize },
    #[error("wavevector {second} duplicates wavevector {first}")]
    DuplicateWavevector { first: usize, second: usize },
    #[error("wavevector {index} is not finite")]
    NonFinite { index: usize },
}

/// Real or imaginary part of a complex mode amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    Re,
    Im,
}

/// Identifies one real beable coordinate of a mode basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuadratureLabel {
    /// Index of the `{k, -k}` pair in the basis.
    pub mode: usize,
    /// Polarization index, 1 or 2.
    pub polarization: u8,
    pub quadrature: Quadrature,
}

impl fmt::Display for QuadratureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let part = match self.quadrature {
            Quadrature::Re => "re",
            Quadrature::Im => "im",
        };
        write!(f, "m{}_l{}_{}", self.mode, self.polarization, part)
    }
}

/// One retained pair `{k, -k}` with its polarization vectors, shared by both
/// members of the pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ModePair {
    pub wavevector: Vector3<f64>,
    pub polarizations: [Vector3<f64>; 2],
}

impl ModePair {
    pub fn frequency(&self) -> f64 {
        self.wavevector.norm()
    }

    pub fn polarization(&self, l: u8) -> Vector3<f64> {
        self.polarizations[usize::from(l - 1)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeBasis {
    pairs: Vec<ModePair>,
}

/// Deterministic transverse pair: `e1 = normalize(z x k)` unless `k` is
/// parallel to `z`, in which case `e1 = x`; `e2 = k_hat x e1`.
pub fn polarization_vectors(k: &Vector3<f64>) -> [Vector3<f64>; 2] {
    let k_hat = k.normalize();
    let z = Vector3::z();
    let cross = z.cross(&k_hat);
    let e1 = if cross.norm() > 1e-12 { cross.normalize() } else { Vector3::x() };
    let e2 = k_hat.cross(&e1);
    [e1, e2]
}

impl ModeBasis {
    /// Builds the basis from a list of wavevectors. If both `k` and `-k` are
    /// listed the first occurrence represents the pair; a lone `k` implies its
    /// partner.
    pub fn new(wavevectors: &[Vector3<f64>]) -> Result<Self, ModeBasisError> {
        let mut pairs: Vec<ModePair> = Vec::new();
        for (index, k) in wavevectors.iter().enumerate() {
            if !k.iter().all(|c| c.is_finite()) {
                return Err(ModeBasisError::NonFinite { index });
            }
            if k.norm() == 0.0 {
                return Err(ModeBasisError::ZeroWavevector { index });
            }
            let scale = 1e-12 * k.norm();
            if let Some(first) = wavevectors[..index].iter().position(|p| (p - k).norm() <= scale) {
                return Err(ModeBasisError::DuplicateWavevector { first, second: index });
            }
            if pairs.iter().any(|p| (p.wavevector + k).norm() <= scale) {
                continue;
            }
            pairs.push(ModePair { wavevector: *k, polarizations: polarization_vectors(k) });
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[ModePair] {
        &self.pairs
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    /// Every retained `(k, l)`, including the `-k` partners.
    pub fn modes(&self) -> Vec<(Vector3<f64>, u8)> {
        let mut out = Vec::with_capacity(4 * self.pairs.len());
        for p in &self.pairs {
            for l in [1u8, 2] {
                out.push((p.wavevector, l));
                out.push((-p.wavevector, l));
            }
        }
        out
    }

    /// Number of real coordinates: two per pair and polarization.
    pub fn quadrature_count(&self) -> usize {
        4 * self.pairs.len()
    }

    pub fn quadrature_labels(&self) -> Vec<QuadratureLabel> {
        (0..self.quadrature_count()).map(|i| self.label(i)).collect()
    }

    pub fn label(&self, index: usize) -> QuadratureLabel {
        QuadratureLabel {
            mode: index / 4,
            polarization: ((index / 2) % 2 + 1) as u8,
            quadrature: if index % 2 == 0 { Quadrature::Re } else { Quadrature::Im },
        }
    }

    pub fn index_of(&self, label: &QuadratureLabel) -> Option<usize> {
        if label.mode >= self.pairs.len() || !(1..=2).contains(&label.polarization) {
            return None;
        }
        let part = match label.quadrature {
            Quadrature::Re => 0,
            Quadrature::Im => 1,
        };
        Some(4 * label.mode + 2 * usize::from(label.polarization - 1) + part)
    }

    /// Oscillator frequency of a real coordinate.
    pub fn frequency(&self, index: usize) -> f64 {
        self.pairs[index / 4].frequency()
    }

    /// `q_l(k)` of the representative wavevector from the real quadratures.
    pub fn complex_amplitude(&self, q: &[f64], mode: usize, polarization: u8) -> num_complex::Complex64 {
        let base = 4 * mode + 2 * usize::from(polarization - 1);
        num_complex::Complex64::new(q[base], q[base + 1]) / std::f64::consts::SQRT_2
    }

    /// Inverse of [`Self::complex_amplitude`] over the whole basis.
    pub fn quadratures_from_amplitudes(&self, amplitudes: &[[num_complex::Complex64; 2]]) -> Vec<f64> {
        let mut q = Vec::with_capacity(self.quadrature_count());
        for pair in amplitudes {
            for a in pair {
                q.push(a.re * std::f64::consts::SQRT_2);
                q.push(a.im * std::f64::consts::SQRT_2);
            }
        }
        q
    }

    /// Stable digest of the wavevectors and polarizations, used to tie
    /// exported fields to the basis that produced them.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.pairs {
            for v in std::iter::once(&p.wavevector).chain(p.polarizations.iter()) {
                for c in v.iter() {
                    hasher.update(c.to_le_bytes());
                }
            }
        }
        hex::encode(hasher.finalize())
    }
}
