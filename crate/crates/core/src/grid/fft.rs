use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

/// Multi-dimensional FFT over a row-major array (last axis fastest).
pub struct FftNd {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftNd").field("shape", &self.shape).finish()
    }
}

impl FftNd {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            shape: shape.to_vec(),
            forward: shape.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inverse: shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        let total = self.len();
        let mut stride = total;
        for (d, plan) in plans.iter().enumerate() {
            let n = self.shape[d];
            stride /= n;
            if stride == 1 {
                // contiguous lines
                plan.process(data);
                continue;
            }
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            let block = n * stride;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (i, v) in line.iter_mut().enumerate() {
                        *v = data[base + i * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (i, v) in line.iter().enumerate() {
                        data[base + i * stride] = *v;
                    }
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// Normalized inverse, so `inverse(forward(x)) == x`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
        let s = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Angular wavenumbers of an `n`-point periodic axis of length `length`, in
/// FFT order. The Nyquist entry is kept positive.
pub fn wavenumbers(n: usize, length: f64) -> Vec<f64> {
    let dk = 2.0 * PI / length;
    (0..n)
        .map(|i| {
            let j = if i <= n / 2 { i as isize } else { i as isize - n as isize };
            j as f64 * dk
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_plane_wave_in_2d() {
        let shape = [8, 6];
        let fft = FftNd::new(&shape);
        let mut data: Vec<Complex64> = (0..48).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.7).cos())).collect();
        let orig = data.clone();
        fft.forward(&mut data);
        fft.inverse(&mut data);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-13);
        }
        // exp(2 pi i (2 x / 8 + 1 y / 6)) lands in bin (2, 1)
        let mut wave: Vec<Complex64> = (0..48)
            .map(|i| {
                let (x, y) = ((i / 6) as f64, (i % 6) as f64);
                Complex64::new(0.0, 2.0 * PI * (2.0 * x / 8.0 + y / 6.0)).exp()
            })
            .collect();
        fft.forward(&mut wave);
        for (i, v) in wave.iter().enumerate() {
            let want = if i == 2 * 6 + 1 { 48.0 } else { 0.0 };
            assert!((v.norm() - want).abs() < 1e-10, "bin {i}");
        }
    }

    #[test]
    fn wavenumber_layout() {
        let k = wavenumbers(4, 2.0 * PI);
        assert_eq!(k, vec![0.0, 1.0, 2.0, -1.0]);
    }
}
