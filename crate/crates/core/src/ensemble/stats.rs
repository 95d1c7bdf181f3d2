//! Small statistical helpers for ensemble checks.

/// `sqrt(p (1 - p) / n)`.
pub fn binomial_standard_error(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Scott's histogram width `3.49 sigma n^(-1/(d+2))`.
pub fn scott_width(sigma: f64, n: usize, dim: usize) -> f64 {
    3.49 * sigma * (n as f64).powf(-1.0 / (dim as f64 + 2.0))
}

/// Two-sample Kolmogorov-Smirnov statistic and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    (d, kolmogorov_survival((en + 0.12 + 0.11 / en) * d))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Split-chain potential scale reduction over equally long chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[h..2 * h]]
        })
        .collect();
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    let b = n / (means.len() as f64 - 1.0) * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, m)| h.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / means.len() as f64;
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn kolmogorov_tail_matches_tabulated_values() {
        // critical values of the limiting distribution
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn ks_separates_shifted_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Normal::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..2000).map(|_| n.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..2000).map(|_| n.sample(&mut rng)).collect();
        let c: Vec<f64> = b.iter().map(|x| x + 0.3).collect();
        assert!(ks_two_sample(&a, &b).1 > 0.01);
        assert!(ks_two_sample(&a, &c).1 < 1e-6);
        assert_eq!(ks_two_sample(&a, &a).0, 0.0);
    }

    #[test]
    fn rhat_flags_disagreeing_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = Normal::new(0.0, 1.0).unwrap();
        let good: Vec<Vec<f64>> = (0..4).map(|_| (0..1000).map(|_| n.sample(&mut rng)).collect()).collect();
        assert!(split_rhat(&good) < 1.01);
        let mut bad = good.clone();
        bad[0].iter_mut().for_each(|x| *x += 2.0);
        assert!(split_rhat(&bad) > 1.1);
    }

    #[test]
    fn scott_width_and_binomial_error() {
        assert!((scott_width(1.0, 1000, 1) - 3.49 / 10.0).abs() < 1e-12);
        assert!((binomial_standard_error(0.5, 10_000) - 0.005).abs() < 1e-15);
    }
}
