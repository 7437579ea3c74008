//! Sample statistics and distribution-distance tests.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// z-value of a two-sided 95% interval.
pub const Z_95: f64 = 1.959_963_984_540_054;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased (`n - 1`) variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Sample mean vector of equally sized rows.
pub fn mean_vector(rows: &[Vec<f64>]) -> DVector<f64> {
    let d = rows[0].len();
    let mut acc = DVector::zeros(d);
    for row in rows {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc / rows.len() as f64
}

/// Unbiased (`n - 1`) sample covariance of equally sized rows.
pub fn covariance_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows[0].len();
    let m = mean_vector(rows);
    let mut acc = DMatrix::zeros(d, d);
    for row in rows {
        for i in 0..d {
            let di = row[i] - m[i];
            for j in 0..d {
                acc[(i, j)] += di * (row[j] - m[j]);
            }
        }
    }
    acc / (rows.len() as f64 - 1.0)
}

/// Standardized third moment.
pub fn skewness(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Standardized fourth moment minus three.
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

pub fn normal_cdf(x: f64, mean: f64, std_dev: f64) -> f64 {
    Normal::new(mean, std_dev).expect("positive std dev").cdf(x)
}

pub fn chi_squared_quantile(p: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64).expect("positive dof").inverse_cdf(p)
}

/// One-sample Kolmogorov-Smirnov distance `sup |F_n - F|`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Survival function of the Kolmogorov distribution, `P[K > lambda]`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let sum: f64 = (0..6).map(|j| y.powi((2 * j + 1) * (2 * j + 1))).sum();
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * sum;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let x = (-2.0 * lambda * lambda).exp();
        let sum = x - x.powi(4) + x.powi(9) - x.powi(16);
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsTest {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut statistic: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        statistic = statistic.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let p_value = kolmogorov_survival((en + 0.12 + 0.11 / en) * statistic);
    KsTest { statistic, p_value }
}

/// Proportion with a 95% interval: rule-of-three at the boundaries, Wilson otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinomialInterval {
    pub successes: usize,
    pub trials: usize,
    pub rate: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn binomial_interval(successes: usize, trials: usize) -> BinomialInterval {
    let n = trials as f64;
    let rate = successes as f64 / n;
    let (lower, upper) = if successes == 0 {
        (0.0, (3.0 / n).min(1.0))
    } else if successes == trials {
        ((1.0 - 3.0 / n).max(0.0), 1.0)
    } else {
        let z2 = Z_95 * Z_95;
        let center = (rate + z2 / (2.0 * n)) / (1.0 + z2 / n);
        let half = Z_95 / (1.0 + z2 / n) * (rate * (1.0 - rate) / n + z2 / (4.0 * n * n)).sqrt();
        ((center - half).max(0.0), (center + half).min(1.0))
    };
    BinomialInterval {
        successes,
        trials,
        rate,
        lower,
        upper,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn moments_of_small_sample() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert!(skewness(&xs).abs() < 1e-15);
        let cov = covariance_matrix(&[vec![1.0, 2.0], vec![3.0, 6.0]]);
        assert!((cov[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((cov[(0, 1)] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn rule_of_three_and_wilson() {
        let zero = binomial_interval(0, 200);
        assert_eq!(zero.rate, 0.0);
        assert_eq!(zero.upper, 0.015);
        let half = binomial_interval(50, 100);
        assert!(half.lower < 0.5 && half.upper > 0.5);
        assert!((half.upper - half.lower - 0.19).abs() < 0.01);
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // Continuity across the branch switch.
        let a = kolmogorov_survival(1.179_999);
        let b = kolmogorov_survival(1.180_001);
        assert!((a - b).abs() < 1e-5);
        // Known value: P[K > 1.36] ≈ 0.049.
        assert!((kolmogorov_survival(1.36) - 0.0494).abs() < 1e-3);
    }

    #[test]
    fn ks_accepts_same_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
        let shifted: Vec<f64> = b.iter().map(|x| x + 0.5).collect();
        assert!(ks_two_sample(&a, &b).p_value > 0.01);
        assert!(ks_two_sample(&a, &shifted).p_value < 1e-6);
        let d = ks_statistic(&a, |x| normal_cdf(x, 0.0, 1.0));
        assert!(d < 1.36 / (500f64).sqrt());
    }

    #[test]
    fn chi_squared_two_dof_closed_form() {
        let p: f64 = 0.6827;
        assert!((chi_squared_quantile(p, 2) + 2.0 * (1.0 - p).ln()).abs() < 1e-8);
    }
}
