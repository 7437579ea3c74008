//! Per-agent likelihood families over a finite hypothesis set.
//!
//! Everything is exposed through log-densities; densities are only
//! exponentiated for integration.

use std::fmt;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::integrate_piecewise;

/// Absolute tolerance used by every quadrature in this module.
pub const QUADRATURE_TOLERANCE: f64 = 1e-10;
/// Half-width of the Laplace integration window, in scales.
pub const LAPLACE_WINDOW: f64 = 40.0;
/// Half-width of the Gaussian integration window, in standard deviations.
pub const GAUSSIAN_WINDOW: f64 = 15.0;

const PMF_TOLERANCE: f64 = 1e-12;
const NORMALIZATION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("at least two hypotheses are required, got {0}")]
    TooFewHypotheses(usize),
    #[error("scale parameter must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("location parameter must be finite, got {0}")]
    InvalidLocation(f64),
    #[error("pmf for hypothesis {hypothesis} is invalid: {reason}")]
    InvalidPmf { hypothesis: Hypothesis, reason: String },
    #[error("density for hypothesis {hypothesis} integrates to {integral}")]
    NotNormalized { hypothesis: Hypothesis, integral: f64 },
    #[error("hypothesis {hypothesis} is outside 1..={count}")]
    UnknownHypothesis { hypothesis: Hypothesis, count: usize },
    #[error("observation {value} has zero density under hypothesis {hypothesis}")]
    ZeroDensity { hypothesis: Hypothesis, value: f64 },
    #[error("KL divergence of hypothesis {theta} from {theta0} is infinite")]
    InfiniteDivergence { theta0: Hypothesis, theta: Hypothesis },
}

/// Index of a hypothesis. Stored zero-based; displayed one-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Hypothesis(usize);

impl Hypothesis {
    pub const fn from_index(index: usize) -> Self {
        Self(index)
    }

    /// One-based label, as used in configs and output files.
    pub fn from_label(label: usize) -> Option<Self> {
        label.checked_sub(1).map(Self)
    }

    pub const fn index(self) -> usize {
        self.0
    }

    pub const fn label(self) -> usize {
        self.0 + 1
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// One scalar observation `xi_{k,i}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub value: f64,
    pub agent: usize,
    pub time: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Laplace,
    Gaussian,
    Discrete,
}

/// A single sampling distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Density {
    Laplace { location: f64, scale: f64 },
    Gaussian { mean: f64, std_dev: f64 },
    /// Finite alphabet `0..pmf.len()`; observations carry the symbol as a float.
    Discrete { pmf: Vec<f64> },
}

impl Density {
    pub fn family(&self) -> Family {
        match self {
            Density::Laplace { .. } => Family::Laplace,
            Density::Gaussian { .. } => Family::Gaussian,
            Density::Discrete { .. } => Family::Discrete,
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Density::Laplace { location, scale } => -(2.0 * scale).ln() - (x - location).abs() / scale,
            Density::Gaussian { mean, std_dev } => {
                let z = (x - mean) / std_dev;
                -0.5 * z * z - std_dev.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            Density::Discrete { ref pmf } => match symbol(x, pmf.len()) {
                Some(s) if pmf[s] > 0.0 => pmf[s].ln(),
                _ => f64::NEG_INFINITY,
            },
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Density::Laplace { location, scale } => {
                let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
                location - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            Density::Gaussian { mean, std_dev } => Normal::new(mean, std_dev)
                .expect("validated at construction")
                .sample(rng),
            Density::Discrete { ref pmf } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (s, &p) in pmf.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return s as f64;
                    }
                }
                // Rounding left `acc` just below one: last symbol with mass.
                pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0) as f64
            }
        }
    }

    fn location_and_width(&self) -> (f64, f64) {
        match *self {
            Density::Laplace { location, scale } => (location, LAPLACE_WINDOW * scale),
            Density::Gaussian { mean, std_dev } => (mean, GAUSSIAN_WINDOW * std_dev),
            Density::Discrete { .. } => (0.0, 0.0),
        }
    }
}

fn symbol(x: f64, len: usize) -> Option<usize> {
    if x >= 0.0 && x.fract() == 0.0 && (x as usize) < len {
        Some(x as usize)
    } else {
        None
    }
}

/// Family of `H` sampling distributions `L(.|theta)` held by one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodModel {
    family: Family,
    densities: Vec<Density>,
}

impl LikelihoodModel {
    /// `L(x|theta) = exp(-|x - means[theta]| / scale) / (2 scale)`.
    pub fn laplace_family(means: &[f64], scale: f64) -> Result<Self, LikelihoodError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(LikelihoodError::InvalidScale(scale));
        }
        Self::from_densities(
            means
                .iter()
                .map(|&location| Density::Laplace { location, scale })
                .collect(),
        )
    }

    pub fn gaussian_family(means: &[f64], std_dev: f64) -> Result<Self, LikelihoodError> {
        if !(std_dev > 0.0 && std_dev.is_finite()) {
            return Err(LikelihoodError::InvalidScale(std_dev));
        }
        Self::from_densities(
            means
                .iter()
                .map(|&mean| Density::Gaussian { mean, std_dev })
                .collect(),
        )
    }

    /// One pmf per hypothesis over a shared finite alphabet. Zero entries are allowed.
    pub fn discrete_family(pmfs: Vec<Vec<f64>>) -> Result<Self, LikelihoodError> {
        Self::from_densities(pmfs.into_iter().map(|pmf| Density::Discrete { pmf }).collect())
    }

    /// Validates parameters and checks that each density is normalized
    /// (numerically for continuous families, exactly for discrete ones).
    pub fn from_densities(densities: Vec<Density>) -> Result<Self, LikelihoodError> {
        if densities.len() < 2 {
            return Err(LikelihoodError::TooFewHypotheses(densities.len()));
        }
        let family = densities[0].family();
        let alphabet = match &densities[0] {
            Density::Discrete { pmf } => pmf.len(),
            _ => 0,
        };
        for (index, density) in densities.iter().enumerate() {
            let hypothesis = Hypothesis(index);
            if density.family() != family {
                return Err(LikelihoodError::InvalidPmf {
                    hypothesis,
                    reason: "all hypotheses of one agent must share a family".into(),
                });
            }
            match density {
                Density::Laplace { location, scale } | Density::Gaussian { mean: location, std_dev: scale } => {
                    if !location.is_finite() {
                        return Err(LikelihoodError::InvalidLocation(*location));
                    }
                    if !(*scale > 0.0 && scale.is_finite()) {
                        return Err(LikelihoodError::InvalidScale(*scale));
                    }
                }
                Density::Discrete { pmf } => {
                    if pmf.len() != alphabet || pmf.is_empty() {
                        return Err(LikelihoodError::InvalidPmf {
                            hypothesis,
                            reason: format!("expected {alphabet} symbols, got {}", pmf.len()),
                        });
                    }
                    if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
                        return Err(LikelihoodError::InvalidPmf {
                            hypothesis,
                            reason: "probabilities must be finite and non-negative".into(),
                        });
                    }
                    let total: f64 = pmf.iter().sum();
                    if (total - 1.0).abs() > PMF_TOLERANCE {
                        return Err(LikelihoodError::InvalidPmf {
                            hypothesis,
                            reason: format!("probabilities sum to {total}"),
                        });
                    }
                }
            }
        }
        let model = Self { family, densities };
        if family != Family::Discrete {
            for index in 0..model.n_hypotheses() {
                let hypothesis = Hypothesis(index);
                let integral = model.expect(hypothesis, |_| 1.0);
                if (integral - 1.0).abs() > NORMALIZATION_TOLERANCE {
                    return Err(LikelihoodError::NotNormalized { hypothesis, integral });
                }
            }
        }
        Ok(model)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n_hypotheses(&self) -> usize {
        self.densities.len()
    }

    pub fn density_of(&self, theta: Hypothesis) -> &Density {
        &self.densities[theta.index()]
    }

    pub fn densities(&self) -> &[Density] {
        &self.densities
    }

    fn check(&self, theta: Hypothesis) -> Result<(), LikelihoodError> {
        if theta.index() < self.densities.len() {
            Ok(())
        } else {
            Err(LikelihoodError::UnknownHypothesis {
                hypothesis: theta,
                count: self.densities.len(),
            })
        }
    }

    #[inline]
    pub fn log_density(&self, theta: Hypothesis, x: f64) -> f64 {
        self.densities[theta.index()].log_density(x)
    }

    pub fn density(&self, theta: Hypothesis, x: f64) -> f64 {
        self.log_density(theta, x).exp()
    }

    /// `log L(x|theta0) - log L(x|theta)`, evaluated in the log domain.
    pub fn log_likelihood_ratio(
        &self,
        obs: &Observation,
        theta0: Hypothesis,
        theta: Hypothesis,
    ) -> Result<f64, LikelihoodError> {
        self.check(theta0)?;
        self.check(theta)?;
        let num = self.log_density(theta0, obs.value);
        if num == f64::NEG_INFINITY {
            return Err(LikelihoodError::ZeroDensity {
                hypothesis: theta0,
                value: obs.value,
            });
        }
        if theta == theta0 {
            return Ok(0.0);
        }
        let den = self.log_density(theta, obs.value);
        if den == f64::NEG_INFINITY {
            return Err(LikelihoodError::ZeroDensity {
                hypothesis: theta,
                value: obs.value,
            });
        }
        Ok(num - den)
    }

    /// Draws `xi ~ L(.|theta_true)`.
    pub fn sample<R: Rng + ?Sized>(&self, theta_true: Hypothesis, agent: usize, time: u64, rng: &mut R) -> Observation {
        Observation {
            value: self.densities[theta_true.index()].sample(rng),
            agent,
            time,
        }
    }

    /// `E[g(xi)]` for `xi ~ L(.|theta0)`; quadrature for continuous
    /// families, exact sum for discrete ones.
    pub fn expect<G: Fn(f64) -> f64>(&self, theta0: Hypothesis, g: G) -> f64 {
        let reference = &self.densities[theta0.index()];
        if let Density::Discrete { pmf } = reference {
            return pmf
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(s, &p)| p * g(s as f64))
                .sum();
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut breakpoints = Vec::with_capacity(self.densities.len());
        for density in &self.densities {
            let (center, width) = density.location_and_width();
            lo = lo.min(center - width);
            hi = hi.max(center + width);
            breakpoints.push(center);
        }
        let integrand = |x: f64| {
            let w = reference.log_density(x).exp();
            if w == 0.0 {
                0.0
            } else {
                w * g(x)
            }
        };
        integrate_piecewise(&integrand, lo, hi, &breakpoints, QUADRATURE_TOLERANCE)
    }

    fn llr_at(&self, x: f64, theta0: Hypothesis, theta: Hypothesis) -> f64 {
        self.log_density(theta0, x) - self.log_density(theta, x)
    }

    fn ensure_absolutely_continuous(&self, theta0: Hypothesis, theta: Hypothesis) -> Result<(), LikelihoodError> {
        if let (Density::Discrete { pmf: p0 }, Density::Discrete { pmf: p1 }) =
            (self.density_of(theta0), self.density_of(theta))
        {
            if p0.iter().zip(p1).any(|(&a, &b)| a > 0.0 && b == 0.0) {
                return Err(LikelihoodError::InfiniteDivergence { theta0, theta });
            }
        }
        Ok(())
    }

    /// `d(theta) = E[x(theta)]` under `theta0`, in closed form.
    pub fn kl_divergence(&self, theta0: Hypothesis, theta: Hypothesis) -> Result<f64, LikelihoodError> {
        self.check(theta0)?;
        self.check(theta)?;
        self.ensure_absolutely_continuous(theta0, theta)?;
        let kl = match (self.density_of(theta0), self.density_of(theta)) {
            (
                &Density::Laplace { location: m0, scale: b0 },
                &Density::Laplace { location: m1, scale: b1 },
            ) => {
                let gap = (m0 - m1).abs();
                (b1 / b0).ln() + gap / b1 + (b0 / b1) * (-gap / b0).exp() - 1.0
            }
            (
                &Density::Gaussian { mean: m0, std_dev: s0 },
                &Density::Gaussian { mean: m1, std_dev: s1 },
            ) => {
                let gap = m0 - m1;
                (s1 / s0).ln() + (s0 * s0 + gap * gap) / (2.0 * s1 * s1) - 0.5
            }
            (Density::Discrete { pmf: p0 }, Density::Discrete { pmf: p1 }) => p0
                .iter()
                .zip(p1)
                .filter(|(&a, _)| a > 0.0)
                .map(|(&a, &b)| a * (a / b).ln())
                .sum(),
            _ => unreachable!("families are homogeneous"),
        };
        Ok(kl.max(0.0))
    }

    /// Same quantity as [`Self::kl_divergence`] computed by quadrature.
    pub fn kl_divergence_numeric(&self, theta0: Hypothesis, theta: Hypothesis) -> Result<f64, LikelihoodError> {
        self.check(theta0)?;
        self.check(theta)?;
        self.ensure_absolutely_continuous(theta0, theta)?;
        Ok(self.expect(theta0, |x| self.llr_at(x, theta0, theta)))
    }

    /// `E|x(theta)|` under `theta0`.
    pub fn llr_abs_mean(&self, theta0: Hypothesis, theta: Hypothesis) -> Result<f64, LikelihoodError> {
        self.check(theta0)?;
        self.check(theta)?;
        self.ensure_absolutely_continuous(theta0, theta)?;
        Ok(self.expect(theta0, |x| self.llr_at(x, theta0, theta).abs()))
    }

    /// `rho(theta, theta') = Cov[x(theta), x(theta')]` under `theta0`.
    pub fn llr_covariance(
        &self,
        theta0: Hypothesis,
        theta: Hypothesis,
        theta_prime: Hypothesis,
    ) -> Result<f64, LikelihoodError> {
        self.check(theta0)?;
        self.check(theta)?;
        self.check(theta_prime)?;
        if theta == theta0 || theta_prime == theta0 {
            return Ok(0.0);
        }
        // Order the pair so the computation is symmetric bit-for-bit.
        let (a, b) = if theta <= theta_prime {
            (theta, theta_prime)
        } else {
            (theta_prime, theta)
        };
        self.ensure_absolutely_continuous(theta0, a)?;
        self.ensure_absolutely_continuous(theta0, b)?;
        let da = self.kl_divergence(theta0, a)?;
        let db = self.kl_divergence(theta0, b)?;
        Ok(self.expect(theta0, |x| {
            (self.llr_at(x, theta0, a) - da) * (self.llr_at(x, theta0, b) - db)
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_simpson;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn h(label: usize) -> Hypothesis {
        Hypothesis::from_label(label).unwrap()
    }

    fn eq26() -> LikelihoodModel {
        LikelihoodModel::laplace_family(&[0.5, 1.0, 1.5], 1.0).unwrap()
    }

    fn obs(value: f64) -> Observation {
        Observation { value, agent: 0, time: 0 }
    }

    #[test]
    fn laplace_density_values() {
        let m = eq26();
        assert!((m.density(h(1), 0.5) - 0.5).abs() < 1e-15);
        let m2 = LikelihoodModel::laplace_family(&[0.0, 3.0], 2.5).unwrap();
        assert!((m2.density(h(2), 3.0) - 1.0 / 5.0).abs() < 1e-15);
        assert!(matches!(
            LikelihoodModel::laplace_family(&[0.0, 1.0], 0.0),
            Err(LikelihoodError::InvalidScale(_))
        ));
        assert!(matches!(
            LikelihoodModel::laplace_family(&[0.0], 1.0),
            Err(LikelihoodError::TooFewHypotheses(1))
        ));
    }

    #[test]
    fn laplace_integrates_to_one_on_window() {
        let m = eq26();
        for label in 1..=3 {
            let f = |x: f64| m.density(h(label), x);
            let mean = 0.5 * label as f64;
            let v = crate::quadrature::integrate_piecewise(&f, -20.0, 20.0, &[mean], 1e-12);
            assert!((v - 1.0).abs() < 1e-8, "label {label}: {v}");
        }
    }

    #[test]
    fn llr_examples() {
        let m = eq26();
        assert_eq!(m.log_likelihood_ratio(&obs(0.37), h(2), h(2)).unwrap(), 0.0);
        let v = m.log_likelihood_ratio(&obs(0.5), h(1), h(3)).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        let v = m.log_likelihood_ratio(&obs(1.0), h(1), h(2)).unwrap();
        assert!((v + 0.5).abs() < 1e-15);
    }

    #[test]
    fn llr_zero_density_names_hypothesis() {
        let m = LikelihoodModel::discrete_family(vec![vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let err = m.log_likelihood_ratio(&obs(1.0), h(1), h(2)).unwrap_err();
        assert_eq!(
            err,
            LikelihoodError::ZeroDensity {
                hypothesis: h(2),
                value: 1.0
            }
        );
    }

    #[test]
    fn kl_examples() {
        let table_agent_1 = LikelihoodModel::laplace_family(&[0.5, 0.5, 1.5], 1.0).unwrap();
        assert_eq!(table_agent_1.kl_divergence(h(1), h(2)).unwrap(), 0.0);
        let m = eq26();
        let d13 = m.kl_divergence(h(1), h(3)).unwrap();
        assert!((d13 - (-1.0f64).exp()).abs() < 1e-15);
        assert!((d13 - 0.367879).abs() < 1e-6);
        let d12 = m.kl_divergence(h(1), h(2)).unwrap();
        assert!((d12 - 0.106531).abs() < 1e-6);
    }

    /// Independent oracle: direct Simpson integration of f0 * log(f0/f1).
    fn kl_oracle(m0: f64, m1: f64) -> f64 {
        let f = |x: f64| {
            let a = 0.5 * (-(x - m0).abs()).exp();
            a * ((x - m1).abs() - (x - m0).abs())
        };
        let lo = m0.min(m1) - 45.0;
        let hi = m0.max(m1) + 45.0;
        let mut pts = vec![lo, m0.min(m1), m0.max(m1), hi];
        pts.dedup();
        pts.windows(2).map(|w| adaptive_simpson(&f, w[0], w[1], 1e-13)).sum()
    }

    #[test]
    fn closed_form_kl_matches_quadrature() {
        for gap in [0.0, 0.5, 1.0] {
            let m = LikelihoodModel::laplace_family(&[0.5, 0.5 + gap], 1.0).unwrap();
            let closed = m.kl_divergence(h(1), h(2)).unwrap();
            let numeric = m.kl_divergence_numeric(h(1), h(2)).unwrap();
            let oracle = kl_oracle(0.5, 0.5 + gap);
            assert!((closed - gap - (-gap).exp() + 1.0).abs() < 1e-15);
            assert!((closed - numeric).abs() < 1e-8, "gap {gap}");
            assert!((closed - oracle).abs() < 1e-8, "gap {gap}");
        }
    }

    #[test]
    fn kl_other_families() {
        let g = LikelihoodModel::gaussian_family(&[0.0, 1.0], 2.0).unwrap();
        let closed = g.kl_divergence(h(1), h(2)).unwrap();
        assert!((closed - 1.0 / 8.0).abs() < 1e-15);
        assert!((g.kl_divergence_numeric(h(1), h(2)).unwrap() - closed).abs() < 1e-8);

        let mixed = LikelihoodModel::from_densities(vec![
            Density::Laplace { location: 0.0, scale: 1.0 },
            Density::Laplace { location: 0.7, scale: 2.0 },
        ])
        .unwrap();
        let closed = mixed.kl_divergence(h(1), h(2)).unwrap();
        assert!((mixed.kl_divergence_numeric(h(1), h(2)).unwrap() - closed).abs() < 1e-8);

        let d = LikelihoodModel::discrete_family(vec![vec![0.5, 0.5], vec![0.25, 0.75]]).unwrap();
        let exact = 0.5 * (2.0f64).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((d.kl_divergence(h(1), h(2)).unwrap() - exact).abs() < 1e-15);
        let infinite = LikelihoodModel::discrete_family(vec![vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            infinite.kl_divergence(h(1), h(2)),
            Err(LikelihoodError::InfiniteDivergence { .. })
        ));
        // The reverse direction is finite.
        assert!(infinite.kl_divergence(h(2), h(1)).unwrap() > 0.0);
    }

    #[test]
    fn sampling_moments() {
        let m = eq26();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = m.sample(h(2), 0, 0, &mut rng).value;
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 1.0).abs() < 0.005, "mean {mean}");
        assert!((var - 2.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let m = eq26();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| m.sample(h(1), 0, 0, &mut rng).value).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3)[0], draw(4)[0]);
    }

    #[test]
    fn covariance_properties() {
        let m = eq26();
        assert_eq!(m.llr_covariance(h(1), h(1), h(3)).unwrap(), 0.0);
        let a = m.llr_covariance(h(1), h(2), h(3)).unwrap();
        let b = m.llr_covariance(h(1), h(3), h(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn covariance_matches_monte_carlo() {
        // Monte Carlo oracle for Var[|xi - 1.5| - |xi - 0.5|] under f_1.
        let m = eq26();
        let rho = m.llr_covariance(h(1), h(3), h(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000_000usize;
        let (mut s, mut s2, mut s4) = (0.0, 0.0, 0.0);
        let d = (-1.0f64).exp();
        for _ in 0..n {
            let x = m.sample(h(1), 0, 0, &mut rng).value;
            let y = (x - 1.5).abs() - (x - 0.5).abs() - d;
            s += y;
            s2 += y * y;
            s4 += y * y * y * y;
        }
        let nf = n as f64;
        let mean = s / nf;
        let var = s2 / nf - mean * mean;
        let se = ((s4 / nf - (s2 / nf).powi(2)) / nf).sqrt();
        assert!((var - rho).abs() <= 3.0 * se, "rho {rho} mc {var} se {se}");
    }

    #[test]
    fn llr_sample_mean_converges_to_kl() {
        let m = eq26();
        let kl = m.kl_divergence(h(1), h(3)).unwrap();
        let var = m.llr_covariance(h(1), h(3), h(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let mut s = 0.0;
        for _ in 0..n {
            let o = m.sample(h(1), 0, 0, &mut rng);
            s += m.log_likelihood_ratio(&o, h(1), h(3)).unwrap();
        }
        let mean = s / n as f64;
        assert!((mean - kl).abs() <= 4.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn discrete_family_validation() {
        assert!(matches!(
            LikelihoodModel::discrete_family(vec![vec![0.5, 0.6], vec![1.0, 0.0]]),
            Err(LikelihoodError::InvalidPmf { .. })
        ));
        assert!(matches!(
            LikelihoodModel::discrete_family(vec![vec![0.5, 0.5], vec![1.0]]),
            Err(LikelihoodError::InvalidPmf { .. })
        ));
    }
}
