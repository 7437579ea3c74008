//! Weighted random series `s_i(delta) = delta sum_{m<=i} (1-delta)^m alpha_m z_m`
//! and empirical checks of their stability, weak law and Gaussian limit.
//!
//! The steady-state log-belief ratio of one agent is a sum of such series
//! with `alpha_m = [A^{m+1}]_{lk}`, which the matrix-power rule reproduces.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::graph::CombinationMatrix;
use crate::learning::StepSize;
use crate::likelihood::{Hypothesis, LikelihoodError, LikelihoodModel};
use crate::rng::{Domain, SeedStreams};
use crate::stats::{self, BinomialInterval};

/// Truncation target for the deterministic tail of a series.
pub const TAIL_TOLERANCE: f64 = 1e-12;
/// Cauchy residual below which a run counts as converged.
pub const CAUCHY_TOLERANCE: f64 = 1e-10;
/// Deviations from the weak-law limit that are tracked.
pub const EPSILONS: [f64; 2] = [0.1, 0.05];
/// Relative weight at which the analytic sums stop.
const ANALYTIC_CUTOFF: f64 = 1e-18;
/// Resolution of `|[A^m]_{lk} - pi_l|` given the Perron tolerance.
pub const MIXING_FLOOR: f64 = 10.0 * crate::graph::PERRON_TOLERANCE;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("alpha sequence leaves (0, 1]: {0}")]
    InvalidAlpha(String),
    #[error("invalid z distribution: {0}")]
    InvalidDistribution(String),
    #[error("z has infinite variance")]
    InfiniteVariance,
    #[error("step-size grid must be strictly decreasing")]
    GridNotDecreasing,
    #[error("invalid step size {0}")]
    InvalidStepSize(f64),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlphaRule {
    Constant(f64),
    /// `alpha_m = alpha + kappa beta^m`.
    Geometric { alpha: f64, kappa: f64, beta: f64 },
    /// `alpha_m = [A^{m+1}]_{from,to}`, converging to `pi_from`.
    MatrixPower {
        weights: DMatrix<f64>,
        limit: f64,
        from: usize,
        to: usize,
    },
}

impl AlphaRule {
    pub fn matrix_power(matrix: &CombinationMatrix, from: usize, to: usize) -> Self {
        AlphaRule::MatrixPower {
            weights: matrix.weights().clone(),
            limit: matrix.perron()[from],
            from,
            to,
        }
    }

    /// `alpha = lim alpha_m`.
    pub fn limit(&self) -> f64 {
        match self {
            AlphaRule::Constant(a) => *a,
            AlphaRule::Geometric { alpha, .. } => *alpha,
            AlphaRule::MatrixPower { limit, .. } => *limit,
        }
    }

    fn validate(&self) -> Result<(), SeriesError> {
        match *self {
            AlphaRule::Constant(a) if !(a > 0.0 && a <= 1.0) => {
                Err(SeriesError::InvalidAlpha(format!("constant {a}")))
            }
            AlphaRule::Geometric { alpha, kappa, beta } => {
                if !(kappa > 0.0) || !(beta > 0.0 && beta < 1.0) {
                    return Err(SeriesError::InvalidAlpha(format!("kappa {kappa}, beta {beta}")));
                }
                if !(alpha > 0.0 && alpha + kappa <= 1.0) {
                    return Err(SeriesError::InvalidAlpha(format!("alpha {alpha} + kappa {kappa}")));
                }
                Ok(())
            }
            AlphaRule::MatrixPower { ref weights, from, to, .. } => {
                let n = weights.nrows();
                if from >= n || to >= n {
                    return Err(SeriesError::InvalidAlpha(format!("agent pair ({from}, {to})")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn sequence(&self) -> AlphaSequence<'_> {
        let column = match self {
            AlphaRule::MatrixPower { weights, to, .. } => Some(weights.column(*to).into_owned()),
            _ => None,
        };
        AlphaSequence {
            rule: self,
            m: 0,
            column,
        }
    }
}

/// Infinite iterator over `alpha_0, alpha_1, ...`.
pub struct AlphaSequence<'a> {
    rule: &'a AlphaRule,
    m: i32,
    column: Option<DVector<f64>>,
}

impl Iterator for AlphaSequence<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let value = match self.rule {
            AlphaRule::Constant(a) => *a,
            AlphaRule::Geometric { alpha, kappa, beta } => alpha + kappa * beta.powi(self.m),
            AlphaRule::MatrixPower { weights, from, .. } => {
                let column = self.column.as_mut().expect("matrix-power column");
                let v = column[*from];
                *column = weights * &*column;
                v
            }
        };
        self.m += 1;
        Some(value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ZDistribution {
    Gaussian {
        mean: f64,
        std_dev: f64,
    },
    /// Log-likelihood ratio `log L(x|theta0)/L(x|theta)` of `x ~ L(.|theta0)`.
    Llr {
        model: LikelihoodModel,
        theta0: Hypothesis,
        theta: Hypothesis,
        mean: f64,
        abs_mean: f64,
        variance: f64,
    },
    /// Fair `+-1` coin.
    Rademacher,
    Deterministic(f64),
}

impl ZDistribution {
    pub fn gaussian(mean: f64, std_dev: f64) -> Result<Self, SeriesError> {
        if !(std_dev > 0.0) || !mean.is_finite() || !std_dev.is_finite() {
            return Err(SeriesError::InvalidDistribution(format!("gaussian({mean}, {std_dev})")));
        }
        Ok(ZDistribution::Gaussian { mean, std_dev })
    }

    pub fn llr(model: LikelihoodModel, theta0: Hypothesis, theta: Hypothesis) -> Result<Self, SeriesError> {
        let mean = model.kl_divergence(theta0, theta)?;
        let abs_mean = model.llr_abs_mean(theta0, theta)?;
        let variance = model.llr_covariance(theta0, theta, theta)?;
        Ok(ZDistribution::Llr {
            model,
            theta0,
            theta,
            mean,
            abs_mean,
            variance,
        })
    }

    pub fn mean(&self) -> f64 {
        match self {
            ZDistribution::Gaussian { mean, .. } => *mean,
            ZDistribution::Llr { mean, .. } => *mean,
            ZDistribution::Rademacher => 0.0,
            ZDistribution::Deterministic(c) => *c,
        }
    }

    /// `E|z|`.
    pub fn abs_mean(&self) -> f64 {
        match self {
            ZDistribution::Gaussian { mean, std_dev } => {
                let ratio = mean / std_dev;
                std_dev * (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * ratio * ratio).exp()
                    + mean * (1.0 - 2.0 * stats::normal_cdf(-ratio, 0.0, 1.0))
            }
            ZDistribution::Llr { abs_mean, .. } => *abs_mean,
            ZDistribution::Rademacher => 1.0,
            ZDistribution::Deterministic(c) => c.abs(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            ZDistribution::Gaussian { std_dev, .. } => std_dev * std_dev,
            ZDistribution::Llr { variance, .. } => *variance,
            ZDistribution::Rademacher => 1.0,
            ZDistribution::Deterministic(_) => 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ZDistribution::Gaussian { mean, std_dev } => Normal::new(*mean, *std_dev).expect("validated").sample(rng),
            ZDistribution::Llr { model, theta0, theta, .. } => {
                let x = model.density_of(*theta0).sample(rng);
                model.log_density(*theta0, x) - model.log_density(*theta, x)
            }
            ZDistribution::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            ZDistribution::Deterministic(c) => *c,
        }
    }
}

/// Smallest `i` with `(1-delta)^i E|z| / delta < TAIL_TOLERANCE`.
pub fn default_horizon(delta: f64, abs_mean: f64) -> usize {
    if abs_mean == 0.0 {
        return 1;
    }
    let i = ((TAIL_TOLERANCE * delta / abs_mean).ln() / (1.0 - delta).ln()).ceil();
    (i.max(1.0)) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSpec {
    pub delta: StepSize,
    pub alpha: AlphaRule,
    pub z: ZDistribution,
    /// Last index `i` of the partial sum.
    pub horizon: usize,
}

impl SeriesSpec {
    /// Spec with the default truncation horizon.
    pub fn new(delta: StepSize, alpha: AlphaRule, z: ZDistribution) -> Result<Self, SeriesError> {
        alpha.validate()?;
        let horizon = default_horizon(delta.value(), z.abs_mean());
        Ok(Self { delta, alpha, z, horizon })
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    fn at_delta(&self, delta: f64) -> Result<Self, SeriesError> {
        let delta = StepSize::new(delta).map_err(|_| SeriesError::InvalidStepSize(delta))?;
        SeriesSpec::new(delta, self.alpha.clone(), self.z.clone())
    }
}

/// One realization: `partial[i] = s_i`, `partial_abs[i]` uses `|z_m|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesSample {
    pub stream: u64,
    pub partial: Vec<f64>,
    pub partial_abs: Vec<f64>,
}

impl SeriesSample {
    pub fn value(&self) -> f64 {
        *self.partial.last().expect("non-empty")
    }
}

/// Forward accumulation of `s_i` and `s_i^abs` over the given `z_m`, up to `spec.horizon`.
pub fn accumulate<I: IntoIterator<Item = f64>>(spec: &SeriesSpec, zs: I) -> (Vec<f64>, Vec<f64>) {
    let delta = spec.delta.value();
    let mut weight = delta;
    let (mut s, mut s_abs) = (0.0, 0.0);
    let mut partial = Vec::with_capacity(spec.horizon + 1);
    let mut partial_abs = Vec::with_capacity(spec.horizon + 1);
    for (alpha, z) in spec.alpha.sequence().zip(zs).take(spec.horizon + 1) {
        s += weight * alpha * z;
        s_abs += weight * alpha * z.abs();
        partial.push(s);
        partial_abs.push(s_abs);
        weight *= 1.0 - delta;
    }
    (partial, partial_abs)
}

/// One realization with `z_m` drawn from `spec.z`.
pub fn partial_sums<R: Rng + ?Sized>(spec: &SeriesSpec, rng: &mut R, stream: u64) -> SeriesSample {
    let (partial, partial_abs) = accumulate(spec, std::iter::repeat_with(|| spec.z.sample(rng)));
    SeriesSample {
        stream,
        partial,
        partial_abs,
    }
}

/// `(s_horizon, s_horizon^abs)` without storing the path.
pub fn series_value<R: Rng + ?Sized>(spec: &SeriesSpec, rng: &mut R) -> (f64, f64) {
    let delta = spec.delta.value();
    let mut weight = delta;
    let (mut s, mut s_abs) = (0.0, 0.0);
    for alpha in spec.alpha.sequence().take(spec.horizon + 1) {
        let z = spec.z.sample(rng);
        s += weight * alpha * z;
        s_abs += weight * alpha * z.abs();
        weight *= 1.0 - delta;
    }
    (s, s_abs)
}

fn values(spec: &SeriesSpec, n_runs: usize, streams: &SeedStreams) -> Vec<f64> {
    (0..n_runs as u64)
        .into_par_iter()
        .map(|r| series_value(spec, &mut streams.stream(Domain::Series, r)).0)
        .collect()
}

/// Neumaier-compensated running sum.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticMoments {
    /// `m_z delta sum (1-delta)^m alpha_m`.
    pub mean: f64,
    /// `sigma_z^2 delta^2 sum (1-delta)^{2m} alpha_m^2`.
    pub variance: f64,
    /// `alpha m_z`.
    pub mean_limit: f64,
    /// `alpha^2 sigma_z^2 delta / 2`.
    pub variance_limit: f64,
    pub terms: usize,
}

/// Exact moments of the infinite series, summed until the weights fall
/// below machine precision, plus their leading-order limits.
pub fn analytic_moments(spec: &SeriesSpec) -> Result<AnalyticMoments, SeriesError> {
    let variance_z = spec.z.variance();
    if !variance_z.is_finite() {
        return Err(SeriesError::InfiniteVariance);
    }
    let delta = spec.delta.value();
    let (mut first, mut second) = (CompensatedSum::default(), CompensatedSum::default());
    let mut weight = 1.0;
    let mut terms = 0;
    for alpha in spec.alpha.sequence() {
        if weight < ANALYTIC_CUTOFF {
            break;
        }
        first.add(weight * alpha);
        second.add(weight * weight * alpha * alpha);
        weight *= 1.0 - delta;
        terms += 1;
    }
    let alpha = spec.alpha.limit();
    Ok(AnalyticMoments {
        mean: spec.z.mean() * delta * first.value(),
        variance: variance_z * delta * delta * second.value(),
        mean_limit: alpha * spec.z.mean(),
        variance_limit: alpha * alpha * variance_z * delta / 2.0,
        terms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloMoments {
    pub n_runs: usize,
    pub mean: f64,
    pub variance: f64,
    pub mean_standard_error: f64,
    pub variance_standard_error: f64,
    pub analytic: AnalyticMoments,
    /// `(mean - analytic.mean) / mean_standard_error`.
    pub mean_score: f64,
    /// `(variance - analytic.variance) / variance_standard_error`.
    pub variance_score: f64,
}

pub fn monte_carlo_moments(spec: &SeriesSpec, n_runs: usize, streams: &SeedStreams) -> Result<MonteCarloMoments, SeriesError> {
    let analytic = analytic_moments(spec)?;
    let s = values(spec, n_runs, streams);
    let n = n_runs as f64;
    let mean = stats::mean(&s);
    let variance = stats::variance(&s);
    let m4 = s.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let mean_standard_error = (variance / n).sqrt();
    let variance_standard_error = ((m4 - variance * variance) / n).max(0.0).sqrt();
    Ok(MonteCarloMoments {
        n_runs,
        mean,
        variance,
        mean_standard_error,
        variance_standard_error,
        analytic,
        mean_score: (mean - analytic.mean) / mean_standard_error,
        variance_score: (variance - analytic.variance) / variance_standard_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub n_runs: usize,
    pub horizon: usize,
    pub extended_horizon: usize,
    /// Largest `s^abs_{extended} - s^abs_{horizon}` over runs.
    pub max_residual: f64,
    pub converged: usize,
    /// Absolute partial sums never decreased.
    pub monotone: bool,
}

impl StabilityReport {
    pub fn all_converged(&self) -> bool {
        self.converged == self.n_runs && self.monotone
    }
}

/// Cauchy check on the absolute series: continues every run to twice the
/// horizon and records how much `s^abs` still moves past the horizon.
pub fn verify_stability(spec: &SeriesSpec, n_runs: usize, streams: &SeedStreams) -> StabilityReport {
    let extended = spec.clone().with_horizon(2 * spec.horizon);
    let residuals: Vec<(f64, bool)> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| {
            let sample = partial_sums(&extended, &mut streams.stream(Domain::Series, r), r);
            let monotone = sample.partial_abs.windows(2).all(|w| w[1] >= w[0]);
            let residual = sample.partial_abs[2 * spec.horizon] - sample.partial_abs[spec.horizon];
            (residual, monotone)
        })
        .collect();
    StabilityReport {
        n_runs,
        horizon: spec.horizon,
        extended_horizon: extended.horizon,
        max_residual: residuals.iter().map(|r| r.0).fold(0.0, f64::max),
        converged: residuals.iter().filter(|r| r.0 < CAUCHY_TOLERANCE).count(),
        monotone: residuals.iter().all(|r| r.1),
    }
}

fn check_grid(grid: &[f64]) -> Result<(), SeriesError> {
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(SeriesError::GridNotDecreasing);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exceedance {
    pub epsilon: f64,
    pub probability: BinomialInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakLawRow {
    pub delta: f64,
    pub horizon: usize,
    pub exceedance: Vec<Exceedance>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakLawReport {
    /// `alpha m_z`.
    pub center: f64,
    pub rows: Vec<WeakLawRow>,
    /// Point estimates never increase as delta shrinks, for every epsilon.
    pub monotone: bool,
}

/// `P[|s(delta) - alpha m_z| > eps]` along a decreasing step-size grid. All
/// step sizes reuse the same run streams.
pub fn verify_weak_law(
    spec: &SeriesSpec,
    grid: &[f64],
    n_runs: usize,
    streams: &SeedStreams,
) -> Result<WeakLawReport, SeriesError> {
    check_grid(grid)?;
    let center = spec.alpha.limit() * spec.z.mean();
    let mut rows = Vec::with_capacity(grid.len());
    for &delta in grid {
        let at = spec.at_delta(delta)?;
        let s = values(&at, n_runs, streams);
        let exceedance = EPSILONS
            .iter()
            .map(|&epsilon| Exceedance {
                epsilon,
                probability: stats::binomial_interval(
                    s.iter().filter(|v| (*v - center).abs() > epsilon).count(),
                    n_runs,
                ),
            })
            .collect();
        rows.push(WeakLawRow {
            delta,
            horizon: at.horizon,
            exceedance,
        });
    }
    let monotone = (0..EPSILONS.len()).all(|e| {
        rows.windows(2)
            .all(|w| w[1].exceedance[e].probability.rate <= w[0].exceedance[e].probability.rate)
    });
    Ok(WeakLawReport { center, rows, monotone })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltRow {
    pub delta: f64,
    pub horizon: usize,
    pub mean: f64,
    pub variance: f64,
    /// Exact variance of the standardized series, `Var[s] / delta`.
    pub exact_variance: f64,
    /// `variance / target_variance - 1`.
    pub relative_variance_error: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Kolmogorov-Smirnov distance to `N(0, target_variance)`.
    pub ks_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltReport {
    /// Samples are standardized as `(s - m_z) / sqrt(delta)`.
    pub centering: f64,
    /// `alpha^2 sigma_z^2 / 2`.
    pub target_variance: f64,
    /// Set when `alpha != 1`: centering at `m_z` and the weak-law limit
    /// `alpha m_z` then disagree, so the comparison is not meaningful.
    pub ambiguous_centering: bool,
    pub rows: Vec<CltRow>,
    /// KS distance strictly decreases along the grid.
    pub distance_shrinks: bool,
}

/// Standardized `(s - m_z)/sqrt(delta)` against `N(0, alpha^2 sigma_z^2 / 2)`
/// along a decreasing step-size grid, with the same run streams at each step.
pub fn verify_clt(spec: &SeriesSpec, grid: &[f64], n_runs: usize, streams: &SeedStreams) -> Result<CltReport, SeriesError> {
    check_grid(grid)?;
    let variance_z = spec.z.variance();
    if !variance_z.is_finite() {
        return Err(SeriesError::InfiniteVariance);
    }
    let alpha = spec.alpha.limit();
    let centering = spec.z.mean();
    let target_variance = alpha * alpha * variance_z / 2.0;
    let target_sd = target_variance.sqrt();
    let mut rows = Vec::with_capacity(grid.len());
    for &delta in grid {
        let at = spec.at_delta(delta)?;
        let scale = delta.sqrt();
        let z: Vec<f64> = values(&at, n_runs, streams)
            .into_iter()
            .map(|s| (s - centering) / scale)
            .collect();
        let variance = stats::variance(&z);
        let ks_distance = if target_sd > 0.0 {
            stats::ks_statistic(&z, |x| stats::normal_cdf(x, 0.0, target_sd))
        } else {
            f64::NAN
        };
        rows.push(CltRow {
            delta,
            horizon: at.horizon,
            mean: stats::mean(&z),
            variance,
            exact_variance: analytic_moments(&at)?.variance / delta,
            relative_variance_error: variance / target_variance - 1.0,
            skewness: stats::skewness(&z),
            excess_kurtosis: stats::excess_kurtosis(&z),
            ks_distance,
        });
    }
    let distance_shrinks = rows.windows(2).all(|w| w[1].ks_distance < w[0].ks_distance);
    Ok(CltReport {
        centering,
        target_variance,
        ambiguous_centering: (alpha - 1.0).abs() > 1e-12,
        rows,
        distance_shrinks,
    })
}

/// Empirical check of `|[A^{m+1}]_{lk} - pi_l| <= kappa beta^m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingCheck {
    /// Modulus of the second largest eigenvalue of `A`.
    pub second_modulus: f64,
    /// Rate used for the envelope, halfway between the second modulus and one.
    pub beta: f64,
    /// Envelope constant fitted on the first half of the deviations.
    /// Deviations below `MIXING_FLOOR` are limited by the accuracy of `pi`.
    pub kappa: f64,
    pub deviations: Vec<f64>,
    /// The fitted envelope also bounds the second half.
    pub holds: bool,
}

pub fn geometric_mixing(matrix: &CombinationMatrix, count: usize) -> MixingCheck {
    let mut moduli: Vec<f64> = matrix
        .weights()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    let second_modulus = moduli.get(1).copied().unwrap_or(0.0);
    let beta = 0.5 * (1.0 + second_modulus);
    let deviations = matrix.mixing_deviations(count);
    let half = count.div_ceil(2);
    let kappa = deviations[..half]
        .iter()
        .enumerate()
        .filter(|(_, e)| **e > MIXING_FLOOR)
        .map(|(m, e)| e / beta.powi(m as i32))
        .fold(0.0, f64::max);
    let holds = second_modulus < 1.0 - 1e-9
        && deviations[half..]
            .iter()
            .enumerate()
            .all(|(j, e)| *e <= (kappa * beta.powi((half + j) as i32)).max(MIXING_FLOOR));
    MixingCheck {
        second_modulus,
        beta,
        kappa,
        deviations,
        holds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Topology;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn step(d: f64) -> StepSize {
        StepSize::new(d).unwrap()
    }

    #[test]
    fn hand_evaluated_partial_sum() {
        let spec = SeriesSpec {
            delta: step(0.5),
            alpha: AlphaRule::Constant(1.0),
            z: ZDistribution::Deterministic(0.0),
            horizon: 1,
        };
        let (partial, partial_abs) = accumulate(&spec, [2.0, -4.0]);
        assert_eq!(partial, vec![1.0, 0.0]);
        assert_eq!(partial_abs, vec![1.0, 2.0]);
    }

    #[test]
    fn unit_z_sums_to_alpha() {
        let spec = SeriesSpec::new(step(0.05), AlphaRule::Constant(0.7), ZDistribution::Deterministic(1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sample = partial_sums(&spec, &mut rng, 0);
        assert!((sample.value() - 0.7).abs() < 1e-12);
        let tail = (1.0f64 - 0.05).powi(11);
        assert!((sample.value() - sample.partial[10]).abs() <= tail * 0.7 + 1e-15);
    }

    #[test]
    fn constant_alpha_closed_forms() {
        for &d in &[0.5, 0.1, 0.01, 0.001] {
            let spec = SeriesSpec::new(step(d), AlphaRule::Constant(0.6), ZDistribution::gaussian(1.5, 2.0).unwrap()).unwrap();
            let m = analytic_moments(&spec).unwrap();
            assert!((m.mean - 0.6 * 1.5).abs() < 1e-14, "{}", m.mean);
            let exact = 4.0 * 0.36 * d / (2.0 - d);
            assert!((m.variance - exact).abs() < 1e-15 * exact.max(1.0) * 10.0);
        }
        let spec = SeriesSpec::new(step(0.1), AlphaRule::Constant(1.0), ZDistribution::gaussian(1.0, 1.0).unwrap()).unwrap();
        assert!((analytic_moments(&spec).unwrap().variance - 1.0 / 19.0).abs() < 1e-16);
    }

    #[test]
    fn geometric_alpha_matches_brute_force() {
        let rule = AlphaRule::Geometric {
            alpha: 0.5,
            kappa: 0.1,
            beta: 0.5,
        };
        let delta = 0.01;
        let spec = SeriesSpec::new(step(delta), rule, ZDistribution::Deterministic(1.0)).unwrap();
        let exact = analytic_moments(&spec).unwrap().mean;
        let mut brute = 0.0;
        for m in (0..1_000_000).rev() {
            brute += delta * (1.0 - delta).powi(m) * (0.5 + 0.1 * 0.5f64.powi(m));
        }
        assert!((exact - brute).abs() < 1e-12);
        let closed = 0.5 + 0.1 * delta / (1.0 - (1.0 - delta) * 0.5);
        assert!((exact - closed).abs() < 1e-13);
    }

    #[test]
    fn alpha_validation() {
        assert!(AlphaRule::Constant(0.0).validate().is_err());
        assert!(AlphaRule::Constant(1.2).validate().is_err());
        assert!(AlphaRule::Geometric { alpha: 0.95, kappa: 0.1, beta: 0.5 }.validate().is_err());
        assert!(AlphaRule::Geometric { alpha: 0.5, kappa: 0.1, beta: 1.0 }.validate().is_err());
    }

    #[test]
    fn matrix_power_sequence_matches_powers() {
        let topo = Topology::ring_with_chords(5, 2, 3).unwrap();
        let a = CombinationMatrix::averaging(&topo).unwrap();
        let rule = AlphaRule::matrix_power(&a, 1, 3);
        let mut power = a.weights().clone();
        for alpha in rule.sequence().take(20) {
            assert!((alpha - power[(1, 3)]).abs() < 1e-15);
            power = a.weights() * &power;
        }
        assert_eq!(rule.limit(), a.perron()[1]);
        let mixing = geometric_mixing(&a, 200);
        assert!(mixing.holds && mixing.beta < 1.0, "{mixing:?}");
    }

    #[test]
    fn periodic_matrix_does_not_mix() {
        // A two-cycle is doubly stochastic, so pi is uniform, yet A^m never settles.
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let a = CombinationMatrix::from_weights(w).unwrap();
        let mixing = geometric_mixing(&a, 50);
        assert!(!mixing.holds);
        assert!((mixing.second_modulus - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_abs_mean() {
        let z = ZDistribution::gaussian(0.0, 2.0).unwrap();
        assert!((z.abs_mean() - 2.0 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-15);
        let far = ZDistribution::gaussian(10.0, 1.0).unwrap();
        assert!((far.abs_mean() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn llr_z_uses_kl_and_rho() {
        let model = LikelihoodModel::laplace_family(&[0.5, 1.0, 1.5], 1.0).unwrap();
        let z = ZDistribution::llr(model.clone(), Hypothesis::from_index(0), Hypothesis::from_index(2)).unwrap();
        assert!((z.mean() - (-1.0f64).exp()).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws: Vec<f64> = (0..200_000).map(|_| z.sample(&mut rng)).collect();
        let se = (z.variance() / draws.len() as f64).sqrt();
        assert!((stats::mean(&draws) - z.mean()).abs() < 4.0 * se);
    }

    #[test]
    fn stability_residuals_shrink_with_horizon() {
        let streams = SeedStreams::new(5);
        let base = SeriesSpec::new(step(0.1), AlphaRule::Constant(1.0), ZDistribution::Rademacher).unwrap();
        let residuals: Vec<f64> = [20, 60, 300]
            .iter()
            .map(|&h| verify_stability(&base.clone().with_horizon(h), 50, &streams).max_residual)
            .collect();
        assert!(residuals.windows(2).all(|w| w[1] <= w[0]));
        let report = verify_stability(&base.with_horizon(300), 50, &streams);
        assert!(report.all_converged(), "{report:?}");
    }

    #[test]
    fn deterministic_z_has_no_exceedance() {
        let spec = SeriesSpec::new(step(0.1), AlphaRule::Constant(1.0), ZDistribution::Deterministic(1.0)).unwrap();
        let report = verify_weak_law(&spec, &[0.1, 0.01], 200, &SeedStreams::new(1)).unwrap();
        assert!(report.monotone);
        assert!(report.rows.iter().all(|r| r.exceedance.iter().all(|e| e.probability.successes == 0)));
        assert_eq!(verify_weak_law(&spec, &[0.01, 0.1], 200, &SeedStreams::new(1)), Err(SeriesError::GridNotDecreasing));
    }

    #[test]
    fn clt_flags_ambiguous_centering() {
        let spec = SeriesSpec::new(step(0.1), AlphaRule::Constant(0.5), ZDistribution::gaussian(1.0, 1.0).unwrap()).unwrap();
        let report = verify_clt(&spec, &[0.1, 0.05], 200, &SeedStreams::new(2)).unwrap();
        assert!(report.ambiguous_centering);
        let unit = SeriesSpec { alpha: AlphaRule::Constant(1.0), ..spec };
        assert!(!verify_clt(&unit, &[0.1], 200, &SeedStreams::new(2)).unwrap().ambiguous_centering);
    }

    #[test]
    fn default_horizon_bounds_tail() {
        for &d in &[0.5, 0.1, 0.01, 0.001] {
            let h = default_horizon(d, 0.8);
            assert!((1.0 - d).powi(h as i32) * 0.8 / d < TAIL_TOLERANCE);
            assert!((1.0 - d).powi(h as i32 - 1) * 0.8 / d >= TAIL_TOLERANCE);
        }
    }
}
