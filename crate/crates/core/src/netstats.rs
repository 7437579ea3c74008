//! Network-level steady-state theory: `m_ave`, `C_ave`, the Gaussian
//! approximations of the log-belief ratios, and empirical diagnostics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::graph::CombinationMatrix;
use crate::learning::wrong_hypotheses;
use crate::likelihood::{Hypothesis, LikelihoodError, LikelihoodModel};
use crate::stats::{self, BinomialInterval};

/// Probability mass inside the one-sigma ellipse of a Gaussian, matched to the 1-D rule.
pub const ONE_SIGMA_LEVEL: f64 = 0.682_689_492_137_086;
/// Probability mass inside the two-sigma ellipse, matched to the 1-D rule.
pub const TWO_SIGMA_LEVEL: f64 = 0.954_499_736_103_642;

pub const MIN_EXPANSION_SAMPLES: usize = 30;
pub const MIN_DIAGNOSTIC_SAMPLES: usize = 100;

const DEGENERATE_RELATIVE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("agent {agent}: {source}")]
    Agent {
        agent: usize,
        #[source]
        source: LikelihoodError,
    },
}

/// `m_ave`, `C_ave` and the per-agent tables they are built from.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkMoments {
    pub theta0: Hypothesis,
    pub wrong: Vec<Hypothesis>,
    pub m_ave: DVector<f64>,
    pub c_ave: DMatrix<f64>,
    /// `kl[k][j] = d_k(wrong[j])`.
    pub kl: Vec<Vec<f64>>,
    /// `rho[k][(i, j)] = rho_k(wrong[i], wrong[j])`.
    pub rho: Vec<DMatrix<f64>>,
}

fn kl_table(models: &[LikelihoodModel], theta0: Hypothesis) -> Result<Vec<Vec<f64>>, StatsError> {
    models
        .iter()
        .enumerate()
        .map(|(agent, model)| {
            wrong_hypotheses(model.n_hypotheses(), theta0)
                .map(|theta| {
                    model
                        .kl_divergence(theta0, theta)
                        .map_err(|source| StatsError::Agent { agent, source })
                })
                .collect()
        })
        .collect()
}

fn rho_table(models: &[LikelihoodModel], theta0: Hypothesis) -> Result<Vec<DMatrix<f64>>, StatsError> {
    models
        .iter()
        .enumerate()
        .map(|(agent, model)| {
            let wrong: Vec<Hypothesis> = wrong_hypotheses(model.n_hypotheses(), theta0).collect();
            let d = wrong.len();
            let mut rho = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in i..d {
                    let v = model
                        .llr_covariance(theta0, wrong[i], wrong[j])
                        .map_err(|source| StatsError::Agent { agent, source })?;
                    rho[(i, j)] = v;
                    rho[(j, i)] = v;
                }
            }
            Ok(rho)
        })
        .collect()
}

fn check_dims(models: &[LikelihoodModel], perron: &DVector<f64>) -> Result<usize, StatsError> {
    if models.len() != perron.len() || models.is_empty() {
        return Err(StatsError::Dimension(format!(
            "{} models for a Perron vector of length {}",
            models.len(),
            perron.len()
        )));
    }
    let h = models[0].n_hypotheses();
    if models.iter().any(|m| m.n_hypotheses() != h) {
        return Err(StatsError::Dimension("agents disagree on the number of hypotheses".into()));
    }
    Ok(h)
}

/// `m_ave(theta) = sum_l pi_l d_l(theta)` for every `theta != theta0`.
pub fn network_mean(
    models: &[LikelihoodModel],
    perron: &DVector<f64>,
    theta0: Hypothesis,
) -> Result<DVector<f64>, StatsError> {
    let h = check_dims(models, perron)?;
    let kl = kl_table(models, theta0)?;
    Ok(weighted_mean(&kl, perron, h - 1))
}

fn weighted_mean(kl: &[Vec<f64>], perron: &DVector<f64>, d: usize) -> DVector<f64> {
    let mut m = DVector::zeros(d);
    for (row, &pi) in kl.iter().zip(perron.iter()) {
        for (acc, &v) in m.iter_mut().zip(row) {
            *acc += pi * v;
        }
    }
    m
}

/// `c_ave(theta, theta') = sum_l pi_l^2 rho_l(theta, theta')`, assuming data
/// independent across agents.
pub fn network_covariance(
    models: &[LikelihoodModel],
    perron: &DVector<f64>,
    theta0: Hypothesis,
) -> Result<DMatrix<f64>, StatsError> {
    let h = check_dims(models, perron)?;
    let rho = rho_table(models, theta0)?;
    Ok(weighted_covariance(&rho, perron, h - 1))
}

fn weighted_covariance(rho: &[DMatrix<f64>], perron: &DVector<f64>, d: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(d, d);
    for (r, &pi) in rho.iter().zip(perron.iter()) {
        c += r * (pi * pi);
    }
    c
}

impl NetworkMoments {
    pub fn compute(
        models: &[LikelihoodModel],
        perron: &DVector<f64>,
        theta0: Hypothesis,
    ) -> Result<Self, StatsError> {
        let h = check_dims(models, perron)?;
        let kl = kl_table(models, theta0)?;
        let rho = rho_table(models, theta0)?;
        Ok(Self {
            theta0,
            wrong: wrong_hypotheses(h, theta0).collect(),
            m_ave: weighted_mean(&kl, perron, h - 1),
            c_ave: weighted_covariance(&rho, perron, h - 1),
            kl,
            rho,
        })
    }

    pub fn dim(&self) -> usize {
        self.wrong.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApproxKind {
    /// `G(m_ave, C_ave delta / 2)`.
    Limiting,
    /// `G(m_k, C_k)` from steady-state samples of one agent.
    EmpiricalPerAgent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianApprox {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub kind: ApproxKind,
}

/// Limiting approximation `G(m_ave, C_ave delta / 2)`.
pub fn gaussian_limit(moments: &NetworkMoments, delta: f64) -> GaussianApprox {
    GaussianApprox {
        mean: moments.m_ave.clone(),
        covariance: &moments.c_ave * (delta / 2.0),
        kind: ApproxKind::Limiting,
    }
}

/// Empirical per-agent mean and unbiased covariance of steady-state
/// log-belief ratios. `samples[k]` holds the `(H-1)`-vectors of agent `k`.
pub fn moment_expansion(samples: &[Vec<Vec<f64>>]) -> Result<Vec<GaussianApprox>, StatsError> {
    samples
        .iter()
        .map(|agent| {
            if agent.len() < MIN_EXPANSION_SAMPLES {
                return Err(StatsError::InsufficientSamples {
                    needed: MIN_EXPANSION_SAMPLES,
                    got: agent.len(),
                });
            }
            Ok(GaussianApprox {
                mean: stats::mean_vector(agent),
                covariance: stats::covariance_matrix(agent),
                kind: ApproxKind::EmpiricalPerAgent,
            })
        })
        .collect()
}

/// How far one agent's empirical moments sit from the limiting ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionGap {
    /// `||m_k - m_ave||_inf`.
    pub mean_gap: f64,
    /// `mean_gap / delta`; bounded as delta shrinks.
    pub mean_gap_over_delta: f64,
    /// `||m_k - m_ave||_inf / ||m_ave||_inf`.
    pub relative_mean_gap: f64,
    /// `tr(C_k) / (delta tr(C_ave) / 2)`; tends to one.
    pub trace_ratio: f64,
    /// `||C_k - delta C_ave / 2||_max / delta`.
    pub covariance_gap_over_delta: f64,
}

pub fn expansion_gap(moments: &NetworkMoments, delta: f64, empirical: &GaussianApprox) -> ExpansionGap {
    let mean_gap = (&empirical.mean - &moments.m_ave).amax();
    let limit_cov = &moments.c_ave * (delta / 2.0);
    ExpansionGap {
        mean_gap,
        mean_gap_over_delta: mean_gap / delta,
        relative_mean_gap: mean_gap / moments.m_ave.amax(),
        trace_ratio: empirical.covariance.trace() / limit_cov.trace(),
        covariance_gap_over_delta: (&empirical.covariance - &limit_cov).amax() / delta,
    }
}

/// Exact steady-state mean and covariance of one agent's log-belief ratios
/// at a finite step size.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Unrolls `lambda = sum_m delta (1-delta)^m (A^T)^{m+1} x_m` with data
/// independent over time and agents:
/// `m_k = delta sum_m (1-delta)^m sum_l [A^{m+1}]_{lk} d_l` and
/// `C_k = delta^2 sum_m (1-delta)^{2m} sum_l [A^{m+1}]_{lk}^2 rho_l`.
pub fn steady_state_moments(matrix: &CombinationMatrix, moments: &NetworkMoments, delta: f64) -> Vec<SteadyStateMoments> {
    let n = matrix.n_agents();
    let d = moments.dim();
    let mut means = vec![DVector::<f64>::zeros(d); n];
    let mut covs = vec![DMatrix::<f64>::zeros(d, d); n];
    let mut power = matrix.weights().clone();
    let mut weight = delta;
    while weight > 1e-18 * delta {
        for k in 0..n {
            for l in 0..n {
                let a = power[(l, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    means[k][j] += weight * a * moments.kl[l][j];
                }
                covs[k] += &moments.rho[l] * (weight * weight * a * a);
            }
        }
        power = matrix.weights() * &power;
        weight *= 1.0 - delta;
    }
    means
        .into_iter()
        .zip(covs)
        .map(|(mean, covariance)| SteadyStateMoments { mean, covariance })
        .collect()
}

/// Per-agent steady-state error rate: the fraction of runs whose decision
/// differs from `theta0`. `decisions[run][agent]`.
pub fn error_probability(decisions: &[Vec<Hypothesis>], theta0: Hypothesis) -> Result<Vec<BinomialInterval>, StatsError> {
    if decisions.len() < MIN_DIAGNOSTIC_SAMPLES {
        return Err(StatsError::InsufficientSamples {
            needed: MIN_DIAGNOSTIC_SAMPLES,
            got: decisions.len(),
        });
    }
    let n_agents = decisions[0].len();
    if decisions.iter().any(|run| run.len() != n_agents) {
        return Err(StatsError::Dimension("runs disagree on the number of agents".into()));
    }
    Ok((0..n_agents)
        .map(|k| {
            let errors = decisions.iter().filter(|run| run[k] != theta0).count();
            stats::binomial_interval(errors, decisions.len())
        })
        .collect())
}

/// Confidence ellipse `{x : (x - c)^T S^{-1} (x - c) <= r^2}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ellipse {
    pub level: f64,
    /// Mahalanobis radius `r`.
    pub radius: f64,
    pub center: Vec<f64>,
    /// Semi-axis lengths, largest first.
    pub semi_axes: Vec<f64>,
    /// Unit axis directions matching `semi_axes`.
    pub directions: Vec<Vec<f64>>,
    /// Angle of the major axis against the first coordinate, two-dimensional case only.
    pub rotation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateDiagnostics {
    pub theta: usize,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Kolmogorov-Smirnov distance between the standardized samples and N(0, 1).
    pub ks_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub level: f64,
    pub inside: usize,
    pub total: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalityReport {
    pub kind: ApproxKind,
    pub n_samples: usize,
    pub coordinates: Vec<CoordinateDiagnostics>,
    pub ellipses: Vec<Ellipse>,
    pub coverage: Vec<Coverage>,
    /// Eigen-directions of the approximating covariance with (numerically) zero variance.
    pub degenerate_directions: Vec<Vec<f64>>,
}

impl NormalityReport {
    /// Largest marginal KS distance.
    pub fn max_ks_distance(&self) -> f64 {
        self.coordinates.iter().map(|c| c.ks_distance).fold(0.0, f64::max)
    }

    pub fn coverage_at(&self, level: f64) -> Option<f64> {
        self.coverage
            .iter()
            .find(|c| (c.level - level).abs() < 1e-12)
            .map(|c| c.fraction)
    }
}

fn sorted_eigen(cov: &DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let eig = SymmetricEigen::new(cov.clone());
    let mut pairs: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .copied()
        .zip(eig.eigenvectors.column_iter().map(|c| c.into_owned()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs.into_iter().unzip()
}

/// Confidence ellipse of `approx` holding probability `level`.
pub fn confidence_ellipse(approx: &GaussianApprox, level: f64) -> Ellipse {
    let d = approx.mean.len();
    let radius = stats::chi_squared_quantile(level, d).sqrt();
    let (values, vectors) = sorted_eigen(&approx.covariance);
    let rotation = (d == 2).then(|| vectors[0][1].atan2(vectors[0][0]));
    Ellipse {
        level,
        radius,
        center: approx.mean.iter().copied().collect(),
        semi_axes: values.iter().map(|v| radius * v.max(0.0).sqrt()).collect(),
        directions: vectors.iter().map(|v| v.iter().copied().collect()).collect(),
        rotation,
    }
}

/// Marginal skewness, kurtosis and KS distance against the approximation,
/// plus one- and two-sigma ellipse coverage. Samples are `(H-1)`-vectors.
pub fn normality_diagnostics(samples: &[Vec<f64>], approx: &GaussianApprox) -> Result<NormalityReport, StatsError> {
    if samples.len() < MIN_DIAGNOSTIC_SAMPLES {
        return Err(StatsError::InsufficientSamples {
            needed: MIN_DIAGNOSTIC_SAMPLES,
            got: samples.len(),
        });
    }
    let d = approx.mean.len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(StatsError::Dimension(format!("samples must have length {d}")));
    }

    let coordinates = (0..d)
        .map(|j| {
            let column: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            let sd = approx.covariance[(j, j)].max(0.0).sqrt();
            let ks_distance = if sd > 0.0 {
                let standardized: Vec<f64> = column.iter().map(|x| (x - approx.mean[j]) / sd).collect();
                stats::ks_statistic(&standardized, |z| stats::normal_cdf(z, 0.0, 1.0))
            } else {
                f64::NAN
            };
            CoordinateDiagnostics {
                theta: j,
                skewness: stats::skewness(&column),
                excess_kurtosis: stats::excess_kurtosis(&column),
                ks_distance,
            }
        })
        .collect();

    let (values, vectors) = sorted_eigen(&approx.covariance);
    let scale = values.first().copied().unwrap_or(0.0).max(0.0);
    let mut kept = Vec::new();
    let mut degenerate_directions = Vec::new();
    for (v, dir) in values.iter().zip(&vectors) {
        if *v > DEGENERATE_RELATIVE * scale && *v > 0.0 {
            kept.push((*v, dir.clone()));
        } else {
            degenerate_directions.push(dir.iter().copied().collect());
        }
    }
    let effective_dim = kept.len();
    let mahalanobis: Vec<f64> = samples
        .iter()
        .map(|s| {
            let diff = DVector::from_column_slice(s) - &approx.mean;
            kept.iter().map(|(v, dir)| dir.dot(&diff).powi(2) / v).sum()
        })
        .collect();

    let mut ellipses = Vec::new();
    let mut coverage = Vec::new();
    for level in [ONE_SIGMA_LEVEL, TWO_SIGMA_LEVEL] {
        ellipses.push(confidence_ellipse(approx, level));
        let inside = if effective_dim == 0 {
            0
        } else {
            let r2 = stats::chi_squared_quantile(level, effective_dim);
            mahalanobis.iter().filter(|&&m| m <= r2).count()
        };
        coverage.push(Coverage {
            level,
            inside,
            total: samples.len(),
            fraction: inside as f64 / samples.len() as f64,
        });
    }

    Ok(NormalityReport {
        kind: approx.kind,
        n_samples: samples.len(),
        coordinates,
        ellipses,
        coverage,
        degenerate_directions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn h(label: usize) -> Hypothesis {
        Hypothesis::from_label(label).unwrap()
    }

    fn three_groups() -> Vec<LikelihoodModel> {
        let rows: [(usize, [f64; 3]); 3] = [(3, [0.5, 0.5, 1.5]), (3, [0.5, 1.5, 1.5]), (4, [0.5, 1.0, 0.5])];
        rows.iter()
            .flat_map(|(count, means)| {
                std::iter::repeat_n(LikelihoodModel::laplace_family(means, 1.0).unwrap(), *count)
            })
            .collect()
    }

    #[test]
    fn identical_agents_recover_common_kl() {
        let model = LikelihoodModel::laplace_family(&[0.5, 1.0, 1.5], 1.0).unwrap();
        let models = vec![model.clone(); 4];
        let pi = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let m = network_mean(&models, &pi, h(1)).unwrap();
        assert!((m[0] - model.kl_divergence(h(1), h(2)).unwrap()).abs() < 1e-15);
        assert!((m[1] - model.kl_divergence(h(1), h(3)).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn three_groups_uniform_perron() {
        let pi = DVector::from_element(10, 0.1);
        let m = network_mean(&three_groups(), &pi, h(1)).unwrap();
        let e = (-1.0f64).exp();
        let d12 = 0.5 + (-0.5f64).exp() - 1.0;
        assert!((m[0] - (3.0 * e + 4.0 * d12) / 10.0).abs() < 1e-15);
        assert!((m[0] - 0.152976).abs() < 1e-6);
        assert!((m[1] - 0.220728).abs() < 1e-6);
        // Agents 1-3 cannot tell theta=2 apart, yet the network can.
        let kl = kl_table(&three_groups(), h(1)).unwrap();
        assert_eq!(kl[0][0], 0.0);
        assert!(m[0] > 0.0);
    }

    #[test]
    fn covariance_special_cases() {
        let model = LikelihoodModel::laplace_family(&[0.5, 1.0, 1.5], 1.0).unwrap();
        let single = network_covariance(std::slice::from_ref(&model), &DVector::from_element(1, 1.0), h(1)).unwrap();
        let rho = rho_table(std::slice::from_ref(&model), h(1)).unwrap();
        assert_eq!(single, rho[0]);
        let many = network_covariance(&vec![model; 5], &DVector::from_element(5, 0.2), h(1)).unwrap();
        assert!((&many - &rho[0] / 5.0).amax() < 1e-15);
    }

    #[test]
    fn three_groups_covariance_is_symmetric_psd() {
        let pi = DVector::from_element(10, 0.1);
        let c = network_covariance(&three_groups(), &pi, h(1)).unwrap();
        assert!((c[(0, 1)] - c[(1, 0)]).abs() <= 1e-12);
        let eig = SymmetricEigen::new(c).eigenvalues;
        assert!(eig.min() >= -1e-10);
    }

    #[test]
    fn limiting_approx_is_definitional() {
        let pi = DVector::from_element(10, 0.1);
        let moments = NetworkMoments::compute(&three_groups(), &pi, h(1)).unwrap();
        let g = gaussian_limit(&moments, 0.02);
        assert_eq!(g.mean, moments.m_ave);
        assert_eq!(g.covariance, &moments.c_ave * 0.01);
        let e1 = confidence_ellipse(&gaussian_limit(&moments, 0.04), ONE_SIGMA_LEVEL);
        let e2 = confidence_ellipse(&gaussian_limit(&moments, 0.01), ONE_SIGMA_LEVEL);
        for (a, b) in e1.semi_axes.iter().zip(&e2.semi_axes) {
            assert!((a / b - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn error_probability_examples() {
        let all_right = vec![vec![h(1); 3]; 200];
        let rates = error_probability(&all_right, h(1)).unwrap();
        assert_eq!(rates[0].rate, 0.0);
        assert_eq!(rates[0].upper, 3.0 / 200.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let coin: Vec<Vec<Hypothesis>> = (0..400)
            .map(|_| vec![if rand::Rng::random::<bool>(&mut rng) { h(1) } else { h(2) }])
            .collect();
        let r = error_probability(&coin, h(1)).unwrap()[0];
        assert!(r.lower <= 0.5 && 0.5 <= r.upper);
        assert!(matches!(
            error_probability(&all_right[..50], h(1)),
            Err(StatsError::InsufficientSamples { .. })
        ));
    }

    fn gaussian_samples(approx: &GaussianApprox, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let chol = approx.covariance.clone().cholesky().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z = DVector::from_fn(approx.mean.len(), |_, _| StandardNormal.sample(&mut rng));
                (&approx.mean + chol.l() * z).iter().copied().collect()
            })
            .collect()
    }

    #[test]
    fn coverage_self_test() {
        let approx = GaussianApprox {
            mean: DVector::from_vec(vec![0.2, 0.15]),
            covariance: DMatrix::from_row_slice(2, 2, &[0.004, 0.001, 0.001, 0.002]),
            kind: ApproxKind::Limiting,
        };
        let n = 2000;
        let report = normality_diagnostics(&gaussian_samples(&approx, n, 21), &approx).unwrap();
        for (level, cov) in [(ONE_SIGMA_LEVEL, report.coverage[0].fraction), (TWO_SIGMA_LEVEL, report.coverage[1].fraction)] {
            let se = (level * (1.0 - level) / n as f64).sqrt();
            assert!((cov - level).abs() < 1.96 * se * 1.5, "level {level} coverage {cov}");
        }
        assert!(report.max_ks_distance() < 1.36 / (n as f64).sqrt());
        for c in &report.coordinates {
            assert!(c.skewness.abs() < 0.2);
        }
        let rot = report.ellipses[0].rotation.unwrap();
        assert!(rot.is_finite());
    }

    #[test]
    fn degenerate_covariance_is_flagged() {
        let approx = GaussianApprox {
            mean: DVector::from_vec(vec![0.0, 0.0]),
            covariance: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            kind: ApproxKind::Limiting,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                vec![z, z]
            })
            .collect();
        let report = normality_diagnostics(&samples, &approx).unwrap();
        assert_eq!(report.degenerate_directions.len(), 1);
        let dir = &report.degenerate_directions[0];
        assert!((dir[0] + dir[1]).abs() < 1e-8);
        let f = report.coverage[0].fraction;
        assert!((0.55..0.8).contains(&f));
    }

    #[test]
    fn moment_expansion_needs_samples() {
        let few = vec![vec![vec![0.0, 1.0]; 10]];
        assert!(matches!(
            moment_expansion(&few),
            Err(StatsError::InsufficientSamples { needed: 30, got: 10 })
        ));
    }

    #[test]
    fn exact_moments_on_complete_graph() {
        // With uniform weights A^{m+1} = A, so every agent sees exactly
        // m_ave and C_ave delta / (2 - delta).
        let topo = crate::graph::Topology::complete(10).unwrap();
        let a = CombinationMatrix::averaging(&topo).unwrap();
        let moments = NetworkMoments::compute(&three_groups(), a.perron(), h(1)).unwrap();
        let delta = 0.05;
        for agent in steady_state_moments(&a, &moments, delta) {
            assert!((&agent.mean - &moments.m_ave).amax() < 1e-13);
            let expected = &moments.c_ave * (delta / (2.0 - delta));
            assert!((&agent.covariance - &expected).amax() < 1e-14);
        }
    }

    #[test]
    fn exact_moments_approach_limit() {
        let topo = crate::graph::Topology::ring_with_chords(10, 5, 1).unwrap();
        let a = CombinationMatrix::averaging(&topo).unwrap();
        let moments = NetworkMoments::compute(&three_groups(), a.perron(), h(1)).unwrap();
        let gaps: Vec<f64> = [0.04, 0.02, 0.01]
            .iter()
            .map(|&d| {
                steady_state_moments(&a, &moments, d)
                    .iter()
                    .map(|m| (&m.mean - &moments.m_ave).amax() / d)
                    .fold(0.0, f64::max)
            })
            .collect();
        // O(delta) mean gap: the ratio stays bounded as delta halves.
        assert!(gaps.windows(2).all(|w| w[1] <= 1.1 * w[0]), "{gaps:?}");
    }
}
