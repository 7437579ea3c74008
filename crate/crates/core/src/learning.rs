//! One time-step of adaptive (ASL) and classic social learning.
//!
//! Beliefs are held as normalized log-probabilities, agent-major. The belief
//! domain path (`adaptive_update` then `combine`) and the log-belief-ratio
//! recursion (`log_ratio_step`) are two independent routes to the same
//! trajectory.

use thiserror::Error;

use crate::graph::CombinationMatrix;
use crate::likelihood::{Hypothesis, LikelihoodError, LikelihoodModel, Observation};

const BELIEF_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearningError {
    #[error("step-size must satisfy 0 < delta < 1, got {0}")]
    InvalidStepSize(f64),
    #[error("belief of agent {agent} at hypothesis {hypothesis} is {value}; beliefs must be strictly positive")]
    NonPositiveBelief {
        agent: usize,
        hypothesis: Hypothesis,
        value: f64,
    },
    #[error("belief of agent {agent} sums to {sum}")]
    NotNormalized { agent: usize, sum: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("agent {agent}: every hypothesis assigns zero likelihood to the observation")]
    ZeroLikelihood { agent: usize },
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

/// Step-size `delta`, strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct StepSize(f64);

impl StepSize {
    pub fn new(delta: f64) -> Result<Self, LearningError> {
        if delta > 0.0 && delta < 1.0 {
            Ok(Self(delta))
        } else {
            Err(LearningError::InvalidStepSize(delta))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `log(sum(exp(x)))` with max subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn normalize_log(row: &mut [f64]) {
    let lse = log_sum_exp(row);
    for v in row.iter_mut() {
        *v -= lse;
    }
}

/// Per-agent belief vectors `mu_{k,i}` at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    n_agents: usize,
    n_hypotheses: usize,
    log_beliefs: Vec<f64>,
    time: u64,
}

impl BeliefState {
    pub fn uniform(n_agents: usize, n_hypotheses: usize) -> Self {
        let v = -(n_hypotheses as f64).ln();
        Self {
            n_agents,
            n_hypotheses,
            log_beliefs: vec![v; n_agents * n_hypotheses],
            time: 0,
        }
    }

    /// From probability vectors, one per agent. Entries must be strictly
    /// positive and each row must sum to one within `1e-9`.
    pub fn from_beliefs(rows: &[Vec<f64>]) -> Result<Self, LearningError> {
        let n_hypotheses = rows.first().map_or(0, Vec::len);
        if n_hypotheses < 2 {
            return Err(LearningError::Dimension("need at least two hypotheses".into()));
        }
        let mut log_beliefs = Vec::with_capacity(rows.len() * n_hypotheses);
        for (agent, row) in rows.iter().enumerate() {
            if row.len() != n_hypotheses {
                return Err(LearningError::Dimension(format!(
                    "agent {agent} has {} entries, expected {n_hypotheses}",
                    row.len()
                )));
            }
            for (index, &value) in row.iter().enumerate() {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(LearningError::NonPositiveBelief {
                        agent,
                        hypothesis: Hypothesis::from_index(index),
                        value,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > BELIEF_SUM_TOLERANCE {
                return Err(LearningError::NotNormalized { agent, sum });
            }
            let start = log_beliefs.len();
            log_beliefs.extend(row.iter().map(|v| v.ln()));
            normalize_log(&mut log_beliefs[start..]);
        }
        Ok(Self {
            n_agents: rows.len(),
            n_hypotheses,
            log_beliefs,
            time: 0,
        })
    }

    /// From unnormalized log-beliefs (agent-major); each agent is renormalized.
    pub fn from_log_beliefs(
        n_agents: usize,
        n_hypotheses: usize,
        mut log_beliefs: Vec<f64>,
        time: u64,
    ) -> Result<Self, LearningError> {
        if log_beliefs.len() != n_agents * n_hypotheses {
            return Err(LearningError::Dimension(format!(
                "{} log-beliefs for {n_agents} agents x {n_hypotheses} hypotheses",
                log_beliefs.len()
            )));
        }
        for (agent, row) in log_beliefs.chunks_mut(n_hypotheses).enumerate() {
            if let Some(index) = row.iter().position(|v| !v.is_finite()) {
                return Err(LearningError::NonPositiveBelief {
                    agent,
                    hypothesis: Hypothesis::from_index(index),
                    value: row[index].exp(),
                });
            }
            normalize_log(row);
        }
        Ok(Self {
            n_agents,
            n_hypotheses,
            log_beliefs,
            time,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_hypotheses(&self) -> usize {
        self.n_hypotheses
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    /// Normalized log-beliefs of one agent.
    pub fn log_belief(&self, agent: usize) -> &[f64] {
        &self.log_beliefs[agent * self.n_hypotheses..(agent + 1) * self.n_hypotheses]
    }

    /// Probability vector of one agent. Entries may underflow to zero in
    /// this view even though the log representation stays finite.
    pub fn belief(&self, agent: usize) -> Vec<f64> {
        self.log_belief(agent).iter().map(|v| v.exp()).collect()
    }

    pub fn beliefs(&self) -> Vec<Vec<f64>> {
        (0..self.n_agents).map(|k| self.belief(k)).collect()
    }

    pub fn log_ratios(&self, theta0: Hypothesis) -> LogBeliefRatios {
        LogBeliefRatios::from_beliefs(self, theta0)
    }

    pub fn decisions(&self) -> Vec<Hypothesis> {
        (0..self.n_agents).map(|k| decide(self.log_belief(k))).collect()
    }
}

/// Per-agent `(H-1)`-vectors `lambda_k(theta) = log(mu_k(theta0) / mu_k(theta))`
/// over `theta != theta0` in increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct LogBeliefRatios {
    n_agents: usize,
    n_hypotheses: usize,
    theta0: Hypothesis,
    values: Vec<f64>,
}

impl LogBeliefRatios {
    pub fn zeros(n_agents: usize, n_hypotheses: usize, theta0: Hypothesis) -> Self {
        Self {
            n_agents,
            n_hypotheses,
            theta0,
            values: vec![0.0; n_agents * (n_hypotheses - 1)],
        }
    }

    pub fn from_values(
        n_agents: usize,
        n_hypotheses: usize,
        theta0: Hypothesis,
        values: Vec<f64>,
    ) -> Result<Self, LearningError> {
        if values.len() != n_agents * (n_hypotheses - 1) || theta0.index() >= n_hypotheses {
            return Err(LearningError::Dimension(format!(
                "{} ratios for {n_agents} agents x {} wrong hypotheses",
                values.len(),
                n_hypotheses - 1
            )));
        }
        Ok(Self {
            n_agents,
            n_hypotheses,
            theta0,
            values,
        })
    }

    pub fn from_beliefs(state: &BeliefState, theta0: Hypothesis) -> Self {
        let h = state.n_hypotheses();
        let mut values = Vec::with_capacity(state.n_agents() * (h - 1));
        for k in 0..state.n_agents() {
            let row = state.log_belief(k);
            let reference = row[theta0.index()];
            values.extend(
                wrong_hypotheses(h, theta0).map(|theta| reference - row[theta.index()]),
            );
        }
        Self {
            n_agents: state.n_agents(),
            n_hypotheses: h,
            theta0,
            values,
        }
    }

    /// Inverse map: `mu(theta0) ∝ 1`, `mu(theta) ∝ exp(-lambda(theta))`.
    pub fn to_belief_state(&self, time: u64) -> BeliefState {
        let h = self.n_hypotheses;
        let mut logs = Vec::with_capacity(self.n_agents * h);
        for k in 0..self.n_agents {
            let ratios = self.agent(k);
            let mut wrong = ratios.iter();
            for index in 0..h {
                if index == self.theta0.index() {
                    logs.push(0.0);
                } else {
                    logs.push(-wrong.next().copied().unwrap_or_default());
                }
            }
        }
        BeliefState::from_log_beliefs(self.n_agents, h, logs, time)
            .expect("finite ratios give finite log-beliefs")
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_hypotheses(&self) -> usize {
        self.n_hypotheses
    }

    pub fn theta0(&self) -> Hypothesis {
        self.theta0
    }

    pub fn dim(&self) -> usize {
        self.n_hypotheses - 1
    }

    pub fn agent(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.values[k * d..(k + 1) * d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn wrong_hypotheses(&self) -> impl Iterator<Item = Hypothesis> {
        wrong_hypotheses(self.n_hypotheses, self.theta0)
    }

    /// Decision of agent `k`: `theta0` unless some ratio is negative (or a
    /// zero ratio ties with a smaller index).
    pub fn decide(&self, k: usize) -> Hypothesis {
        let mut best = self.theta0;
        let mut best_log = 0.0;
        for (theta, &lambda) in self.wrong_hypotheses().zip(self.agent(k)) {
            let log = -lambda;
            if log > best_log || (log == best_log && theta < best) {
                best = theta;
                best_log = log;
            }
        }
        best
    }
}

/// `theta != theta0` in increasing order.
pub fn wrong_hypotheses(n_hypotheses: usize, theta0: Hypothesis) -> impl Iterator<Item = Hypothesis> {
    (0..n_hypotheses)
        .filter(move |&i| i != theta0.index())
        .map(Hypothesis::from_index)
}

fn check_inputs(
    prior: &BeliefState,
    observations: &[Observation],
    models: &[LikelihoodModel],
) -> Result<(), LearningError> {
    if observations.len() != prior.n_agents || models.len() != prior.n_agents {
        return Err(LearningError::Dimension(format!(
            "{} agents, {} observations, {} models",
            prior.n_agents,
            observations.len(),
            models.len()
        )));
    }
    if let Some(k) = models.iter().position(|m| m.n_hypotheses() != prior.n_hypotheses) {
        return Err(LearningError::Dimension(format!(
            "agent {k} model has {} hypotheses, beliefs have {}",
            models[k].n_hypotheses(),
            prior.n_hypotheses
        )));
    }
    Ok(())
}

/// `psi(theta) ∝ mu^{prior_weight}(theta) L^{data_weight}(xi|theta)`.
fn weighted_bayes(
    prior: &BeliefState,
    observations: &[Observation],
    models: &[LikelihoodModel],
    prior_weight: f64,
    data_weight: f64,
) -> Result<BeliefState, LearningError> {
    check_inputs(prior, observations, models)?;
    let h = prior.n_hypotheses;
    let mut logs = Vec::with_capacity(prior.log_beliefs.len());
    for (k, (model, obs)) in models.iter().zip(observations).enumerate() {
        let row = prior.log_belief(k);
        let start = logs.len();
        for index in 0..h {
            let log_lik = model.log_density(Hypothesis::from_index(index), obs.value);
            logs.push(prior_weight * row[index] + data_weight * log_lik);
        }
        let slot = &mut logs[start..];
        if slot.contains(&f64::NEG_INFINITY) {
            return Err(LearningError::ZeroLikelihood { agent: k });
        }
        normalize_log(slot);
    }
    Ok(BeliefState {
        n_agents: prior.n_agents,
        n_hypotheses: h,
        log_beliefs: logs,
        time: prior.time + 1,
    })
}

/// Adaptive Bayesian update: intermediate beliefs
/// `psi_k(theta) ∝ mu_k^{1-delta}(theta) L_k^{delta}(xi_k|theta)`.
pub fn adaptive_update(
    prior: &BeliefState,
    observations: &[Observation],
    delta: StepSize,
    models: &[LikelihoodModel],
) -> Result<BeliefState, LearningError> {
    let d = delta.value();
    weighted_bayes(prior, observations, models, 1.0 - d, d)
}

/// Geometric combination of neighbor intermediate beliefs:
/// `mu_k(theta) ∝ exp(sum_l a_{lk} log psi_l(theta))`.
pub fn combine(intermediate: &BeliefState, matrix: &CombinationMatrix) -> BeliefState {
    let n = intermediate.n_agents;
    let h = intermediate.n_hypotheses;
    assert_eq!(matrix.n_agents(), n, "matrix and beliefs disagree on N");
    let mut logs = vec![0.0; n * h];
    for k in 0..n {
        let out = &mut logs[k * h..(k + 1) * h];
        for l in 0..n {
            let a = matrix.weight(l, k);
            if a == 0.0 {
                continue;
            }
            for (o, &v) in out.iter_mut().zip(intermediate.log_belief(l)) {
                *o += a * v;
            }
        }
        normalize_log(out);
    }
    BeliefState {
        n_agents: n,
        n_hypotheses: h,
        log_beliefs: logs,
        time: intermediate.time,
    }
}

/// One ASL iteration: adaptive update then combination.
pub fn asl_step(
    state: &BeliefState,
    observations: &[Observation],
    delta: StepSize,
    models: &[LikelihoodModel],
    matrix: &CombinationMatrix,
) -> Result<BeliefState, LearningError> {
    Ok(combine(&adaptive_update(state, observations, delta, models)?, matrix))
}

/// Classic log-linear social learning: `psi ∝ mu L`, then combination.
pub fn classic_step(
    state: &BeliefState,
    observations: &[Observation],
    models: &[LikelihoodModel],
    matrix: &CombinationMatrix,
) -> Result<BeliefState, LearningError> {
    Ok(combine(&weighted_bayes(state, observations, models, 1.0, 1.0)?, matrix))
}

/// Per-agent log-likelihood ratios `x_k(theta)` for `theta != theta0`, agent-major.
pub fn log_likelihood_ratios(
    models: &[LikelihoodModel],
    observations: &[Observation],
    theta0: Hypothesis,
) -> Result<Vec<f64>, LearningError> {
    let mut out = Vec::new();
    for (model, obs) in models.iter().zip(observations) {
        for theta in wrong_hypotheses(model.n_hypotheses(), theta0) {
            out.push(model.log_likelihood_ratio(obs, theta0, theta)?);
        }
    }
    Ok(out)
}

fn diffuse(lam: &LogBeliefRatios, llrs: &[f64], memory: f64, gain: f64, matrix: &CombinationMatrix) -> LogBeliefRatios {
    let n = lam.n_agents;
    let d = lam.dim();
    assert_eq!(llrs.len(), n * d, "llr vector has wrong length");
    assert_eq!(matrix.n_agents(), n, "matrix and ratios disagree on N");
    let local: Vec<f64> = lam
        .values
        .iter()
        .zip(llrs)
        .map(|(&l, &x)| memory * l + gain * x)
        .collect();
    let mut values = vec![0.0; n * d];
    for k in 0..n {
        let out = &mut values[k * d..(k + 1) * d];
        for l in 0..n {
            let a = matrix.weight(l, k);
            if a == 0.0 {
                continue;
            }
            for (o, &v) in out.iter_mut().zip(&local[l * d..(l + 1) * d]) {
                *o += a * v;
            }
        }
    }
    LogBeliefRatios {
        n_agents: n,
        n_hypotheses: lam.n_hypotheses,
        theta0: lam.theta0,
        values,
    }
}

/// Diffusion recursion for log-belief ratios:
/// `lambda_k = (1-delta) sum_l a_{lk} lambda_l + delta sum_l a_{lk} x_l`.
pub fn log_ratio_step(
    lam: &LogBeliefRatios,
    llrs: &[f64],
    delta: StepSize,
    matrix: &CombinationMatrix,
) -> LogBeliefRatios {
    let d = delta.value();
    diffuse(lam, llrs, 1.0 - d, d, matrix)
}

/// Classic counterpart: `lambda = A^T (lambda + x)`.
pub fn classic_log_ratio_step(lam: &LogBeliefRatios, llrs: &[f64], matrix: &CombinationMatrix) -> LogBeliefRatios {
    diffuse(lam, llrs, 1.0, 1.0, matrix)
}

/// Maximum-belief hypothesis; ties go to the smallest index. Works equally
/// on probabilities or log-probabilities.
pub fn decide(belief: &[f64]) -> Hypothesis {
    let mut best = 0;
    for (index, &v) in belief.iter().enumerate().skip(1) {
        if v > belief[best] {
            best = index;
        }
    }
    Hypothesis::from_index(best)
}
