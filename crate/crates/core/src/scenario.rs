//! Scenario files (TOML) and the modelling-assumption checks run on them.
//!
//! Agents and hypotheses are numbered from 1 in files and diagnostics and
//! from 0 in code.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CombinationMatrix, GraphError, Topology};
use crate::learning::StepSize;
use crate::likelihood::{Family, Hypothesis, LikelihoodError, LikelihoodModel};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario fails validation:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(violations: &[Violation]) -> String {
    violations.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub network: NetworkConfig,
    pub likelihoods: LikelihoodConfig,
    pub schedule: ScheduleConfig,
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub lemma: Option<LemmaConfig>,
}

fn default_name() -> String {
    "scenario".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    Complete,
    DirectedRing,
    RingWithChords,
    Edges,
    Weights,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub agents: usize,
    pub topology: TopologyKind,
    #[serde(default)]
    pub chords: usize,
    #[serde(default)]
    pub topology_seed: u64,
    #[serde(default = "yes")]
    pub self_loops: bool,
    /// Directed `(from, to)` links for `topology = "edges"`.
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
    /// Links listed once and added in both directions.
    #[serde(default)]
    pub undirected: bool,
    /// `weights[l][k] = a_{lk}` for `topology = "weights"`.
    #[serde(default)]
    pub weights: Vec<Vec<f64>>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodConfig {
    pub family: Family,
    /// Display names, one per hypothesis.
    #[serde(default)]
    pub hypotheses: Vec<String>,
    /// Laplace scale or Gaussian standard deviation shared by all groups.
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(rename = "group")]
    pub groups: Vec<GroupConfig>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub agents: Vec<usize>,
    #[serde(default)]
    pub means: Vec<f64>,
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub pmfs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub segments: Vec<SegmentConfig>,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    /// First time instant (1-based) whose data follow `truth`.
    pub start: u64,
    pub truth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimulationPath {
    /// Adaptive update and geometric combination of belief vectors.
    Belief,
    /// Linear diffusion of log-belief ratios.
    #[default]
    LogRatio,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum InitialBeliefs {
    /// `"uniform"`.
    Named(String),
    Explicit(Vec<Vec<f64>>),
}

impl Default for InitialBeliefs {
    fn default() -> Self {
        InitialBeliefs::Named("uniform".into())
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub delta: f64,
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    #[serde(default)]
    pub path: SimulationPath,
    #[serde(default)]
    pub initial_beliefs: InitialBeliefs,
    /// Step sizes for `sweep` (default: 50 log-spaced values in `[0.001, 1)`)
    /// and `normality` (default: `delta` only).
    #[serde(default)]
    pub sweep_deltas: Vec<f64>,
    #[serde(default)]
    pub normality_deltas: Vec<f64>,
    /// Realizations per step size in `sweep`.
    #[serde(default = "one_usize")]
    pub sweep_runs: usize,
    #[serde(default = "default_recovery_window")]
    pub recovery_window: usize,
}

fn default_recovery_window() -> usize {
    50
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZKind {
    Gaussian,
    Rademacher,
    Deterministic,
    /// Log-likelihood ratio of one agent of this scenario.
    Llr,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaConfig {
    pub deltas: Vec<f64>,
    pub runs: usize,
    #[serde(default = "one")]
    pub alpha: f64,
    /// Optional geometric approach `alpha_m = alpha + kappa beta^m`.
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    pub z: ZKind,
    #[serde(default = "one")]
    pub z_mean: f64,
    #[serde(default = "one")]
    pub z_std_dev: f64,
    /// Agent and wrong hypothesis for `z = "llr"` (1-based).
    #[serde(default = "one_usize")]
    pub agent: usize,
    #[serde(default = "two_usize")]
    pub theta: usize,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn two_usize() -> usize {
    2
}

/// One reason a scenario is rejected. Agents and hypotheses are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    Structure { message: String },
    NotStronglyConnected { components: Vec<Vec<usize>> },
    Network { message: String },
    Likelihood { agent: usize, message: String },
    NonPositiveInitialBelief { agent: usize, hypothesis: usize, value: f64 },
    InfiniteDivergence { agent: usize, truth: usize, hypothesis: usize },
    NotIdentifiable { truth: usize, hypothesis: usize },
    Schedule { message: String },
    Experiment { message: String },
}

/// The modelling assumptions every scenario must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assumption {
    PositiveInitialBeliefs,
    FiniteDivergences,
    GlobalIdentifiability,
}

impl Violation {
    /// The modelling assumption this violation breaks, if any.
    pub fn assumption(&self) -> Option<Assumption> {
        match self {
            Violation::NonPositiveInitialBelief { .. } => Some(Assumption::PositiveInitialBeliefs),
            Violation::InfiniteDivergence { .. } => Some(Assumption::FiniteDivergences),
            Violation::NotIdentifiable { .. } => Some(Assumption::GlobalIdentifiability),
            _ => None,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Structure { message } => write!(f, "malformed scenario: {message}"),
            Violation::NotStronglyConnected { components } => {
                write!(f, "network is not strongly connected; components {components:?}")
            }
            Violation::Network { message } => write!(f, "network: {message}"),
            Violation::Likelihood { agent, message } => write!(f, "agent {agent}: {message}"),
            Violation::NonPositiveInitialBelief { agent, hypothesis, value } => write!(
                f,
                "positive initial beliefs violated: agent {agent} gives hypothesis {hypothesis} initial belief {value}"
            ),
            Violation::InfiniteDivergence { agent, truth, hypothesis } => write!(
                f,
                "finite KL divergences violated: agent {agent} has infinite d(theta={hypothesis}) when theta0={truth}"
            ),
            Violation::NotIdentifiable { truth, hypothesis } => write!(
                f,
                "global identifiability violated: no agent has positive d(theta={hypothesis}) when theta0={truth}"
            ),
            Violation::Schedule { message } => write!(f, "schedule: {message}"),
            Violation::Experiment { message } => write!(f, "experiment: {message}"),
        }
    }
}

/// KL divergences `d_k(theta)` for one true hypothesis; `None` is infinite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlTable {
    pub truth: usize,
    pub hypotheses: Vec<usize>,
    /// `rows[k][j]` for agent `k + 1` and `hypotheses[j]`.
    pub rows: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub perron: Option<Vec<f64>>,
    pub kl_tables: Vec<KlTable>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// Human-readable summary: Perron vector, KL tables and violations.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(pi) = &self.perron {
            out.push_str("Perron eigenvector:\n");
            for (k, p) in pi.iter().enumerate() {
                out.push_str(&format!("  agent {:>3}  {p:.12}\n", k + 1));
            }
        }
        for table in &self.kl_tables {
            out.push_str(&format!("KL divergences d_k(theta), theta0 = {}:\n  agent", table.truth));
            for h in &table.hypotheses {
                out.push_str(&format!("  {:>12}", format!("theta={h}")));
            }
            out.push('\n');
            for (k, row) in table.rows.iter().enumerate() {
                out.push_str(&format!("  {:>5}", k + 1));
                for v in row {
                    match v {
                        Some(v) => out.push_str(&format!("  {v:>12.6}")),
                        None => out.push_str(&format!("  {:>12}", "inf")),
                    }
                }
                out.push('\n');
            }
        }
        if self.violations.is_empty() {
            out.push_str("all assumptions hold\n");
        } else {
            for v in &self.violations {
                out.push_str(&format!("violation: {v}\n"));
            }
        }
        out
    }
}

/// Time-ordered list of `(start, truth)` segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub start: u64,
    pub truth: Hypothesis,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub topology: Topology,
    pub matrix: CombinationMatrix,
    pub models: Vec<LikelihoodModel>,
    pub hypothesis_labels: Vec<String>,
    pub schedule: Vec<Segment>,
    pub delta: StepSize,
    pub horizon: usize,
    pub n_runs: usize,
    pub seed: u64,
    /// One probability vector per agent.
    pub initial_beliefs: Vec<Vec<f64>>,
    pub path: SimulationPath,
    pub sweep_deltas: Vec<f64>,
    pub normality_deltas: Vec<f64>,
    pub sweep_runs: usize,
    pub recovery_window: usize,
    pub lemma: Option<LemmaConfig>,
}

impl Scenario {
    pub fn n_agents(&self) -> usize {
        self.models.len()
    }

    pub fn n_hypotheses(&self) -> usize {
        self.models[0].n_hypotheses()
    }

    /// True hypothesis of the first segment.
    pub fn theta0(&self) -> Hypothesis {
        self.schedule[0].truth
    }

    /// True hypothesis generating the data of instant `time` (1-based).
    pub fn truth_at(&self, time: u64) -> Hypothesis {
        self.schedule
            .iter()
            .rev()
            .find(|s| s.start <= time)
            .unwrap_or(&self.schedule[0])
            .truth
    }

    pub fn change_times(&self) -> Vec<u64> {
        self.schedule.iter().skip(1).map(|s| s.start).collect()
    }

    pub fn hypothesis_label(&self, theta: Hypothesis) -> String {
        self.hypothesis_labels
            .get(theta.index())
            .cloned()
            .unwrap_or_else(|| theta.to_string())
    }
}

/// `n` log-spaced step sizes `0.001 * 1000^(j/n)`, `j = 0..n`, all below one.
pub fn log_spaced_deltas(n: usize) -> Vec<f64> {
    (0..n).map(|j| 0.001 * 1000f64.powf(j as f64 / n as f64)).collect()
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    fn n_hypotheses(&self) -> usize {
        self.likelihoods
            .groups
            .iter()
            .map(|g| if self.likelihoods.family == Family::Discrete { g.pmfs.len() } else { g.means.len() })
            .max()
            .unwrap_or(0)
    }

    fn build_topology(&self, violations: &mut Vec<Violation>) -> Option<(Topology, CombinationMatrix)> {
        let net = &self.network;
        let n = net.agents;
        let to_violation = |e: GraphError| match e {
            GraphError::NotStronglyConnected { components } => Violation::NotStronglyConnected {
                components: components.into_iter().map(|c| c.into_iter().map(|k| k + 1).collect()).collect(),
            },
            other => Violation::Network { message: other.to_string() },
        };
        let topology = match net.topology {
            TopologyKind::Complete => Topology::complete(n),
            TopologyKind::DirectedRing => Topology::directed_ring(n, net.self_loops),
            TopologyKind::RingWithChords => Topology::ring_with_chords(n, net.chords, net.topology_seed),
            TopologyKind::Edges => {
                if net.edges.iter().flatten().any(|&a| a == 0 || a > n) {
                    violations.push(Violation::Network {
                        message: format!("edge endpoints must lie in 1..={n}"),
                    });
                    return None;
                }
                let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
                for &[a, b] in &net.edges {
                    edges.insert((a - 1, b - 1));
                    if net.undirected {
                        edges.insert((b - 1, a - 1));
                    }
                }
                Topology::new(n, edges, net.self_loops)
            }
            TopologyKind::Weights => {
                let rows = net.weights.len();
                if rows != n || net.weights.iter().any(|r| r.len() != n) {
                    violations.push(Violation::Network {
                        message: format!("weights must be a {n} x {n} matrix"),
                    });
                    return None;
                }
                let w = nalgebra::DMatrix::from_fn(n, n, |l, k| net.weights[l][k]);
                return match CombinationMatrix::from_weights(w) {
                    Ok(matrix) => Some((Topology::from_weights(matrix.weights()).expect("validated"), matrix)),
                    Err(e) => {
                        violations.push(to_violation(e));
                        None
                    }
                };
            }
        };
        let topology = match topology {
            Ok(t) => t,
            Err(e) => {
                violations.push(to_violation(e));
                return None;
            }
        };
        match CombinationMatrix::averaging(&topology) {
            Ok(matrix) => Some((topology, matrix)),
            Err(e) => {
                violations.push(to_violation(e));
                None
            }
        }
    }

    fn build_models(&self, violations: &mut Vec<Violation>) -> Option<Vec<LikelihoodModel>> {
        let n = self.network.agents;
        let lik = &self.likelihoods;
        let mut models: Vec<Option<LikelihoodModel>> = vec![None; n];
        let mut ok = true;
        for group in &lik.groups {
            let model = match lik.family {
                Family::Discrete => LikelihoodModel::discrete_family(group.pmfs.clone()),
                family => match group.scale.or(lik.scale) {
                    None => {
                        violations.push(Violation::Structure {
                            message: "continuous families need a scale".into(),
                        });
                        return None;
                    }
                    Some(scale) if family == Family::Laplace => LikelihoodModel::laplace_family(&group.means, scale),
                    Some(scale) => LikelihoodModel::gaussian_family(&group.means, scale),
                },
            };
            for &agent in &group.agents {
                if agent == 0 || agent > n {
                    violations.push(Violation::Structure {
                        message: format!("likelihood group names agent {agent} outside 1..={n}"),
                    });
                    ok = false;
                    continue;
                }
                match &model {
                    Ok(m) => {
                        if models[agent - 1].replace(m.clone()).is_some() {
                            violations.push(Violation::Structure {
                                message: format!("agent {agent} appears in two likelihood groups"),
                            });
                            ok = false;
                        }
                    }
                    Err(e) => {
                        violations.push(Violation::Likelihood {
                            agent,
                            message: e.to_string(),
                        });
                        ok = false;
                    }
                }
            }
        }
        let h = self.n_hypotheses();
        let mut out = Vec::with_capacity(n);
        for (k, m) in models.into_iter().enumerate() {
            match m {
                Some(m) if m.n_hypotheses() == h => out.push(m),
                Some(m) => {
                    violations.push(Violation::Structure {
                        message: format!("agent {} has {} hypotheses, expected {h}", k + 1, m.n_hypotheses()),
                    });
                    ok = false;
                }
                None => {
                    if ok {
                        violations.push(Violation::Structure {
                            message: format!("agent {} has no likelihood model", k + 1),
                        });
                    }
                    ok = false;
                }
            }
        }
        ok.then_some(out)
    }

    fn initial_beliefs(&self, h: usize, violations: &mut Vec<Violation>) -> Option<Vec<Vec<f64>>> {
        let n = self.network.agents;
        match &self.experiment.initial_beliefs {
            InitialBeliefs::Named(name) if name == "uniform" => Some(vec![vec![1.0 / h as f64; h]; n]),
            InitialBeliefs::Named(name) => {
                violations.push(Violation::Structure {
                    message: format!("unknown initial belief rule {name:?}"),
                });
                None
            }
            InitialBeliefs::Explicit(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != h) {
                    violations.push(Violation::Structure {
                        message: format!("initial beliefs must be {n} rows of {h} entries"),
                    });
                    return None;
                }
                let mut ok = true;
                for (k, row) in rows.iter().enumerate() {
                    for (j, &value) in row.iter().enumerate() {
                        if !(value > 0.0 && value.is_finite()) {
                            violations.push(Violation::NonPositiveInitialBelief {
                                agent: k + 1,
                                hypothesis: j + 1,
                                value,
                            });
                            ok = false;
                        }
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        violations.push(Violation::Structure {
                            message: format!("initial beliefs of agent {} sum to {sum}", k + 1),
                        });
                        ok = false;
                    }
                }
                ok.then(|| rows.clone())
            }
        }
    }

    fn schedule(&self, h: usize, violations: &mut Vec<Violation>) -> Option<Vec<Segment>> {
        let segs = &self.schedule.segments;
        let before = violations.len();
        if segs.is_empty() {
            violations.push(Violation::Schedule {
                message: "at least one segment is required".into(),
            });
        } else if segs[0].start > 1 {
            violations.push(Violation::Schedule {
                message: "the first segment must start at time 0 or 1".into(),
            });
        }
        if segs.windows(2).any(|w| w[1].start <= w[0].start) {
            violations.push(Violation::Schedule {
                message: "segment start times must be strictly increasing".into(),
            });
        }
        for s in segs {
            if s.truth == 0 || s.truth > h {
                violations.push(Violation::Schedule {
                    message: format!("true hypothesis {} outside 1..={h}", s.truth),
                });
            }
        }
        (violations.len() == before).then(|| {
            segs.iter()
                .map(|s| Segment {
                    start: s.start,
                    truth: Hypothesis::from_index(s.truth - 1),
                })
                .collect()
        })
    }

    fn check_experiment(&self, violations: &mut Vec<Violation>) {
        let e = &self.experiment;
        for &d in std::iter::once(&e.delta).chain(&e.sweep_deltas).chain(&e.normality_deltas) {
            if !(d > 0.0 && d < 1.0) {
                violations.push(Violation::Experiment {
                    message: format!("step size {d} outside (0, 1)"),
                });
            }
        }
        if e.horizon == 0 || e.runs == 0 || e.sweep_runs == 0 {
            violations.push(Violation::Experiment {
                message: "horizon and runs must be positive".into(),
            });
        }
        if e.recovery_window == 0 {
            violations.push(Violation::Experiment {
                message: "recovery window must be positive".into(),
            });
        }
    }

    /// Checks connectivity and the modelling assumptions for every true hypothesis in
    /// the schedule, and tabulates the KL divergences and Perron vector.
    pub fn validate(&self) -> ValidationReport {
        self.assemble().0
    }

    fn assemble(&self) -> (ValidationReport, Option<Scenario>) {
        let mut violations = Vec::new();
        if self.network.agents == 0 {
            violations.push(Violation::Structure {
                message: "at least one agent is required".into(),
            });
        }
        let h = self.n_hypotheses();
        if !self.likelihoods.hypotheses.is_empty() && self.likelihoods.hypotheses.len() != h {
            violations.push(Violation::Structure {
                message: format!("{} hypothesis names for {h} hypotheses", self.likelihoods.hypotheses.len()),
            });
        }
        let network = if self.network.agents > 0 { self.build_topology(&mut violations) } else { None };
        let models = self.build_models(&mut violations);
        let initial = self.initial_beliefs(h.max(2), &mut violations);
        let schedule = self.schedule(h, &mut violations);
        self.check_experiment(&mut violations);

        let mut kl_tables = Vec::new();
        if let (Some(models), Some(schedule)) = (&models, &schedule) {
            let truths: BTreeSet<Hypothesis> = schedule.iter().map(|s| s.truth).collect();
            for theta0 in truths {
                kl_tables.push(kl_table(models, theta0, &mut violations));
            }
        }

        let report = ValidationReport {
            perron: network.as_ref().map(|(_, m)| m.perron().iter().copied().collect()),
            kl_tables,
            violations,
        };
        let scenario = match (report.is_valid(), network, models, initial, schedule) {
            (true, Some((topology, matrix)), Some(models), Some(initial_beliefs), Some(schedule)) => {
                let e = &self.experiment;
                Some(Scenario {
                    name: self.name.clone(),
                    topology,
                    matrix,
                    models,
                    hypothesis_labels: self.likelihoods.hypotheses.clone(),
                    schedule,
                    delta: StepSize::new(e.delta).expect("checked"),
                    horizon: e.horizon,
                    n_runs: e.runs,
                    seed: e.seed,
                    initial_beliefs,
                    path: e.path,
                    sweep_deltas: if e.sweep_deltas.is_empty() { log_spaced_deltas(50) } else { e.sweep_deltas.clone() },
                    normality_deltas: if e.normality_deltas.is_empty() { vec![e.delta] } else { e.normality_deltas.clone() },
                    sweep_runs: e.sweep_runs,
                    recovery_window: e.recovery_window,
                    lemma: self.lemma.clone(),
                })
            }
            _ => None,
        };
        (report, scenario)
    }

    /// Builds the scenario, rejecting it if any check fails.
    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        match self.assemble() {
            (_, Some(scenario)) => Ok(scenario),
            (report, None) => Err(ScenarioError::Invalid(report.violations)),
        }
    }
}

fn kl_table(models: &[LikelihoodModel], theta0: Hypothesis, violations: &mut Vec<Violation>) -> KlTable {
    let h = models[0].n_hypotheses();
    let wrong: Vec<Hypothesis> = crate::learning::wrong_hypotheses(h, theta0).collect();
    let mut identified = vec![false; wrong.len()];
    let rows = models
        .iter()
        .enumerate()
        .map(|(k, model)| {
            wrong
                .iter()
                .enumerate()
                .map(|(j, &theta)| match model.kl_divergence(theta0, theta) {
                    Ok(d) => {
                        identified[j] |= d > 0.0;
                        Some(d)
                    }
                    Err(LikelihoodError::InfiniteDivergence { .. }) => {
                        violations.push(Violation::InfiniteDivergence {
                            agent: k + 1,
                            truth: theta0.label(),
                            hypothesis: theta.label(),
                        });
                        None
                    }
                    Err(e) => {
                        violations.push(Violation::Likelihood {
                            agent: k + 1,
                            message: e.to_string(),
                        });
                        None
                    }
                })
                .collect()
        })
        .collect();
    for (j, theta) in wrong.iter().enumerate() {
        if !identified[j] {
            violations.push(Violation::NotIdentifiable {
                truth: theta0.label(),
                hypothesis: theta.label(),
            });
        }
    }
    KlTable {
        truth: theta0.label(),
        hypotheses: wrong.iter().map(|t| t.label()).collect(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_GROUPS: &str = r#"
name = "three-groups"

[network]
agents = 10
topology = "ring-with-chords"
chords = 5
topology_seed = 1

[likelihoods]
family = "laplace"
scale = 1.0

[[likelihoods.group]]
agents = [1, 2, 3]
means = [0.5, 0.5, 1.5]

[[likelihoods.group]]
agents = [4, 5, 6]
means = [0.5, 1.5, 1.5]

[[likelihoods.group]]
agents = [7, 8, 9, 10]
means = [0.5, 1.0, 0.5]

[schedule]
segments = [{ start = 0, truth = 1 }]

[experiment]
delta = 0.1
horizon = 1000
runs = 100
seed = 11
"#;

    fn config() -> ScenarioConfig {
        ScenarioConfig::from_toml(THREE_GROUPS).unwrap()
    }

    #[test]
    fn three_group_laplace_scenario_is_valid() {
        let cfg = config();
        let report = cfg.validate();
        assert!(report.is_valid(), "{}", report.render());
        let table = &report.kl_tables[0];
        assert_eq!(table.hypotheses, vec![2, 3]);
        // Zeros exactly where likelihoods coincide.
        for k in 0..3 {
            assert_eq!(table.rows[k][0], Some(0.0));
        }
        for k in 6..10 {
            assert_eq!(table.rows[k][1], Some(0.0));
        }
        let pi: f64 = report.perron.unwrap().iter().sum();
        assert!((pi - 1.0).abs() < 1e-12);
        let scenario = cfg.build().unwrap();
        assert_eq!(scenario.n_agents(), 10);
        assert_eq!(scenario.sweep_deltas.len(), 50);
        assert!(scenario.sweep_deltas.iter().all(|&d| (0.001..1.0).contains(&d)));
    }

    #[test]
    fn globally_unidentifiable_is_rejected() {
        let mut cfg = config();
        for g in &mut cfg.likelihoods.groups {
            g.means = vec![0.5, 0.5, 0.5];
        }
        let report = cfg.validate();
        let hits: Vec<_> = report.violations.iter().filter(|v| v.assumption() == Some(Assumption::GlobalIdentifiability)).collect();
        assert_eq!(
            hits,
            vec![
                &Violation::NotIdentifiable { truth: 1, hypothesis: 2 },
                &Violation::NotIdentifiable { truth: 1, hypothesis: 3 }
            ]
        );
        assert!(matches!(cfg.build(), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn zero_initial_belief_names_agent_and_hypothesis() {
        let mut cfg = config();
        let mut rows = vec![vec![1.0 / 3.0; 3]; 10];
        rows[4] = vec![0.5, 0.5, 0.0];
        cfg.experiment.initial_beliefs = InitialBeliefs::Explicit(rows);
        let report = cfg.validate();
        assert_eq!(
            report.violations,
            vec![Violation::NonPositiveInitialBelief { agent: 5, hypothesis: 3, value: 0.0 }]
        );
        assert!(report.violations[0].to_string().contains("agent 5"));
    }

    #[test]
    fn infinite_kl_is_rejected() {
        let text = THREE_GROUPS
            .replace("family = \"laplace\"\nscale = 1.0", "family = \"discrete\"")
            .replace("means = [0.5, 0.5, 1.5]", "pmfs = [[0.5, 0.5], [1.0, 0.0], [0.2, 0.8]]")
            .replace("means = [0.5, 1.5, 1.5]", "pmfs = [[0.5, 0.5], [0.3, 0.7], [0.2, 0.8]]")
            .replace("means = [0.5, 1.0, 0.5]", "pmfs = [[0.5, 0.5], [0.4, 0.6], [0.2, 0.8]]");
        let report = ScenarioConfig::from_toml(&text).unwrap().validate();
        assert_eq!(report.violations.len(), 3);
        for (i, v) in report.violations.iter().enumerate() {
            assert_eq!(*v, Violation::InfiniteDivergence { agent: i + 1, truth: 1, hypothesis: 2 });
        }
        assert_eq!(report.kl_tables[0].rows[0][0], None);
    }

    #[test]
    fn disconnected_network_is_rejected() {
        let mut cfg = config();
        cfg.network.topology = TopologyKind::Edges;
        cfg.network.undirected = true;
        cfg.network.edges = (1..10).filter(|&a| a != 5).map(|a| [a, a + 1]).collect();
        let report = cfg.validate();
        assert!(matches!(report.violations[0], Violation::NotStronglyConnected { .. }));
    }

    #[test]
    fn schedule_rules() {
        let mut cfg = config();
        cfg.schedule.segments = vec![
            SegmentConfig { start: 0, truth: 1 },
            SegmentConfig { start: 200, truth: 3 },
        ];
        let scenario = cfg.build().unwrap();
        assert_eq!(scenario.truth_at(199), Hypothesis::from_index(0));
        assert_eq!(scenario.truth_at(200), Hypothesis::from_index(2));
        assert_eq!(scenario.change_times(), vec![200]);
        cfg.schedule.segments[1].start = 0;
        assert!(cfg.validate().violations.iter().any(|v| matches!(v, Violation::Schedule { .. })));
    }

    #[test]
    fn unknown_fields_fail_to_parse() {
        let text = THREE_GROUPS.replace("runs = 100", "runs = 100\nrnus = 3");
        assert!(matches!(ScenarioConfig::from_toml(&text), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn explicit_edges_match_generator() {
        let cfg = config();
        let generated = cfg.build().unwrap();
        let mut explicit = cfg.clone();
        explicit.network.topology = TopologyKind::Edges;
        explicit.network.edges = generated
            .topology
            .edges()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| [a + 1, b + 1])
            .collect();
        let rebuilt = explicit.build().unwrap();
        assert_eq!(rebuilt.matrix, generated.matrix);
    }
}
