//! Monte Carlo engine: independent chains to steady state, step-size
//! sweeps, and paired ASL/classic runs under a changing true hypothesis.
//!
//! Run `r` of an experiment always draws from stream `first_stream + r` of
//! its domain, so output is identical for any worker count.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::learning::{
    asl_step, classic_step, log_likelihood_ratios, log_ratio_step, BeliefState, LearningError, LogBeliefRatios,
    StepSize,
};
use crate::likelihood::{Hypothesis, Observation};
use crate::netstats::{NetworkMoments, StatsError};
use crate::rng::{Domain, SeedStreams};
use crate::scenario::{Scenario, SimulationPath};

pub const MIN_BURN_IN: usize = 100;
/// Transient of the initial beliefs, relative to `min m_ave`, left after burn-in.
pub const BURN_IN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum McError {
    #[error("steady-state runs need a single-segment schedule, got {0} segments")]
    ScheduleNotConstant(usize),
    #[error("drift runs need at least two schedule segments")]
    NoChange,
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// What to run: step size, horizon, run count and which streams to use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunPlan {
    pub delta: StepSize,
    pub horizon: usize,
    pub n_runs: usize,
    pub first_stream: u64,
    pub path: SimulationPath,
}

impl RunPlan {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        Self {
            delta: scenario.delta,
            horizon: scenario.horizon,
            n_runs: scenario.n_runs,
            first_stream: 0,
            path: scenario.path,
        }
    }

    pub fn with_delta(mut self, delta: StepSize) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_runs(mut self, n_runs: usize) -> Self {
        self.n_runs = n_runs;
        self
    }

    pub fn with_first_stream(mut self, first_stream: u64) -> Self {
        self.first_stream = first_stream;
        self
    }

    pub fn with_path(mut self, path: SimulationPath) -> Self {
        self.path = path;
        self
    }
}

/// Final-instant log-belief ratios and decisions of independent runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateSamples {
    pub delta: f64,
    pub horizon: usize,
    pub theta0: Hypothesis,
    pub n_agents: usize,
    /// `H - 1`.
    pub dim: usize,
    /// `lambda[run]`, agent-major `(H-1)`-blocks.
    pub lambda: Vec<Vec<f64>>,
    pub decisions: Vec<Vec<Hypothesis>>,
    pub streams: Vec<u64>,
}

impl SteadyStateSamples {
    pub fn n_runs(&self) -> usize {
        self.lambda.len()
    }

    pub fn agent_samples(&self, agent: usize) -> Vec<Vec<f64>> {
        self.lambda
            .iter()
            .map(|run| run[agent * self.dim..(agent + 1) * self.dim].to_vec())
            .collect()
    }

    pub fn per_agent(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_agents).map(|k| self.agent_samples(k)).collect()
    }
}

fn observe<R: Rng + ?Sized>(scenario: &Scenario, truth: Hypothesis, time: u64, rng: &mut R) -> Vec<Observation> {
    scenario
        .models
        .iter()
        .enumerate()
        .map(|(k, model)| model.sample(truth, k, time, rng))
        .collect()
}

/// One chain of `plan.horizon` steps under `scenario.theta0()`. Both paths
/// consume the random stream identically.
pub fn run_chain<R: Rng + ?Sized>(
    scenario: &Scenario,
    plan: &RunPlan,
    rng: &mut R,
) -> Result<(LogBeliefRatios, Vec<Hypothesis>), LearningError> {
    let theta0 = scenario.theta0();
    let initial = BeliefState::from_beliefs(&scenario.initial_beliefs)?;
    match plan.path {
        SimulationPath::Belief => {
            let mut state = initial;
            for t in 1..=plan.horizon as u64 {
                let obs = observe(scenario, theta0, t, rng);
                state = asl_step(&state, &obs, plan.delta, &scenario.models, &scenario.matrix)?;
            }
            Ok((LogBeliefRatios::from_beliefs(&state, theta0), state.decisions()))
        }
        SimulationPath::LogRatio => {
            let mut lambda = LogBeliefRatios::from_beliefs(&initial, theta0);
            for t in 1..=plan.horizon as u64 {
                let obs = observe(scenario, theta0, t, rng);
                let llrs = log_likelihood_ratios(&scenario.models, &obs, theta0)?;
                lambda = log_ratio_step(&lambda, &llrs, plan.delta, &scenario.matrix);
            }
            let decisions = (0..scenario.n_agents()).map(|k| lambda.decide(k)).collect();
            Ok((lambda, decisions))
        }
    }
}

/// Independent chains, one steady-state sample per run, in run order.
pub fn run_steady_state(scenario: &Scenario, plan: &RunPlan) -> Result<SteadyStateSamples, McError> {
    if scenario.schedule.len() != 1 {
        return Err(McError::ScheduleNotConstant(scenario.schedule.len()));
    }
    let streams = SeedStreams::new(scenario.seed);
    let runs: Vec<(LogBeliefRatios, Vec<Hypothesis>)> = (0..plan.n_runs as u64)
        .into_par_iter()
        .map(|r| run_chain(scenario, plan, &mut streams.stream(Domain::SteadyState, plan.first_stream + r)))
        .collect::<Result<_, _>>()?;
    let (lambda, decisions) = runs.into_iter().map(|(l, d)| (l.values().to_vec(), d)).unzip();
    Ok(SteadyStateSamples {
        delta: plan.delta.value(),
        horizon: plan.horizon,
        theta0: scenario.theta0(),
        n_agents: scenario.n_agents(),
        dim: scenario.n_hypotheses() - 1,
        lambda,
        decisions,
        streams: (0..plan.n_runs as u64)
            .map(|r| SeedStreams::stream_id(Domain::SteadyState, plan.first_stream + r))
            .collect(),
    })
}

/// Steady-state samples for each step size, in grid order. Every step size
/// reuses the same run streams.
pub fn consistency_sweep(scenario: &Scenario, plan: &RunPlan, deltas: &[StepSize]) -> Result<Vec<SteadyStateSamples>, McError> {
    deltas
        .iter()
        .map(|&delta| run_steady_state(scenario, &plan.with_delta(delta)))
        .collect()
}

/// Smallest `i` with `(1-delta)^i |lambda_0|_max / min m_ave < 1e-9`,
/// clamped to `[100, horizon / 2]`.
pub fn burn_in_length(scenario: &Scenario, delta: StepSize, horizon: usize) -> Result<usize, McError> {
    let theta0 = scenario.theta0();
    let initial = BeliefState::from_beliefs(&scenario.initial_beliefs)?;
    let bound = LogBeliefRatios::from_beliefs(&initial, theta0)
        .values()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let ceiling = (horizon / 2).max(MIN_BURN_IN);
    if bound == 0.0 {
        return Ok(MIN_BURN_IN);
    }
    let moments = NetworkMoments::compute(&scenario.models, scenario.matrix.perron(), theta0)?;
    let scale = moments.m_ave.min();
    let i = ((BURN_IN_TOLERANCE * scale / bound).ln() / (1.0 - delta.value()).ln()).ceil();
    Ok((i.max(0.0) as usize).clamp(MIN_BURN_IN, ceiling))
}

/// Per-time beliefs (optional) and decisions of one learner; index `t - 1` holds time `t`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearnerTrace {
    pub beliefs: Vec<Vec<Vec<f64>>>,
    pub decisions: Vec<Vec<Hypothesis>>,
}

/// Recovery delays after one change, per agent. `None`: no recovery
/// before the next change or the end of the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeRecovery {
    pub change_time: u64,
    /// One-based label of the new true hypothesis.
    pub truth: usize,
    pub asl: Vec<Option<u64>>,
    pub classic: Vec<Option<u64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftTrace {
    pub run: u64,
    pub change_times: Vec<u64>,
    pub asl: LearnerTrace,
    pub classic: LearnerTrace,
    pub recovery: Vec<ChangeRecovery>,
}

/// Delay from `change` to the first instant from which `decisions` equal
/// `truth` for `window` consecutive steps, all before `end` (exclusive).
pub fn recovery_delay(
    decisions: &[Vec<Hypothesis>],
    agent: usize,
    change: u64,
    end: u64,
    truth: Hypothesis,
    window: usize,
) -> Option<u64> {
    let mut run = 0usize;
    for t in change.max(1)..end {
        let Some(row) = decisions.get(t as usize - 1) else {
            break;
        };
        if row[agent] == truth {
            run += 1;
            if run == window {
                return Some(t + 1 - window as u64 - change);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Runs ASL and the classic learner on one shared observation stream.
pub fn run_drift(scenario: &Scenario, run: u64, keep_beliefs: bool) -> Result<DriftTrace, McError> {
    let mut rng = SeedStreams::new(scenario.seed).stream(Domain::Drift, run);
    let initial = BeliefState::from_beliefs(&scenario.initial_beliefs)?;
    let (mut asl, mut classic) = (initial.clone(), initial);
    let mut asl_trace = LearnerTrace::default();
    let mut classic_trace = LearnerTrace::default();
    for t in 1..=scenario.horizon as u64 {
        let obs = observe(scenario, scenario.truth_at(t), t, &mut rng);
        asl = asl_step(&asl, &obs, scenario.delta, &scenario.models, &scenario.matrix)?;
        classic = classic_step(&classic, &obs, &scenario.models, &scenario.matrix)?;
        for (trace, state) in [(&mut asl_trace, &asl), (&mut classic_trace, &classic)] {
            trace.decisions.push(state.decisions());
            if keep_beliefs {
                trace.beliefs.push(state.beliefs());
            }
        }
    }
    let end = scenario.horizon as u64 + 1;
    let recovery = scenario
        .schedule
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, segment)| {
            let stop = scenario.schedule.get(i + 1).map_or(end, |next| next.start);
            let delays = |trace: &LearnerTrace| {
                (0..scenario.n_agents())
                    .map(|k| {
                        recovery_delay(&trace.decisions, k, segment.start, stop, segment.truth, scenario.recovery_window)
                    })
                    .collect()
            };
            ChangeRecovery {
                change_time: segment.start,
                truth: segment.truth.label(),
                asl: delays(&asl_trace),
                classic: delays(&classic_trace),
            }
        })
        .collect();
    Ok(DriftTrace {
        run,
        change_times: scenario.change_times(),
        asl: asl_trace,
        classic: classic_trace,
        recovery,
    })
}

/// Paired comparison for one change and one agent across runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeSummary {
    pub change_time: u64,
    pub truth: usize,
    /// One-based agent id.
    pub agent: usize,
    pub runs: usize,
    /// Runs where ASL recovered strictly earlier (an unrecovered classic run counts as later).
    pub asl_faster: usize,
    pub asl_unrecovered: usize,
    pub classic_unrecovered: usize,
    /// `None` when at least half the runs never recovered.
    pub asl_median: Option<f64>,
    pub classic_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftStudy {
    pub summaries: Vec<ChangeSummary>,
    /// `recoveries[run][change]`.
    pub recoveries: Vec<Vec<ChangeRecovery>>,
}

fn median(delays: &[Option<u64>]) -> Option<f64> {
    let mut sorted: Vec<f64> = delays.iter().map(|d| d.map_or(f64::INFINITY, |v| v as f64)).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let m = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    m.is_finite().then_some(m)
}

fn earlier(asl: Option<u64>, classic: Option<u64>) -> bool {
    match (asl, classic) {
        (Some(a), Some(c)) => a < c,
        (Some(_), None) => true,
        _ => false,
    }
}

/// `scenario.n_runs` paired drift runs; summaries are for `agent` (0-based).
pub fn drift_study(scenario: &Scenario, agent: usize) -> Result<DriftStudy, McError> {
    if scenario.schedule.len() < 2 {
        return Err(McError::NoChange);
    }
    let recoveries: Vec<Vec<ChangeRecovery>> = (0..scenario.n_runs as u64)
        .into_par_iter()
        .map(|r| run_drift(scenario, r, false).map(|trace| trace.recovery))
        .collect::<Result<_, _>>()?;
    let summaries = (0..scenario.schedule.len() - 1)
        .map(|c| {
            let asl: Vec<Option<u64>> = recoveries.iter().map(|r| r[c].asl[agent]).collect();
            let classic: Vec<Option<u64>> = recoveries.iter().map(|r| r[c].classic[agent]).collect();
            ChangeSummary {
                change_time: recoveries[0][c].change_time,
                truth: recoveries[0][c].truth,
                agent: agent + 1,
                runs: recoveries.len(),
                asl_faster: asl.iter().zip(&classic).filter(|(a, b)| earlier(**a, **b)).count(),
                asl_unrecovered: asl.iter().filter(|d| d.is_none()).count(),
                classic_unrecovered: classic.iter().filter(|d| d.is_none()).count(),
                asl_median: median(&asl),
                classic_median: median(&classic),
            }
        })
        .collect();
    Ok(DriftStudy { summaries, recoveries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{InitialBeliefs, ScenarioConfig, SegmentConfig};

    const BASE: &str = r#"
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
horizon = 300
runs = 8
seed = 99
"#;

    fn config() -> ScenarioConfig {
        ScenarioConfig::from_toml(BASE).unwrap()
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let scenario = config().build().unwrap();
        let plan = RunPlan::from_scenario(&scenario);
        let a = run_steady_state(&scenario, &plan).unwrap();
        let b = run_steady_state(&scenario, &plan).unwrap();
        assert_eq!(a, b);
        let mut other = config();
        other.experiment.seed = 100;
        let c = run_steady_state(&other.build().unwrap(), &plan).unwrap();
        assert_ne!(a.lambda, c.lambda);
        assert_eq!(a.n_runs(), 8);
        assert_eq!(a.agent_samples(3).len(), 8);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let scenario = config().build().unwrap();
        let plan = RunPlan::from_scenario(&scenario);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let parallel = pool.install(|| run_steady_state(&scenario, &plan).unwrap());
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_steady_state(&scenario, &plan).unwrap());
        assert_eq!(parallel, single);
    }

    #[test]
    fn belief_and_log_paths_agree() {
        let scenario = config().build().unwrap();
        let plan = RunPlan::from_scenario(&scenario).with_runs(4);
        let log = run_steady_state(&scenario, &plan.with_path(SimulationPath::LogRatio)).unwrap();
        let belief = run_steady_state(&scenario, &plan.with_path(SimulationPath::Belief)).unwrap();
        for (a, b) in log.lambda.iter().zip(&belief.lambda) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
        assert_eq!(log.decisions, belief.decisions);
    }

    #[test]
    fn burn_in_rules() {
        let scenario = config().build().unwrap();
        let delta = |d| StepSize::new(d).unwrap();
        assert_eq!(burn_in_length(&scenario, delta(0.1), 10_000).unwrap(), MIN_BURN_IN);
        let mut cfg = config();
        cfg.experiment.initial_beliefs = InitialBeliefs::Explicit(vec![vec![0.8, 0.1, 0.1]; 10]);
        let skewed = cfg.build().unwrap();
        let fast = burn_in_length(&skewed, delta(0.5), 10_000).unwrap();
        let mid = burn_in_length(&skewed, delta(0.1), 10_000).unwrap();
        let slow = burn_in_length(&skewed, delta(0.01), 10_000).unwrap();
        assert!(fast <= mid && mid < slow);
        assert!((150..600).contains(&mid), "{mid}");
        assert_eq!(burn_in_length(&skewed, delta(0.001), 10_000).unwrap(), 5_000);
    }

    #[test]
    fn recovery_delay_examples() {
        let h = Hypothesis::from_index;
        // Decisions for times 1..=10; change at 4, new truth 2, window 3.
        let d: Vec<Vec<Hypothesis>> = [0, 0, 0, 0, 2, 0, 2, 2, 2, 2].iter().map(|&i| vec![h(i)]).collect();
        assert_eq!(recovery_delay(&d, 0, 4, 11, h(2), 3), Some(3));
        assert_eq!(recovery_delay(&d, 0, 4, 9, h(2), 3), None);
        assert_eq!(recovery_delay(&d, 0, 4, 11, h(1), 3), None);
    }

    #[test]
    fn single_segment_drift_has_no_recovery() {
        let scenario = config().build().unwrap();
        let trace = run_drift(&scenario, 0, true).unwrap();
        assert!(trace.recovery.is_empty());
        assert_eq!(trace.asl.decisions.len(), scenario.horizon);
        assert_eq!(trace.classic.beliefs.len(), scenario.horizon);
        assert!(matches!(drift_study(&scenario, 0), Err(McError::NoChange)));
    }

    #[test]
    fn asl_adapts_faster_than_classic() {
        let mut cfg = config();
        cfg.schedule.segments = vec![SegmentConfig { start: 0, truth: 1 }, SegmentConfig { start: 200, truth: 3 }];
        cfg.experiment.horizon = 1500;
        let study = drift_study(&cfg.build().unwrap(), 0).unwrap();
        let s = &study.summaries[0];
        assert_eq!(s.runs, 8);
        assert!(s.asl_faster >= 7, "{s:?}");
        assert!(s.asl_median.unwrap() < s.classic_median.unwrap());
    }

    #[test]
    fn steady_state_rejects_changing_truth() {
        let mut cfg = config();
        cfg.schedule.segments.push(SegmentConfig { start: 50, truth: 2 });
        let scenario = cfg.build().unwrap();
        assert!(matches!(
            run_steady_state(&scenario, &RunPlan::from_scenario(&scenario)),
            Err(McError::ScheduleNotConstant(2))
        ));
    }
}
