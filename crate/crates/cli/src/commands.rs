//! Subcommand implementations and the summaries they write.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use asl_core::learning::StepSize;
use asl_core::likelihood::Hypothesis;
use asl_core::mc::{self, RunPlan, SteadyStateSamples};
use asl_core::netstats::{self, ExpansionGap, NetworkMoments, NormalityReport};
use asl_core::rng::SeedStreams;
use asl_core::scenario::{Scenario, ScenarioConfig, ZKind};
use asl_core::series::{self, AlphaRule, SeriesSpec, ZDistribution};
use asl_core::stats::{self, BinomialInterval};

use crate::output::{self, new_manifest, num, OutputDir};
use crate::{CliError, Command, CommonArgs};

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Scenario file loaded and validated, with the seed override applied.
pub struct Loaded {
    pub bytes: Vec<u8>,
    pub config: ScenarioConfig,
    pub scenario: Scenario,
}

pub fn load(args: &CommonArgs) -> Result<Loaded, CliError> {
    let bytes = fs::read(&args.scenario)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", args.scenario.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::Validation(e.to_string()))?;
    let mut config = ScenarioConfig::from_toml(&text).map_err(|e| CliError::Validation(e.to_string()))?;
    if let Some(seed) = args.seed {
        config.experiment.seed = seed;
    }
    let scenario = config.build().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(Loaded { bytes, config, scenario })
}

pub fn dispatch(command: &Command) -> Result<String, CliError> {
    let args = command.args();
    if let Command::Validate(_) = command {
        return validate(args);
    }
    let out_root = args
        .out
        .clone()
        .ok_or_else(|| CliError::Runtime("--out is required".into()))?;
    let loaded = load(args)?;
    let pool = {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = args.workers {
            builder = builder.num_threads(n);
        }
        builder.build().map_err(runtime)?
    };
    let manifest = new_manifest(
        command.name(),
        &args.scenario,
        &loaded.bytes,
        loaded.scenario.seed,
        args.workers,
    );
    let mut out = OutputDir::create(&out_root, manifest).map_err(runtime)?;
    let result = pool.install(|| match command {
        Command::Simulate(_) => simulate(&loaded.scenario, &mut out),
        Command::Sweep(_) => sweep(&loaded.scenario, &mut out),
        Command::Normality(_) => normality(&loaded.scenario, &mut out),
        Command::Drift(_) => drift(&loaded.scenario, &mut out),
        Command::Lemma(_) => lemma(&loaded.scenario, &mut out),
        Command::Validate(_) => unreachable!(),
    });
    match result {
        Ok(()) => {
            let root = out.finish().map_err(runtime)?;
            Ok(format!("{} outputs written to {}\n", command.name(), root.display()))
        }
        Err(e) => {
            out.abandon();
            Err(e)
        }
    }
}

/// Prints the KL tables, Perron vector and any violations; writes nothing.
pub fn validate(args: &CommonArgs) -> Result<String, CliError> {
    let text = fs::read_to_string(&args.scenario)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", args.scenario.display())))?;
    let config = ScenarioConfig::from_toml(&text).map_err(|e| CliError::Validation(e.to_string()))?;
    let report = config.validate();
    if report.is_valid() {
        Ok(report.render())
    } else {
        print!("{}", report.render());
        Err(CliError::Validation(format!("{} violation(s)", report.violations.len())))
    }
}

fn labels(wrong: &[Hypothesis]) -> Vec<usize> {
    wrong.iter().map(|h| h.label()).collect()
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn moments(scenario: &Scenario) -> Result<NetworkMoments, CliError> {
    NetworkMoments::compute(&scenario.models, scenario.matrix.perron(), scenario.theta0()).map_err(runtime)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    pub agent: usize,
    pub mean: Vec<f64>,
    /// Unbiased sample covariance; needs at least 30 runs.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub gap: Option<ExpansionGap>,
    /// Needs at least 100 runs.
    pub error_rate: Option<BinomialInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyStateSummary {
    pub delta: f64,
    pub horizon: usize,
    pub runs: usize,
    pub theta0: usize,
    pub hypotheses: Vec<usize>,
    pub perron: Vec<f64>,
    pub m_ave: Vec<f64>,
    pub c_ave: Vec<Vec<f64>>,
    /// `C_ave delta / 2`.
    pub limit_covariance: Vec<Vec<f64>>,
    pub agents: Vec<AgentSummary>,
}

pub fn summarize_steady_state(scenario: &Scenario, samples: &SteadyStateSamples) -> Result<SteadyStateSummary, CliError> {
    let moments = moments(scenario)?;
    let limit = netstats::gaussian_limit(&moments, samples.delta);
    let expansion = netstats::moment_expansion(&samples.per_agent()).ok();
    let rates = netstats::error_probability(&samples.decisions, samples.theta0).ok();
    let agents = (0..samples.n_agents)
        .map(|k| {
            let per_agent = samples.agent_samples(k);
            let empirical = expansion.as_ref().map(|e| &e[k]);
            AgentSummary {
                agent: k + 1,
                mean: vec_of(&stats::mean_vector(&per_agent)),
                covariance: empirical.map(|e| rows_of(&e.covariance)),
                gap: empirical.map(|e| netstats::expansion_gap(&moments, samples.delta, e)),
                error_rate: rates.as_ref().map(|r| r[k]),
            }
        })
        .collect();
    Ok(SteadyStateSummary {
        delta: samples.delta,
        horizon: samples.horizon,
        runs: samples.n_runs(),
        theta0: samples.theta0.label(),
        hypotheses: labels(&moments.wrong),
        perron: vec_of(scenario.matrix.perron()),
        m_ave: vec_of(&moments.m_ave),
        c_ave: rows_of(&moments.c_ave),
        limit_covariance: rows_of(&limit.covariance),
        agents,
    })
}

pub const STEADY_STATE_COLUMNS: [&str; 6] = ["run", "stream", "agent", "hypothesis", "lambda", "decision"];

fn steady_state_rows(samples: &SteadyStateSamples, wrong: &[usize], delta_column: Option<f64>) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (r, (lambda, decisions)) in samples.lambda.iter().zip(&samples.decisions).enumerate() {
        for k in 0..samples.n_agents {
            for (j, theta) in wrong.iter().enumerate() {
                let mut row = Vec::with_capacity(7);
                if let Some(d) = delta_column {
                    row.push(num(d));
                }
                row.extend([
                    r.to_string(),
                    samples.streams[r].to_string(),
                    (k + 1).to_string(),
                    theta.to_string(),
                    num(lambda[k * samples.dim + j]),
                    decisions[k].label().to_string(),
                ]);
                rows.push(row);
            }
        }
    }
    rows
}

/// Rebuilds the samples behind `steady_state.csv`.
pub fn read_steady_state(scenario: &Scenario, path: &Path) -> Result<SteadyStateSamples, CliError> {
    let (columns, rows) = output::read_csv(path).map_err(runtime)?;
    if columns != STEADY_STATE_COLUMNS {
        return Err(CliError::Runtime(format!("unexpected columns {columns:?}")));
    }
    let n = scenario.n_agents();
    let dim = scenario.n_hypotheses() - 1;
    let per_run = n * dim;
    let parse_u = |s: &str| s.parse::<u64>().map_err(runtime);
    let mut lambda = Vec::new();
    let mut decisions = Vec::new();
    let mut streams = Vec::new();
    for chunk in rows.chunks(per_run) {
        let mut values = Vec::with_capacity(per_run);
        let mut decided = vec![scenario.theta0(); n];
        for row in chunk {
            values.push(row[4].parse::<f64>().map_err(runtime)?);
            let agent = parse_u(&row[2])? as usize - 1;
            decided[agent] = Hypothesis::from_label(parse_u(&row[5])? as usize)
                .ok_or_else(|| CliError::Runtime("bad decision label".into()))?;
        }
        streams.push(parse_u(&chunk[0][1])?);
        lambda.push(values);
        decisions.push(decided);
    }
    Ok(SteadyStateSamples {
        delta: scenario.delta.value(),
        horizon: scenario.horizon,
        theta0: scenario.theta0(),
        n_agents: n,
        dim,
        lambda,
        decisions,
        streams,
    })
}

fn simulate(scenario: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    let samples = mc::run_steady_state(scenario, &RunPlan::from_scenario(scenario)).map_err(runtime)?;
    let summary = summarize_steady_state(scenario, &samples)?;
    let rows = steady_state_rows(&samples, &summary.hypotheses, None);
    out.write_csv("steady_state.csv", &STEADY_STATE_COLUMNS, &rows).map_err(runtime)?;
    out.write_json("summary.json", &summary).map_err(runtime)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SweepPoint {
    delta: f64,
    runs: usize,
    /// `5 sqrt(c_ave(theta, theta) delta / 2)` per wrong hypothesis.
    band_halfwidth: Vec<f64>,
    max_abs_deviation: f64,
    fraction_within_band: f64,
    error_rate: Option<Vec<BinomialInterval>>,
}

#[derive(Debug, Clone, Serialize)]
struct SweepSummary {
    theta0: usize,
    hypotheses: Vec<usize>,
    m_ave: Vec<f64>,
    points: Vec<SweepPoint>,
}

fn sweep(scenario: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    let moments = moments(scenario)?;
    let deltas: Vec<StepSize> = scenario
        .sweep_deltas
        .iter()
        .map(|&d| StepSize::new(d).map_err(runtime))
        .collect::<Result<_, _>>()?;
    let plan = RunPlan::from_scenario(scenario).with_runs(scenario.sweep_runs);
    let sweeps = mc::consistency_sweep(scenario, &plan, &deltas).map_err(runtime)?;
    let wrong = labels(&moments.wrong);
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for samples in &sweeps {
        let band: Vec<f64> = (0..moments.dim())
            .map(|j| 5.0 * (moments.c_ave[(j, j)] * samples.delta / 2.0).sqrt())
            .collect();
        let (mut inside, mut total, mut worst) = (0usize, 0usize, 0.0f64);
        for (r, lambda) in samples.lambda.iter().enumerate() {
            for k in 0..samples.n_agents {
                for j in 0..samples.dim {
                    let v = lambda[k * samples.dim + j];
                    let dev = (v - moments.m_ave[j]).abs();
                    worst = worst.max(dev);
                    inside += usize::from(dev <= band[j]);
                    total += 1;
                    rows.push(vec![
                        num(samples.delta),
                        r.to_string(),
                        (k + 1).to_string(),
                        wrong[j].to_string(),
                        num(v),
                        num(moments.m_ave[j]),
                        num(band[j]),
                    ]);
                }
            }
        }
        points.push(SweepPoint {
            delta: samples.delta,
            runs: samples.n_runs(),
            band_halfwidth: band,
            max_abs_deviation: worst,
            fraction_within_band: inside as f64 / total as f64,
            error_rate: netstats::error_probability(&samples.decisions, samples.theta0).ok(),
        });
    }
    out.write_csv(
        "sweep.csv",
        &["delta", "run", "agent", "hypothesis", "lambda", "m_ave", "band_halfwidth"],
        &rows,
    )
    .map_err(runtime)?;
    out.write_json(
        "sweep_summary.json",
        &SweepSummary {
            theta0: scenario.theta0().label(),
            hypotheses: wrong,
            m_ave: vec_of(&moments.m_ave),
            points,
        },
    )
    .map_err(runtime)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct AgentNormality {
    agent: usize,
    limiting: NormalityReport,
    empirical: NormalityReport,
    gap: ExpansionGap,
}

#[derive(Debug, Clone, Serialize)]
struct NormalityEntry {
    delta: f64,
    runs: usize,
    agents: Vec<AgentNormality>,
}

#[derive(Debug, Clone, Serialize)]
struct NormalitySummary {
    theta0: usize,
    hypotheses: Vec<usize>,
    m_ave: Vec<f64>,
    c_ave: Vec<Vec<f64>>,
    entries: Vec<NormalityEntry>,
}

fn normality(scenario: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    let moments = moments(scenario)?;
    let wrong = labels(&moments.wrong);
    let d = moments.dim();
    let mut entries = Vec::new();
    let mut sample_rows = Vec::new();
    let mut ellipse_rows = Vec::new();
    for &delta in &scenario.normality_deltas {
        let step = StepSize::new(delta).map_err(runtime)?;
        let samples = mc::run_steady_state(scenario, &RunPlan::from_scenario(scenario).with_delta(step)).map_err(runtime)?;
        let limit = netstats::gaussian_limit(&moments, delta);
        let empirical = netstats::moment_expansion(&samples.per_agent()).map_err(runtime)?;
        let mut agents = Vec::new();
        for (k, emp) in empirical.iter().enumerate() {
            let agent_samples = samples.agent_samples(k);
            let limiting = netstats::normality_diagnostics(&agent_samples, &limit).map_err(runtime)?;
            let empirical_report = netstats::normality_diagnostics(&agent_samples, emp).map_err(runtime)?;
            for (kind, report) in [("limiting", &limiting), ("empirical", &empirical_report)] {
                for e in &report.ellipses {
                    let mut row = vec![num(delta), (k + 1).to_string(), kind.to_string(), num(e.level), num(e.radius)];
                    row.extend(e.center.iter().map(|&v| num(v)));
                    row.extend(e.semi_axes.iter().map(|&v| num(v)));
                    row.extend(e.directions.iter().flatten().map(|&v| num(v)));
                    row.push(e.rotation.map_or(String::new(), num));
                    ellipse_rows.push(row);
                }
            }
            agents.push(AgentNormality {
                agent: k + 1,
                gap: netstats::expansion_gap(&moments, delta, emp),
                limiting,
                empirical: empirical_report,
            });
        }
        sample_rows.extend(steady_state_rows(&samples, &wrong, Some(delta)));
        entries.push(NormalityEntry {
            delta,
            runs: samples.n_runs(),
            agents,
        });
    }
    let mut ellipse_columns: Vec<String> = ["delta", "agent", "approximation", "level", "radius"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    ellipse_columns.extend((1..=d).map(|j| format!("center_{j}")));
    ellipse_columns.extend((1..=d).map(|i| format!("semi_axis_{i}")));
    ellipse_columns.extend((1..=d).flat_map(|i| (1..=d).map(move |j| format!("direction_{i}_{j}"))));
    ellipse_columns.push("rotation".into());
    let ellipse_refs: Vec<&str> = ellipse_columns.iter().map(String::as_str).collect();
    let mut sample_columns = vec!["delta"];
    sample_columns.extend(STEADY_STATE_COLUMNS);
    out.write_csv("normality_samples.csv", &sample_columns, &sample_rows).map_err(runtime)?;
    out.write_csv("ellipses.csv", &ellipse_refs, &ellipse_rows).map_err(runtime)?;
    out.write_json(
        "normality.json",
        &NormalitySummary {
            theta0: scenario.theta0().label(),
            hypotheses: wrong,
            m_ave: vec_of(&moments.m_ave),
            c_ave: rows_of(&moments.c_ave),
            entries,
        },
    )
    .map_err(runtime)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct RecoveryReport {
    hypotheses: Vec<String>,
    recovery_window: usize,
    delta: f64,
    horizon: usize,
    summaries: Vec<mc::ChangeSummary>,
    runs: Vec<Vec<mc::ChangeRecovery>>,
}

fn drift(scenario: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    let trace = mc::run_drift(scenario, 0, true).map_err(runtime)?;
    let h = scenario.n_hypotheses();
    let names: Vec<String> = (0..h).map(|i| scenario.hypothesis_label(Hypothesis::from_index(i))).collect();
    let mut columns = vec!["time".to_string(), "truth".into(), "learner".into(), "agent".into(), "decision".into()];
    columns.extend((1..=h).map(|i| format!("belief_{i}")));
    let column_refs: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    for (learner, lt) in [("asl", &trace.asl), ("classic", &trace.classic)] {
        for (t, (beliefs, decisions)) in lt.beliefs.iter().zip(&lt.decisions).enumerate() {
            let time = t as u64 + 1;
            for (k, belief) in beliefs.iter().enumerate() {
                let mut row = vec![
                    time.to_string(),
                    scenario.truth_at(time).label().to_string(),
                    learner.to_string(),
                    (k + 1).to_string(),
                    decisions[k].label().to_string(),
                ];
                row.extend(belief.iter().map(|&b| num(b)));
                rows.push(row);
            }
        }
    }
    out.write_csv("drift_trace.csv", &column_refs, &rows).map_err(runtime)?;
    let (summaries, runs) = if scenario.schedule.len() > 1 {
        let study = mc::drift_study(scenario, 0).map_err(runtime)?;
        (study.summaries, study.recoveries)
    } else {
        (Vec::new(), Vec::new())
    };
    out.write_json(
        "recovery.json",
        &RecoveryReport {
            hypotheses: names,
            recovery_window: scenario.recovery_window,
            delta: scenario.delta.value(),
            horizon: scenario.horizon,
            summaries,
            runs,
        },
    )
    .map_err(runtime)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct LemmaDelta {
    delta: f64,
    horizon: usize,
    moments: series::MonteCarloMoments,
    stability: series::StabilityReport,
}

#[derive(Debug, Clone, Serialize)]
struct LemmaReport {
    alpha_limit: f64,
    z_mean: f64,
    z_variance: f64,
    per_delta: Vec<LemmaDelta>,
    weak_law: series::WeakLawReport,
    clt: series::CltReport,
    mixing: series::MixingCheck,
}

/// Runs used for the Cauchy check at each step size.
const STABILITY_RUNS: usize = 1000;

fn lemma(scenario: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    let cfg = scenario
        .lemma
        .as_ref()
        .ok_or_else(|| CliError::Validation("scenario has no [lemma] section".into()))?;
    let invalid = |e: series::SeriesError| CliError::Validation(e.to_string());
    let z = match cfg.z {
        ZKind::Gaussian => ZDistribution::gaussian(cfg.z_mean, cfg.z_std_dev).map_err(invalid)?,
        ZKind::Rademacher => ZDistribution::Rademacher,
        ZKind::Deterministic => ZDistribution::Deterministic(cfg.z_mean),
        ZKind::Llr => {
            let model = scenario
                .models
                .get(cfg.agent.wrapping_sub(1))
                .ok_or_else(|| CliError::Validation(format!("no agent {}", cfg.agent)))?;
            let theta = Hypothesis::from_label(cfg.theta)
                .ok_or_else(|| CliError::Validation(format!("bad hypothesis {}", cfg.theta)))?;
            ZDistribution::llr(model.clone(), scenario.theta0(), theta).map_err(invalid)?
        }
    };
    let alpha = match (cfg.kappa, cfg.beta) {
        (Some(kappa), Some(beta)) => AlphaRule::Geometric {
            alpha: cfg.alpha,
            kappa,
            beta,
        },
        _ => AlphaRule::Constant(cfg.alpha),
    };
    let first = *cfg
        .deltas
        .first()
        .ok_or_else(|| CliError::Validation("lemma needs at least one step size".into()))?;
    let step = |d: f64| StepSize::new(d).map_err(|e| CliError::Validation(e.to_string()));
    let base = SeriesSpec::new(step(first)?, alpha.clone(), z.clone()).map_err(invalid)?;
    let streams = SeedStreams::new(scenario.seed);
    let mut per_delta = Vec::new();
    for &d in &cfg.deltas {
        let spec = SeriesSpec::new(step(d)?, alpha.clone(), z.clone()).map_err(invalid)?;
        per_delta.push(LemmaDelta {
            delta: d,
            horizon: spec.horizon,
            moments: series::monte_carlo_moments(&spec, cfg.runs, &streams).map_err(runtime)?,
            stability: series::verify_stability(&spec, cfg.runs.min(STABILITY_RUNS), &streams),
        });
    }
    let report = LemmaReport {
        alpha_limit: alpha.limit(),
        z_mean: z.mean(),
        z_variance: z.variance(),
        per_delta,
        weak_law: series::verify_weak_law(&base, &cfg.deltas, cfg.runs, &streams).map_err(invalid)?,
        clt: series::verify_clt(&base, &cfg.deltas, cfg.runs, &streams).map_err(invalid)?,
        mixing: series::geometric_mixing(&scenario.matrix, 400),
    };
    out.write_json("lemma.json", &report).map_err(runtime)?;
    Ok(())
}
