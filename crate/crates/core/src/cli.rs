//! Configuration files, output schemas, and the command implementations
//! behind the `drofair` binary.
//!
//! `run` writes three files into the output directory:
//! `trajectories.csv` (one row per replicate, round, and group),
//! `summary.json` (per-round quartiles across replicates and per-run worst
//! risk), and `meta.json` (resolved configuration, library version, seeds).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dro::{
    chi_square_divergence, minimize_dual_eta, worst_case_weights, ChiSquareBall, DualConstant, DualParams,
};
use crate::dynamics::{DynamicsConfig, Learner, RetentionFunction, Trainer};
use crate::error::{Error, Result};
use crate::models::{LossFamily, ModelParams, OptimizerSettings};
use crate::population::{validate_simplex, GroupMixture, GroupSpec};
use crate::scenarios::{build_scenario, run_comparison, Comparison, RoundSummary, RunSummary, Scenario, ScenarioName, ScenarioSpec};
use crate::stability::{analyze_erm, StabilityAnalysis};

pub const CSV_HEADER: &str = "replicate,t,group,trainer,lambda,alpha,risk,accuracy";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    /// Trainers to compare; empty means the scenario's own (ERM and DRO).
    #[serde(default)]
    pub trainers: Vec<Trainer>,
    pub output_dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Global seed; replicate `r` runs with `seed + r`.
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn new(scenario: ScenarioSpec, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            scenario,
            trainers: Vec::new(),
            output_dir: output_dir.into(),
            formats: default_formats(),
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let field = unknown_field(&e.to_string()).unwrap_or_else(|| "config".into());
            Error::invalid(field, e.to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::invalid("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Builds the scenario with the config's seed and trainers applied.
    pub fn resolve(&self) -> Result<Scenario> {
        let mut spec = self.scenario.clone();
        spec.overrides.seed = Some(self.seed);
        let mut scenario = build_scenario(&spec)?;
        if !self.trainers.is_empty() {
            for t in &self.trainers {
                t.validate()?;
            }
            scenario.trainers = self.trainers.clone();
        }
        if self.formats.is_empty() {
            return Err(Error::invalid("formats", "choose at least one of csv, json"));
        }
        Ok(scenario)
    }
}

/// Pulls the offending name out of a serde "unknown field" message.
fn unknown_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split('`').next().map(str::to_string)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub replicate: usize,
    pub t: usize,
    pub group: usize,
    pub trainer: String,
    pub lambda: f64,
    pub alpha: f64,
    pub risk: f64,
    pub accuracy: Option<f64>,
}

impl TrajectoryRow {
    fn write_csv(&self, out: &mut String) {
        let accuracy = self.accuracy.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            self.replicate, self.t, self.group, self.trainer, self.lambda, self.alpha, self.risk, accuracy
        );
    }
}

pub fn trajectory_rows(scenario: &Scenario, comparison: &Comparison) -> Vec<TrajectoryRow> {
    let accuracy = scenario.reports_accuracy();
    let mut rows = Vec::new();
    for run in &comparison.runs {
        for (t, state) in run.trajectory.states.iter().enumerate() {
            for (k, risk) in state.risks.values().iter().enumerate() {
                rows.push(TrajectoryRow {
                    replicate: run.replicate,
                    t,
                    group: k,
                    trainer: run.trainer.clone(),
                    lambda: state.lambda[k],
                    alpha: state.alpha[k],
                    risk: *risk,
                    accuracy: accuracy.then(|| 1.0 - risk),
                });
            }
        }
    }
    rows
}

pub fn rows_to_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        r.write_csv(&mut out);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rounds: Vec<RoundSummary>,
    pub runs: Vec<RunSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub config: RunConfig,
    pub scenario: Scenario,
    pub library_version: String,
    /// Seed used by each replicate.
    pub replicate_seeds: Vec<u64>,
}

/// Why a command failed; maps onto the process exit status.
#[derive(Debug)]
pub enum Failure {
    /// Unreadable or invalid input (exit 1).
    Input(Error),
    /// Failure while computing (exit 2).
    Runtime(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &Error {
        match self {
            Failure::Input(e) | Failure::Runtime(e) => e,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub written: Vec<PathBuf>,
}

/// Runs the configured comparison and writes the output files.
pub fn cmd_run(config_path: &Path) -> std::result::Result<RunOutcome, Failure> {
    let config = RunConfig::load(config_path).map_err(Failure::Input)?;
    execute_run(&config)
}

pub fn execute_run(config: &RunConfig) -> std::result::Result<RunOutcome, Failure> {
    let scenario = config.resolve().map_err(Failure::Input)?;
    fs::create_dir_all(&config.output_dir)
        .map_err(|e| Failure::Input(Error::invalid("output_dir", e.to_string())))?;
    let comparison = run_comparison(&scenario).map_err(Failure::Runtime)?;
    let mut written = Vec::new();
    let write = |name: &str, body: String, written: &mut Vec<PathBuf>| {
        let path = config.output_dir.join(name);
        fs::write(&path, body).map_err(|e| Failure::Runtime(Error::Io(e)))?;
        written.push(path);
        Ok::<_, Failure>(())
    };
    if config.formats.contains(&Format::Csv) {
        let rows = trajectory_rows(&scenario, &comparison);
        write("trajectories.csv", rows_to_csv(&rows), &mut written)?;
    }
    if config.formats.contains(&Format::Json) {
        let summary = Summary {
            rounds: comparison.rounds.clone(),
            runs: comparison.per_run.clone(),
        };
        let json = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Runtime(e.into()))?;
        write("summary.json", json, &mut written)?;
    }
    let meta = Meta {
        config: config.clone(),
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        replicate_seeds: (0..scenario.replicates)
            .map(|r| scenario.seed.wrapping_add(r as u64))
            .collect(),
        scenario,
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Failure::Runtime(e.into()))?;
    write("meta.json", json, &mut written)?;
    Ok(RunOutcome { written })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroSolveReport {
    /// `null` when `α_min = 1`, where the infimum is not attained.
    pub eta_star: Option<f64>,
    pub dual_value: f64,
    pub primal_value: f64,
    pub worst_case_weights: Vec<f64>,
    pub attained_divergence: f64,
}

/// Parses one finite number per nonblank line.
pub fn parse_column(text: &str, field: &str) -> Result<Vec<f64>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::invalid(field, format!("line {}: `{l}` is not a finite number", i + 1)))
        })
        .collect()
}

/// Solves the dual over `η` and the primal worst case at the same radius.
pub fn dro_solve(losses: &[f64], base: &[f64], dual: &DualParams) -> Result<DroSolveReport> {
    if losses.is_empty() {
        return Err(Error::invalid("losses", "need at least one loss"));
    }
    validate_simplex("base", base, 1e-9)?;
    let solution = minimize_dual_eta(losses, base, dual, 1e-10)?;
    let ball = ChiSquareBall::new(dual.effective_radius())?;
    let worst = worst_case_weights(losses, base, ball)?;
    let primal_value = worst.objective(losses);
    let attained_divergence = chi_square_divergence(&worst.weights, base)?;
    Ok(DroSolveReport {
        eta_star: Some(solution.eta_star).filter(|e| e.is_finite()),
        dual_value: solution.value,
        primal_value,
        worst_case_weights: worst.weights,
        attained_divergence,
    })
}

pub fn cmd_dro_solve(
    losses_path: &Path,
    base_path: Option<&Path>,
    alpha_min: f64,
    convention: DualConstant,
) -> std::result::Result<DroSolveReport, Failure> {
    let read = |p: &Path, field: &str| {
        fs::read_to_string(p)
            .map_err(|e| Error::invalid(field, format!("cannot read {}: {e}", p.display())))
            .and_then(|t| parse_column(&t, field))
    };
    let losses = read(losses_path, "losses").map_err(Failure::Input)?;
    let base = match base_path {
        Some(p) => read(p, "base").map_err(Failure::Input)?,
        None => vec![1.0 / losses.len() as f64; losses.len()],
    };
    if base.len() != losses.len() {
        return Err(Failure::Input(Error::invalid(
            "base",
            format!("{} weights for {} losses", base.len(), losses.len()),
        )));
    }
    let dual = DualParams::with_convention(alpha_min, convention).map_err(Failure::Input)?;
    dro_solve(&losses, &base, &dual).map_err(|e| match e {
        Error::Invalid { .. } => Failure::Input(e),
        other => Failure::Runtime(other),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticExample {
    /// Point masses at ±1, squared loss, `ν = exp(-x)`, `b = (100, 100)`.
    MeanToy,
    /// One unit Gaussian, squared loss, `ν = exp(-x)`, `b = 100`.
    SingleGroup,
}

impl std::str::FromStr for AnalyticExample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_toy" => Ok(AnalyticExample::MeanToy),
            "single_group" => Ok(AnalyticExample::SingleGroup),
            other => Err(Error::invalid("analytic", format!("unknown example `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StabilityOutput {
    Analyzed(StabilityAnalysis),
    NotApplicable { reason: String },
}

pub fn analytic_setup(example: AnalyticExample) -> Result<(GroupMixture, Learner, DynamicsConfig)> {
    let learner = Learner {
        train_family: LossFamily::SquaredMean,
        eval_family: LossFamily::SquaredMean,
        init: ModelParams::new(vec![0.0]),
        optimizer: OptimizerSettings::default(),
    };
    Ok(match example {
        AnalyticExample::MeanToy => (
            GroupMixture::new(
                vec![GroupSpec::point_mass(vec![1.0])?, GroupSpec::point_mass(vec![-1.0])?],
                vec![0.5, 0.5],
            )?,
            learner,
            DynamicsConfig::new(vec![100.0, 100.0], RetentionFunction::Exponential, 1),
        ),
        AnalyticExample::SingleGroup => {
            let mut cfg = DynamicsConfig::new(vec![100.0], RetentionFunction::Exponential, 1);
            cfg.risk_eval.per_group = 20_000;
            (
                GroupMixture::new(vec![GroupSpec::gaussian(vec![0.0], 1.0)?], vec![1.0])?,
                learner,
                cfg,
            )
        }
    })
}

fn stability_of(mixture: &GroupMixture, learner: &Learner, config: &DynamicsConfig) -> std::result::Result<StabilityOutput, Failure> {
    match analyze_erm(mixture, learner, config) {
        Ok(a) => Ok(StabilityOutput::Analyzed(a)),
        Err(Error::NotApplicable(reason)) => Ok(StabilityOutput::NotApplicable { reason }),
        Err(e) => Err(Failure::Runtime(e)),
    }
}

/// Stability of the ERM fixed point reached from a symmetric start.
pub fn cmd_stability_analytic(example: AnalyticExample) -> std::result::Result<StabilityOutput, Failure> {
    let (mixture, learner, config) = analytic_setup(example).map_err(Failure::Runtime)?;
    stability_of(&mixture, &learner, &config)
}

pub fn cmd_stability_scenario(name: ScenarioName) -> std::result::Result<StabilityOutput, Failure> {
    let scenario = build_scenario(&ScenarioSpec::new(name)).map_err(Failure::Input)?;
    if scenario.curves.is_some() {
        return Ok(StabilityOutput::NotApplicable {
            reason: "curve-driven dynamics have no trained model".into(),
        });
    }
    if scenario.learner.train_family != scenario.learner.eval_family && scenario.learner.train_family.is_strongly_convex() {
        return Ok(StabilityOutput::NotApplicable {
            reason: "retention is driven by a loss other than the training loss".into(),
        });
    }
    let mut config = scenario.dynamics.clone();
    // iterate from the symmetric start b, where symmetric fixed points live
    config.initial_lambda = None;
    stability_of(&scenario.mixture, &scenario.learner, &config)
}
