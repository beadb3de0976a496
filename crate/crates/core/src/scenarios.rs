//! Canonical experiments: each named scenario fully specifies the groups,
//! losses, retention model, and trainers, and can be adjusted through
//! [`Overrides`] before it is built.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dro::DualConstant;
use crate::dynamics::{
    isotone_fit, simulate, simulate_from_curves, DynamicsConfig, EtaMode, IsotoneCurve, Learner,
    Monotone, RetentionFunction, Trainer, Trajectory,
};
use crate::error::{Error, Result};
use crate::models::{LossFamily, ModelParams, OptimizerSettings};
use crate::population::{
    sample_mixture, training_view, validate_simplex, EvalPool, GroupMixture, GroupSpec, WEIGHT_SUM_TOLERANCE,
};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    MeanToy,
    #[serde(rename = "median_1d")]
    Median1d,
    SimplexMedian,
    TwoGaussianClassification,
    CurveDriven,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 5] = [
        ScenarioName::MeanToy,
        ScenarioName::Median1d,
        ScenarioName::SimplexMedian,
        ScenarioName::TwoGaussianClassification,
        ScenarioName::CurveDriven,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::MeanToy => "mean_toy",
            ScenarioName::Median1d => "median_1d",
            ScenarioName::SimplexMedian => "simplex_median",
            ScenarioName::TwoGaussianClassification => "two_gaussian_classification",
            ScenarioName::CurveDriven => "curve_driven",
        }
    }
}

impl std::str::FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::invalid("scenario", format!("unknown scenario `{s}`")))
    }
}

/// Optional replacements for scenario defaults. Unset fields keep the
/// scenario's own value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub new_users_per_round: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_lambda: Option<Vec<f64>>,
    /// Initial mixture weights; starting counts become `w_k Σ_j b_j`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retention: Option<RetentionFunction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<EtaMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dual_constant: Option<DualConstant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampled: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_pool_per_group: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_per_group: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_starts: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: ScenarioName,
    #[serde(default)]
    pub overrides: Overrides,
}

impl ScenarioSpec {
    pub fn new(name: ScenarioName) -> Self {
        ScenarioSpec {
            name,
            overrides: Overrides::default(),
        }
    }

    pub fn with(name: ScenarioName, overrides: Overrides) -> Self {
        ScenarioSpec { name, overrides }
    }
}

/// Retention and risk curves per group for the curve-driven pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub retention: Vec<IsotoneCurve>,
    pub risk: Vec<IsotoneCurve>,
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub mixture: GroupMixture,
    pub learner: Learner,
    pub dynamics: DynamicsConfig,
    pub trainers: Vec<Trainer>,
    pub replicates: usize,
    pub seed: u64,
    /// Draw each replicate's starting counts uniformly at random inside the
    /// box `[0.2 b, 1.8 b]` instead of using `dynamics.initial()`.
    pub random_starts: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<CurveSet>,
    /// Modeling assumptions that fill gaps in the experiment description.
    pub assumptions: Vec<String>,
}

impl Scenario {
    pub fn num_groups(&self) -> usize {
        self.mixture.num_groups()
    }

    /// Output label for each trainer: `erm` and `dro` unless a kind repeats,
    /// in which case repeated robust trainers are named by their `α_min`.
    pub fn trainer_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .trainers
            .iter()
            .map(|t| {
                let repeated = self.trainers.iter().filter(|o| o.label() == t.label()).count() > 1;
                match t {
                    Trainer::Dro { alpha_min, .. } if repeated => format!("dro_{alpha_min}"),
                    _ => t.label().to_string(),
                }
            })
            .collect();
        for i in 0..labels.len() {
            if labels[..i].contains(&labels[i]) {
                labels[i] = format!("{}_{i}", labels[i]);
            }
        }
        labels
    }

    /// Label of `trainer` within this scenario.
    pub fn trainer_label(&self, trainer: &Trainer) -> String {
        match self.trainers.iter().position(|t| t == trainer) {
            Some(i) => self.trainer_labels().swap_remove(i),
            None => trainer.label().to_string(),
        }
    }

    pub fn dro_trainer(&self) -> Option<&Trainer> {
        self.trainers.iter().find(|t| matches!(t, Trainer::Dro { .. }))
    }

    /// Accuracy is reported when the retention-driving loss is zero-one.
    pub fn reports_accuracy(&self) -> bool {
        self.learner.eval_family == LossFamily::ZeroOne
    }
}

/// Labeling normals for the two-Gaussian task: unit vectors `(∓1/3, √8/3)`.
pub fn two_gaussian_normals() -> [Vec<f64>; 2] {
    let h = 8f64.sqrt() / 3.0;
    [vec![-1.0 / 3.0, h], vec![1.0 / 3.0, h]]
}

/// Corners of an equilateral triangle at distance one from the origin.
pub fn simplex_corners() -> Vec<Vec<f64>> {
    (0..3)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
            vec![a.cos(), a.sin()]
        })
        .collect()
}

fn uniform(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Synthetic retention and risk observations for the curve-driven
/// pipeline: group 0 is better served than group 1 at every share, and the
/// raw points carry seeded noise so the isotone fit has violators to pool.
pub fn synthetic_curves(seed: u64) -> Result<CurveSet> {
    let mut rng = rng_from_seed(seed);
    let alphas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut retention = Vec::new();
    let mut risk = Vec::new();
    for (base, slope) in [(0.70, 0.15), (0.55, 0.15)] {
        let ret: Vec<(f64, f64)> = alphas
            .iter()
            .map(|a| (*a, (base + slope * a + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0)))
            .collect();
        let rk: Vec<(f64, f64)> = alphas
            .iter()
            .map(|a| (*a, (1.0 - base) - 0.2 * a + rng.random_range(-0.03..0.03)))
            .collect();
        retention.push(isotone_fit(&ret, Monotone::Increasing)?);
        risk.push(isotone_fit(&rk, Monotone::Decreasing)?);
    }
    // keep the dominance strict after fitting
    let (lo, hi) = retention.split_at_mut(1);
    for (better, worse) in lo[0].values.iter().zip(hi[0].values.iter_mut()) {
        *worse = worse.min(better - 0.05);
    }
    Ok(CurveSet { retention, risk })
}

pub fn build_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    let o = &spec.overrides;
    let mut assumptions = Vec::new();
    let mut curves = None;
    let (groups, family, eval_family, init, optimizer, mut dynamics, alpha_min, eta, constant, replicates, random_starts) =
        match spec.name {
            ScenarioName::MeanToy => {
                let centers = o.centers.clone().unwrap_or(vec![vec![1.0], vec![-1.0]]);
                let groups = centers.into_iter().map(GroupSpec::point_mass).collect::<Result<Vec<_>>>()?;
                let mut cfg = DynamicsConfig::new(vec![100.0, 100.0], RetentionFunction::Exponential, 3000);
                let fixed = 100.0 / (1.0 - (-1.0f64).exp());
                cfg.initial_lambda = Some(vec![fixed * (1.0 + 1e-3), fixed * (1.0 - 1e-3)]);
                assumptions.push("start perturbed by ±1e-3 relative from the symmetric fixed point".into());
                let init = ModelParams::new(vec![0.0; groups[0].dim()]);
                (groups, LossFamily::SquaredMean, LossFamily::SquaredMean, init, OptimizerSettings::default(), cfg, 0.2, EtaMode::Search, DualConstant::Exact, 1, false)
            }
            ScenarioName::Median1d => {
                let centers = o.centers.clone().unwrap_or(vec![vec![-1.0], vec![1.0]]);
                let groups = centers.into_iter().map(GroupSpec::point_mass).collect::<Result<Vec<_>>>()?;
                let mut cfg = DynamicsConfig::new(vec![100.0, 100.0], RetentionFunction::Exponential, 200);
                cfg.initial_lambda = Some(vec![900.0, 100.0]);
                let init = ModelParams::new(vec![0.0; groups[0].dim()]);
                (groups, LossFamily::AbsoluteMedian, LossFamily::AbsoluteMedian, init, OptimizerSettings::default(), cfg, 0.1, EtaMode::Search, DualConstant::Exact, 1, false)
            }
            ScenarioName::SimplexMedian => {
                let centers = o.centers.clone().unwrap_or_else(simplex_corners);
                let groups = centers
                    .into_iter()
                    .map(|c| GroupSpec::gaussian(c, 1.0))
                    .collect::<Result<Vec<_>>>()?;
                let mut cfg = DynamicsConfig::new(vec![50.0; 3], RetentionFunction::Exponential, 100);
                cfg.train_pool_per_group = 300;
                cfg.risk_eval.per_group = 5000;
                assumptions.push("third group's new-user rate set to 50 by symmetry with the other two".into());
                assumptions.push("corners of an equilateral triangle at distance 1 from the centroid".into());
                let init = ModelParams::new(vec![0.0; groups[0].dim()]);
                (groups, LossFamily::L2Median, LossFamily::L2Median, init, OptimizerSettings::newton(), cfg, 0.4, EtaMode::Search, DualConstant::Exact, 10, true)
            }
            ScenarioName::TwoGaussianClassification => {
                let centers = o.centers.clone().unwrap_or(vec![vec![-1.5, 0.0], vec![1.5, 0.0]]);
                if centers.len() != 2 {
                    return Err(Error::invalid("centers", "two_gaussian_classification has exactly two groups"));
                }
                let groups = centers
                    .into_iter()
                    .zip(two_gaussian_normals())
                    .map(|(c, n)| GroupSpec::labeled_gaussian(c, 1.0, n))
                    .collect::<Result<Vec<_>>>()?;
                let mut cfg = DynamicsConfig::new(vec![1000.0, 1000.0], RetentionFunction::Linear, 1000);
                cfg.sampled = true;
                cfg.risk_eval.per_group = 20_000;
                assumptions.push(
                    "groups centered at (±1.5, 0), each labeled by the sign of its own normal (∓1/3, √8/3) through the origin"
                        .into(),
                );
                let init = ModelParams::on_sphere(vec![0.0, 1.0], 1.0);
                let opt = OptimizerSettings {
                    eta_tolerance: 1e-3,
                    ..OptimizerSettings::newton()
                };
                (groups, LossFamily::Logistic, LossFamily::ZeroOne, init, opt, cfg, 0.2, EtaMode::Fixed(CLASSIFICATION_ETA), DualConstant::Conservative, 10, false)
            }
            ScenarioName::CurveDriven => {
                let set = synthetic_curves(o.seed.unwrap_or(0))?;
                curves = Some(set);
                let groups = vec![GroupSpec::point_mass(vec![0.0])?, GroupSpec::point_mass(vec![0.0])?];
                let cfg = DynamicsConfig::new(vec![1000.0, 1000.0], RetentionFunction::Linear, 200);
                assumptions.push("synthetic retention and risk curves; no human data".into());
                (groups, LossFamily::SquaredMean, LossFamily::SquaredMean, ModelParams::new(vec![0.0]), OptimizerSettings::default(), cfg, 0.2, EtaMode::Search, DualConstant::Exact, 1, false)
            }
        };

    let k = groups.len();
    if let Some(b) = &o.new_users_per_round {
        dynamics.new_user_rates = b.clone();
    }
    if let Some(l0) = &o.initial_lambda {
        dynamics.initial_lambda = Some(l0.clone());
    }
    if let Some(w) = &o.weights {
        validate_simplex("weights", w, WEIGHT_SUM_TOLERANCE)?;
        if w.len() != dynamics.new_user_rates.len() {
            return Err(Error::invalid("weights", format!("has {} entries for {k} groups", w.len())));
        }
        let total: f64 = dynamics.new_user_rates.iter().sum();
        dynamics.initial_lambda = Some(w.iter().map(|wk| wk * total).collect());
    }
    if let Some(r) = &o.retention {
        dynamics.retention = r.clone();
    }
    if let Some(t) = o.rounds {
        dynamics.rounds = t;
    }
    if let Some(s) = o.sampled {
        dynamics.sampled = s;
    }
    if let Some(p) = o.train_pool_per_group {
        dynamics.train_pool_per_group = p;
    }
    if let Some(p) = o.eval_per_group {
        dynamics.risk_eval.per_group = p;
    }
    let seed = o.seed.unwrap_or(0);
    dynamics.seed = seed;
    if dynamics.new_user_rates.len() != k {
        return Err(Error::invalid(
            "new_users_per_round",
            format!("has {} entries for {k} groups", dynamics.new_user_rates.len()),
        ));
    }
    dynamics.validate()?;

    let trainer = Trainer::Dro {
        alpha_min: o.alpha_min.unwrap_or(alpha_min),
        eta: o.eta.unwrap_or(eta),
        dual_constant: o.dual_constant.unwrap_or(constant),
    };
    trainer.validate()?;
    let replicates = o.replicates.unwrap_or(replicates);
    if replicates == 0 {
        return Err(Error::invalid("replicates", "must be at least 1"));
    }
    let mixture = GroupMixture::new(groups, uniform(k))?;
    Ok(Scenario {
        spec: spec.clone(),
        mixture,
        learner: Learner {
            train_family: family,
            eval_family,
            init,
            optimizer,
        },
        dynamics,
        trainers: vec![Trainer::Erm, trainer],
        replicates,
        seed,
        random_starts: o.random_starts.unwrap_or(random_starts),
        curves,
        assumptions,
    })
}

/// Dual threshold for the two-Gaussian task: the optimal `η` of the
/// balanced problem at `α_min = 0.2` under the conservative constant.
pub const CLASSIFICATION_ETA: f64 = 0.95;

/// One trainer on one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub trainer: String,
    pub replicate: usize,
    pub seed: u64,
    pub trajectory: Trajectory,
}

impl Run {
    /// Accuracy of group `k` per round (one minus zero-one risk).
    pub fn accuracy_series(&self, k: usize) -> Vec<f64> {
        self.trajectory.risk_series(k).into_iter().map(|r| 1.0 - r).collect()
    }

    pub fn min_accuracy(&self, k: usize) -> f64 {
        self.accuracy_series(k).into_iter().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Quartiles {
            q25: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q75: quantile(&v, 0.75),
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub trainer: String,
    pub t: usize,
    pub group: usize,
    pub alpha: Quartiles,
    pub risk: Quartiles,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<Quartiles>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub trainer: String,
    pub replicate: usize,
    /// Worst group risk over all groups and rounds.
    pub worst_risk_over_time: f64,
    pub final_alpha: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub runs: Vec<Run>,
    pub rounds: Vec<RoundSummary>,
    pub per_run: Vec<RunSummary>,
}

impl Comparison {
    pub fn runs_for<'a>(&'a self, trainer: &'a str) -> impl Iterator<Item = &'a Run> + 'a {
        self.runs.iter().filter(move |r| r.trainer == trainer)
    }
}

/// Starting counts for replicate `r`.
pub fn replicate_start(scenario: &Scenario, seed: u64) -> Vec<f64> {
    if scenario.random_starts {
        let mut rng = rng_from_seed(derive_seed(seed, 0x57A7));
        scenario
            .dynamics
            .new_user_rates
            .iter()
            .map(|b| b * rng.random_range(0.2..1.8))
            .collect()
    } else {
        scenario.dynamics.initial()
    }
}

/// Runs one trainer on one replicate. Replicate `r` uses seed `seed + r`,
/// shared by all trainers so runs are paired.
pub fn run_replicate(scenario: &Scenario, trainer: &Trainer, replicate: usize) -> Result<Run> {
    let seed = scenario.seed.wrapping_add(replicate as u64);
    let mut cfg = scenario.dynamics.clone();
    cfg.seed = seed;
    cfg.initial_lambda = Some(replicate_start(scenario, seed));
    let trajectory = match &scenario.curves {
        Some(c) => simulate_from_curves(&c.retention, &c.risk, &cfg),
        None => simulate(&scenario.mixture, &scenario.learner, trainer, &cfg),
    }
    .map_err(|e| match e {
        Error::Simulation { round, source, .. } => Error::Simulation {
            replicate,
            round,
            source,
        },
        other => other,
    })?;
    Ok(Run {
        trainer: scenario.trainer_label(trainer),
        replicate,
        seed,
        trajectory,
    })
}

/// Runs every trainer over every replicate (in parallel) and summarizes
/// per-round quartiles across replicates.
pub fn run_comparison(scenario: &Scenario) -> Result<Comparison> {
    let trainers: Vec<&Trainer> = if scenario.curves.is_some() {
        // curves replace model fitting, so trainers are indistinguishable
        scenario.trainers.iter().take(1).collect()
    } else {
        scenario.trainers.iter().collect()
    };
    let jobs: Vec<(&Trainer, usize)> = trainers
        .iter()
        .flat_map(|t| (0..scenario.replicates).map(move |r| (*t, r)))
        .collect();
    let mut runs = jobs
        .par_iter()
        .map(|(t, r)| run_replicate(scenario, t, *r))
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| (trainer_rank(scenario, &a.trainer), a.replicate).cmp(&(trainer_rank(scenario, &b.trainer), b.replicate)));
    let rounds = summarize(scenario, &runs);
    let per_run = runs
        .iter()
        .map(|r| RunSummary {
            trainer: r.trainer.clone(),
            replicate: r.replicate,
            worst_risk_over_time: r.trajectory.worst_risk_over_time,
            final_alpha: r.trajectory.final_alpha().to_vec(),
        })
        .collect();
    Ok(Comparison {
        runs,
        rounds,
        per_run,
    })
}

fn trainer_rank(scenario: &Scenario, label: &str) -> usize {
    scenario
        .trainer_labels()
        .iter()
        .position(|l| l == label)
        .unwrap_or(usize::MAX)
}

fn summarize(scenario: &Scenario, runs: &[Run]) -> Vec<RoundSummary> {
    let mut out = Vec::new();
    let mut labels: Vec<&str> = Vec::new();
    for r in runs {
        if !labels.contains(&r.trainer.as_str()) {
            labels.push(&r.trainer);
        }
    }
    let accuracy = scenario.reports_accuracy();
    for label in labels {
        let group_runs: Vec<&Run> = runs.iter().filter(|r| r.trainer == label).collect();
        let len = group_runs.iter().map(|r| r.trajectory.states.len()).min().unwrap_or(0);
        for t in 0..len {
            for k in 0..scenario.num_groups() {
                let alphas: Vec<f64> = group_runs.iter().map(|r| r.trajectory.states[t].alpha[k]).collect();
                let risks: Vec<f64> = group_runs
                    .iter()
                    .map(|r| r.trajectory.states[t].risks.values()[k])
                    .collect();
                let acc: Vec<f64> = risks.iter().map(|r| 1.0 - r).collect();
                out.push(RoundSummary {
                    trainer: label.to_string(),
                    t,
                    group: k,
                    alpha: Quartiles::of(&alphas),
                    risk: Quartiles::of(&risks),
                    accuracy: accuracy.then(|| Quartiles::of(&acc)),
                });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub minority_fraction: f64,
    pub trainer: String,
    /// Per-group accuracy, majority first.
    pub accuracy: Vec<f64>,
    pub theta: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

/// Static (no dynamics) accuracy of each trainer as the second group's share
/// shrinks. Training uses `sample_size` draws from the mixture at each
/// fraction; accuracy uses the scenario's evaluation pool.
pub fn imbalance_sweep(scenario: &Scenario, fractions: &[f64], sample_size: usize) -> Result<Vec<SweepRow>> {
    if scenario.spec.name != ScenarioName::TwoGaussianClassification {
        return Err(Error::invalid("scenario", "imbalance_sweep runs on two_gaussian_classification"));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 0.5)) {
        return Err(Error::invalid("minority_fraction", format!("{f} must lie in (0, 0.5]")));
    }
    let eval = EvalPool::draw(
        &scenario.mixture,
        scenario.dynamics.risk_eval.per_group,
        scenario.dynamics.risk_eval.seed,
    )?;
    let jobs: Vec<(usize, &Trainer)> = (0..fractions.len())
        .flat_map(|i| scenario.trainers.iter().map(move |t| (i, t)))
        .collect();
    jobs.par_iter()
        .map(|(i, trainer)| {
            let f = fractions[*i];
            let mix = scenario.mixture.reweighted(vec![1.0 - f, f])?;
            let draws = sample_mixture(&mix, sample_size, derive_seed(scenario.seed, f.to_bits()));
            let samples = training_view(&draws);
            let weights = vec![1.0 / samples.len() as f64; samples.len()];
            let (params, eta) = trainer.fit(
                scenario.learner.train_family,
                &samples,
                &weights,
                &scenario.learner.init,
                &scenario.learner.optimizer,
            )?;
            let risks = eval.risks(LossFamily::ZeroOne, &params)?;
            Ok(SweepRow {
                minority_fraction: f,
                trainer: scenario.trainer_label(trainer),
                accuracy: risks.values().iter().map(|r| 1.0 - r).collect(),
                theta: params.theta,
                eta,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let s = build_scenario(&ScenarioSpec::new(ScenarioName::MeanToy)).unwrap();
        assert_eq!(s.num_groups(), 2);
        assert_eq!(s.learner.train_family, LossFamily::SquaredMean);
        assert_eq!(s.dynamics.retention, RetentionFunction::Exponential);
        let c = build_scenario(&ScenarioSpec::new(ScenarioName::TwoGaussianClassification)).unwrap();
        assert_eq!(c.dynamics.new_user_rates, vec![1000.0, 1000.0]);
        assert_eq!(c.dynamics.retention, RetentionFunction::Linear);
        assert_eq!(c.dynamics.rounds, 1000);
        assert!(c.reports_accuracy());
        let s = build_scenario(&ScenarioSpec::new(ScenarioName::SimplexMedian)).unwrap();
        assert_eq!(s.dynamics.new_user_rates, vec![50.0; 3]);
        assert!(!s.assumptions.is_empty());
    }

    #[test]
    fn repeated_trainers_get_distinct_labels() {
        let mut s = build_scenario(&ScenarioSpec::new(ScenarioName::Median1d)).unwrap();
        assert_eq!(s.trainer_labels(), ["erm", "dro"]);
        s.trainers = vec![Trainer::Erm, Trainer::dro(0.1), Trainer::dro(0.3), Trainer::dro(0.3)];
        assert_eq!(s.trainer_labels(), ["erm", "dro_0.1", "dro_0.3", "dro_0.3_3"]);
        assert_eq!(s.trainer_label(&Trainer::dro(0.1)), "dro_0.1");
    }

    #[test]
    fn overrides_apply() {
        let spec = ScenarioSpec::with(
            ScenarioName::MeanToy,
            Overrides {
                replicates: Some(10),
                rounds: Some(7),
                ..Default::default()
            },
        );
        let s = build_scenario(&spec).unwrap();
        assert_eq!(s.replicates, 10);
        assert_eq!(s.dynamics.rounds, 7);
        let bad = ScenarioSpec::with(
            ScenarioName::MeanToy,
            Overrides {
                new_users_per_round: Some(vec![1.0]),
                ..Default::default()
            },
        );
        assert!(build_scenario(&bad).is_err());
    }

    #[test]
    fn names_parse() {
        for n in ScenarioName::ALL {
            assert_eq!(n.as_str().parse::<ScenarioName>().unwrap(), n);
            assert_eq!(serde_json::to_string(&n).unwrap(), format!("\"{}\"", n.as_str()));
        }
        assert!("nope".parse::<ScenarioName>().is_err());
    }

    #[test]
    fn quartiles_interpolate() {
        let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((q.q25, q.median, q.q75), (2.0, 3.0, 4.0));
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    #[test]
    fn mean_toy_erm_reaches_a_corner() {
        let s = build_scenario(&ScenarioSpec::new(ScenarioName::MeanToy)).unwrap();
        let run = run_replicate(&s, &Trainer::Erm, 0).unwrap();
        let a = run.trajectory.final_alpha();
        assert!(a[0].min(a[1]) < 1e-3, "{a:?}");
    }

    #[test]
    fn curve_driven_dominated_group_shrinks() {
        let s = build_scenario(&ScenarioSpec::new(ScenarioName::CurveDriven)).unwrap();
        let cmp = run_comparison(&s).unwrap();
        let alpha: Vec<f64> = cmp.runs[0].trajectory.states.iter().map(|st| st.alpha[1]).collect();
        assert!(alpha.windows(2).all(|w| w[1] <= w[0]));
        assert!(alpha.last().unwrap() < &0.5);
    }
}
