//! Repeated loss minimization as a dynamical system.
//!
//! Each round the expected user counts `λ` fix the mixture weights
//! `α = λ / Σλ`, a model is fit to data from that mixture, every group
//! incurs its true risk `R_k`, and the counts move by
//! `λ_k ← λ_k ν(R_k) + b_k`: a fraction `ν(R_k)` of users return and `b_k`
//! new users arrive.

use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::dro::{DualConstant, DualParams};
use crate::error::{Error, Result};
use crate::models::{dro_fit, dro_fit_fixed_eta, erm_fit, LossFamily, ModelParams, OptimizerSettings};
use crate::population::{
    sample_mixture_with, training_view, EvalPool, GroupMixture, Observation, RiskVector,
};
use crate::rng::{derive_seed, rng_from_seed};

/// Fraction of a group's users that return after experiencing risk `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetentionFunction {
    /// `ν(x) = 1 - x`, clamped into `[0, 1]`.
    Linear,
    /// `ν(x) = exp(-x)` for `x ≥ 0`.
    Exponential,
    /// Piecewise-linear nonincreasing curve from [`isotone_fit`].
    Table { curve: IsotoneCurve },
}

impl RetentionFunction {
    pub fn table(curve: IsotoneCurve) -> Result<Self> {
        if curve.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("retention", "table values must lie in [0, 1]"));
        }
        if curve.values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("retention", "table must be nonincreasing"));
        }
        Ok(RetentionFunction::Table { curve })
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            RetentionFunction::Linear => (1.0 - x).clamp(0.0, 1.0),
            RetentionFunction::Exponential => (-x.max(0.0)).exp(),
            RetentionFunction::Table { curve } => curve.eval(x),
        }
    }

    /// `ν′(x)`. The linear kind has slope `-1` on `(0, 1)` and `0` where
    /// clamped; tables use the slope of the containing segment.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            RetentionFunction::Linear => {
                if x > 0.0 && x < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            RetentionFunction::Exponential => {
                if x >= 0.0 {
                    -(-x).exp()
                } else {
                    0.0
                }
            }
            RetentionFunction::Table { curve } => curve.slope(x),
        }
    }

    /// `ν⁻¹(y)`, defined on the range of `ν` for the parametric kinds.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        match self {
            RetentionFunction::Linear if (0.0..=1.0).contains(&y) => Ok(1.0 - y),
            RetentionFunction::Exponential if y > 0.0 && y <= 1.0 => Ok(-y.ln()),
            RetentionFunction::Table { .. } => Err(Error::NotApplicable(
                "table retention has no inverse".into(),
            )),
            _ => Err(Error::invalid(
                "retention",
                format!("{y} lies outside the range of the retention function"),
            )),
        }
    }
}

/// Mixture sizes under which the dynamics are run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEvalSettings {
    /// Monte-Carlo evaluation draws per non-degenerate group.
    pub per_group: usize,
    pub seed: u64,
}

impl Default for RiskEvalSettings {
    fn default() -> Self {
        RiskEvalSettings {
            per_group: 20_000,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub new_user_rates: Vec<f64>,
    pub retention: RetentionFunction,
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub risk_eval: RiskEvalSettings,
    /// Draw `n ~ Poisson(Σλ)` fresh samples per round instead of training
    /// on the expected mixture.
    #[serde(default)]
    pub sampled: bool,
    /// Starting counts; defaults to `b`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_lambda: Option<Vec<f64>>,
    /// Training pool per non-degenerate group in expected mode.
    #[serde(default = "default_pool")]
    pub train_pool_per_group: usize,
}

fn default_pool() -> usize {
    1000
}

impl DynamicsConfig {
    pub fn new(new_user_rates: Vec<f64>, retention: RetentionFunction, rounds: usize) -> Self {
        DynamicsConfig {
            new_user_rates,
            retention,
            rounds,
            seed: 0,
            risk_eval: RiskEvalSettings::default(),
            sampled: false,
            initial_lambda: None,
            train_pool_per_group: default_pool(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.new_user_rates.is_empty() {
            return Err(Error::invalid("new_users_per_round", "must name at least one group"));
        }
        if self.new_user_rates.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::invalid("new_users_per_round", "every rate must be positive"));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("rounds", "must be at least 1"));
        }
        if let Some(l0) = &self.initial_lambda {
            if l0.len() != self.new_user_rates.len() {
                return Err(Error::invalid(
                    "initial_lambda",
                    "length must match new_users_per_round",
                ));
            }
            if l0.iter().any(|l| !(l.is_finite() && *l >= 0.0)) || l0.iter().sum::<f64>() <= 0.0 {
                return Err(Error::invalid("initial_lambda", "counts must be nonnegative with positive total"));
            }
        }
        Ok(())
    }

    pub fn initial(&self) -> Vec<f64> {
        self.initial_lambda
            .clone()
            .unwrap_or_else(|| self.new_user_rates.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Realized sample count; absent for expected-population dynamics.
    pub n: Option<u64>,
    pub params: Option<ModelParams>,
    /// DRO threshold selected this round, when applicable.
    pub eta: Option<f64>,
    pub risks: RiskVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<SimState>,
    pub worst_risk_over_time: f64,
}

impl Trajectory {
    pub fn from_states(states: Vec<SimState>) -> Self {
        let worst_risk_over_time = states
            .iter()
            .flat_map(|s| s.risks.values().iter().copied())
            .fold(f64::NEG_INFINITY, f64::max);
        Trajectory {
            states,
            worst_risk_over_time,
        }
    }

    pub fn final_alpha(&self) -> &[f64] {
        &self.states.last().expect("trajectory has at least one state").alpha
    }

    /// Per-round risk of group `k`.
    pub fn risk_series(&self, k: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.risks.values()[k]).collect()
    }
}

pub fn normalize(lambda: &[f64]) -> Vec<f64> {
    let total: f64 = lambda.iter().sum();
    lambda.iter().map(|l| l / total).collect()
}

/// `λ′_k = λ_k ν(R_k) + b_k`.
pub fn step_expected(lambda: &[f64], risks: &RiskVector, config: &DynamicsConfig) -> Result<Vec<f64>> {
    let b = &config.new_user_rates;
    if lambda.len() != b.len() || risks.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            found: if lambda.len() != b.len() { lambda.len() } else { risks.len() },
        });
    }
    Ok(lambda
        .iter()
        .zip(risks.values())
        .zip(b)
        .map(|((l, r), b)| l * config.retention.value(*r) + b)
        .collect())
}

type UpdateFn = dyn Fn(usize, f64, f64) -> f64 + Send + Sync;
type PartialsFn = dyn Fn(usize, f64, f64) -> (f64, f64) + Send + Sync;

/// Generalized update `λ′_k = h_k(λ_k, ν(R_k))`.
#[derive(Clone)]
pub struct GeneralizedDynamics {
    h: Arc<UpdateFn>,
    /// Analytic `(∂h/∂λ, ∂h/∂v)`; central differences when absent.
    partials: Option<Arc<PartialsFn>>,
}

impl fmt::Debug for GeneralizedDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("GeneralizedDynamics { .. }")
    }
}

impl GeneralizedDynamics {
    /// `h(k, λ, v)` for group `k`, count `λ`, and retained fraction `v`.
    pub fn new(h: impl Fn(usize, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        GeneralizedDynamics { h: Arc::new(h), partials: None }
    }

    /// Supplies `(∂h/∂λ, ∂h/∂v)` at `(k, λ, v)` in place of differences.
    pub fn with_partials(mut self, partials: impl Fn(usize, f64, f64) -> (f64, f64) + Send + Sync + 'static) -> Self {
        self.partials = Some(Arc::new(partials));
        self
    }

    /// `h(λ, v) = λ v + b_k`, which reproduces [`step_expected`].
    pub fn canonical(new_user_rates: Vec<f64>) -> Self {
        GeneralizedDynamics::new(move |k, lambda, v| lambda * v + new_user_rates[k])
            .with_partials(|_, lambda, v| (v, lambda))
    }

    pub fn eval(&self, k: usize, lambda: f64, v: f64) -> f64 {
        (self.h)(k, lambda, v)
    }

    /// `∂h/∂λ`.
    pub fn partial_lambda(&self, k: usize, lambda: f64, v: f64) -> f64 {
        if let Some(p) = &self.partials {
            return p(k, lambda, v).0;
        }
        let step = 1e-6 * lambda.abs().max(1.0);
        (self.eval(k, lambda + step, v) - self.eval(k, lambda - step, v)) / (2.0 * step)
    }

    /// `∂h/∂R = ∂h/∂v · ν′(R)`.
    pub fn partial_risk(&self, k: usize, lambda: f64, risk: f64, retention: &RetentionFunction) -> f64 {
        let v = retention.value(risk);
        let dv = match &self.partials {
            Some(p) => p(k, lambda, v).1,
            None => {
                let step = 1e-6;
                (self.eval(k, lambda, v + step) - self.eval(k, lambda, v - step)) / (2.0 * step)
            }
        };
        dv * retention.derivative(risk)
    }
}

pub fn step_generalized(
    lambda: &[f64],
    risks: &RiskVector,
    retention: &RetentionFunction,
    dynamics: &GeneralizedDynamics,
) -> Result<Vec<f64>> {
    if lambda.len() != risks.len() {
        return Err(Error::DimensionMismatch {
            expected: lambda.len(),
            found: risks.len(),
        });
    }
    lambda
        .iter()
        .zip(risks.values())
        .enumerate()
        .map(|(k, (l, r))| {
            let next = dynamics.eval(k, *l, retention.value(*r));
            if next.is_finite() && next >= 0.0 {
                Ok(next)
            } else {
                Err(Error::invalid(
                    "h",
                    format!("update for group {k} returned {next}; counts must be nonnegative"),
                ))
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum EtaMode {
    /// Golden-section search over the threshold every round.
    Search,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trainer {
    Erm,
    Dro {
        alpha_min: f64,
        #[serde(default = "default_eta")]
        eta: EtaMode,
        #[serde(default)]
        dual_constant: DualConstant,
    },
}

fn default_eta() -> EtaMode {
    EtaMode::Search
}

impl Trainer {
    pub fn dro(alpha_min: f64) -> Self {
        Trainer::Dro {
            alpha_min,
            eta: EtaMode::Search,
            dual_constant: DualConstant::default(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Trainer::Erm => "erm",
            Trainer::Dro { .. } => "dro",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Trainer::Dro { alpha_min, eta, .. } = self {
            DualParams::new(*alpha_min).map_err(|_| {
                Error::invalid("alpha_min", format!("{alpha_min} must lie in (0, 1]"))
            })?;
            if let EtaMode::Fixed(v) = eta {
                if !v.is_finite() {
                    return Err(Error::invalid("eta", "fixed threshold must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Fits parameters, returning the selected threshold for DRO.
    pub fn fit(
        &self,
        family: LossFamily,
        samples: &[Observation],
        weights: &[f64],
        init: &ModelParams,
        settings: &OptimizerSettings,
    ) -> Result<(ModelParams, Option<f64>)> {
        match self {
            Trainer::Erm => Ok((erm_fit(family, samples, weights, init, settings)?, None)),
            Trainer::Dro {
                alpha_min,
                eta,
                dual_constant,
            } => {
                let dual = DualParams::with_convention(*alpha_min, *dual_constant)?;
                let fit = match eta {
                    EtaMode::Search => dro_fit(family, samples, weights, &dual, init, settings)?,
                    EtaMode::Fixed(v) => {
                        dro_fit_fixed_eta(family, samples, weights, &dual, *v, init, settings)?
                    }
                };
                Ok((fit.params, Some(fit.eta).filter(|e| e.is_finite())))
            }
        }
    }
}

/// What is trained each round and how risk is scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub train_family: LossFamily,
    /// Loss whose group risk drives retention.
    pub eval_family: LossFamily,
    pub init: ModelParams,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
}

/// Runs the dynamics with a model fit every round.
///
/// The mixture supplies the group distributions; its weights are ignored in
/// favour of `λ`. In expected mode a fixed training pool per group is
/// weighted by `α_k / m_k`; in sampled mode `n ~ Poisson(Σλ)` fresh draws are
/// taken from the current mixture and group tags are stripped before
/// training. Rounds with `n = 0` carry the previous parameters forward.
pub fn simulate(
    mixture: &GroupMixture,
    learner: &Learner,
    trainer: &Trainer,
    config: &DynamicsConfig,
) -> Result<Trajectory> {
    config.validate()?;
    trainer.validate()?;
    let k = mixture.num_groups();
    if config.new_user_rates.len() != k {
        return Err(Error::invalid(
            "new_users_per_round",
            format!("has {} entries for {k} groups", config.new_user_rates.len()),
        ));
    }
    let eval = EvalPool::draw(mixture, config.risk_eval.per_group, config.risk_eval.seed)?;
    let pool = (!config.sampled)
        .then(|| EvalPool::draw(mixture, config.train_pool_per_group, derive_seed(config.seed, 0xB00C)))
        .transpose()?;
    let mut rng = rng_from_seed(derive_seed(config.seed, 0x5A3B));

    let mut lambda = config.initial();
    let mut params = learner.init.clone();
    let mut states = Vec::with_capacity(config.rounds + 1);
    for t in 0..=config.rounds {
        let wrap = |e: Error| Error::Simulation {
            replicate: 0,
            round: t,
            source: Box::new(e),
        };
        let alpha = normalize(&lambda);
        let mut eta = None;
        let n = match &pool {
            Some(pool) => {
                let (samples, weights) = pooled_training_set(pool, &alpha);
                let (fit, e) = trainer
                    .fit(learner.train_family, &samples, &weights, &params, &learner.optimizer)
                    .map_err(wrap)?;
                params = fit;
                eta = e;
                None
            }
            None => {
                let total: f64 = lambda.iter().sum();
                let n = Poisson::new(total)
                    .map_err(|e| wrap(Error::invalid("lambda", e.to_string())))?
                    .sample(&mut rng) as u64;
                if n > 0 {
                    let current = mixture.reweighted(alpha.clone()).map_err(wrap)?;
                    let draws = sample_mixture_with(&current, n as usize, &mut rng);
                    let samples = training_view(&draws);
                    let weights = vec![1.0 / n as f64; samples.len()];
                    let (fit, e) = trainer
                        .fit(learner.train_family, &samples, &weights, &params, &learner.optimizer)
                        .map_err(wrap)?;
                    params = fit;
                    eta = e;
                }
                Some(n)
            }
        };
        let risks = eval.risks(learner.eval_family, &params).map_err(wrap)?;
        let next = step_expected(&lambda, &risks, config).map_err(wrap)?;
        states.push(SimState {
            lambda: std::mem::replace(&mut lambda, next),
            alpha,
            n,
            params: Some(params.clone()),
            eta,
            risks,
        });
    }
    Ok(Trajectory::from_states(states))
}

fn pooled_training_set(pool: &EvalPool, alpha: &[f64]) -> (Vec<Observation>, Vec<f64>) {
    let mut samples = Vec::new();
    let mut weights = Vec::new();
    for (k, a) in alpha.iter().enumerate() {
        let group = pool.group(k);
        let w = a / group.len() as f64;
        samples.extend_from_slice(group);
        weights.extend(std::iter::repeat_n(w, group.len()));
    }
    (samples, weights)
}

/// Runs the expected dynamics with risks supplied by `risk_at(t, α)` rather
/// than a trained model.
pub fn simulate_with_risks(
    config: &DynamicsConfig,
    mut risk_at: impl FnMut(usize, &[f64]) -> Result<RiskVector>,
) -> Result<Trajectory> {
    config.validate()?;
    let mut lambda = config.initial();
    let mut states = Vec::with_capacity(config.rounds + 1);
    for t in 0..=config.rounds {
        let alpha = normalize(&lambda);
        let risks = risk_at(t, &alpha)?;
        let next = step_expected(&lambda, &risks, config)?;
        states.push(SimState {
            lambda: std::mem::replace(&mut lambda, next),
            alpha,
            n: None,
            params: None,
            eta: None,
            risks,
        });
    }
    Ok(Trajectory::from_states(states))
}

/// Largest round-`t` risk for group `k` that keeps `α_k^{(t+1)} > α_min`,
/// `ν⁻¹(1 - (1 - ν_max) b_k / (α_min Σb))`.
pub fn risk_threshold(config: &DynamicsConfig, alpha_min: f64, nu_max: f64, k: usize) -> Result<f64> {
    if !(alpha_min > 0.0 && alpha_min <= 1.0) {
        return Err(Error::invalid("alpha_min", "must lie in (0, 1]"));
    }
    if !(nu_max > 0.0 && nu_max < 1.0) {
        return Err(Error::invalid("nu_max", "must lie in (0, 1)"));
    }
    let b = config
        .new_user_rates
        .get(k)
        .ok_or_else(|| Error::invalid("k", format!("group {k} out of range")))?;
    let total: f64 = config.new_user_rates.iter().sum();
    let share = b / total;
    if share < alpha_min {
        return Err(Error::invalid(
            "alpha_min",
            format!("new-user share {share} of group {k} is below alpha_min {alpha_min}"),
        ));
    }
    config
        .retention
        .inverse(1.0 - (1.0 - nu_max) * share / alpha_min)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FloorReport {
    /// `(t, k)` pairs where every hypothesis held and the conclusion was checked.
    pub checked: usize,
    /// `(t, k)` pairs where the hypotheses held but `α_k^{(t+1)} ≤ α_min`.
    pub violations: Vec<(usize, usize)>,
    /// Rounds in which some hypothesis failed, so nothing was asserted.
    pub not_applicable_rounds: Vec<usize>,
}

impl FloorReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the retention floor along a trajectory: whenever
/// `α_k^{(t)} > α_min`, `b_k / Σb ≥ α_min`, `Σλ^{(t)} ≤ Σb / (1 - ν_max)`,
/// every `ν(R_j^{(t)}) < ν_max`, and `R_k^{(t)}` is at most the threshold,
/// the next share must satisfy `α_k^{(t+1)} > α_min`.
pub fn check_alpha_floor(
    trajectory: &Trajectory,
    alpha_min: f64,
    nu_max: f64,
    config: &DynamicsConfig,
) -> Result<FloorReport> {
    let mut report = FloorReport::default();
    if alpha_min <= 0.0 {
        return Ok(report);
    }
    let b_total: f64 = config.new_user_rates.iter().sum();
    let lambda_cap = b_total / (1.0 - nu_max);
    for (t, pair) in trajectory.states.windows(2).enumerate() {
        let (now, next) = (&pair[0], &pair[1]);
        let risks = now.risks.values();
        let round_ok = now.lambda.iter().sum::<f64>() <= lambda_cap
            && risks.iter().all(|r| config.retention.value(*r) < nu_max);
        let mut asserted = false;
        if round_ok {
            for k in 0..now.alpha.len() {
                if now.alpha[k] <= alpha_min || config.new_user_rates[k] / b_total < alpha_min {
                    continue;
                }
                let threshold = match risk_threshold(config, alpha_min, nu_max, k) {
                    Ok(v) => v,
                    Err(_) => continue,
                };
                if risks[k] <= threshold {
                    asserted = true;
                    report.checked += 1;
                    if next.alpha[k] <= alpha_min {
                        report.violations.push((t, k));
                    }
                }
            }
        }
        if !asserted {
            report.not_applicable_rounds.push(t);
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotone {
    Increasing,
    Decreasing,
}

/// Monotone piecewise-linear curve: linear between knots, constant outside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsotoneCurve {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl IsotoneCurve {
    pub fn constant(value: f64) -> Self {
        IsotoneCurve {
            knots: vec![0.0, 1.0],
            values: vec![value, value],
        }
    }

    fn segment(&self, x: f64) -> Option<usize> {
        if x <= self.knots[0] || x >= *self.knots.last().unwrap() {
            return None;
        }
        Some(self.knots.partition_point(|k| *k <= x) - 1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let last = self.knots.len() - 1;
        if x <= self.knots[0] {
            return self.values[0];
        }
        if x >= self.knots[last] {
            return self.values[last];
        }
        let i = self.segment(x).unwrap();
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    pub fn slope(&self, x: f64) -> f64 {
        match self.segment(x) {
            Some(i) => {
                (self.values[i + 1] - self.values[i]) / (self.knots[i + 1] - self.knots[i])
            }
            None => 0.0,
        }
    }
}

/// Pool-adjacent-violators for a nondecreasing least-squares fit with unit
/// weights.
pub fn pava_increasing(y: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s2, c2) = blocks[blocks.len() - 1];
            let (s1, c1) = blocks[blocks.len() - 2];
            if s1 / c1 as f64 <= s2 / c2 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s1 + s2, c1 + c2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, c)| std::iter::repeat_n(s / c as f64, c))
        .collect()
}

/// Isotonic least-squares fit of `(alpha, value)` points.
pub fn isotone_fit(points: &[(f64, f64)], direction: Monotone) -> Result<IsotoneCurve> {
    if points.len() < 2 {
        return Err(Error::invalid("points", "isotone fit needs at least two points"));
    }
    if points.iter().any(|(a, v)| !a.is_finite() || !v.is_finite()) {
        return Err(Error::invalid("points", "coordinates must be finite"));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid("points", "alphas must be distinct"));
    }
    let knots: Vec<f64> = sorted.iter().map(|p| p.0).collect();
    let values = match direction {
        Monotone::Increasing => pava_increasing(&sorted.iter().map(|p| p.1).collect::<Vec<_>>()),
        Monotone::Decreasing => {
            pava_increasing(&sorted.iter().map(|p| -p.1).collect::<Vec<_>>())
                .into_iter()
                .map(|v| -v)
                .collect()
        }
    };
    Ok(IsotoneCurve { knots, values })
}

/// Runs the dynamics with `ν(R_k)` replaced by `retention[k](α_k)` and the
/// recorded risk by `risk[k](α_k)`; no model is fit.
pub fn simulate_from_curves(
    retention: &[IsotoneCurve],
    risk: &[IsotoneCurve],
    config: &DynamicsConfig,
) -> Result<Trajectory> {
    config.validate()?;
    let k = config.new_user_rates.len();
    if retention.len() != k || risk.len() != k {
        return Err(Error::invalid("curves", format!("need one retention and one risk curve per group ({k})")));
    }
    let mut lambda = config.initial();
    let mut states = Vec::with_capacity(config.rounds + 1);
    for _ in 0..=config.rounds {
        let alpha = normalize(&lambda);
        let risks = RiskVector::new(
            alpha
                .iter()
                .zip(risk)
                .map(|(a, c)| c.eval(*a).max(0.0))
                .collect(),
        )?;
        let next: Vec<f64> = lambda
            .iter()
            .zip(&alpha)
            .zip(retention)
            .zip(&config.new_user_rates)
            .map(|(((l, a), c), b)| l * c.eval(*a).clamp(0.0, 1.0) + b)
            .collect();
        states.push(SimState {
            lambda: std::mem::replace(&mut lambda, next),
            alpha,
            n: None,
            params: None,
            eta: None,
            risks,
        });
    }
    Ok(Trajectory::from_states(states))
}
