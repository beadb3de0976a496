//! Loss families and the two fitting procedures: weighted ERM and the
//! chi-square DRO dual, which minimizes `Σ w_i (ℓ_i - η)_+²` for fixed `η`
//! and searches `η` in an outer loop.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dro::{dual_bracket, dual_objective, golden_section, DualParams};
use crate::error::{Error, Result};
use crate::population::{validate_simplex, Observation};
use crate::rng::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    /// `‖θ - z‖²`
    SquaredMean,
    /// `‖θ - z‖₁`
    AbsoluteMedian,
    /// `‖θ - z‖₂`
    L2Median,
    /// `1[sign(θᵀx) ≠ y]`, evaluation only.
    ZeroOne,
    /// `log(1 + exp(-y θᵀx))`
    Logistic,
}

impl LossFamily {
    pub fn name(self) -> &'static str {
        match self {
            LossFamily::SquaredMean => "squared_mean",
            LossFamily::AbsoluteMedian => "absolute_median",
            LossFamily::L2Median => "l2_median",
            LossFamily::ZeroOne => "zero_one",
            LossFamily::Logistic => "logistic",
        }
    }

    pub fn is_trainable(self) -> bool {
        !matches!(self, LossFamily::ZeroOne)
    }

    /// Strongly convex in θ, so the population minimizer is a smooth
    /// function of the mixture weights.
    pub fn is_strongly_convex(self) -> bool {
        matches!(self, LossFamily::SquaredMean | LossFamily::Logistic)
    }

    pub fn loss(self, theta: &[f64], obs: &Observation) -> Result<f64> {
        check_dim(theta, obs)?;
        Ok(match self {
            LossFamily::SquaredMean => theta
                .iter()
                .zip(&obs.x)
                .map(|(t, z)| (t - z) * (t - z))
                .sum(),
            LossFamily::AbsoluteMedian => theta.iter().zip(&obs.x).map(|(t, z)| (t - z).abs()).sum(),
            LossFamily::L2Median => theta
                .iter()
                .zip(&obs.x)
                .map(|(t, z)| (t - z) * (t - z))
                .sum::<f64>()
                .sqrt(),
            LossFamily::ZeroOne => {
                let y = label(self, obs)?;
                let pred = if dot(theta, &obs.x) >= 0.0 { 1.0 } else { -1.0 };
                if pred == y {
                    0.0
                } else {
                    1.0
                }
            }
            LossFamily::Logistic => {
                let y = label(self, obs)?;
                softplus(-y * dot(theta, &obs.x))
            }
        })
    }

    /// Per-sample (sub)gradient `∇_θ ℓ(θ; z)`.
    pub fn gradient(self, theta: &[f64], obs: &Observation) -> Result<Vec<f64>> {
        let mut out = vec![0.0; theta.len()];
        self.loss_and_gradient(theta, obs, &mut out)?;
        Ok(out)
    }

    /// Writes the per-sample gradient into `grad` and returns the loss.
    pub fn loss_and_gradient(self, theta: &[f64], obs: &Observation, grad: &mut [f64]) -> Result<f64> {
        check_dim(theta, obs)?;
        match self {
            LossFamily::SquaredMean => {
                let mut loss = 0.0;
                for ((g, t), z) in grad.iter_mut().zip(theta).zip(&obs.x) {
                    let r = t - z;
                    loss += r * r;
                    *g = 2.0 * r;
                }
                Ok(loss)
            }
            LossFamily::AbsoluteMedian => {
                let mut loss = 0.0;
                for ((g, t), z) in grad.iter_mut().zip(theta).zip(&obs.x) {
                    let r = t - z;
                    loss += r.abs();
                    *g = if r > 0.0 {
                        1.0
                    } else if r < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
                Ok(loss)
            }
            LossFamily::L2Median => {
                let norm = theta
                    .iter()
                    .zip(&obs.x)
                    .map(|(t, z)| (t - z) * (t - z))
                    .sum::<f64>()
                    .sqrt();
                for ((g, t), z) in grad.iter_mut().zip(theta).zip(&obs.x) {
                    *g = if norm > 0.0 { (t - z) / norm } else { 0.0 };
                }
                Ok(norm)
            }
            LossFamily::ZeroOne => Err(Error::invalid(
                "family",
                "zero_one loss has no gradient; train with the logistic surrogate",
            )),
            LossFamily::Logistic => {
                let y = label(self, obs)?;
                let margin = y * dot(theta, &obs.x);
                let s = sigmoid(-margin);
                for (g, x) in grad.iter_mut().zip(&obs.x) {
                    *g = -y * s * x;
                }
                Ok(softplus(-margin))
            }
        }
    }

    /// Adds `scale · ∇²ℓ(θ; z)` to `hess`.
    fn add_hessian(self, theta: &[f64], obs: &Observation, scale: f64, hess: &mut DMatrix<f64>) {
        let d = theta.len();
        match self {
            LossFamily::SquaredMean => {
                for j in 0..d {
                    hess[(j, j)] += 2.0 * scale;
                }
            }
            LossFamily::L2Median => {
                let r: Vec<f64> = theta.iter().zip(&obs.x).map(|(t, z)| t - z).collect();
                let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for i in 0..d {
                        for j in 0..d {
                            let eye = if i == j { 1.0 } else { 0.0 };
                            hess[(i, j)] += scale * (eye - r[i] * r[j] / (norm * norm)) / norm;
                        }
                    }
                }
            }
            LossFamily::Logistic => {
                let y = obs.label.unwrap_or(1.0);
                let margin = y * dot(theta, &obs.x);
                let w = sigmoid(margin) * sigmoid(-margin);
                for i in 0..d {
                    for j in 0..d {
                        hess[(i, j)] += scale * w * obs.x[i] * obs.x[j];
                    }
                }
            }
            LossFamily::AbsoluteMedian | LossFamily::ZeroOne => {}
        }
    }
}

fn check_dim(theta: &[f64], obs: &Observation) -> Result<()> {
    if theta.len() != obs.x.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            found: obs.x.len(),
        });
    }
    Ok(())
}

fn label(family: LossFamily, obs: &Observation) -> Result<f64> {
    obs.label.ok_or(Error::MissingLabel {
        loss: family.name(),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Model parameters, optionally constrained to the sphere `‖θ‖₂ = bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_bound: Option<f64>,
}

impl ModelParams {
    pub fn new(theta: Vec<f64>) -> Self {
        ModelParams {
            theta,
            norm_bound: None,
        }
    }

    pub fn on_sphere(theta: Vec<f64>, bound: f64) -> Self {
        let mut p = ModelParams {
            theta,
            norm_bound: Some(bound),
        };
        p.project();
        p
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Renormalizes onto the constraint sphere.
    pub fn project(&mut self) {
        if let Some(bound) = self.norm_bound {
            let n = norm(&self.theta);
            if n > 0.0 {
                self.theta.iter_mut().for_each(|t| *t *= bound / n);
            } else if let Some(last) = self.theta.last_mut() {
                *last = bound;
            }
        }
    }

    /// Removes the component of `g` normal to the constraint sphere.
    fn tangent(&self, g: &[f64]) -> Vec<f64> {
        match self.norm_bound {
            Some(_) => {
                let n2 = dot(&self.theta, &self.theta);
                let c = dot(&self.theta, g) / n2;
                g.iter().zip(&self.theta).map(|(gi, ti)| gi - c * ti).collect()
            }
            None => g.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Full-batch (projected) gradient descent with a fixed nominal step,
    /// halved whenever a step fails to decrease the objective.
    #[default]
    GradientDescent,
    /// Damped (Riemannian, when constrained) Newton steps with backtracking.
    Newton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub method: Method,
    pub step_size: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Minibatch size for stochastic gradient descent. Stochastic runs stop
    /// after `max_iterations` without a gradient-norm test.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Width at which the golden-section search over `η` stops.
    pub eta_tolerance: f64,
    /// Replace the golden-section search by a grid of this many points.
    pub eta_grid_points: Option<usize>,
    /// Treat `max_iterations` as a fixed budget: return the last iterate
    /// instead of reporting non-convergence. With warm starts across rounds
    /// this models a learner that takes a few descent steps per round.
    pub budgeted: bool,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            method: Method::GradientDescent,
            step_size: 0.1,
            max_iterations: 5000,
            gradient_tolerance: 1e-6,
            batch_size: None,
            seed: 0,
            eta_tolerance: 1e-3,
            eta_grid_points: None,
            budgeted: false,
        }
    }
}

impl OptimizerSettings {
    pub fn newton() -> Self {
        OptimizerSettings {
            method: Method::Newton,
            max_iterations: 200,
            ..OptimizerSettings::default()
        }
    }
}

/// Per-sample transform applied to the loss inside the objective.
#[derive(Clone, Copy, Debug)]
enum Outer {
    Identity,
    /// `(ℓ - η)_+²`; derivative `2(ℓ - η)_+`, taken as 0 at `ℓ = η`.
    HingeSquared(f64),
}

impl Outer {
    fn value(self, l: f64) -> (f64, f64, f64) {
        match self {
            Outer::Identity => (l, 1.0, 0.0),
            Outer::HingeSquared(eta) => {
                let h = l - eta;
                if h > 0.0 {
                    (h * h, 2.0 * h, 2.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
        }
    }
}

struct Objective<'a> {
    family: LossFamily,
    samples: &'a [Observation],
    weights: &'a [f64],
    outer: Outer,
}

struct Evaluation {
    value: f64,
    grad: Vec<f64>,
    hess: Option<DMatrix<f64>>,
}

impl Objective<'_> {
    fn evaluate(&self, theta: &[f64], with_hessian: bool) -> Result<Evaluation> {
        self.evaluate_subset(theta, with_hessian, None)
    }

    fn evaluate_subset(
        &self,
        theta: &[f64],
        with_hessian: bool,
        subset: Option<&[usize]>,
    ) -> Result<Evaluation> {
        let d = theta.len();
        let mut value = 0.0;
        let mut grad = vec![0.0; d];
        let mut hess = with_hessian.then(|| DMatrix::zeros(d, d));
        let mut g = vec![0.0; d];
        let mut visit = |i: usize, scale: f64| -> Result<()> {
            let obs = &self.samples[i];
            let w = self.weights[i] * scale;
            if w == 0.0 {
                return Ok(());
            }
            let l = self.family.loss_and_gradient(theta, obs, &mut g)?;
            let (phi, dphi, ddphi) = self.outer.value(l);
            value += w * phi;
            if dphi != 0.0 {
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += w * dphi * gi;
                }
            }
            if let Some(h) = hess.as_mut() {
                if ddphi != 0.0 {
                    for a in 0..d {
                        for b in 0..d {
                            h[(a, b)] += w * ddphi * g[a] * g[b];
                        }
                    }
                }
                if dphi != 0.0 {
                    self.family.add_hessian(theta, obs, w * dphi, h);
                }
            }
            Ok(())
        };
        match subset {
            None => {
                for i in 0..self.samples.len() {
                    visit(i, 1.0)?;
                }
            }
            Some(idx) => {
                let total: f64 = idx.iter().map(|&i| self.weights[i]).sum();
                let scale = if total > 0.0 { 1.0 / total } else { 0.0 };
                for &i in idx {
                    visit(i, scale)?;
                }
            }
        }
        Ok(Evaluation { value, grad, hess })
    }

    fn minimize(&self, init: &ModelParams, settings: &OptimizerSettings) -> Result<ModelParams> {
        if settings.batch_size.is_some() {
            return self.stochastic(init, settings);
        }
        match settings.method {
            Method::GradientDescent => self.gradient_descent(init, settings),
            Method::Newton => self.newton(init, settings),
        }
    }

    fn gradient_descent(&self, init: &ModelParams, settings: &OptimizerSettings) -> Result<ModelParams> {
        let mut params = init.clone();
        params.project();
        let mut current = self.evaluate(&params.theta, false)?;
        let mut residual = f64::INFINITY;
        for _ in 0..settings.max_iterations {
            let direction = params.tangent(&current.grad);
            let gnorm2 = dot(&direction, &direction);
            residual = gnorm2.sqrt();
            if residual <= settings.gradient_tolerance {
                return Ok(params);
            }
            let mut step = settings.step_size;
            let mut accepted = None;
            while step > 1e-14 {
                let mut cand = params.clone();
                cand.theta
                    .iter_mut()
                    .zip(&direction)
                    .for_each(|(t, g)| *t -= step * g);
                cand.project();
                let eval = self.evaluate(&cand.theta, false)?;
                if eval.value <= current.value - 1e-4 * step * gnorm2 {
                    accepted = Some((cand, eval));
                    break;
                }
                step *= 0.5;
            }
            match accepted {
                Some((cand, eval)) => {
                    params = cand;
                    current = eval;
                }
                None => break,
            }
        }
        if settings.budgeted {
            return Ok(params);
        }
        Err(Error::NotConverged {
            what: "gradient descent",
            iterations: settings.max_iterations,
            residual,
        })
    }

    fn newton(&self, init: &ModelParams, settings: &OptimizerSettings) -> Result<ModelParams> {
        let mut params = init.clone();
        params.project();
        let d = params.dim();
        let mut residual = f64::INFINITY;
        let mut current = self.evaluate(&params.theta, true)?;
        for _ in 0..settings.max_iterations {
            let tangent = params.tangent(&current.grad);
            residual = norm(&tangent);
            if residual <= settings.gradient_tolerance {
                return Ok(params);
            }
            let hess = current.hess.take().unwrap_or_else(|| DMatrix::zeros(d, d));
            let system = match params.norm_bound {
                Some(bound) => {
                    // Riemannian Hessian on the sphere, with the normal
                    // direction pinned to the identity.
                    let unit = DVector::from_iterator(d, params.theta.iter().map(|t| t / bound));
                    let proj = DMatrix::identity(d, d) - &unit * unit.transpose();
                    let radial = dot(&params.theta, &current.grad) / (bound * bound);
                    &proj * hess * &proj - proj * radial + &unit * unit.transpose()
                }
                None => hess,
            };
            let rhs = DVector::from_iterator(d, tangent.iter().map(|g| -g));
            let newton_dir = system
                .cholesky()
                .map(|c| c.solve(&rhs))
                .filter(|dir| dir.dot(&rhs) > 0.0)
                .map(|dir| dir.iter().copied().collect::<Vec<_>>());
            let (direction, mut step) = match newton_dir {
                Some(dir) => (dir, 1.0),
                None => (tangent.iter().map(|g| -g).collect(), settings.step_size),
            };
            let slope = dot(&direction, &tangent);
            let mut accepted = None;
            while step > 1e-14 {
                let mut cand = params.clone();
                cand.theta
                    .iter_mut()
                    .zip(&direction)
                    .for_each(|(t, s)| *t += step * s);
                cand.project();
                let eval = self.evaluate(&cand.theta, true)?;
                if eval.value <= current.value + 1e-4 * step * slope {
                    accepted = Some((cand, eval));
                    break;
                }
                step *= 0.5;
            }
            match accepted {
                Some((cand, eval)) => {
                    params = cand;
                    current = eval;
                }
                None => {
                    // No decrease is representable: we are at the floating
                    // point floor of a smooth minimum.
                    if residual <= settings.gradient_tolerance.sqrt() {
                        return Ok(params);
                    }
                    break;
                }
            }
        }
        if settings.budgeted {
            return Ok(params);
        }
        Err(Error::NotConverged {
            what: "newton",
            iterations: settings.max_iterations,
            residual,
        })
    }

    fn stochastic(&self, init: &ModelParams, settings: &OptimizerSettings) -> Result<ModelParams> {
        let batch = settings.batch_size.unwrap_or(1).max(1);
        let mut rng = rng_from_seed(settings.seed);
        let mut params = init.clone();
        params.project();
        let n = self.samples.len();
        let mut idx = vec![0usize; batch];
        for _ in 0..settings.max_iterations {
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
            let eval = self.evaluate_subset(&params.theta, false, Some(&idx))?;
            let direction = params.tangent(&eval.grad);
            params
                .theta
                .iter_mut()
                .zip(&direction)
                .for_each(|(t, g)| *t -= settings.step_size * g);
            params.project();
        }
        Ok(params)
    }
}

fn check_training_inputs(
    family: LossFamily,
    samples: &[Observation],
    weights: &[f64],
    init: &ModelParams,
) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("samples", "must be nonempty"));
    }
    if samples.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            found: weights.len(),
        });
    }
    validate_simplex("weights", weights, 1e-9)?;
    if !family.is_trainable() {
        return Err(Error::invalid(
            "family",
            "zero_one is evaluation-only; train with logistic",
        ));
    }
    if let Some(s) = samples.iter().find(|s| s.x.len() != init.dim()) {
        return Err(Error::DimensionMismatch {
            expected: init.dim(),
            found: s.x.len(),
        });
    }
    Ok(())
}

/// Weighted median of scalars; ties at exactly half the mass split evenly
/// between the two middle values.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = order.iter().map(|&i| weights[i]).sum();
    let half = 0.5 * total;
    let mut cum = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        cum += weights[i];
        if (cum - half).abs() <= 1e-12 * total {
            if let Some(&next) = order[pos + 1..].iter().find(|&&j| values[j] > values[i]) {
                return 0.5 * (values[i] + values[next]);
            }
            return values[i];
        }
        if cum > half {
            return values[i];
        }
    }
    order.last().map(|&i| values[i]).unwrap_or(0.0)
}

/// Weighted geometric median by Weiszfeld iterations.
fn geometric_median(
    samples: &[Observation],
    weights: &[f64],
    init: &[f64],
    settings: &OptimizerSettings,
) -> Result<Vec<f64>> {
    let d = init.len();
    let mut theta = init.to_vec();
    let mut step = f64::INFINITY;
    for _ in 0..settings.max_iterations {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        for (obs, &w) in samples.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let dist = theta
                .iter()
                .zip(&obs.x)
                .map(|(t, z)| (t - z) * (t - z))
                .sum::<f64>()
                .sqrt()
                .max(1e-12);
            num.iter_mut().zip(&obs.x).for_each(|(n, z)| *n += w * z / dist);
            den += w / dist;
        }
        let next: Vec<f64> = num.iter().map(|n| n / den).collect();
        step = theta
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        theta = next;
        if step <= settings.gradient_tolerance * 1e-3 * (1.0 + norm(&theta)) {
            return Ok(theta);
        }
    }
    Err(Error::NotConverged {
        what: "weiszfeld",
        iterations: settings.max_iterations,
        residual: step,
    })
}

/// Weighted empirical risk minimizer.
///
/// Closed forms: weighted mean for `squared_mean`, coordinatewise weighted
/// median for `absolute_median`, weighted median for `l2_median` in one
/// dimension. Other cases use the configured iterative method.
pub fn erm_fit(
    family: LossFamily,
    samples: &[Observation],
    weights: &[f64],
    init: &ModelParams,
    settings: &OptimizerSettings,
) -> Result<ModelParams> {
    check_training_inputs(family, samples, weights, init)?;
    let d = init.dim();
    let closed = match family {
        LossFamily::SquaredMean => Some(
            (0..d)
                .map(|j| samples.iter().zip(weights).map(|(s, w)| w * s.x[j]).sum())
                .collect::<Vec<f64>>(),
        ),
        LossFamily::AbsoluteMedian => Some(
            (0..d)
                .map(|j| {
                    let coord: Vec<f64> = samples.iter().map(|s| s.x[j]).collect();
                    weighted_median(&coord, weights)
                })
                .collect(),
        ),
        LossFamily::L2Median if d == 1 => {
            let coord: Vec<f64> = samples.iter().map(|s| s.x[0]).collect();
            Some(vec![weighted_median(&coord, weights)])
        }
        LossFamily::L2Median if init.norm_bound.is_none() => {
            Some(geometric_median(samples, weights, &init.theta, settings)?)
        }
        _ => None,
    };
    if let Some(theta) = closed {
        let mut params = ModelParams {
            theta,
            norm_bound: init.norm_bound,
        };
        params.project();
        return Ok(params);
    }
    Objective {
        family,
        samples,
        weights,
        outer: Outer::Identity,
    }
    .minimize(init, settings)
}

/// Minimizes the dual surrogate `Σ w_i (ℓ(θ; z_i) - η)_+²` for a fixed `η`.
pub fn dro_fit_eta(
    family: LossFamily,
    samples: &[Observation],
    weights: &[f64],
    eta: f64,
    init: &ModelParams,
    settings: &OptimizerSettings,
) -> Result<ModelParams> {
    check_training_inputs(family, samples, weights, init)?;
    Objective {
        family,
        samples,
        weights,
        outer: Outer::HingeSquared(eta),
    }
    .minimize(init, settings)
}

/// Value and gradient of the surrogate; exposed for gradient checks.
pub fn surrogate_value_and_gradient(
    family: LossFamily,
    samples: &[Observation],
    weights: &[f64],
    eta: f64,
    theta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let eval = Objective {
        family,
        samples,
        weights,
        outer: Outer::HingeSquared(eta),
    }
    .evaluate(theta, false)?;
    Ok((eval.value, eval.grad))
}

pub fn losses_at(family: LossFamily, samples: &[Observation], params: &ModelParams) -> Result<Vec<f64>> {
    samples.iter().map(|s| family.loss(&params.theta, s)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroFit {
    pub params: ModelParams,
    /// Selected threshold; `-∞` when `α_min = 1` (the robust risk is the mean).
    pub eta: f64,
    /// Dual value `F(θ, η)`, an upper bound on the worst-case group risk of
    /// any group with weight at least `α_min`.
    pub certificate: f64,
}

/// Fits `θ` by minimizing `η ↦ F(θ̂_η, η)` over the threshold, where `θ̂_η`
/// is [`dro_fit_eta`]. Golden-section search by default, or a grid when
/// `settings.eta_grid_points` is set.
pub fn dro_fit(
    family: LossFamily,
    samples: &[Observation],
    weights: &[f64],
    dual: &DualParams,
    init: &ModelParams,
    settings: &OptimizerSettings,
) -> Result<DroFit> {
    check_training_inputs(family, samples, weights, init)?;
    if dual.c_const <= 1.0 {
        let params = erm_fit(family, samples, weights, init, settings)?;
        let losses = losses_at(family, samples, &params)?;
        let certificate = dot(&losses, weights);
        return Ok(DroFit {
            params,
            eta: f64::NEG_INFINITY,
            certificate,
        });
    }

    let init_losses = losses_at(family, samples, init)?;
    let (lo, hi) = dual_bracket(&init_losses, weights, dual.c_const);
    let mut warm = init.clone();
    let mut best: Option<DroFit> = None;
    let mut failure: Option<Error> = None;
    let mut evaluate = |eta: f64| -> f64 {
        match dro_fit_eta(family, samples, weights, eta, &warm, settings)
            .and_then(|p| losses_at(family, samples, &p).map(|l| (p, l)))
        {
            Ok((params, losses)) => {
                let value = dual_objective(&losses, weights, eta, dual);
                warm = params.clone();
                if best.as_ref().is_none_or(|b| value < b.certificate) {
                    best = Some(DroFit {
                        params,
                        eta,
                        certificate: value,
                    });
                }
                value
            }
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        }
    };
    match settings.eta_grid_points {
        Some(points) => {
            let points = points.max(2);
            for i in 0..points {
                evaluate(lo + (hi - lo) * i as f64 / (points - 1) as f64);
            }
        }
        None => {
            golden_section(&mut evaluate, lo, hi, settings.eta_tolerance)?;
        }
    }
    match (best, failure) {
        (Some(fit), _) => Ok(fit),
        (None, Some(e)) => Err(e),
        (None, None) => Err(Error::invalid("eta", "empty search bracket")),
    }
}

/// Fits the surrogate at a fixed `η` and reports the dual value there.
pub fn dro_fit_fixed_eta(
    family: LossFamily,
    samples: &[Observation],
    weights: &[f64],
    dual: &DualParams,
    eta: f64,
    init: &ModelParams,
    settings: &OptimizerSettings,
) -> Result<DroFit> {
    let params = dro_fit_eta(family, samples, weights, eta, init, settings)?;
    let losses = losses_at(family, samples, &params)?;
    let certificate = dual_objective(&losses, weights, eta, dual);
    Ok(DroFit {
        params,
        eta,
        certificate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pts(z: &[f64]) -> Vec<Observation> {
        z.iter().map(|v| Observation::scalar(*v)).collect()
    }

    #[test]
    fn erm_closed_forms() {
        let s = pts(&[-1.0, 1.0]);
        let init = ModelParams::new(vec![0.3]);
        let st = OptimizerSettings::default();
        let mean = |w: &[f64]| erm_fit(LossFamily::SquaredMean, &s, w, &init, &st).unwrap().theta[0];
        assert_abs_diff_eq!(mean(&[0.5, 0.5]), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mean(&[0.9, 0.1]), -0.8, epsilon = 1e-12);
        let med = erm_fit(LossFamily::AbsoluteMedian, &s, &[0.9, 0.1], &init, &st).unwrap();
        assert_eq!(med.theta, vec![-1.0]);
        let tie = erm_fit(LossFamily::AbsoluteMedian, &s, &[0.5, 0.5], &init, &st).unwrap();
        assert_eq!(tie.theta, vec![0.0]);
    }

    #[test]
    fn median_degeneracy_under_tiny_imbalance() {
        let s = pts(&[-1.0, 1.0]);
        let st = OptimizerSettings::default();
        let init = ModelParams::new(vec![0.0]);
        let d = 1e-6;
        let p = erm_fit(LossFamily::AbsoluteMedian, &s, &[0.5 + d, 0.5 - d], &init, &st).unwrap();
        assert_eq!(p.theta, vec![-1.0]);
    }

    #[test]
    fn zero_one_is_not_trainable() {
        let s = vec![Observation::labeled(vec![1.0, 0.0], 1.0)];
        let r = erm_fit(
            LossFamily::ZeroOne,
            &s,
            &[1.0],
            &ModelParams::new(vec![0.0, 1.0]),
            &OptimizerSettings::default(),
        );
        assert!(r.is_err());
    }

    /// 1-D grid oracle for `Σ w (|θ - z| - η)_+²`.
    fn grid_surrogate_min(z: &[f64], w: &[f64], eta: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut t = -1.5;
        while t <= 1.5 + 1e-12 {
            let v: f64 = z
                .iter()
                .zip(w)
                .map(|(zi, wi)| wi * ((t - zi).abs() - eta).max(0.0).powi(2))
                .sum();
            if v < best.0 {
                best = (v, t);
            }
            t += 1e-4;
        }
        best.1
    }

    #[test]
    fn surrogate_fit_matches_grid() {
        let s = pts(&[-1.0, 1.0]);
        let w = [0.9, 0.1];
        let oracle = grid_surrogate_min(&[-1.0, 1.0], &w, 0.5);
        let fit = dro_fit_eta(
            LossFamily::AbsoluteMedian,
            &s,
            &w,
            0.5,
            &ModelParams::new(vec![0.0]),
            &OptimizerSettings::default(),
        )
        .unwrap();
        assert!((fit.theta[0] - oracle).abs() < 2e-4, "{} vs {oracle}", fit.theta[0]);
        assert_abs_diff_eq!(oracle, -0.4, epsilon = 1e-3);
    }

    #[test]
    fn inactive_hinge_keeps_init() {
        let s = pts(&[-1.0, 1.0]);
        let init = ModelParams::new(vec![0.2]);
        let fit = dro_fit_eta(
            LossFamily::AbsoluteMedian,
            &s,
            &[0.5, 0.5],
            5.0,
            &init,
            &OptimizerSettings::default(),
        )
        .unwrap();
        assert_eq!(fit, init);
    }

    #[test]
    fn symmetric_squared_surrogate() {
        let s = pts(&[-1.0, 1.0]);
        let fit = dro_fit_eta(
            LossFamily::SquaredMean,
            &s,
            &[0.5, 0.5],
            0.0,
            &ModelParams::new(vec![0.4]),
            &OptimizerSettings::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(fit.theta[0], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn dro_median_moves_toward_fair_point() {
        let s = pts(&[-1.0, 1.0]);
        let w = [0.9, 0.1];
        let dual = DualParams::new(0.1).unwrap();
        let fit = dro_fit(
            LossFamily::AbsoluteMedian,
            &s,
            &w,
            &dual,
            &ModelParams::new(vec![0.0]),
            &OptimizerSettings { eta_tolerance: 1e-6, ..Default::default() },
        )
        .unwrap();
        let erm = -1.0f64;
        assert!(fit.theta_abs() <= 0.5, "theta {}", fit.params.theta[0]);
        assert!(fit.theta_abs() * 2.0 <= erm.abs());
        // certificate covers both groups
        let worst = (fit.params.theta[0] + 1.0).abs().max((fit.params.theta[0] - 1.0).abs());
        assert!(worst <= fit.certificate + 1e-6);
    }

    impl DroFit {
        fn theta_abs(&self) -> f64 {
            self.params.theta[0].abs()
        }
    }

    #[test]
    fn unit_alpha_reduces_to_erm() {
        let s = pts(&[-1.0, 0.5, 2.0]);
        let w = [0.2, 0.5, 0.3];
        let init = ModelParams::new(vec![0.0]);
        let st = OptimizerSettings::default();
        let erm = erm_fit(LossFamily::SquaredMean, &s, &w, &init, &st).unwrap();
        let dro = dro_fit(LossFamily::SquaredMean, &s, &w, &DualParams::new(1.0).unwrap(), &init, &st)
            .unwrap();
        assert_abs_diff_eq!(erm.theta[0], dro.params.theta[0], epsilon = 1e-9);
        let mean_loss: f64 = losses_at(LossFamily::SquaredMean, &s, &erm)
            .unwrap()
            .iter()
            .zip(&w)
            .map(|(l, w)| l * w)
            .sum();
        assert_abs_diff_eq!(dro.certificate, mean_loss, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_squared_dro_stays_centered() {
        let s = pts(&[-1.0, 1.0]);
        for a in [0.1, 0.3, 0.5] {
            let fit = dro_fit(
                LossFamily::SquaredMean,
                &s,
                &[0.5, 0.5],
                &DualParams::new(a).unwrap(),
                &ModelParams::new(vec![0.0]),
                &OptimizerSettings::default(),
            )
            .unwrap();
            assert_abs_diff_eq!(fit.params.theta[0], 0.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn logistic_stays_on_sphere() {
        let s = vec![
            Observation::labeled(vec![1.0, 0.5], 1.0),
            Observation::labeled(vec![-0.5, 1.0], -1.0),
            Observation::labeled(vec![0.2, -1.0], 1.0),
        ];
        let w = [0.4, 0.3, 0.3];
        for settings in [OptimizerSettings::default(), OptimizerSettings::newton()] {
            let fit = erm_fit(
                LossFamily::Logistic,
                &s,
                &w,
                &ModelParams::on_sphere(vec![0.0, 1.0], 1.0),
                &settings,
            )
            .unwrap();
            assert_abs_diff_eq!(norm(&fit.theta), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn newton_and_gradient_descent_agree() {
        let s = vec![
            Observation::labeled(vec![1.0, 0.5], 1.0),
            Observation::labeled(vec![-0.5, 1.0], -1.0),
            Observation::labeled(vec![0.2, -1.0], 1.0),
            Observation::labeled(vec![-1.0, -0.3], -1.0),
        ];
        let w = [0.25; 4];
        let init = ModelParams::on_sphere(vec![0.0, 1.0], 1.0);
        let gd = dro_fit_eta(LossFamily::Logistic, &s, &w, 0.3, &init, &OptimizerSettings::default())
            .unwrap();
        let nt = dro_fit_eta(LossFamily::Logistic, &s, &w, 0.3, &init, &OptimizerSettings::newton())
            .unwrap();
        assert_abs_diff_eq!(gd.theta[0], nt.theta[0], epsilon = 1e-5);
        assert_abs_diff_eq!(gd.theta[1], nt.theta[1], epsilon = 1e-5);
    }

    #[test]
    fn geometric_median_of_symmetric_triangle() {
        let s: Vec<Observation> = (0..3)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                Observation::point(vec![a.cos(), a.sin()])
            })
            .collect();
        let fit = erm_fit(
            LossFamily::L2Median,
            &s,
            &[1.0 / 3.0; 3],
            &ModelParams::new(vec![0.3, -0.2]),
            &OptimizerSettings::default(),
        )
        .unwrap();
        assert!(norm(&fit.theta) < 1e-6);
    }

    #[test]
    fn stochastic_mode_runs_deterministically() {
        let s = pts(&[-1.0, 0.0, 1.0, 2.0]);
        let st = OptimizerSettings {
            batch_size: Some(2),
            step_size: 0.002,
            max_iterations: 500,
            seed: 5,
            ..Default::default()
        };
        let a = dro_fit_eta(LossFamily::SquaredMean, &s, &[0.25; 4], 0.0, &ModelParams::new(vec![3.0]), &st)
            .unwrap();
        let b = dro_fit_eta(LossFamily::SquaredMean, &s, &[0.25; 4], 0.0, &ModelParams::new(vec![3.0]), &st)
            .unwrap();
        assert_eq!(a, b);
        assert!(a.theta[0].abs() < 2.0);
    }
}
