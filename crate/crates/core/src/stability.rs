//! Fixed points of the expected population map `Φ` and their local
//! stability.
//!
//! For ERM with a strongly convex loss the minimizer `θ(α)` is smooth, and
//! the chain rule through `α = λ / Σλ`, `θ(α)` and `R(θ)` gives
//!
//! ```text
//! J_Φ(λ*) = diag(ν(R)) - diag(λ* ν′(R)) ∇L H⁻¹ ∇Lᵀ (I / S - λ* 1ᵀ / S²)
//! ```
//!
//! with `S = Σλ*`. A fixed point is stable when the spectral radius of
//! `J_Φ` is below one and unstable when it exceeds one.

use nalgebra::{DMatrix, DVector, Schur};
use serde::{Deserialize, Serialize};

use crate::dynamics::{normalize, step_expected, DynamicsConfig, Learner, RetentionFunction};
use crate::error::{Error, Result};
use crate::models::{erm_fit, LossFamily, ModelParams};
use crate::population::{EvalPool, GroupMixture, Observation, RiskVector};

pub const DEFAULT_MARGIN: f64 = 1e-6;
pub const STATIONARITY_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupGradients {
    /// `K × d`; row `k` is `∇_θ R_k(θ*)`.
    pub grad_matrix: DMatrix<f64>,
    /// `d × d` Hessian of the `α*`-weighted population risk.
    pub hessian: DMatrix<f64>,
}

impl GroupGradients {
    pub fn new(grad_matrix: DMatrix<f64>, hessian: DMatrix<f64>) -> Result<Self> {
        let d = hessian.nrows();
        if hessian.ncols() != d || grad_matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: if hessian.ncols() != d { hessian.ncols() } else { grad_matrix.ncols() },
            });
        }
        if (&hessian - hessian.transpose()).amax() > 1e-9 {
            return Err(Error::invalid("hessian", "must be symmetric"));
        }
        let min_eigenvalue = hessian.clone().symmetric_eigenvalues().min();
        if !(min_eigenvalue > 0.0) {
            return Err(Error::SingularHessian { min_eigenvalue });
        }
        Ok(GroupGradients {
            grad_matrix,
            hessian,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.grad_matrix.nrows()
    }

    /// `∇L H⁻¹ ∇Lᵀ`, the `K × K` risk sensitivity to the mixture weights.
    pub fn sensitivity(&self) -> DMatrix<f64> {
        let h_inv_lt = self
            .hessian
            .clone()
            .lu()
            .solve(&self.grad_matrix.transpose())
            .expect("positive definite by construction");
        &self.grad_matrix * h_inv_lt
    }
}

/// Iterates `λ ← Φ(λ)` until `‖Φ(λ) - λ‖∞ ≤ tolerance`. When the residual
/// grows the update is damped by one half. Only attracting fixed points
/// (or points attracting within an invariant subspace) are found this way.
pub fn find_fixed_point(
    mut phi: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    init: &[f64],
    tolerance: f64,
    max_iterations: usize,
) -> Result<Vec<f64>> {
    if !(tolerance > 0.0) {
        return Err(Error::invalid("tolerance", "must be positive"));
    }
    let mut lambda = init.to_vec();
    let mut damping: f64 = 1.0;
    let mut last = f64::INFINITY;
    let mut residual = f64::INFINITY;
    let mut previous_step: Option<Vec<f64>> = None;
    for _ in 0..max_iterations {
        let next = phi(&lambda)?;
        let step: Vec<f64> = next.iter().zip(&lambda).map(|(a, b)| a - b).collect();
        residual = step.iter().map(|d| d.abs()).fold(0.0, f64::max);
        if !residual.is_finite() {
            break;
        }
        if residual <= tolerance {
            return Ok(lambda);
        }
        let oscillating = previous_step
            .as_ref()
            .is_some_and(|p| p.iter().zip(&step).map(|(a, b)| a * b).sum::<f64>() < 0.0);
        if oscillating {
            damping = damping.min(0.5);
        }
        if residual > last {
            damping *= 0.5;
        }
        last = residual;
        lambda
            .iter_mut()
            .zip(&step)
            .for_each(|(l, d)| *l += damping * d);
        previous_step = Some(step);
    }
    Err(Error::NotConverged {
        what: "fixed-point iteration",
        iterations: max_iterations,
        residual,
    })
}

/// The symmetric fixed point `λ_k = b_k / (1 - ν(R))` under a pinned risk.
pub fn pinned_fixed_point(new_user_rates: &[f64], risk: f64, retention: &RetentionFunction) -> Result<Vec<f64>> {
    let v = retention.value(risk);
    if v >= 1.0 {
        return Err(Error::NotConverged {
            what: "pinned fixed point (full retention diverges)",
            iterations: 0,
            residual: f64::INFINITY,
        });
    }
    Ok(new_user_rates.iter().map(|b| b / (1.0 - v)).collect())
}

/// Analytic Jacobian of `Φ` at `λ*`.
pub fn jacobian_phi(
    lambda_star: &[f64],
    grads: &GroupGradients,
    risks: &RiskVector,
    retention: &RetentionFunction,
) -> Result<DMatrix<f64>> {
    let k = lambda_star.len();
    if grads.num_groups() != k || risks.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: if grads.num_groups() != k { grads.num_groups() } else { risks.len() },
        });
    }
    let s: f64 = lambda_star.iter().sum();
    let lam = DVector::from_column_slice(lambda_star);
    // ∂α/∂λ
    let d_alpha = DMatrix::identity(k, k) / s - &lam * DVector::repeat(k, 1.0).transpose() / (s * s);
    let r = risks.values();
    let nu = DMatrix::from_diagonal(&DVector::from_iterator(k, r.iter().map(|x| retention.value(*x))));
    let scale = DMatrix::from_diagonal(&DVector::from_iterator(
        k,
        (0..k).map(|i| lambda_star[i] * retention.derivative(r[i])),
    ));
    Ok(nu - scale * grads.sensitivity() * d_alpha)
}

/// Largest eigenvalue modulus. Closed-form characteristic polynomial for
/// `K ≤ 3`, Schur decomposition otherwise. A 3×3 matrix whose eigenvalues
/// nearly coincide also goes through Schur, since clustered polynomial roots
/// lose most of their digits.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius needs a square matrix");
    match m.nrows() {
        0 => 0.0,
        1 => m[(0, 0)].abs(),
        2 => quadratic_radius(m.trace(), m.determinant()),
        3 => {
            let tr = m.trace();
            let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
                + m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)]
                + m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)];
            let det = m.determinant();
            let schur = if cubic_is_clustered(tr, minors, det) { schur_radius(m) } else { None };
            schur.unwrap_or_else(|| cubic_radius(tr, minors, det))
        }
        _ => schur_radius(m).unwrap_or_else(|| power_radius(m)),
    }
}

fn schur_radius(m: &DMatrix<f64>) -> Option<f64> {
    Schur::try_new(m.clone(), f64::EPSILON, 10_000).map(|schur| {
        schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    })
}

/// Norm-growth estimate `‖Aᵏ‖^{1/k}`, used only if Schur fails to converge.
fn power_radius(m: &DMatrix<f64>) -> f64 {
    let mut p = m.clone();
    let mut log_scale = 0.0;
    let steps = 64;
    for _ in 0..steps {
        let n = p.norm();
        if n == 0.0 {
            return 0.0;
        }
        p /= n;
        log_scale += n.ln();
        p = &p * m;
    }
    ((log_scale + p.norm().ln()) / (steps + 1) as f64).exp()
}

/// Discriminant test on the depressed cubic of `x³ - a x² + b x - c`.
fn cubic_is_clustered(a: f64, b: f64, c: f64) -> bool {
    let scale = a.abs().max(b.abs().sqrt()).max(c.abs().cbrt());
    if scale == 0.0 {
        return true;
    }
    let (a, b, c) = (a / scale, b / scale.powi(2), c / scale.powi(3));
    let p = b - a * a / 3.0;
    let q = -2.0 * a.powi(3) / 27.0 + a * b / 3.0 - c;
    (4.0 * p.powi(3) + 27.0 * q * q).abs() <= 1e-6
}

/// Radius of the roots of `x² - tr x + det`.
fn quadratic_radius(tr: f64, det: f64) -> f64 {
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let root = disc.sqrt();
        (tr / 2.0).abs() + root
    } else {
        det.sqrt()
    }
}

/// Radius of the roots of `x³ - a x² + b x - c`.
fn cubic_radius(a: f64, b: f64, c: f64) -> f64 {
    let p = |x: f64| ((x - a) * x + b) * x - c;
    let dp = |x: f64| (3.0 * x - 2.0 * a) * x + b;
    // Every real root lies inside the Cauchy bound.
    let bound = 1.0 + a.abs().max(b.abs()).max(c.abs());
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON * bound {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..3 {
        let d = dp(x);
        if d != 0.0 {
            let step = p(x) / d;
            if step.is_finite() {
                x -= step;
            }
        }
    }
    // Deflate: x² - (a - x) y + c / x, or via b when x is zero.
    let tr = a - x;
    let det = if x != 0.0 { c / x } else { b };
    x.abs().max(quadratic_radius(tr, det))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

impl Verdict {
    pub fn from_radius(rho: f64, margin: f64) -> Self {
        if rho < 1.0 - margin {
            Verdict::Stable
        } else if rho > 1.0 + margin {
            Verdict::Unstable
        } else {
            Verdict::Marginal
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub fixed_point: Vec<f64>,
    /// Row-major `K × K`.
    pub jacobian: Vec<Vec<f64>>,
    pub spectral_radius: f64,
    pub verdict: Verdict,
    pub criterion: String,
}

pub fn classify_fixed_point(
    lambda_star: &[f64],
    grads: &GroupGradients,
    risks: &RiskVector,
    retention: &RetentionFunction,
    margin: f64,
) -> Result<StabilityReport> {
    let jac = jacobian_phi(lambda_star, grads, risks, retention)?;
    let rho = spectral_radius(&jac);
    Ok(StabilityReport {
        fixed_point: lambda_star.to_vec(),
        jacobian: jac.row_iter().map(|r| r.iter().copied().collect()).collect(),
        spectral_radius: rho,
        verdict: Verdict::from_radius(rho, margin),
        criterion: "spectral radius of the population-map Jacobian".into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetricTest {
    pub lhs: f64,
    pub rhs: f64,
    pub unstable: bool,
    /// Set when the right-hand side is infinite and the test cannot fire.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn symmetric_outcome(lhs: f64, numerator: f64, denominator: f64, scale: f64) -> SymmetricTest {
    if denominator <= 0.0 {
        return SymmetricTest {
            lhs,
            rhs: f64::INFINITY,
            unstable: false,
            note: Some("risk sensitivity is zero; the test never fires".into()),
        };
    }
    let rhs = numerator / denominator * scale;
    SymmetricTest {
        lhs,
        rhs,
        unstable: lhs > rhs,
        note: None,
    }
}

/// Sufficient condition for instability at a symmetric fixed point:
/// `ρ(∇L H⁻¹ ∇Lᵀ) > (1 - ν(R₁)) / (-ν′(R₁) / k)`.
pub fn symmetric_instability_test(
    grads: &GroupGradients,
    risk: f64,
    retention: &RetentionFunction,
    k: usize,
) -> SymmetricTest {
    let lhs = spectral_radius(&grads.sensitivity());
    symmetric_outcome(lhs, 1.0 - retention.value(risk), -retention.derivative(risk), k as f64)
}

/// The same condition for `λ′ = h(λ, R)`:
/// `ρ(∇L H⁻¹ ∇Lᵀ) > (1 - ∂h/∂λ) / (-∂h/∂R) · k λ₁`.
pub fn generalized_symmetric_test(
    grads: &GroupGradients,
    dh_dlambda: f64,
    dh_drisk: f64,
    k: usize,
    lambda_1: f64,
) -> Result<SymmetricTest> {
    if dh_drisk > 0.0 {
        return Err(Error::invalid("dh_drisk", "h must be nonincreasing in risk"));
    }
    let lhs = spectral_radius(&grads.sensitivity());
    Ok(symmetric_outcome(lhs, 1.0 - dh_dlambda, -dh_drisk, k as f64 * lambda_1))
}

fn mean_gradient(family: LossFamily, obs: &[Observation], theta: &[f64]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; theta.len()];
    let mut g = vec![0.0; theta.len()];
    for o in obs {
        family.loss_and_gradient(theta, o, &mut g)?;
        acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let n = obs.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

fn weighted_gradient(family: LossFamily, pool: &EvalPool, theta: &[f64], alpha: &[f64]) -> Result<Vec<f64>> {
    let mut total = vec![0.0; theta.len()];
    for (k, a) in alpha.iter().enumerate() {
        let g = mean_gradient(family, pool.group(k), theta)?;
        total.iter_mut().zip(&g).for_each(|(t, gi)| *t += a * gi);
    }
    Ok(total)
}

/// Per-group risk gradients and the weighted Hessian at `θ*`, after checking
/// that `θ*` is stationary for the `α*`-weighted risk on the same pool.
pub fn group_gradients(
    family: LossFamily,
    pool: &EvalPool,
    theta_star: &[f64],
    alpha_star: &[f64],
) -> Result<GroupGradients> {
    if !family.is_strongly_convex() {
        return Err(Error::NotApplicable("non-strongly-convex loss".into()));
    }
    let k = pool.num_groups();
    if alpha_star.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: alpha_star.len(),
        });
    }
    let d = theta_star.len();
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|g| mean_gradient(family, pool.group(g), theta_star))
        .collect::<Result<_>>()?;
    let grad_matrix = DMatrix::from_fn(k, d, |i, j| rows[i][j]);
    let stationarity = DVector::from_column_slice(alpha_star).transpose() * &grad_matrix;
    let norm = stationarity.norm();
    if norm > STATIONARITY_TOLERANCE {
        return Err(Error::NotStationary {
            norm,
            tolerance: STATIONARITY_TOLERANCE,
        });
    }
    let hessian = match family {
        LossFamily::SquaredMean => DMatrix::identity(d, d) * 2.0,
        _ => {
            let mut h = DMatrix::zeros(d, d);
            for j in 0..d {
                let step = 1e-5 * theta_star[j].abs().max(1.0);
                let mut plus = theta_star.to_vec();
                let mut minus = theta_star.to_vec();
                plus[j] += step;
                minus[j] -= step;
                let gp = weighted_gradient(family, pool, &plus, alpha_star)?;
                let gm = weighted_gradient(family, pool, &minus, alpha_star)?;
                for i in 0..d {
                    h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
                }
            }
            (&h + h.transpose()) * 0.5
        }
    };
    GroupGradients::new(grad_matrix, hessian)
}

/// Expected population map `Φ(λ)` with an ERM fit on `pool` at `α = λ / Σλ`.
pub fn erm_population_map<'a>(
    pool: &'a EvalPool,
    learner: &'a Learner,
    config: &'a DynamicsConfig,
) -> impl Fn(&[f64]) -> Result<Vec<f64>> + 'a {
    move |lambda: &[f64]| {
        let (theta, risks) = erm_state(pool, learner, lambda)?;
        let _ = theta;
        step_expected(lambda, &risks, config)
    }
}

fn erm_state(pool: &EvalPool, learner: &Learner, lambda: &[f64]) -> Result<(ModelParams, RiskVector)> {
    let alpha = normalize(lambda);
    let mut samples = Vec::new();
    let mut weights = Vec::new();
    for (k, a) in alpha.iter().enumerate() {
        let g = pool.group(k);
        samples.extend_from_slice(g);
        weights.extend(std::iter::repeat_n(a / g.len() as f64, g.len()));
    }
    let theta = erm_fit(learner.train_family, &samples, &weights, &learner.init, &learner.optimizer)?;
    let risks = pool.risks(learner.eval_family, &theta)?;
    Ok((theta, risks))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityAnalysis {
    pub report: StabilityReport,
    pub theta_star: Vec<f64>,
    pub risks: Vec<f64>,
    /// Present when the fixed point is symmetric (equal counts and risks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetric: Option<SymmetricTest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generalized: Option<SymmetricTest>,
}

/// Finds the ERM fixed point reached from `config.initial()`, then
/// classifies it; for symmetric fixed points both symmetric tests run too.
pub fn analyze_erm(mixture: &GroupMixture, learner: &Learner, config: &DynamicsConfig) -> Result<StabilityAnalysis> {
    if !learner.train_family.is_strongly_convex() || learner.train_family != learner.eval_family {
        return Err(Error::NotApplicable("non-strongly-convex loss".into()));
    }
    config.validate()?;
    let pool = EvalPool::draw(mixture, config.risk_eval.per_group, config.risk_eval.seed)?;
    let phi = erm_population_map(&pool, learner, config);
    let lambda_star = find_fixed_point(phi, &config.initial(), 1e-9, 100_000)?;
    let (theta, risks) = erm_state(&pool, learner, &lambda_star)?;
    let alpha = normalize(&lambda_star);
    let grads = group_gradients(learner.train_family, &pool, &theta.theta, &alpha)?;
    let report = classify_fixed_point(&lambda_star, &grads, &risks, &config.retention, DEFAULT_MARGIN)?;
    let r = risks.values();
    let k = lambda_star.len();
    let symmetric = k > 1
        && lambda_star.iter().all(|l| (l - lambda_star[0]).abs() <= 1e-9 * lambda_star[0].abs())
        && r.iter().all(|x| (x - r[0]).abs() <= 1e-9);
    let (symmetric, generalized) = if symmetric {
        let basic = symmetric_instability_test(&grads, r[0], &config.retention, k);
        let dh_dlambda = config.retention.value(r[0]);
        let dh_drisk = lambda_star[0] * config.retention.derivative(r[0]);
        let general = generalized_symmetric_test(&grads, dh_dlambda, dh_drisk, k, lambda_star[0])?;
        (Some(basic), Some(general))
    } else {
        (None, None)
    };
    Ok(StabilityAnalysis {
        report,
        theta_star: theta.theta,
        risks: r.to_vec(),
        symmetric,
        generalized,
    })
}
