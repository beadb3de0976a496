//! Chi-square distributionally robust risk over discrete distributions.
//!
//! For a base distribution `p` over atoms with losses `ℓ`, the robust risk is
//!
//! ```text
//! R_dro(r) = sup { Σ q_i ℓ_i : q in the simplex, χ²(q‖p) ≤ r },
//! χ²(q‖p)  = Σ p_i (q_i / p_i - 1)².
//! ```
//!
//! The maximizer has the form `q_i ∝ p_i (ℓ_i - η)_+`, so the primal solver
//! bisects on the threshold `η` until the divergence budget is exhausted.
//! The dual side is the one-dimensional convex problem
//!
//! ```text
//! R_dro(r) = inf_η  C · (Σ p_i (ℓ_i - η)_+²)^{1/2} + η,   C = sqrt(1 + r).
//! ```
//!
//! A mixture component with weight `α_k` lies in the ball of radius
//! [`robustness_radius`]`(α_k)`, which makes `R_dro` an upper bound on every
//! group risk `R_k` without knowing group membership.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ p_i = 1` for weight vectors handed to the solvers.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

const BISECTION_ITERATIONS: usize = 200;
const GOLDEN_MAX_ITERATIONS: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareBall {
    radius: f64,
}

impl ChiSquareBall {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::invalid("radius", format!("must be >= 0, got {radius}")));
        }
        if !radius.is_finite() {
            return Err(Error::invalid("radius", "an infinite radius has no maximizer"));
        }
        Ok(ChiSquareBall { radius })
    }

    /// The ball guaranteed to contain any mixture component of weight `alpha`.
    pub fn for_group_fraction(alpha: f64) -> Result<Self> {
        ChiSquareBall::new(robustness_radius(alpha)?)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// Smallest radius that contains every component of weight `alpha`.
///
/// A component `P_k` of `P` with weight `α` satisfies `dP_k/dP ≤ 1/α`, so
/// `χ²(P_k‖P) = E_P[(dP_k/dP)²] - 1 ≤ 1/α - 1`. For `α ≤ 1/2` this is
/// dominated by the pointwise bound `(1/α - 1)²`, which is what this returns
/// in the minority regime; for `α > 1/2` the squared form undershoots the
/// disjoint-support case, so the radius is `1/α - 1` there.
pub fn robustness_radius(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid("alpha", format!("must lie in (0, 1], got {alpha}")));
    }
    let excess = 1.0 / alpha - 1.0;
    Ok((excess * excess).max(excess))
}

/// How the dual multiplier `C` is derived from `α_min`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualConstant {
    /// `C = sqrt(1 + r)` with `r = robustness_radius(α_min)`; the dual value
    /// equals the primal robust risk at radius `r`.
    #[default]
    Exact,
    /// `C = sqrt(2 (1/α_min - 1)² + 1)`, the exact dual of a chi-square ball
    /// of radius `2 (1/α_min - 1)²`. That dominates the exact radius only
    /// when `α_min ≤ 2/3`.
    Conservative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualParams {
    pub alpha_min: f64,
    pub c_const: f64,
    pub convention: DualConstant,
}

impl DualParams {
    pub fn new(alpha_min: f64) -> Result<Self> {
        Self::with_convention(alpha_min, DualConstant::Exact)
    }

    pub fn with_convention(alpha_min: f64, convention: DualConstant) -> Result<Self> {
        let radius = robustness_radius(alpha_min)?;
        let c_const = match convention {
            DualConstant::Exact => (1.0 + radius).sqrt(),
            DualConstant::Conservative => {
                let excess = 1.0 / alpha_min - 1.0;
                (2.0 * excess * excess + 1.0).sqrt()
            }
        };
        Ok(DualParams {
            alpha_min,
            c_const,
            convention,
        })
    }

    /// Chi-square radius whose robust risk this dual computes exactly.
    pub fn effective_radius(&self) -> f64 {
        self.c_const * self.c_const - 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseWeights {
    pub weights: Vec<f64>,
    pub base: Vec<f64>,
    pub attained_divergence: f64,
}

impl WorstCaseWeights {
    pub fn objective(&self, losses: &[f64]) -> f64 {
        dot(&self.weights, losses)
    }
}

/// `χ²(q‖p) = Σ p_i (q_i/p_i - 1)²`, infinite when `q` puts mass where `p`
/// has none.
pub fn chi_square_divergence(q: &[f64], p: &[f64]) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    let mut total = 0.0;
    for (&qi, &pi) in q.iter().zip(p) {
        if pi > 0.0 {
            let ratio = qi / pi - 1.0;
            total += pi * ratio * ratio;
        } else if qi > 0.0 {
            return Ok(f64::INFINITY);
        }
    }
    Ok(total)
}

fn check_losses_and_base(losses: &[f64], base: &[f64]) -> Result<()> {
    if losses.is_empty() {
        return Err(Error::invalid("losses", "must be nonempty"));
    }
    if losses.len() != base.len() {
        return Err(Error::DimensionMismatch {
            expected: losses.len(),
            found: base.len(),
        });
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("losses", "entries must be finite"));
    }
    crate::population::validate_simplex("base", base, SIMPLEX_TOLERANCE)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weighted mean and standard deviation of the losses under `p`.
fn moments(losses: &[f64], p: &[f64]) -> (f64, f64) {
    let mean = dot(losses, p);
    let var: f64 = losses
        .iter()
        .zip(p)
        .map(|(l, w)| w * (l - mean) * (l - mean))
        .sum();
    (mean, var.max(0.0).sqrt())
}

/// Support of `p` as (min loss, max loss, mass at max loss).
fn support_extremes(losses: &[f64], p: &[f64]) -> (f64, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&l, &w) in losses.iter().zip(p) {
        if w > 0.0 {
            lo = lo.min(l);
            hi = hi.max(l);
        }
    }
    let top_mass = losses
        .iter()
        .zip(p)
        .filter(|(l, w)| **w > 0.0 && **l == hi)
        .map(|(_, w)| w)
        .sum();
    (lo, hi, top_mass)
}

/// Reweighting `q_i ∝ p_i (ℓ_i - η)_+` and its divergence from `p`.
fn thresholded(losses: &[f64], p: &[f64], eta: f64) -> (Vec<f64>, f64) {
    let raw: Vec<f64> = losses
        .iter()
        .zip(p)
        .map(|(l, w)| w * (l - eta).max(0.0))
        .collect();
    let mass: f64 = raw.iter().sum();
    let q: Vec<f64> = raw.iter().map(|v| v / mass).collect();
    // Σ q²/p - 1 = E_p[(ℓ-η)_+²] / E_p[(ℓ-η)_+]² - 1
    let second: f64 = losses
        .iter()
        .zip(p)
        .map(|(l, w)| {
            let h = (l - eta).max(0.0);
            w * h * h
        })
        .sum();
    (q, second / (mass * mass) - 1.0)
}

/// The distribution in the ball that maximizes the expected loss.
///
/// Constant losses return `base` itself (the minimal-divergence maximizer).
pub fn worst_case_weights(
    losses: &[f64],
    base: &[f64],
    ball: ChiSquareBall,
) -> Result<WorstCaseWeights> {
    check_losses_and_base(losses, base)?;
    let r = ball.radius();
    let (lo, hi, top_mass) = support_extremes(losses, base);
    let unchanged = || WorstCaseWeights {
        weights: base.to_vec(),
        base: base.to_vec(),
        attained_divergence: 0.0,
    };
    if r == 0.0 || lo == hi {
        return Ok(unchanged());
    }

    // Everything on the top-loss atoms already fits in the ball.
    let saturated_divergence = 1.0 / top_mass - 1.0;
    if r >= saturated_divergence {
        let weights: Vec<f64> = losses
            .iter()
            .zip(base)
            .map(|(l, w)| if *w > 0.0 && *l == hi { w / top_mass } else { 0.0 })
            .collect();
        let attained_divergence = chi_square_divergence(&weights, base)?;
        return Ok(WorstCaseWeights {
            weights,
            base: base.to_vec(),
            attained_divergence,
        });
    }

    let (mean, sd) = moments(losses, base);
    // Interior solution: no atom is clamped.
    let interior = mean - sd / r.sqrt();
    let eta = if interior <= lo {
        interior
    } else {
        // Divergence of the thresholded reweighting increases in η; keep the
        // feasible end of the bracket.
        let (mut a, mut b) = (lo, hi);
        for _ in 0..BISECTION_ITERATIONS {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if thresholded(losses, base, mid).1 <= r {
                a = mid;
            } else {
                b = mid;
            }
        }
        a
    };
    let (weights, _) = thresholded(losses, base, eta);
    let attained_divergence = chi_square_divergence(&weights, base)?;
    Ok(WorstCaseWeights {
        weights,
        base: base.to_vec(),
        attained_divergence,
    })
}

/// `sup_{Q ∈ B(P, r)} E_Q[ℓ]`.
pub fn dro_risk_primal(losses: &[f64], base: &[f64], ball: ChiSquareBall) -> Result<f64> {
    Ok(worst_case_weights(losses, base, ball)?.objective(losses))
}

/// `F(η) = C (Σ p_i (ℓ_i - η)_+²)^{1/2} + η`.
pub fn dual_objective(losses: &[f64], base: &[f64], eta: f64, dual: &DualParams) -> f64 {
    let second: f64 = losses
        .iter()
        .zip(base)
        .map(|(l, w)| {
            let h = (l - eta).max(0.0);
            w * h * h
        })
        .sum();
    dual.c_const * second.sqrt() + eta
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    /// Minimizing threshold. `-∞` when `C = 1`: the infimum is the plain
    /// mean and is only approached as `η → -∞`.
    pub eta_star: f64,
    pub value: f64,
}

/// Search bracket `[lo, max ℓ]` that contains the dual minimizer.
///
/// `F(η) = η` above the largest loss. Below the smallest loss every hinge is
/// active and the stationary point is `mean - sd / sqrt(C² - 1)`, so the
/// bracket extends past whichever of that point and `min ℓ` is lower.
pub fn dual_bracket(losses: &[f64], base: &[f64], c_const: f64) -> (f64, f64) {
    let (lo, hi, _) = support_extremes(losses, base);
    let (mean, sd) = moments(losses, base);
    let slope = c_const * c_const - 1.0;
    let interior = if slope > 0.0 { mean - sd / slope.sqrt() } else { lo };
    (lo.min(interior) - 1.0, hi)
}

/// Minimizes `η ↦ F(η)` by golden-section search on [`dual_bracket`].
pub fn minimize_dual_eta(
    losses: &[f64],
    base: &[f64],
    dual: &DualParams,
    eta_tolerance: f64,
) -> Result<DualSolution> {
    check_losses_and_base(losses, base)?;
    if !(eta_tolerance > 0.0) {
        return Err(Error::invalid("eta_tolerance", "must be positive"));
    }
    let (lo, hi, _) = support_extremes(losses, base);
    if dual.c_const <= 1.0 {
        let mean = dot(losses, base);
        if lo == hi {
            return Ok(DualSolution {
                eta_star: lo,
                value: mean,
            });
        }
        return Ok(DualSolution {
            eta_star: f64::NEG_INFINITY,
            value: mean,
        });
    }
    let (a, b) = dual_bracket(losses, base, dual.c_const);
    let (eta_star, value) = golden_section(
        |eta| dual_objective(losses, base, eta, dual),
        a,
        b,
        eta_tolerance,
    )?;
    Ok(DualSolution { eta_star, value })
}

/// Golden-section minimization of a unimodal function on `[a, b]`. Returns
/// the best evaluated point.
pub fn golden_section(
    mut f: impl FnMut(f64) -> f64,
    mut a: f64,
    mut b: f64,
    tolerance: f64,
) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let (fa, fb) = (f(a), f(b));
    let mut best = [(a, fa), (b, fb), (c, fc), (d, fd)]
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap_or((a, fa));
    let mut iterations = 0;
    while b - a > tolerance {
        iterations += 1;
        if iterations > GOLDEN_MAX_ITERATIONS {
            return Err(Error::NotConverged {
                what: "golden-section search",
                iterations,
                residual: b - a,
            });
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
            if fd < best.1 {
                best = (d, fd);
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureBoundReport {
    pub radii: Vec<f64>,
    pub robust_risks: Vec<f64>,
    /// `R_dro(r_k) - R_k`; a negative value beyond the tolerance is a violation.
    pub slacks: Vec<f64>,
    pub violations: Vec<usize>,
}

impl MixtureBoundReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const MIXTURE_BOUND_TOLERANCE: f64 = 1e-8;

/// Checks `R_k ≤ R_dro(r_k)` for every group of a discrete mixture.
///
/// `losses[i]` is the loss of atom `i`, `groups[i]` its group, and `base`
/// the pooled distribution `P = Σ α_k P_k`.
pub fn verify_mixture_bound(
    group_risks: &[f64],
    alpha: &[f64],
    losses: &[f64],
    groups: &[usize],
    base: &[f64],
) -> Result<MixtureBoundReport> {
    if group_risks.len() != alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha.len(),
            found: group_risks.len(),
        });
    }
    if groups.len() != losses.len() {
        return Err(Error::DimensionMismatch {
            expected: losses.len(),
            found: groups.len(),
        });
    }
    if let Some(&g) = groups.iter().find(|g| **g >= alpha.len()) {
        return Err(Error::invalid("groups", format!("group id {g} out of range")));
    }
    let mut report = MixtureBoundReport {
        radii: Vec::with_capacity(alpha.len()),
        robust_risks: Vec::with_capacity(alpha.len()),
        slacks: Vec::with_capacity(alpha.len()),
        violations: Vec::new(),
    };
    for (k, (&risk, &a)) in group_risks.iter().zip(alpha).enumerate() {
        let ball = ChiSquareBall::for_group_fraction(a)?;
        let robust = dro_risk_primal(losses, base, ball)?;
        let slack = robust - risk;
        if slack < -MIXTURE_BOUND_TOLERANCE {
            report.violations.push(k);
        }
        report.radii.push(ball.radius());
        report.robust_risks.push(robust);
        report.slacks.push(slack);
    }
    Ok(report)
}
