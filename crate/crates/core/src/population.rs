//! Latent group mixtures `P = Σ_k α_k P_k`, sampling, and per-group risks.
//!
//! Samples carry their group id so that evaluation code can compute true
//! group risks, but training code only ever sees [`Observation`]s: use
//! [`training_view`] to drop membership before fitting.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{LossFamily, ModelParams};
use crate::rng::{derive_seed, rng_from_seed, SimRng};

/// Absolute tolerance on `Σ α_k = 1`.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// How a group generates observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupDescriptor {
    PointMass {
        location: Vec<f64>,
    },
    Gaussian {
        center: Vec<f64>,
        scale: f64,
    },
    /// Isotropic Gaussian whose points are labeled `+1` when
    /// `normal · (x - anchor) >= 0` and `-1` otherwise. An empty anchor is
    /// the origin.
    LabeledGaussian {
        center: Vec<f64>,
        scale: f64,
        normal: Vec<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        anchor: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupSpec {
    pub descriptor: GroupDescriptor,
}

impl GroupSpec {
    pub fn point_mass(location: Vec<f64>) -> Result<Self> {
        Self::new(GroupDescriptor::PointMass { location })
    }

    pub fn gaussian(center: Vec<f64>, scale: f64) -> Result<Self> {
        Self::new(GroupDescriptor::Gaussian { center, scale })
    }

    pub fn labeled_gaussian(center: Vec<f64>, scale: f64, normal: Vec<f64>) -> Result<Self> {
        Self::new(GroupDescriptor::LabeledGaussian {
            center,
            scale,
            normal,
            anchor: Vec::new(),
        })
    }

    pub fn new(descriptor: GroupDescriptor) -> Result<Self> {
        let spec = GroupSpec { descriptor };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        match &self.descriptor {
            GroupDescriptor::PointMass { location } => check_finite_vec("location", location),
            GroupDescriptor::Gaussian { center, scale } => {
                check_finite_vec("center", center)?;
                check_scale(*scale)
            }
            GroupDescriptor::LabeledGaussian {
                center,
                scale,
                normal,
                anchor,
            } => {
                check_finite_vec("center", center)?;
                check_scale(*scale)?;
                if normal.len() != center.len() {
                    return Err(Error::DimensionMismatch {
                        expected: center.len(),
                        found: normal.len(),
                    });
                }
                if !anchor.is_empty() && anchor.len() != center.len() {
                    return Err(Error::DimensionMismatch {
                        expected: center.len(),
                        found: anchor.len(),
                    });
                }
                if normal.iter().all(|v| *v == 0.0) {
                    return Err(Error::invalid("normal", "labeling normal must be nonzero"));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match &self.descriptor {
            GroupDescriptor::PointMass { location } => location.len(),
            GroupDescriptor::Gaussian { center, .. }
            | GroupDescriptor::LabeledGaussian { center, .. } => center.len(),
        }
    }

    /// Standard deviation per coordinate; exactly zero for point masses.
    pub fn scale(&self) -> f64 {
        match &self.descriptor {
            GroupDescriptor::PointMass { .. } => 0.0,
            GroupDescriptor::Gaussian { scale, .. }
            | GroupDescriptor::LabeledGaussian { scale, .. } => *scale,
        }
    }

    pub fn is_point_mass(&self) -> bool {
        matches!(self.descriptor, GroupDescriptor::PointMass { .. })
    }

    pub fn sample(&self, rng: &mut SimRng) -> Observation {
        match &self.descriptor {
            GroupDescriptor::PointMass { location } => Observation::point(location.clone()),
            GroupDescriptor::Gaussian { center, scale } => {
                Observation::point(gaussian_draw(center, *scale, rng))
            }
            GroupDescriptor::LabeledGaussian {
                center,
                scale,
                normal,
                anchor,
            } => {
                let x = gaussian_draw(center, *scale, rng);
                let score: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(j, xj)| normal[j] * (xj - anchor.get(j).copied().unwrap_or(0.0)))
                    .sum();
                let y = if score >= 0.0 { 1.0 } else { -1.0 };
                Observation::labeled(x, y)
            }
        }
    }
}

fn gaussian_draw(center: &[f64], scale: f64, rng: &mut SimRng) -> Vec<f64> {
    center
        .iter()
        .map(|c| {
            let e: f64 = rng.sample(StandardNormal);
            c + scale * e
        })
        .collect()
}

fn check_finite_vec(field: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(field, "must have at least one coordinate"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(field, "entries must be finite"));
    }
    Ok(())
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid("scale", format!("must be positive, got {scale}")));
    }
    Ok(())
}

/// A mixture of `K` latent groups with weights `α`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture")]
pub struct GroupMixture {
    groups: Vec<GroupSpec>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMixture {
    groups: Vec<GroupSpec>,
    weights: Vec<f64>,
}

impl TryFrom<RawMixture> for GroupMixture {
    type Error = Error;

    fn try_from(raw: RawMixture) -> Result<Self> {
        for g in &raw.groups {
            g.validate()?;
        }
        GroupMixture::new(raw.groups, raw.weights)
    }
}

impl GroupMixture {
    pub fn new(groups: Vec<GroupSpec>, weights: Vec<f64>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::invalid("groups", "a mixture needs at least one group"));
        }
        if weights.len() != groups.len() {
            return Err(Error::invalid(
                "weights",
                format!("{} weights for {} groups", weights.len(), groups.len()),
            ));
        }
        validate_simplex("weights", &weights, WEIGHT_SUM_TOLERANCE)?;
        let d = groups[0].dim();
        if let Some(g) = groups.iter().find(|g| g.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: g.dim(),
            });
        }
        Ok(GroupMixture { groups, weights })
    }

    pub fn groups(&self) -> &[GroupSpec] {
        &self.groups
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn dim(&self) -> usize {
        self.groups[0].dim()
    }

    /// Same groups, new weights.
    pub fn reweighted(&self, weights: Vec<f64>) -> Result<Self> {
        GroupMixture::new(self.groups.clone(), weights)
    }
}

/// Checks that `w` is a probability vector.
pub fn validate_simplex(field: &str, w: &[f64], tolerance: f64) -> Result<()> {
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid(field, "entries must be finite and nonnegative"));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > tolerance {
        return Err(Error::invalid(field, format!("must sum to 1, sums to {total}")));
    }
    Ok(())
}

/// A point `z`, optionally carrying a `±1` class label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<f64>,
}

impl Observation {
    pub fn point(x: Vec<f64>) -> Self {
        Observation { x, label: None }
    }

    pub fn labeled(x: Vec<f64>, y: f64) -> Self {
        Observation { x, label: Some(y) }
    }

    pub fn scalar(z: f64) -> Self {
        Observation::point(vec![z])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub value: Observation,
    pub group: Option<usize>,
}

/// Drops group membership; trainers only accept the result.
pub fn training_view(samples: &[Sample]) -> Vec<Observation> {
    samples.iter().map(|s| s.value.clone()).collect()
}

/// Expected losses per group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RiskVector(Vec<f64>);

impl RiskVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("risks", "entries must be finite and nonnegative"));
        }
        Ok(RiskVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `max_k R_k`.
pub fn worst_group_risk(risks: &RiskVector) -> Result<f64> {
    risks
        .values()
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| Error::invalid("risks", "worst-group risk of an empty vector"))
}

/// Draws `n` samples from the mixture: group by `α`, then `z ~ P_k`.
pub fn sample_mixture(mixture: &GroupMixture, n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = rng_from_seed(seed);
    sample_mixture_with(mixture, n, &mut rng)
}

pub fn sample_mixture_with(mixture: &GroupMixture, n: usize, rng: &mut SimRng) -> Vec<Sample> {
    let cumulative: Vec<f64> = mixture
        .weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let last_positive = mixture
        .weights
        .iter()
        .rposition(|w| *w > 0.0)
        .unwrap_or(0);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let k = cumulative
                .iter()
                .position(|c| u < *c)
                .unwrap_or(last_positive);
            Sample {
                value: mixture.groups[k].sample(rng),
                group: Some(k),
            }
        })
        .collect()
}

/// A fixed evaluation set per group. Point-mass groups hold their single
/// atom, so their risks are exact.
#[derive(Clone, Debug)]
pub struct EvalPool {
    groups: Vec<Vec<Observation>>,
}

impl EvalPool {
    pub fn draw(mixture: &GroupMixture, per_group: usize, seed: u64) -> Result<Self> {
        let groups = mixture
            .groups
            .iter()
            .enumerate()
            .map(|(k, g)| {
                if g.is_point_mass() {
                    let mut rng = rng_from_seed(0);
                    Ok(vec![g.sample(&mut rng)])
                } else if per_group == 0 {
                    Err(Error::invalid(
                        "per_group_sample_size",
                        "must be at least 1 for groups without a closed-form risk",
                    ))
                } else {
                    let mut rng = rng_from_seed(derive_seed(seed, k as u64));
                    Ok((0..per_group).map(|_| g.sample(&mut rng)).collect())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalPool { groups })
    }

    pub fn group(&self, k: usize) -> &[Observation] {
        &self.groups[k]
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn risks(&self, family: LossFamily, params: &ModelParams) -> Result<RiskVector> {
        let values = self
            .groups
            .iter()
            .map(|obs| {
                let mut total = 0.0;
                for o in obs {
                    total += family.loss(&params.theta, o)?;
                }
                Ok(total / obs.len() as f64)
            })
            .collect::<Result<Vec<_>>>()?;
        RiskVector::new(values)
    }
}

/// Per-group expected loss `R_k(θ) = E_{P_k}[ℓ(θ; Z)]`, exact for point
/// masses and a seeded Monte-Carlo average otherwise.
pub fn group_risk(
    mixture: &GroupMixture,
    family: LossFamily,
    params: &ModelParams,
    per_group_sample_size: usize,
    seed: u64,
) -> Result<RiskVector> {
    EvalPool::draw(mixture, per_group_sample_size, seed)?.risks(family, params)
}
