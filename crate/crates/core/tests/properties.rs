//! Randomized invariants across modules.

use drofair::dro::{
    dro_risk_primal, minimize_dual_eta, robustness_radius, verify_mixture_bound, worst_case_weights, ChiSquareBall,
    DualParams,
};
use drofair::dynamics::{
    normalize, pava_increasing, simulate, simulate_with_risks, step_expected, step_generalized, DynamicsConfig,
    GeneralizedDynamics, Learner, RetentionFunction, Trainer,
};
use drofair::models::{dro_fit, erm_fit, LossFamily, ModelParams, OptimizerSettings};
use drofair::population::{
    sample_mixture, training_view, worst_group_risk, EvalPool, GroupMixture, GroupSpec, Observation, RiskVector,
};
use drofair::stability::{
    generalized_symmetric_test, group_gradients, symmetric_instability_test, GroupGradients,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn simplex(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Losses in `[0, 10]` paired with a strictly positive base distribution.
fn instance(max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0..10.0_f64, n),
            prop::collection::vec(0.01..1.0_f64, n).prop_map(simplex),
        )
    })
}

fn retention() -> impl Strategy<Value = RetentionFunction> {
    prop_oneof![Just(RetentionFunction::Linear), Just(RetentionFunction::Exponential)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dual_equals_primal((losses, base) in instance(50), alpha in prop::sample::select(vec![0.1, 0.2, 0.5])) {
        let dual = minimize_dual_eta(&losses, &base, &DualParams::new(alpha).unwrap(), 1e-10).unwrap();
        let primal = dro_risk_primal(&losses, &base, ChiSquareBall::for_group_fraction(alpha).unwrap()).unwrap();
        prop_assert!((dual.value - primal).abs() <= 1e-5, "dual {} primal {}", dual.value, primal);
        prop_assert!(dual.value >= primal - 1e-6);
    }

    #[test]
    fn robust_risk_grows_with_radius((losses, base) in instance(20), r1 in 0.0..20.0_f64, r2 in 0.0..20.0_f64) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let a = dro_risk_primal(&losses, &base, ChiSquareBall::new(lo).unwrap()).unwrap();
        let b = dro_risk_primal(&losses, &base, ChiSquareBall::new(hi).unwrap()).unwrap();
        prop_assert!(a <= b + 1e-9);
    }

    #[test]
    fn dual_value_shrinks_as_alpha_grows((losses, base) in instance(20), a1 in 0.05..1.0_f64, a2 in 0.05..1.0_f64) {
        let (small, large) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let f = |a: f64| minimize_dual_eta(&losses, &base, &DualParams::new(a).unwrap(), 1e-10).unwrap().value;
        prop_assert!(f(large) <= f(small) + 1e-9);
    }

    #[test]
    fn higher_loss_gets_more_weight((losses, _) in instance(12), alpha in 0.05..0.95_f64) {
        let n = losses.len();
        let base = vec![1.0 / n as f64; n];
        let q = worst_case_weights(&losses, &base, ChiSquareBall::for_group_fraction(alpha).unwrap()).unwrap();
        for i in 0..n {
            for j in 0..n {
                if losses[i] > losses[j] {
                    prop_assert!(q.weights[i] >= q.weights[j] - 1e-12);
                }
            }
        }
        prop_assert!((q.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn mixture_slack_nonnegative(
        alpha in prop::collection::vec(0.05..1.0_f64, 2..=4).prop_map(simplex),
        atoms in 2usize..6,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = drofair::rng::rng_from_seed(seed);
        let mut losses = Vec::new();
        let mut groups = Vec::new();
        let mut base = Vec::new();
        let mut risks = Vec::new();
        for (k, a) in alpha.iter().enumerate() {
            let p = simplex((0..atoms).map(|_| rng.random_range(0.01..1.0)).collect());
            let mut risk = 0.0;
            for pi in p {
                let l = rng.random_range(0.0..10.0);
                risk += pi * l;
                losses.push(l);
                groups.push(k);
                base.push(a * pi);
            }
            risks.push(risk);
        }
        let report = verify_mixture_bound(&risks, &alpha, &losses, &groups, &base).unwrap();
        prop_assert!(report.slacks.iter().all(|s| *s >= -1e-8), "{:?}", report.slacks);
        for (r, a) in report.radii.iter().zip(&alpha) {
            prop_assert_eq!(*r, robustness_radius(*a).unwrap());
        }
    }

    #[test]
    fn worst_group_dominates(values in prop::collection::vec(0.0..5.0_f64, 1..6)) {
        let risks = RiskVector::new(values.clone()).unwrap();
        let worst = worst_group_risk(&risks).unwrap();
        prop_assert!(values.iter().all(|v| *v <= worst));
    }

    #[test]
    fn point_mass_risk_ignores_seed_and_size(
        a in -3.0..3.0_f64, b in -3.0..3.0_f64, theta in -3.0..3.0_f64, seed in any::<u64>(), size in 1usize..50,
    ) {
        let mix = GroupMixture::new(
            vec![GroupSpec::point_mass(vec![a]).unwrap(), GroupSpec::point_mass(vec![b]).unwrap()],
            vec![0.5, 0.5],
        ).unwrap();
        let params = ModelParams::new(vec![theta]);
        let r1 = EvalPool::draw(&mix, size, seed).unwrap().risks(LossFamily::SquaredMean, &params).unwrap();
        let r2 = EvalPool::draw(&mix, 1, 0).unwrap().risks(LossFamily::SquaredMean, &params).unwrap();
        prop_assert_eq!(r1.values(), r2.values());
        prop_assert_eq!(r1.values()[0], (theta - a).powi(2));
    }

    #[test]
    fn one_step_keeps_shares_on_simplex(
        b in prop::collection::vec(1.0..1000.0_f64, 1..5),
        lambda_scale in prop::collection::vec(0.0..5.0_f64, 5),
        risk in prop::collection::vec(0.0..2.0_f64, 5),
        retention in retention(),
    ) {
        let k = b.len();
        let lambda: Vec<f64> = b.iter().zip(&lambda_scale).map(|(b, s)| b * s).collect();
        let cfg = DynamicsConfig::new(b.clone(), retention, 1);
        let risks = RiskVector::new(risk[..k].to_vec()).unwrap();
        let next = step_expected(&lambda, &risks, &cfg).unwrap();
        let min_b = b.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(next.iter().all(|l| *l >= min_b));
        for (n, bk) in next.iter().zip(&b) {
            prop_assert!(*n >= *bk);
        }
        let alpha = normalize(&next);
        prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (a, l) in alpha.iter().zip(&next) {
            prop_assert!((a - l / next.iter().sum::<f64>()).abs() <= 1e-12);
        }
    }

    #[test]
    fn counts_stay_bounded(
        b in prop::collection::vec(1.0..1000.0_f64, 1..4),
        nu_max in 0.1..0.95_f64,
        seed in any::<u64>(),
        retention in retention(),
    ) {
        use rand::Rng;
        let floor = retention.inverse(nu_max).unwrap();
        let mut cfg = DynamicsConfig::new(b.clone(), retention, 100);
        cfg.initial_lambda = Some(b.clone());
        let mut rng = drofair::rng::rng_from_seed(seed);
        let k = b.len();
        let traj = simulate_with_risks(&cfg, |_, _| {
            RiskVector::new((0..k).map(|_| floor + rng.random_range(0.0..1.0)).collect())
        }).unwrap();
        for s in &traj.states {
            for (l, bk) in s.lambda.iter().zip(&b) {
                prop_assert!(*l <= bk / (1.0 - nu_max) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn canonical_generalized_step_is_the_expected_step(
        b in prop::collection::vec(1.0..1000.0_f64, 1..5),
        lambda in prop::collection::vec(0.0..3000.0_f64, 5),
        risk in prop::collection::vec(0.0..2.0_f64, 5),
        retention in retention(),
    ) {
        let k = b.len();
        let risks = RiskVector::new(risk[..k].to_vec()).unwrap();
        let cfg = DynamicsConfig::new(b.clone(), retention.clone(), 1);
        let expected = step_expected(&lambda[..k], &risks, &cfg).unwrap();
        let general = step_generalized(&lambda[..k], &risks, &retention, &GeneralizedDynamics::canonical(b)).unwrap();
        prop_assert_eq!(expected, general);
    }

    #[test]
    fn pava_is_monotone_and_preserves_mean(y in prop::collection::vec(-10.0..10.0_f64, 1..40)) {
        let fit = pava_increasing(&y);
        prop_assert!(fit.windows(2).all(|w| w[0] <= w[1]));
        let (a, b): (f64, f64) = (y.iter().sum(), fit.iter().sum());
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn generalized_test_specializes(
        g in prop::collection::vec(-2.0..2.0_f64, 2),
        h in 0.5..3.0_f64,
        // positive risk keeps ν < 1 so the fixed point λ = b / (1 - ν) is finite
        risk in 0.05..0.95_f64,
        b in 10.0..1000.0_f64,
    ) {
        // symmetric pair: gradients g and -g sum to zero as at a fair optimum
        let grads = GroupGradients::new(
            DMatrix::from_row_slice(2, 2, &[g[0], g[1], -g[0], -g[1]]),
            DMatrix::from_row_slice(2, 2, &[h, 0.0, 0.0, h]),
        ).unwrap();
        let retention = RetentionFunction::Exponential;
        let sym = symmetric_instability_test(&grads, risk, &retention, 2);
        let nu = retention.value(risk);
        let lambda = b / (1.0 - nu);
        let dyn_ = GeneralizedDynamics::canonical(vec![b, b]);
        let gen = generalized_symmetric_test(
            &grads,
            dyn_.partial_lambda(0, lambda, nu),
            dyn_.partial_risk(0, lambda, risk, &retention),
            2,
            lambda,
        ).unwrap();
        prop_assert_eq!(sym.unstable, gen.unstable);
        prop_assert!((sym.rhs - gen.rhs).abs() <= 1e-10 * (1.0 + sym.rhs.abs()) || (sym.rhs.is_infinite() && gen.rhs.is_infinite()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn certificate_bounds_every_large_group(
        minority in 0.2..0.5_f64,
        gap in 0.5..4.0_f64,
        alpha_min in 0.1..0.2_f64,
        seed in any::<u64>(),
    ) {
        let mix = GroupMixture::new(
            vec![GroupSpec::gaussian(vec![0.0], 0.5).unwrap(), GroupSpec::gaussian(vec![gap], 0.5).unwrap()],
            vec![1.0 - minority, minority],
        ).unwrap();
        let draws = sample_mixture(&mix, 400, seed);
        let train = training_view(&draws);
        let weights = vec![1.0 / train.len() as f64; train.len()];
        for family in [LossFamily::SquaredMean, LossFamily::AbsoluteMedian] {
            let fit = dro_fit(family, &train, &weights, &DualParams::new(alpha_min).unwrap(), &ModelParams::new(vec![0.0]), &OptimizerSettings::default()).unwrap();
            for k in 0..2 {
                let members: Vec<&Observation> = draws.iter().filter(|s| s.group == Some(k)).map(|s| &s.value).collect();
                if (members.len() as f64) < alpha_min * draws.len() as f64 {
                    continue;
                }
                let risk = members.iter().map(|o| family.loss(&fit.params.theta, o).unwrap()).sum::<f64>() / members.len() as f64;
                prop_assert!(risk <= fit.certificate + 1e-6, "{family:?} group {k}: {risk} > {}", fit.certificate);
            }
        }
    }

    #[test]
    fn unit_alpha_matches_erm(xs in prop::collection::vec(-3.0..3.0_f64, 3..30)) {
        let train: Vec<Observation> = xs.iter().map(|x| Observation::scalar(*x)).collect();
        let weights = vec![1.0 / train.len() as f64; train.len()];
        let init = ModelParams::new(vec![0.0]);
        let settings = OptimizerSettings::default();
        for family in [LossFamily::SquaredMean, LossFamily::AbsoluteMedian] {
            let erm = erm_fit(family, &train, &weights, &init, &settings).unwrap();
            let dro = dro_fit(family, &train, &weights, &DualParams::new(1.0).unwrap(), &init, &settings).unwrap();
            prop_assert!((erm.theta[0] - dro.params.theta[0]).abs() <= 1e-6);
        }
    }

    #[test]
    fn logistic_fit_stays_on_sphere(seed in any::<u64>(), angle in 0.0..std::f64::consts::TAU) {
        let mix = GroupMixture::new(
            vec![GroupSpec::labeled_gaussian(vec![1.0, 0.0], 1.0, vec![0.0, 1.0]).unwrap()],
            vec![1.0],
        ).unwrap();
        let train = training_view(&sample_mixture(&mix, 200, seed));
        let weights = vec![1.0 / train.len() as f64; train.len()];
        let init = ModelParams::on_sphere(vec![angle.cos(), angle.sin()], 1.0);
        let fit = erm_fit(LossFamily::Logistic, &train, &weights, &init, &OptimizerSettings::default()).unwrap();
        let norm = fit.theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() <= 1e-9);
    }
}

fn mean_toy() -> (GroupMixture, Learner) {
    let mix = GroupMixture::new(
        vec![GroupSpec::point_mass(vec![1.0]).unwrap(), GroupSpec::point_mass(vec![-1.0]).unwrap()],
        vec![0.5, 0.5],
    )
    .unwrap();
    let learner = Learner {
        train_family: LossFamily::SquaredMean,
        eval_family: LossFamily::SquaredMean,
        init: ModelParams::new(vec![0.0]),
        optimizer: OptimizerSettings::default(),
    };
    (mix, learner)
}

#[test]
fn expected_dynamics_are_bit_identical() {
    let (mix, learner) = mean_toy();
    let mut cfg = DynamicsConfig::new(vec![100.0, 100.0], RetentionFunction::Exponential, 50);
    cfg.initial_lambda = Some(vec![120.0, 80.0]);
    let a = simulate(&mix, &learner, &Trainer::Erm, &cfg).unwrap();
    let b = simulate(&mix, &learner, &Trainer::Erm, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn poisson_counts_average_to_total() {
    let (mix, learner) = mean_toy();
    let mut cfg = DynamicsConfig::new(vec![100.0, 100.0], RetentionFunction::Exponential, 1);
    cfg.sampled = true;
    let mut total = 0u64;
    for seed in 0..1000 {
        cfg.seed = seed;
        let traj = simulate(&mix, &learner, &Trainer::Erm, &cfg).unwrap();
        total += traj.states[0].n.unwrap();
    }
    let mean = total as f64 / 1000.0;
    assert!((mean - 200.0).abs() <= 0.02 * 200.0, "mean count {mean}");
}

#[test]
fn symmetric_optimum_has_balanced_gradients() {
    let (mix, _) = mean_toy();
    let pool = EvalPool::draw(&mix, 1, 0).unwrap();
    let grads = group_gradients(LossFamily::SquaredMean, &pool, &[0.0], &[0.5, 0.5]).unwrap();
    let column_sum: f64 = grads.grad_matrix.column(0).sum();
    assert!(column_sum.abs() <= 1e-6);
}

#[test]
fn stable_point_absorbs_perturbation() {
    // risks pinned at a fair level: the Jacobian is diag(ν) and the
    // perturbation decays geometrically
    let retention = RetentionFunction::Exponential;
    let star = 100.0 / (1.0 - retention.value(0.5));
    let eps = 1e-3 * star;
    let mut cfg = DynamicsConfig::new(vec![100.0, 100.0], retention, 500);
    cfg.initial_lambda = Some(vec![star + eps, star - eps]);
    let traj = simulate_with_risks(&cfg, |_, _| RiskVector::new(vec![0.5, 0.5])).unwrap();
    let dist = |l: &[f64]| ((l[0] - star).powi(2) + (l[1] - star).powi(2)).sqrt();
    assert!(traj.states.iter().all(|s| dist(&s.lambda) <= 0.01 * star * 2f64.sqrt()));
    assert!(dist(&traj.states.last().unwrap().lambda) < 1e-9 * star);
}
