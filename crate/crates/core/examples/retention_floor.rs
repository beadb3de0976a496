//! If every group's risk stays below its threshold, no share falls below
//! `α_min`. Risks here are supplied directly, just under the threshold.

use drofair::dynamics::{check_alpha_floor, risk_threshold, simulate_with_risks, DynamicsConfig, RetentionFunction};
use drofair::population::RiskVector;

fn main() -> drofair::Result<()> {
    let (alpha_min, nu_max) = (0.3, 0.9);
    let mut config = DynamicsConfig::new(vec![600.0, 400.0], RetentionFunction::Linear, 200);
    config.initial_lambda = Some(vec![600.0, 400.0]);
    let thresholds: Vec<f64> = (0..2)
        .map(|k| risk_threshold(&config, alpha_min, nu_max, k))
        .collect::<drofair::Result<_>>()?;
    println!("risk thresholds {thresholds:.4?}");
    // group 0 is served perfectly, group 1 sits just below its threshold
    let risks = vec![0.1_f64.max(1.0 - nu_max + 1e-3), thresholds[1] - 1e-3];
    let trajectory = simulate_with_risks(&config, |_, _| RiskVector::new(risks.clone()))?;
    let report = check_alpha_floor(&trajectory, alpha_min, nu_max, &config)?;
    println!(
        "checked {} (round, group) pairs, {} violations, min alpha of group 1 {:.4}",
        report.checked,
        report.violations.len(),
        trajectory.states.iter().map(|s| s.alpha[1]).fold(1.0, f64::min)
    );
    Ok(())
}
