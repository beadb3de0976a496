//! Dynamics from measured curves: noisy retention and risk observations are
//! fit with isotonic regression, then the shares are simulated without any
//! model. The group whose retention is dominated shrinks every round.

use drofair::dynamics::{isotone_fit, simulate_from_curves, DynamicsConfig, Monotone, RetentionFunction};

fn main() -> drofair::Result<()> {
    // retention observed at a few shares; the dip at 0.4 is noise
    let good = isotone_fit(&[(0.1, 0.72), (0.3, 0.76), (0.4, 0.74), (0.7, 0.83), (0.9, 0.85)], Monotone::Increasing)?;
    let poor = isotone_fit(&[(0.1, 0.55), (0.3, 0.61), (0.5, 0.60), (0.8, 0.66)], Monotone::Increasing)?;
    let risk_good = isotone_fit(&[(0.1, 0.30), (0.5, 0.22), (0.9, 0.12)], Monotone::Decreasing)?;
    let risk_poor = isotone_fit(&[(0.1, 0.45), (0.5, 0.35), (0.9, 0.30)], Monotone::Decreasing)?;
    println!("fitted retention (good): {:?}", good.values);

    let config = DynamicsConfig::new(vec![1000.0, 1000.0], RetentionFunction::Exponential, 30);
    let trajectory = simulate_from_curves(&[good, poor], &[risk_good, risk_poor], &config)?;
    for (t, s) in trajectory.states.iter().enumerate().step_by(5) {
        println!("t={t:>2} alpha ({:.4}, {:.4}) risk ({:.3}, {:.3})", s.alpha[0], s.alpha[1], s.risks.values()[0], s.risks.values()[1]);
    }
    Ok(())
}
