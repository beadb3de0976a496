//! Two point masses at ±1 with squared loss and exponential retention: the
//! symmetric fixed point is unstable, and ERM dynamics started next to it
//! drift to a corner while the robust learner holds both groups.

use drofair::cli::{cmd_stability_analytic, AnalyticExample, StabilityOutput};
use drofair::scenarios::{build_scenario, run_replicate, ScenarioName, ScenarioSpec};

fn main() -> drofair::Result<()> {
    match cmd_stability_analytic(AnalyticExample::MeanToy).map_err(|f| f.error().to_string()) {
        Ok(StabilityOutput::Analyzed(a)) => {
            println!("fixed point {:?}", a.report.fixed_point);
            println!("spectral radius {:.6} -> {:?}", a.report.spectral_radius, a.report.verdict);
            if let Some(sym) = &a.symmetric {
                println!("symmetric test: lhs {} vs rhs {:.6}, unstable {}", sym.lhs, sym.rhs, sym.unstable);
            }
        }
        other => println!("{other:?}"),
    }

    let scenario = build_scenario(&ScenarioSpec::new(ScenarioName::MeanToy))?;
    for trainer in &scenario.trainers {
        let run = run_replicate(&scenario, trainer, 0)?;
        let alpha = run.trajectory.final_alpha();
        println!("{:>4}: final alpha ({:.4}, {:.4}) after {} rounds", trainer.label(), alpha[0], alpha[1], scenario.dynamics.rounds);
    }
    Ok(())
}
