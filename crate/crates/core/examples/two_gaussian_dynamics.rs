//! Two labeled Gaussian groups with different decision boundaries. Under
//! ERM the smaller group's accuracy collapses as it leaves; the robust
//! learner keeps it served. Shortened run; the CLI config in
//! `examples/configs/two_gaussian.json` has the full-length version.

use drofair::scenarios::{build_scenario, run_comparison, Overrides, ScenarioName, ScenarioSpec};

fn main() -> drofair::Result<()> {
    let overrides = Overrides {
        replicates: Some(2),
        rounds: Some(150),
        ..Overrides::default()
    };
    let scenario = build_scenario(&ScenarioSpec::with(ScenarioName::TwoGaussianClassification, overrides))?;
    let comparison = run_comparison(&scenario)?;
    for run in &comparison.runs {
        let alpha = run.trajectory.final_alpha();
        let minority = if alpha[0] < alpha[1] { 0 } else { 1 };
        let acc = run.accuracy_series(minority);
        println!(
            "{:>4} replicate {}: final alpha ({:.3}, {:.3}), minority accuracy start {:.3} end {:.3} min {:.3}",
            run.trainer,
            run.replicate,
            alpha[0],
            alpha[1],
            acc[0],
            acc[acc.len() - 1],
            run.min_accuracy(minority)
        );
    }
    Ok(())
}
