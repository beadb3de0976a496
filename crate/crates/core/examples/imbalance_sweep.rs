//! Static accuracy of ERM and the robust learner as one group shrinks.

use drofair::scenarios::{build_scenario, imbalance_sweep, ScenarioName, ScenarioSpec};

fn main() -> drofair::Result<()> {
    let scenario = build_scenario(&ScenarioSpec::new(ScenarioName::TwoGaussianClassification))?;
    let rows = imbalance_sweep(&scenario, &[0.5, 0.2, 0.1, 0.05, 0.01], 20_000)?;
    for row in rows {
        println!(
            "minority {:>5.2}  {:>4}: majority accuracy {:.3}  minority accuracy {:.3}",
            row.minority_fraction, row.trainer, row.accuracy[0], row.accuracy[1]
        );
    }
    Ok(())
}
