//! Three groups at the corners of a triangle with a geometric-median model.
//! Prints the median share trajectory of each trainer across replicates.

use drofair::scenarios::{build_scenario, run_comparison, Overrides, ScenarioName, ScenarioSpec};

fn main() -> drofair::Result<()> {
    let overrides = Overrides {
        replicates: Some(3),
        rounds: Some(40),
        ..Overrides::default()
    };
    let scenario = build_scenario(&ScenarioSpec::with(ScenarioName::SimplexMedian, overrides))?;
    let comparison = run_comparison(&scenario)?;
    for row in comparison.rounds.iter().filter(|r| r.t % 10 == 0) {
        println!(
            "{:>4} t={:>3} group {}: median alpha {:.3}  median risk {:.3}",
            row.trainer, row.t, row.group, row.alpha.median, row.risk.median
        );
    }
    Ok(())
}
