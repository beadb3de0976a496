//! Worst-case reweighting of a fixed loss vector: the dual threshold search
//! and the primal maximizer agree, and the maximizer piles mass on the
//! largest losses.

use drofair::dro::{
    dual_objective, minimize_dual_eta, robustness_radius, worst_case_weights, ChiSquareBall, DualConstant, DualParams,
};

fn main() -> drofair::Result<()> {
    let losses = [0.2, 0.5, 1.0, 3.0, 0.1, 0.4];
    let base = [1.0 / 6.0; 6];

    for alpha_min in [0.1, 0.2, 0.5, 1.0] {
        let dual = DualParams::new(alpha_min)?;
        let solution = minimize_dual_eta(&losses, &base, &dual, 1e-10)?;
        let worst = worst_case_weights(&losses, &base, ChiSquareBall::for_group_fraction(alpha_min)?)?;
        println!(
            "alpha_min {alpha_min:>4}: radius {:>6.3}  eta* {:>8.4}  dual {:.6}  primal {:.6}",
            robustness_radius(alpha_min)?,
            solution.eta_star,
            solution.value,
            worst.objective(&losses),
        );
        let shown: Vec<String> = worst.weights.iter().map(|w| format!("{w:.3}")).collect();
        println!("    worst-case weights [{}]", shown.join(", "));
    }

    // the conservative constant gives a larger, still valid, upper bound
    let conservative = DualParams::with_convention(0.2, DualConstant::Conservative)?;
    let sol = minimize_dual_eta(&losses, &base, &conservative, 1e-10)?;
    println!(
        "conservative constant at 0.2: C = {:.3}, value {:.6} (F at eta*: {:.6})",
        conservative.c_const,
        sol.value,
        dual_objective(&losses, &base, sol.eta_star, &conservative)
    );
    Ok(())
}
