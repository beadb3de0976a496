//! Any group making up at least a fraction `α` of the population has risk no
//! larger than the robust risk at radius `max((1/α-1)², 1/α-1)`.

use drofair::dro::{chi_square_divergence, robustness_radius, verify_mixture_bound};
use drofair::rng::rng_from_seed;
use rand::Rng;

fn main() -> drofair::Result<()> {
    let mut rng = rng_from_seed(11);
    // three groups, each a discrete distribution over its own 4 atoms
    let alpha = [0.6, 0.3, 0.1];
    let mut losses = Vec::new();
    let mut groups = Vec::new();
    let mut base = Vec::new();
    let mut risks = vec![0.0; alpha.len()];
    for (k, a) in alpha.iter().enumerate() {
        let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        for w in raw {
            let loss = rng.random_range(0.0..(k as f64 + 1.0) * 2.0);
            risks[k] += w / total * loss;
            losses.push(loss);
            groups.push(k);
            base.push(a * w / total);
        }
    }
    let report = verify_mixture_bound(&risks, &alpha, &losses, &groups, &base)?;
    for k in 0..alpha.len() {
        let component: Vec<f64> = groups
            .iter()
            .zip(&base)
            .map(|(g, p)| if *g == k { p / alpha[k] } else { 0.0 })
            .collect();
        println!(
            "group {k}: alpha {:.1}  risk {:.4}  robust risk {:.4}  radius {:.3}  divergence {:.3}",
            alpha[k],
            risks[k],
            report.robust_risks[k],
            robustness_radius(alpha[k])?,
            chi_square_divergence(&component, &base)?,
        );
    }
    println!("bound holds for every group: {}", report.holds());
    Ok(())
}
