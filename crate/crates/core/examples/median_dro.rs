//! One-dimensional median under a 90/10 mixture. ERM sits at the majority;
//! the robust fit moves toward the minority and certifies its risk.

use drofair::dro::DualParams;
use drofair::models::{dro_fit, erm_fit, LossFamily, ModelParams, OptimizerSettings};
use drofair::population::{training_view, sample_mixture, EvalPool, GroupMixture, GroupSpec};

fn main() -> drofair::Result<()> {
    let mixture = GroupMixture::new(
        vec![GroupSpec::gaussian(vec![-1.0], 0.5)?, GroupSpec::gaussian(vec![2.0], 0.5)?],
        vec![0.9, 0.1],
    )?;
    let samples = sample_mixture(&mixture, 2000, 5);
    let train = training_view(&samples);
    let weights = vec![1.0 / train.len() as f64; train.len()];
    let family = LossFamily::AbsoluteMedian;
    let init = ModelParams::new(vec![0.0]);
    let settings = OptimizerSettings::default();
    let eval = EvalPool::draw(&mixture, 20_000, 6)?;

    let erm = erm_fit(family, &train, &weights, &init, &settings)?;
    let r = eval.risks(family, &erm)?;
    println!("erm        theta {:>7.3}  group risks {:.3?}", erm.theta[0], r.values());
    for alpha_min in [0.5, 0.2, 0.1] {
        let fit = dro_fit(family, &train, &weights, &DualParams::new(alpha_min)?, &init, &settings)?;
        let r = eval.risks(family, &fit.params)?;
        println!(
            "dro {alpha_min:>4}   theta {:>7.3}  group risks {:.3?}  certificate {:.3}",
            fit.params.theta[0],
            r.values(),
            fit.certificate
        );
    }
    Ok(())
}
