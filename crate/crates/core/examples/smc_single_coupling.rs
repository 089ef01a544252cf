//! Sequential Monte Carlo on a two-qubit chain with one unknown coupling:
//! Bayes updates, particle-guess-heuristic times and Liu-West resampling,
//! written out step by step.

use cqhl::experiment_design::pgh_design;
use cqhl::inference::{liu_west_resample, ParticleCloud, ResampleConfig};
use cqhl::ising_model::{likelihood_windowed_delta, sample_datum_local, CouplingVector, Window, WindowLayout};
use cqhl::rng::stream;
use rand::Rng;

fn main() -> cqhl::Result<()> {
    let seed = 3;
    let truth = CouplingVector::from_values(2, vec![0.7])?;
    let window = Window::new(2, 0, 2, 0, 2)?;
    let layout = WindowLayout::new(2, window)?;

    let mut rng = stream(seed, "prior", 0);
    let particles: Vec<f64> = (0..2000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut cloud = ParticleCloud::uniform(1, particles)?;
    let cfg = ResampleConfig::default();
    let mut design_rng = stream(seed, "design", 0);
    let mut data_rng = stream(seed, "data", 0);

    for k in 0..200 {
        let design = pgh_design(&mut design_rng, &cloud, window, None)?;
        let datum = sample_datum_local(&mut data_rng, &truth, &design.x_inv, &layout, design.t)?;
        cloud.bayes_update(datum, |x| {
            likelihood_windowed_delta(&[x[0] - design.x_inv[0]], &layout, design.t)
        })?;
        if cfg.should_resample(&cloud) {
            cloud = liu_west_resample(&mut design_rng, &cloud, &cfg)?;
        }
        if k % 20 == 19 {
            let sd = cloud.covariance()[(0, 0)].sqrt();
            println!(
                "after {:>3} experiments: J = {:.6} ± {:.1e}  (last t = {:.1})",
                k + 1,
                cloud.mean()[0],
                sd,
                design.t
            );
        }
    }
    println!("true coupling {:.6}", truth.values()[0]);
    Ok(())
}
