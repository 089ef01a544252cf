//! Numerical Fisher information of one experiment, compared with the
//! `4t²` bound.

use cqhl::densesim::fisher_numeric;
use cqhl::experiment_design::place_window;
use cqhl::ising_model::PriorSpec;
use cqhl::rng::stream;

fn main() -> cqhl::Result<()> {
    let n = 5;
    let mut rng = stream(2, "fisher-example", 0);
    let win = place_window(n, 2, 4, 1)?;
    let prior = PriorSpec::ExponentialDecayUniform { b: 1.0 };
    let (x, y) = (prior.sample(&mut rng, n), prior.sample(&mut rng, n));
    println!("    t       max |I_ij|     4t^2       I(2t)/I(t) trace");
    let mut prev: Option<f64> = None;
    for k in 0..8 {
        let t = 0.01 * 2f64.powi(k);
        let f = fisher_numeric(&x, &y, &win, t, 1e-4)?;
        if f.undefined {
            println!("{t:>7.2}   undefined (p = {:.3e})", f.probability);
            prev = None;
            continue;
        }
        let tr = f.values.trace();
        println!(
            "{t:>7.2}   {:>11.4e}   {:>9.4e}   {}",
            f.values.amax(),
            4.0 * t * t,
            prev.map_or(String::from("-"), |p| format!("{:.4}", tr / p))
        );
        prev = Some(tr);
    }
    Ok(())
}
