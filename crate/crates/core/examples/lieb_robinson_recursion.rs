//! Transverse-field Ising chain on 8 qubits: error of the r-swap protocol
//! against the step-by-step recursion bound, for several swap counts.

use cqhl::densesim::{lieb_robinson_samples, fit_lieb_robinson, plus_projector, transverse_ising_instance, RSwapSystem};
use cqhl::experiment_design::place_window;
use cqhl::ising_model::PriorSpec;
use cqhl::rng::stream;

fn main() -> cqhl::Result<()> {
    let n = 8;
    let mut rng = stream(5, "lr-example", 0);
    let win = place_window(n, 2, 6, 3)?;
    let x = PriorSpec::default().sample(&mut rng, n);
    let (h, h_minus) = transverse_ising_instance(&mut rng, &x, &win, 0.5, 0.05)?;
    let sys = RSwapSystem::new(&h, &h_minus, &win)?;
    let a_op = plus_projector(n, win.a_lo, win.a_hi)?;
    println!("exact norms: {:?}", sys.norms);

    println!("\n   t    r    measured      chain bound   margin");
    for t in [0.25, 0.5, 1.0] {
        for r in [1, 2, 4, 8] {
            let rep = sys.check_recursion(&a_op, 1.0, t, r)?;
            let last = rep.steps.last().expect("at least one step");
            println!(
                "{t:>5} {r:>4}   {:.4e}    {:.4e}    {:.2e}{}",
                rep.final_error(),
                last.chain_bound,
                rep.margin(),
                if rep.violations() > 0 { "  VIOLATION" } else { "" }
            );
        }
    }

    let samples = lieb_robinson_samples(&sys, &a_op, &[0.1, 0.2, 0.4, 0.8]);
    let dist = (win.a_lo - win.lo).min(win.hi - win.a_hi) as f64;
    match fit_lieb_robinson(&samples, 2.0 * sys.norms.h_int_not_a * 2.0, dist) {
        Some(fit) => println!("\nfitted s = {:.3}, mu = {:.3}", fit.s, fit.mu),
        None => println!("\ntoo few informative samples for a fit"),
    }
    Ok(())
}
