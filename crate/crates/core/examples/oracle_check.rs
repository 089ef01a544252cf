//! Compares the closed-form likelihood with explicit statevector evolution
//! on a few random chains.

use cqhl::densesim::iqle_outcome_prob_dense;
use cqhl::ising_model::{likelihood_full, PriorSpec};
use cqhl::experiment_design::place_window;
use cqhl::rng::stream;
use rand::Rng;

fn main() -> cqhl::Result<()> {
    let mut rng = stream(11, "oracle-example", 0);
    let prior = PriorSpec::default();
    println!(" n  a  w     t        closed form    statevector    deviation");
    for _ in 0..8 {
        let n = rng.gen_range(3..=9);
        let a = rng.gen_range(1..=3.min(n - 1));
        let w = rng.gen_range(a..=n);
        let win = place_window(n, a, w, rng.gen_range(0..=n - a))?;
        let (x, y) = (prior.sample(&mut rng, n), prior.sample(&mut rng, n));
        let t = rng.gen_range(0.1..5.0);
        let p = likelihood_full(&x, &y, &win, t)?;
        let q = iqle_outcome_prob_dense(&x, &y, &win, t)?;
        println!("{n:>2} {a:>2} {w:>2}  {t:>6.3}   {p:>12.9}   {q:>12.9}   {:.1e}", (p - q).abs());
    }
    println!("\nfull suite: {:?}", cqhl::cli::oracle_check(&cqhl::cli::RunConfig::desk())?);
    Ok(())
}
