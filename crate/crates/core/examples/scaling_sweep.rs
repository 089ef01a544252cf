//! Median learning error against chain length at a fixed window size.
//!
//!     cargo run --release --example scaling_sweep -- [repetitions]

use cqhl::cli::{run_scaling, RunConfig, ScalingSection};

fn main() -> cqhl::Result<()> {
    let reps = std::env::args().nth(1).map_or(3, |a| a.parse().expect("integer argument"));
    let config = RunConfig {
        particles: 1500,
        experiments_per_scan: 60,
        scaling: ScalingSection {
            n_values: vec![6, 8, 10, 12],
            repetitions: reps,
        },
        ..RunConfig::desk()
    };
    println!("  n   median error   quartiles               prior-mean error");
    for row in run_scaling(&config)? {
        println!(
            "{:>3}   {:.4e}     [{:.3e}, {:.3e}]   {:.4e}",
            row.n, row.median_error, row.q1_error, row.q3_error, row.median_prior_error
        );
    }
    Ok(())
}
