//! Learns a hidden 12-site chain with a 4-site observable and an 8-site
//! simulator window, then writes the per-experiment trace.
//!
//!     cargo run --release --example learn_chain -- [particles] [experiments_per_scan]

use cqhl::cli::{run_learning, RunConfig};

fn main() -> cqhl::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let config = RunConfig {
        particles: args.next().unwrap_or(2000),
        experiments_per_scan: args.next().unwrap_or(100),
        ..RunConfig::desk()
    };
    let out = run_learning(&config, config.n, 0)?;

    let mut last = usize::MAX;
    for row in &out.trace.rows {
        if row.position != last {
            println!(
                "position {:>2}  experiment {:>5}  t = {:>8.3}  ess = {:>7.1}  L2 error = {:.3e}",
                row.position, row.experiment_index, row.t, row.ess, row.l2_error
            );
            last = row.position;
        }
    }
    println!("prior-mean error {:.4e}", out.prior_mean_error);
    println!("final error      {:.4e} (ratio {:.3e})", out.final_error, out.final_error / out.prior_mean_error);
    println!("operator-norm error of H: {:.4e} (exact: {})", out.final_opnorm.value, out.final_opnorm.exact);
    if let Some(rate) = out.decay_rate {
        println!("fitted decay rate {rate:.4e} per experiment");
    }
    println!("resampled {} times", out.trace.resamples);

    let path = std::env::temp_dir().join("learn_chain_trace.csv");
    out.trace.write_csv(std::fs::File::create(&path)?)?;
    println!("trace written to {}", path.display());
    Ok(())
}
