//! Calibrates nearest-neighbor couplings on a crosstalk-afflicted device by
//! learning its control map, first with an exact learner and then with
//! compressed learning.
//!
//!     cargo run --release --example bootstrap_crosstalk -- [n] [particles]

use cqhl::cli::{run_bootstrap, LearnerKind, RunConfig};

fn main() -> cqhl::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let n = args.next().unwrap_or(8);
    let particles = args.next().unwrap_or(2000);
    for learner in [LearnerKind::Oracle, LearnerKind::Cqhl] {
        let mut config = RunConfig {
            n,
            particles,
            experiments_per_scan: 60,
            ..RunConfig::desk()
        };
        config.bootstrap.learner = learner;
        let out = run_bootstrap(&config)?;
        println!("{learner:?} learner, n = {n}, {} controls", out.controls);
        println!("  rank {} of {} rows, condition number {:.3}", out.pinv_rank, n * (n - 1) / 2, out.condition_number);
        println!("  naive controls      {:.4e}", out.before_naive_summary.median);
        println!("  prior-mean map      {:.4e}", out.before.median);
        println!("  learned map         {:.4e}", out.after.median);
        println!("  exact map (floor)   {:.4e}", out.exact_map_floor.median);
        println!("  |G - G_est| = {:.3e}, single-step bound holds: {}", out.map_error_norm, out.step_bound_holds);
        for row in &out.rows {
            println!("    target {:>2}: before {:.3e}  after {:.3e}", row.target, row.before, row.after);
        }
    }
    Ok(())
}
