//! Evaluates the truncation, Fisher and bootstrapping bounds, and shows how
//! the allowed evolution time grows with the simulator window.

use cqhl::bounds::{max_time_commuting, window_interaction_norm_exp, window_interaction_norm_poly};
use cqhl::cli::{bound_reports, RunConfig};
use cqhl::experiment_design::{place_window, truncation_time_cap};
use cqhl::ising_model::DecayEnvelope;

fn main() -> cqhl::Result<()> {
    let config = RunConfig::desk();
    for r in bound_reports(&config) {
        println!("{:<30} {:>12.5e}   {}", r.name, r.value, r.formula);
    }

    println!();
    println!("  w   |H_int| exp    |H_int| poly   t_max (window)   t_max (chain, interior)");
    let decay = DecayEnvelope::hundredfold(1.0);
    for w in (4..=12).step_by(2) {
        let h_exp = window_interaction_norm_exp(4, w, decay.b, decay.alpha);
        let h_poly = window_interaction_norm_poly(4, w, decay.b, 3.0);
        let win = place_window(50, 4, w, 23)?;
        let cap = truncation_time_cap(50, &win, decay, 0.01, 1.0)?;
        println!(
            "{w:>3}   {h_exp:>12.4e}   {h_poly:>12.4e}   {:>14.4e}   {cap:>14.4e}",
            max_time_commuting(0.01, 1.0, h_exp)
        );
    }
    Ok(())
}
