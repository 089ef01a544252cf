//! Next-nearest-neighbor ZZ coupling from four nearest-neighbor pulses: the
//! error is third order in the pulse length.

use cqhl::bootstrap::nnn_gadget_error;

fn main() -> cqhl::Result<()> {
    println!("     dt        error        ratio to previous");
    let mut prev = None;
    for k in 0..7 {
        let dt = 0.4 / 2f64.powi(k);
        let e = nnn_gadget_error(dt)?;
        let ratio = prev.map_or(String::from("-"), |p: f64| format!("{:.3}", p / e));
        println!("{dt:>9.5}   {e:>11.4e}   {ratio}");
        prev = Some(e);
    }
    Ok(())
}
