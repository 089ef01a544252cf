//! Composes a target Hamiltonian from two control settings with a first-order
//! product formula; the error falls as one over the repetition count.

use cqhl::bootstrap::{hamiltonian_of, trotter_schedule};
use cqhl::densesim::{sequence_unitary, spectral_norm, PauliTerm, PauliTermList};

fn main() -> cqhl::Result<()> {
    let n = 3;
    let controls = vec![
        PauliTermList::with_terms(n, vec![PauliTerm::zz(1.0, 0, 1), PauliTerm::zz(0.4, 1, 2)])?,
        PauliTermList::with_terms(n, vec![PauliTerm::x(1.0, 0), PauliTerm::x(0.7, 1), PauliTerm::x(0.3, 2)])?,
    ];
    let (c1, c2) = ([1.0, 0.0], [0.0, 1.0]);
    let (a, b, dt) = (0.6, 0.4, 1.0);
    let combined = hamiltonian_of(&controls, &[a, b])?;
    let exact = sequence_unitary(n, &[(combined, dt)])?;
    println!(" reps      error      error x reps");
    for reps in [1, 2, 4, 8, 16, 32] {
        let segments = trotter_schedule(&c1, &c2, a, b, dt, reps)?
            .into_iter()
            .map(|(c, tau)| Ok((hamiltonian_of(&controls, &c)?, tau)))
            .collect::<cqhl::Result<Vec<_>>>()?;
        let err = spectral_norm(&(sequence_unitary(n, &segments)? - &exact));
        println!("{reps:>5}   {err:.4e}   {:.4e}", err * reps as f64);
    }
    Ok(())
}
