//! Effective Hamiltonian of the pendulum `|q|²/2 - cos y` from the discounted
//! cell problem, with the δ-schedule diagnostics, then a small `H̄(x, p)` table.
//!
//! ```bash
//! cargo run --release --example cell_problem
//! ```

use std::f64::consts::PI;
use std::sync::Arc;

use hj_lab::cell::{effective_hamiltonian, tabulate_hbar, CellTemplate, DEFAULT_DELTAS};
use hj_lab::grid::Axis;
use hj_lab::hamiltonians::{make_mechanical, SlowPart};

fn main() -> hj_lab::Result<()> {
    let model = Arc::new(make_mechanical(SlowPart::kinetic(), |y: &[f64]| -y[0].cos()));
    let tpl = CellTemplate::new(model, vec![Axis::new(-PI, PI, 201)?], DEFAULT_DELTAS.to_vec())?;

    let e = effective_hamiltonian(&tpl.query(&[0.0], &[0.0])?)?;
    println!("H̄(0, 0) = {:.6}  (residual {:.1e}, flat: {})", e.value, e.max_residual, e.flat);
    for (k, d) in e.deltas.iter().enumerate() {
        println!("  delta {d:<8} -δw(y0) {:.6}  spread {:.3e}", e.per_delta[k], e.spreads[k]);
    }

    let table = tabulate_hbar(Axis::new(-1.0, 1.0, 3)?, Axis::new(-1.0, 1.0, 5)?, &tpl)?;
    for i in 0..3 {
        let row: Vec<String> = (0..5).map(|j| format!("{:8.4}", table.at(i, j))).collect();
        println!("x = {:5.2}: {}", table.x_axis.node(i), row.join(" "));
    }
    println!("flagged entries: {}", table.flagged());
    Ok(())
}
