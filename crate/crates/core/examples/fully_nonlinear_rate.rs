//! Checks the structural assumptions of the fully nonlinear demo model on a
//! random cloud, then fits its stability rate (expected slope near 1).
//!
//! ```bash
//! cargo run --release --example fully_nonlinear_rate
//! ```

use hj_lab::hamiltonians::{check_assumptions, sample_cloud};
use hj_lab::rate::stability_sweep;
use hj_lab::scenarios::scenario;

fn main() -> hj_lab::Result<()> {
    let sc = scenario("fully-nonlinear")?;
    let m = &sc.sweep.problem.model;
    let a = check_assumptions(m, &sample_cloud(0, 1000, m.slow_dim, m.fast_dim, 3.0))?;
    println!(
        "{}: H>=0 {} (margin {:.2e}), growth bound {} (worst ratio {:.3}), coercivity {} (margin {:.2e})",
        a.model, a.nonneg.pass, a.nonneg.worst_margin, a.h1.pass, a.h1_worst_ratio, a.h2.pass, a.h2.worst_margin
    );
    let r = stability_sweep(&sc.sweep)?;
    print!("{}", r.csv());
    println!("slopes {:?}", r.slopes());
    Ok(())
}
