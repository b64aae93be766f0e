//! Mean field game of acceleration on the weak-coupling demo: one damped
//! fixed-point solve, then the ε-sweep of the value function.
//!
//! ```bash
//! cargo run --release --example mfg_acceleration            # single solve
//! cargo run --release --example mfg_acceleration -- sweep   # full sweep, a few minutes
//! ```

use hj_lab::mfg::{mfg_rate_study, solve_mfg_acc, MfgDemo, MfgRateStudy, DEFAULT_MAX_ITERS, DEFAULT_MFG_EPS, DEFAULT_PROBES, DEFAULT_TOL};

fn main() -> hj_lab::Result<()> {
    let demo = MfgDemo::default();
    if std::env::args().nth(1).as_deref() == Some("sweep") {
        let pb = demo.problem("weak-coupling", DEFAULT_MFG_EPS[0])?;
        let study = MfgRateStudy::new(pb, DEFAULT_MFG_EPS.to_vec(), DEFAULT_PROBES.to_vec())?;
        let r = mfg_rate_study(&study)?;
        print!("{}", r.report.csv());
        println!("max errors {:?}", r.max_errors);
        println!("slope {:?}, iterations {:?}", r.slope(), r.iterations);
        return Ok(());
    }
    let pb = demo.problem("weak-coupling", 0.05)?;
    let s = solve_mfg_acc(&pb, DEFAULT_MAX_ITERS, DEFAULT_TOL)?.require_converged()?;
    print!("{}", s.diagnostics_csv());
    let mass = s.state.mu.last().map(|m| m.mass()).unwrap_or(f64::NAN);
    println!("converged after {} iterations, terminal mass {mass:.12}", s.iterations());
    Ok(())
}
