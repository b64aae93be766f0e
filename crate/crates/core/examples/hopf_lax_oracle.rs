//! Compares the Lax–Friedrichs solver against the exact Hopf–Lax solution for
//! `H = |p|^2/2 + |q|^2/2` with `u0 = (1 - cos y)/2`.
//!
//! ```bash
//! cargo run --release --example hopf_lax_oracle
//! ```

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use hj_lab::grid::{build_grid, Axis};
use hj_lab::hamiltonians::{make_quadratic, SlowPart};
use hj_lab::hj::{hopf_lax_oracle, solve, CauchyProblem, SearchGrid, SolveOptions};
use rayon::prelude::*;

fn main() -> hj_lab::Result<()> {
    let model = Arc::new(make_quadratic(SlowPart::kinetic()));
    let grid = Arc::new(build_grid(
        vec![Axis::new(-1.0, 1.0, 5)?],
        vec![Axis::new(-PI, PI, 201)?],
        1.0,
        0.5,
    )?);
    let u0 = |_: &[f64], y: &[f64]| 0.5 * (1.0 - y[0].cos());
    let search = SearchGrid::new(0.0, 1, -2.0 * PI, 2.0 * PI, 4001)?;

    for eps in [0.4, 0.1] {
        let pb = CauchyProblem::new(model.clone(), eps, Arc::new(u0), 0.0)?;
        let start = Instant::now();
        let out = solve(&pb, &grid, &SolveOptions::record_only(&[0.5, 1.0]))?;
        let elapsed = start.elapsed();
        for t in [0.5, 1.0] {
            let f = out.slice_at(t)?;
            let gap = (0..grid.len())
                .into_par_iter()
                .map(|i| {
                    let c = grid.coords(i);
                    let exact = hopf_lax_oracle(&u0, t, c[0], c[1], eps, &search).unwrap();
                    (f.values[i] - exact).abs()
                })
                .reduce(|| 0.0, f64::max);
            println!("eps={eps:<5} t={t:<4} sup|u - u_HL| = {gap:.3e}  ({} steps, {:.2?})", out.diagnostics.steps, elapsed);
        }
    }
    Ok(())
}
