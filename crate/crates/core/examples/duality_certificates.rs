//! Dual Fokker–Planck run against a frozen viscous solution: the duality
//! residual under refinement, mass drift, the sup-norm certificate and the
//! γ-moment for decreasing σ.
//!
//! ```bash
//! cargo run --release --example duality_certificates
//! ```

use std::f64::consts::PI;
use std::sync::Arc;

use hj_lab::adjoint::{duality_terms, gamma_moment, solve_fokker_planck_dual, supnorm_certificate, DensityField};
use hj_lab::grid::{build_grid, Axis};
use hj_lab::hamiltonians::{make_quadratic, SlowPart};
use hj_lab::hj::{solve, CauchyProblem, SolveOptions};
use hj_lab::runner::demo_datum;

fn main() -> hj_lab::Result<()> {
    let model = Arc::new(make_quadratic(SlowPart::kinetic()));
    let mut prev: Option<f64> = None;
    for n in [41, 81, 161] {
        let grid = Arc::new(build_grid(vec![Axis::new(-PI, PI, n)?], vec![Axis::new(-PI, PI, n)?], 1.0, 0.5)?);
        let pb = CauchyProblem::new(model.clone(), 0.2, demo_datum(), 1e-2)?;
        let u = solve(&pb, &grid, &SolveOptions::default())?;
        let rho = DensityField::gaussian_bump(grid.clone(), 1.0, &[0.5, 0.5], 0.4)?;
        let d = solve_fokker_planck_dual(&u, &rho, 1e-2, 0.0)?;
        let t = duality_terms(&u, &d, 0.0, 1.0)?;
        let order = prev.map(|p| (p / t.residual).log2());
        println!(
            "n = {n:<4} lhs {:.6} rhs {:.6} residual {:.3e} order {} drift {:.1e} certificate {}",
            t.lhs,
            t.rhs,
            t.residual,
            order.map_or("-".into(), |o| format!("{o:.2}")),
            d.mass_drift(),
            supnorm_certificate(&u).pass
        );
        prev = Some(t.residual);
    }

    let grid = Arc::new(build_grid(vec![Axis::new(-PI, PI, 41)?], vec![Axis::new(-PI, PI, 81)?], 1.0, 0.5)?);
    for sigma in [1e-2, 5e-3, 2.5e-3] {
        let pb = CauchyProblem::new(model.clone(), 0.2, demo_datum(), sigma)?;
        let u = solve(&pb, &grid, &SolveOptions::every(1))?;
        let rho = DensityField::gaussian_bump(grid.clone(), 1.0, &[0.5, 0.5], 0.4)?;
        let d = solve_fokker_planck_dual(&u, &rho, sigma, 0.0)?;
        println!("sigma = {sigma:<7} gamma moment {:.5}", gamma_moment(&u, &d)?);
    }
    Ok(())
}
