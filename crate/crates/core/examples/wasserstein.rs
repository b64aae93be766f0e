//! Wasserstein-1 on grids: the 1D CDF formula against the transport LP, and
//! the marginal proxy for a pair of 2D bumps.
//!
//! ```bash
//! cargo run --release --example wasserstein
//! ```

use std::sync::Arc;

use hj_lab::adjoint::DensityField;
use hj_lab::grid::{Axis, Grid};
use hj_lab::transport::{w1_exact, w1_exact_fields, w1_marginal_proxy, wasserstein1_1d};

fn main() -> hj_lab::Result<()> {
    let line = Arc::new(Grid::new(vec![Axis::new(0.0, 1.0, 64)?], vec![], 1.0, 0.5)?);
    let a = DensityField::gaussian_bump(line.clone(), 0.0, &[0.3], 0.05)?;
    let b = DensityField::gaussian_bump(line.clone(), 0.0, &[0.6], 0.1)?;
    let cdf = wasserstein1_1d(&a, &b)?;
    let pts: Vec<Vec<f64>> = line.axis(0).nodes().into_iter().map(|x| vec![x]).collect();
    let w = line.weights();
    let ma: Vec<f64> = a.values.iter().zip(&w).map(|(v, w)| v * w).collect();
    let mb: Vec<f64> = b.values.iter().zip(&w).map(|(v, w)| v * w).collect();
    println!("1D: CDF {cdf:.12}  LP {:.12}", w1_exact(&pts, &ma, &pts, &mb)?);

    let plane = Arc::new(Grid::new(vec![Axis::new(0.0, 1.0, 12)?], vec![Axis::new(0.0, 1.0, 12)?], 1.0, 0.5)?);
    let p = DensityField::gaussian_bump(plane.clone(), 0.0, &[0.3, 0.3], 0.15)?;
    let q = DensityField::gaussian_bump(plane.clone(), 0.0, &[0.7, 0.6], 0.15)?;
    let proxy = w1_marginal_proxy(&p, &q)?;
    println!("2D: marginals {:?}, proxy {:.6} <= exact {:.6}", proxy.per_axis, proxy.proxy, w1_exact_fields(&p, &q)?);
    Ok(())
}
