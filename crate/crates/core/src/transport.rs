//! Wasserstein-1 distances between grid measures.
//!
//! On a line the distance is the L¹ norm of the CDF difference. Two-dimensional
//! measures are compared through their 1D marginals; the larger marginal
//! distance is a lower bound for the true distance and is reported as a proxy.
//! Small supports can be solved exactly as a transportation LP.

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::adjoint::DensityField;
use crate::error::{Error, Result};

/// Total masses may differ by at most this much.
pub const W1_MASS_TOL: f64 = 1e-6;
/// Largest support (per side) accepted by the exact solver.
pub const EXACT_SUPPORT_CAP: usize = 256;

fn check_masses(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.iter().chain(b).any(|v| !v.is_finite() || *v < -1e-12) {
        return Err(Error::InvalidArgument("masses must be finite and nonnegative".into()));
    }
    let ma: f64 = a.iter().sum();
    let mb: f64 = b.iter().sum();
    if (ma - mb).abs() > W1_MASS_TOL {
        return Err(Error::MassMismatch(format!("total masses {ma} and {mb} differ")));
    }
    Ok((ma, mb))
}

/// `W1` between node masses `a`, `b` placed at increasing `nodes`.
pub fn w1_masses(nodes: &[f64], a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != nodes.len() || b.len() != nodes.len() {
        return Err(Error::ShapeMismatch("mass vectors do not match the nodes".into()));
    }
    if nodes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("nodes must be strictly increasing".into()));
    }
    check_masses(a, b)?;
    let mut cdf = 0.0;
    let mut w = 0.0;
    for i in 0..nodes.len().saturating_sub(1) {
        cdf += a[i] - b[i];
        w += cdf.abs() * (nodes[i + 1] - nodes[i]);
    }
    Ok(w)
}

/// Exact `W1` between two densities on a common 1D grid.
pub fn wasserstein1_1d(a: &DensityField, b: &DensityField) -> Result<f64> {
    if a.grid.dims() != 1 || !a.grid.same_space(&b.grid) {
        return Err(Error::ShapeMismatch("wasserstein1_1d needs two densities on one 1D grid".into()));
    }
    w1_masses(&a.grid.axis(0).nodes(), &a.marginal(0), &b.marginal(0))
}

/// Marginal distances of two grid measures and their maximum, a lower bound
/// on the full `W1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalW1 {
    pub per_axis: Vec<f64>,
    pub proxy: f64,
}

pub fn w1_marginal_proxy(a: &DensityField, b: &DensityField) -> Result<MarginalW1> {
    if !a.grid.same_space(&b.grid) {
        return Err(Error::ShapeMismatch("densities live on different grids".into()));
    }
    let per_axis = (0..a.grid.dims())
        .map(|k| w1_masses(&a.grid.axis(k).nodes(), &a.marginal(k), &b.marginal(k)))
        .collect::<Result<Vec<_>>>()?;
    let proxy = per_axis.iter().copied().fold(0.0, f64::max);
    Ok(MarginalW1 { per_axis, proxy })
}

/// Distance used by fixed-point loops: exact on 1D grids, the marginal proxy otherwise.
pub fn slice_distance(a: &DensityField, b: &DensityField) -> Result<f64> {
    if a.grid.dims() == 1 {
        wasserstein1_1d(a, b)
    } else {
        Ok(w1_marginal_proxy(a, b)?.proxy)
    }
}

/// Exact `W1` with Euclidean ground cost between two weighted point clouds,
/// solved as a transportation LP. Zero masses are dropped before the support
/// cap is applied.
pub fn w1_exact(xa: &[Vec<f64>], a: &[f64], xb: &[Vec<f64>], b: &[f64]) -> Result<f64> {
    if xa.len() != a.len() || xb.len() != b.len() {
        return Err(Error::ShapeMismatch("points and masses differ in length".into()));
    }
    let (ma, mb) = check_masses(a, b)?;
    let sa: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let sb: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    if sa.len() > EXACT_SUPPORT_CAP || sb.len() > EXACT_SUPPORT_CAP {
        return Err(Error::InvalidArgument(format!(
            "exact transport limited to {EXACT_SUPPORT_CAP} support points per side, got {} and {}",
            sa.len(),
            sb.len()
        )));
    }
    if sa.is_empty() || sb.is_empty() {
        return Ok(0.0);
    }
    // rescale b so the LP is exactly balanced
    let scale = if mb > 0.0 { ma / mb } else { 1.0 };
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let mut vars = Vec::with_capacity(sa.len() * sb.len());
    for &i in &sa {
        for &j in &sb {
            let c: f64 = xa[i].iter().zip(&xb[j]).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            vars.push(lp.add_var(c, (0.0, f64::INFINITY)));
        }
    }
    let nb = sb.len();
    for (r, &i) in sa.iter().enumerate() {
        let mut e = LinearExpr::empty();
        for c in 0..nb {
            e.add(vars[r * nb + c], 1.0);
        }
        lp.add_constraint(e, ComparisonOp::Eq, a[i]);
    }
    for (c, &j) in sb.iter().enumerate() {
        let mut e = LinearExpr::empty();
        for r in 0..sa.len() {
            e.add(vars[r * nb + c], 1.0);
        }
        lp.add_constraint(e, ComparisonOp::Eq, b[j] * scale);
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::InvalidArgument(format!("transport LP failed: {e}")))?;
    Ok(sol.objective())
}

/// Exact `W1` between two densities on a small common grid.
pub fn w1_exact_fields(a: &DensityField, b: &DensityField) -> Result<f64> {
    if !a.grid.same_space(&b.grid) {
        return Err(Error::ShapeMismatch("densities live on different grids".into()));
    }
    let g = &a.grid;
    let d = g.dims();
    let pts: Vec<Vec<f64>> = (0..g.len()).map(|i| g.coords(i)[..d].to_vec()).collect();
    let w = g.weights();
    let ma: Vec<f64> = a.values.iter().zip(&w).map(|(v, w)| v * w).collect();
    let mb: Vec<f64> = b.values.iter().zip(&w).map(|(v, w)| v * w).collect();
    w1_exact(&pts, &ma, &pts, &mb)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::grid::{Axis, Grid};

    fn line(n: usize) -> Arc<Grid> {
        Arc::new(Grid::new(vec![Axis::new(0.0, 1.0, n).unwrap()], vec![], 1.0, 0.5).unwrap())
    }

    fn random_masses(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    }

    #[test]
    fn point_masses_are_a_translation() {
        let g = line(11);
        let a = DensityField::point_mass(g.clone(), 0.0, 0).unwrap();
        let b = DensityField::point_mass(g.clone(), 0.0, 5).unwrap();
        assert!((wasserstein1_1d(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(wasserstein1_1d(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mass_mismatch_is_rejected() {
        let nodes = [0.0, 1.0];
        assert!(matches!(w1_masses(&nodes, &[1.0, 0.0], &[0.5, 0.0]), Err(Error::MassMismatch(_))));
    }

    #[test]
    fn exact_solver_agrees_with_cdf_on_a_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nodes: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let pts: Vec<Vec<f64>> = nodes.iter().map(|x| vec![*x]).collect();
        for _ in 0..5 {
            let a = random_masses(&mut rng, 12);
            let b = random_masses(&mut rng, 12);
            let cdf = w1_masses(&nodes, &a, &b).unwrap();
            let lp = w1_exact(&pts, &a, &pts, &b).unwrap();
            assert!((cdf - lp).abs() < 1e-10, "{cdf} vs {lp}");
        }
    }

    #[test]
    fn exact_solver_matches_best_matching() {
        // uniform measures on 5 points each: an optimal plan is a permutation
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xa: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let xb: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let dist = |p: &Vec<f64>, q: &Vec<f64>| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        let mut best = f64::INFINITY;
        let mut perm = [0usize, 1, 2, 3, 4];
        permute(&mut perm, 0, &mut |p| {
            let c: f64 = (0..5).map(|i| dist(&xa[i], &xb[p[i]])).sum::<f64>() / 5.0;
            best = best.min(c);
        });
        let w = vec![0.2; 5];
        let lp = w1_exact(&xa, &w, &xb, &w).unwrap();
        assert!((lp - best).abs() < 1e-10, "{lp} vs {best}");
    }

    fn permute(p: &mut [usize; 5], k: usize, f: &mut impl FnMut(&[usize; 5])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }

    #[test]
    fn proxy_is_a_lower_bound() {
        let g = Arc::new(Grid::new(vec![Axis::new(0.0, 1.0, 6).unwrap()], vec![Axis::new(0.0, 1.0, 6).unwrap()], 1.0, 0.5).unwrap());
        let a = DensityField::gaussian_bump(g.clone(), 0.0, &[0.2, 0.3], 0.2).unwrap();
        let b = DensityField::gaussian_bump(g.clone(), 0.0, &[0.7, 0.6], 0.25).unwrap();
        let proxy = w1_marginal_proxy(&a, &b).unwrap();
        let exact = w1_exact_fields(&a, &b).unwrap();
        assert_eq!(proxy.per_axis.len(), 2);
        assert!(proxy.proxy <= exact + 1e-10);
        assert!(proxy.proxy > 0.0);
    }

    #[test]
    fn oversized_support_is_refused() {
        let pts: Vec<Vec<f64>> = (0..300).map(|i| vec![i as f64]).collect();
        let m = vec![1.0 / 300.0; 300];
        assert!(w1_exact(&pts, &m, &pts, &m).is_err());
    }
}
