//! Dual Fokker–Planck runs along a frozen HJ solution and the integral
//! identities they certify.
//!
//! For `u_t - σΔu + G(∇u) = 0` the density solving
//! `ρ_t + σΔρ + div(ρ ∇G(∇u)) = 0` backward from `ρ(τ) = ρ_τ` satisfies
//! `∫u(τ)ρ_τ - ∫u(s)ρ(s) = ∫_s^τ ∫ (<∇G, ∇u> - G) ρ`.
//! In reversed time `r = τ - t` it is a forward equation with velocity `-∇G`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, MAX_DIMS};
use crate::hj::{central_gradient_at, SchemeHamiltonian, ScaledModel, SolveOutput};

/// Slices whose mass drifts further than this from one are rejected.
pub const MASS_TOL: f64 = 1e-8;
/// Undershoots below this are clipped and logged.
pub const NEGATIVITY_TOL: f64 = -1e-12;

/// Nonnegative grid measure with node masses `values[i] * weight(i)`.
#[derive(Clone, Debug)]
pub struct DensityField {
    pub grid: Arc<Grid>,
    pub t: f64,
    pub values: Vec<f64>,
}

impl DensityField {
    /// Validates nonnegativity and unit mass.
    pub fn new(grid: Arc<Grid>, t: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch("density length does not match the grid".into()));
        }
        if let Some(v) = values.iter().copied().find(|v| !v.is_finite() || *v < NEGATIVITY_TOL) {
            return Err(Error::NegativeDensity { step: 0, value: v });
        }
        let d = DensityField { grid, t, values };
        let m = d.mass();
        if (m - 1.0).abs() > MASS_TOL {
            return Err(Error::MassMismatch(format!("density mass {m} differs from 1")));
        }
        Ok(d)
    }

    /// Normalizes nonnegative node values to unit mass.
    pub fn normalized(grid: Arc<Grid>, t: f64, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch("density length does not match the grid".into()));
        }
        let m: f64 = values.iter().enumerate().map(|(i, v)| v * grid.weight(i)).sum();
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::MassMismatch(format!("cannot normalize mass {m}")));
        }
        values.iter_mut().for_each(|v| *v /= m);
        DensityField::new(grid, t, values)
    }

    /// Discrete Gaussian bump centered at `center` (all coordinates, slow first),
    /// truncated at four widths and normalized.
    pub fn gaussian_bump(grid: Arc<Grid>, t: f64, center: &[f64], width: f64) -> Result<Self> {
        if center.len() != grid.dims() {
            return Err(Error::InvalidArgument("bump center dimension mismatch".into()));
        }
        if !(width > 0.0) {
            return Err(Error::InvalidArgument(format!("bump width must be positive, got {width}")));
        }
        let values = (0..grid.len())
            .map(|i| {
                let c = grid.coords(i);
                let r2: f64 = (0..grid.dims()).map(|k| (c[k] - center[k]).powi(2)).sum();
                if r2.sqrt() > 4.0 * width {
                    0.0
                } else {
                    (-0.5 * r2 / (width * width)).exp()
                }
            })
            .collect();
        DensityField::normalized(grid, t, values)
    }

    /// Unit mass at node `idx`.
    pub fn point_mass(grid: Arc<Grid>, t: f64, idx: usize) -> Result<Self> {
        let mut values = vec![0.0; grid.len()];
        values[idx] = 1.0 / grid.weight(idx);
        DensityField::new(grid, t, values)
    }

    pub fn mass(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.grid.weight(i))
            .sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `∫ f dρ` for a field on the same grid.
    pub fn pair(&self, f: &ScalarField) -> Result<f64> {
        if !self.grid.same_space(&f.grid) {
            return Err(Error::ShapeMismatch("density and field live on different grids".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&f.values)
            .enumerate()
            .map(|(i, (r, u))| r * u * self.grid.weight(i))
            .sum())
    }

    /// Node masses along axis `k` (marginal).
    pub fn marginal(&self, k: usize) -> Vec<f64> {
        let n = self.grid.shape()[k];
        let s = self.grid.strides()[k];
        let mut out = vec![0.0; n];
        for (i, v) in self.values.iter().enumerate() {
            out[(i / s) % n] += v * self.grid.weight(i);
        }
        out
    }
}

/// A clip-and-renormalize event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEvent {
    pub substep: usize,
    pub min_value: f64,
    pub mass_before: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransportStats {
    pub substeps: usize,
    pub clips: Vec<ClipEvent>,
    pub max_mass_drift: f64,
}

/// Advances nodal density `rho` by `duration` under
/// `ρ_t + div(ρ V) = σΔρ` with no-flux closure.
///
/// `velocity` holds node velocities interleaved as `velocity[i * d + k]`; face
/// velocities are averages of the two adjacent nodes. The update is a
/// conservative first-order upwind finite-volume scheme on trapezoidal cells,
/// substepped to keep it positivity preserving.
pub fn advance_density(grid: &Grid, rho: &mut [f64], velocity: &[f64], sigma: f64, duration: f64, cfl: f64, stats: &mut TransportStats) -> Result<()> {
    let d = grid.dims();
    let len = grid.len();
    if rho.len() != len || velocity.len() != len * d {
        return Err(Error::ShapeMismatch("density or velocity length does not match the grid".into()));
    }
    if duration <= 0.0 {
        return Ok(());
    }
    let weights = grid.weights();
    // face velocities per axis, stored at the lower node
    let mut face = vec![0.0; len * d];
    face.par_chunks_mut(d).enumerate().for_each(|(i, f)| {
        for k in 0..d {
            let s = grid.strides()[k];
            let n = grid.shape()[k];
            if (i / s) % n + 1 < n {
                f[k] = 0.5 * (velocity[i * d + k] + velocity[(i + s) * d + k]);
            }
        }
    });
    // outflow rate bound per node
    let rate = (0..len)
        .into_par_iter()
        .map(|i| {
            let m = grid.unravel(i);
            let mut out = 0.0;
            for k in 0..d {
                let s = grid.strides()[k];
                let n = grid.shape()[k];
                let h = grid.spacing(k);
                let w = grid.axis(k).weight(m[k]);
                let diff = sigma / h;
                if m[k] + 1 < n {
                    out += (face[i * d + k].max(0.0) + diff) / w;
                }
                if m[k] > 0 {
                    out += ((-face[(i - s) * d + k]).max(0.0) + diff) / w;
                }
            }
            out
        })
        .reduce(|| 0.0, f64::max);
    let n_sub = if rate > 0.0 {
        ((duration * rate / cfl).ceil() as usize).max(1)
    } else {
        1
    };
    let dt = duration / n_sub as f64;
    let mut next = vec![0.0; len];
    for _ in 0..n_sub {
        stats.substeps += 1;
        next.copy_from_slice(rho);
        // face fluxes, applied sequentially for a deterministic sum
        for k in 0..d {
            let s = grid.strides()[k];
            let n = grid.shape()[k];
            let h = grid.spacing(k);
            for i in 0..len {
                let m = grid.unravel(i);
                if m[k] + 1 >= n {
                    continue;
                }
                let v = face[i * d + k];
                let adv = v.max(0.0) * rho[i] + v.min(0.0) * rho[i + s];
                let dif = -sigma * (rho[i + s] - rho[i]) / h;
                let flux = dt * (adv + dif);
                if flux != 0.0 {
                    // flux per unit face area over the trapezoidal cell widths
                    next[i] -= flux / grid.axis(k).weight(m[k]);
                    next[i + s] += flux / grid.axis(k).weight(m[k] + 1);
                }
            }
        }
        rho.copy_from_slice(&next);
        let mut min_v = f64::INFINITY;
        for v in rho.iter() {
            min_v = min_v.min(*v);
        }
        if !min_v.is_finite() {
            return Err(Error::NonFinite { step: stats.substeps, t: f64::NAN });
        }
        let total: f64 = rho.iter().zip(&weights).map(|(r, w)| r * w).sum();
        if min_v < NEGATIVITY_TOL {
            stats.clips.push(ClipEvent {
                substep: stats.substeps,
                min_value: min_v,
                mass_before: total,
            });
            rho.iter_mut().for_each(|v| *v = v.max(0.0));
            let m: f64 = rho.iter().zip(&weights).map(|(r, w)| r * w).sum();
            rho.iter_mut().for_each(|v| *v *= total / m);
        }
        stats.max_mass_drift = stats.max_mass_drift.max((total - 1.0).abs());
    }
    Ok(())
}

/// Node drifts `∇_g G` at central gradients of `u`.
pub fn node_drift<S: SchemeHamiltonian>(grid: &Grid, ham: &S, t: f64, u: &[f64], sign: f64) -> Vec<f64> {
    let d = grid.dims();
    let mut v = vec![0.0; grid.len() * d];
    v.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
        let c = grid.coords(i);
        let mut g = [0.0; MAX_DIMS];
        central_gradient_at(grid, u, i, &mut g);
        let mut b = [0.0; MAX_DIMS];
        ham.drift(t, i, &c[..d], &g[..d], &mut b[..d]);
        for k in 0..d {
            out[k] = sign * b[k];
        }
    });
    v
}

#[derive(Clone, Debug)]
pub struct DualRun {
    pub tau: f64,
    pub sigma: f64,
    /// Slices at the stored times of the source solve, decreasing from `tau`.
    pub trajectory: Vec<DensityField>,
    pub stats: TransportStats,
}

impl DualRun {
    pub fn slice_at(&self, t: f64) -> Result<&DensityField> {
        self.trajectory
            .iter()
            .find(|d| (d.t - t).abs() <= 1e-12 * (1.0 + t.abs()))
            .ok_or_else(|| Error::InvalidArgument(format!("no dual slice at t = {t}")))
    }

    /// Largest `|mass - 1|` over stored slices.
    pub fn mass_drift(&self) -> f64 {
        self.trajectory.iter().fold(0.0, |m, d| m.max((d.mass() - 1.0).abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.trajectory.iter().fold(f64::INFINITY, |m, d| m.min(d.min()))
    }
}

fn scheme_of(u: &SolveOutput) -> Result<ScaledModel> {
    let model = u
        .model
        .clone()
        .ok_or_else(|| Error::InvalidArgument("solve output carries no model".into()))?;
    Ok(ScaledModel::new(model, u.grid.n_slow(), u.eps))
}

fn stored_index(u: &SolveOutput, t: f64) -> Result<usize> {
    u.trajectory
        .iter()
        .position(|f| (f.t - t).abs() <= 1e-12 * (1.0 + t.abs()))
        .ok_or_else(|| Error::InvalidArgument(format!("t = {t} is not a stored slice time")))
}

/// Backward dual run along the frozen solve, from `rho_tau` at `τ` down to `t_stop`.
pub fn solve_fokker_planck_dual(u: &SolveOutput, rho_tau: &DensityField, sigma: f64, t_stop: f64) -> Result<DualRun> {
    let ham = scheme_of(u)?;
    dual_with(u, rho_tau, sigma, t_stop, |t, field| node_drift(&u.grid, &ham, t, field, -1.0))
}

/// Drift-free dual (pure backward heat equation), the special case used for
/// comparison-type estimates.
pub fn solve_heat_dual(u: &SolveOutput, rho_tau: &DensityField, sigma: f64, t_stop: f64) -> Result<DualRun> {
    let len = u.grid.len() * u.grid.dims();
    dual_with(u, rho_tau, sigma, t_stop, |_, _| vec![0.0; len])
}

fn dual_with(u: &SolveOutput, rho_tau: &DensityField, sigma: f64, t_stop: f64, drift: impl Fn(f64, &[f64]) -> Vec<f64>) -> Result<DualRun> {
    if !u.grid.same_space(&rho_tau.grid) {
        return Err(Error::ShapeMismatch("terminal density and solve use different grids".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be nonnegative, got {sigma}")));
    }
    let tau = rho_tau.t;
    let top = stored_index(u, tau)?;
    if !(t_stop <= tau) {
        return Err(Error::InvalidArgument(format!("stop time {t_stop} exceeds tau {tau}")));
    }
    let grid = &u.grid;
    let mut rho = rho_tau.values.clone();
    let mut stats = TransportStats::default();
    let mut trajectory = vec![DensityField {
        grid: grid.clone(),
        t: tau,
        values: rho.clone(),
    }];
    let mut k = top;
    let mut upper = drift(u.trajectory[k].t, &u.trajectory[k].values);
    while k > 0 && u.trajectory[k].t > t_stop + 1e-14 {
        let lower_t = u.trajectory[k - 1].t;
        let lower = drift(lower_t, &u.trajectory[k - 1].values);
        let v: Vec<f64> = upper.iter().zip(&lower).map(|(a, b)| 0.5 * (a + b)).collect();
        let duration = u.trajectory[k].t - lower_t;
        advance_density(grid, &mut rho, &v, sigma, duration, grid.cfl_safety(), &mut stats)?;
        if let Some(bad) = rho.iter().copied().find(|r| *r < NEGATIVITY_TOL) {
            return Err(Error::NegativeDensity {
                step: stats.substeps,
                value: bad,
            });
        }
        trajectory.push(DensityField {
            grid: grid.clone(),
            t: lower_t,
            values: rho.clone(),
        });
        upper = lower;
        k -= 1;
    }
    let run = DualRun {
        tau,
        sigma,
        trajectory,
        stats,
    };
    if run.mass_drift() > MASS_TOL {
        return Err(Error::MassMismatch(format!("dual mass drift {:e}", run.mass_drift())));
    }
    Ok(run)
}

/// `<∇G, g> - G` at central gradients, per node.
fn lagrangian_density<S: SchemeHamiltonian>(grid: &Grid, ham: &S, t: f64, u: &[f64]) -> Vec<f64> {
    let d = grid.dims();
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.coords(i);
            let mut g = [0.0; MAX_DIMS];
            central_gradient_at(grid, u, i, &mut g);
            let mut b = [0.0; MAX_DIMS];
            ham.drift(t, i, &c[..d], &g[..d], &mut b[..d]);
            let dotp: f64 = (0..d).map(|k| b[k] * g[k]).sum();
            dotp - ham.value(t, i, &c[..d], &g[..d])
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityTerms {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// `|LHS - RHS|` of the integral representation between `s` and `τ`, with
/// trapezoidal quadrature over the stored slices.
pub fn duality_terms(u: &SolveOutput, d: &DualRun, s: f64, tau: f64) -> Result<DualityTerms> {
    if !(s < tau) {
        return Err(Error::InvalidArgument(format!("need s < tau, got s = {s}, tau = {tau}")));
    }
    if !u.grid.same_space(&d.trajectory[0].grid) {
        return Err(Error::ShapeMismatch("dual and solve use different grids".into()));
    }
    let ham = scheme_of(u)?;
    let i_s = stored_index(u, s)?;
    let i_tau = stored_index(u, tau)?;
    let lhs = d.slice_at(tau)?.pair(&u.trajectory[i_tau])? - d.slice_at(s)?.pair(&u.trajectory[i_s])?;
    let w = u.grid.weights();
    let mut vals = Vec::with_capacity(i_tau - i_s + 1);
    for k in i_s..=i_tau {
        let f = &u.trajectory[k];
        let rho = d.slice_at(f.t)?;
        let l = lagrangian_density(&u.grid, &ham, f.t, &f.values);
        let v: f64 = l.iter().zip(&rho.values).zip(&w).map(|((a, r), w)| a * r * w).sum();
        vals.push((f.t, v));
    }
    let rhs: f64 = vals.windows(2).map(|p| 0.5 * (p[1].0 - p[0].0) * (p[0].1 + p[1].1)).sum();
    Ok(DualityTerms {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

pub fn duality_residual(u: &SolveOutput, d: &DualRun, s: f64, tau: f64) -> Result<f64> {
    Ok(duality_terms(u, d, s, tau)?.residual)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupNormCertificate {
    pub applicable: bool,
    pub max_sup: f64,
    pub sup_u0: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Discrete maximum principle check: `max_t |u(t)| <= |u0| + 10 h Lip(u0)`.
pub fn supnorm_certificate(u: &SolveOutput) -> SupNormCertificate {
    let applicable = u.model.as_ref().map(|m| m.flags.nonneg).unwrap_or(false);
    let g = &u.grid;
    let u0 = u.first();
    let sup_u0 = u0.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut lip: f64 = 0.0;
    for k in 0..g.dims() {
        let s = g.strides()[k];
        let n = g.shape()[k];
        let h = g.spacing(k);
        for i in 0..g.len() {
            if (i / s) % n + 1 < n {
                lip = lip.max((u0.values[i + s] - u0.values[i]).abs() / h);
            }
        }
    }
    let h = (0..g.dims()).map(|k| g.spacing(k)).fold(0.0, f64::max);
    let slack = 10.0 * h * lip;
    let max_sup = u
        .trajectory
        .iter()
        .map(|f| f.values.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .fold(0.0, f64::max);
    SupNormCertificate {
        applicable,
        max_sup,
        sup_u0,
        slack,
        pass: max_sup <= sup_u0 + slack,
    }
}

/// `∫∫ (|∂_x u|^γ + |∂_y u|^γ) ρ` over the dual run's time range, with grid
/// (unscaled) central gradients and trapezoidal time quadrature.
pub fn gamma_moment(u: &SolveOutput, d: &DualRun) -> Result<f64> {
    let gamma = u.model.as_ref().map(|m| m.gamma).unwrap_or(2.0);
    let g = &u.grid;
    let d1 = g.n_slow();
    let dims = g.dims();
    let w = g.weights();
    let mut vals = Vec::with_capacity(d.trajectory.len());
    for rho in d.trajectory.iter().rev() {
        let f = &u.trajectory[stored_index(u, rho.t)?];
        let per_node: Vec<f64> = (0..g.len())
            .into_par_iter()
            .map(|i| {
                let mut gr = [0.0; MAX_DIMS];
                central_gradient_at(g, &f.values, i, &mut gr);
                let px: f64 = gr[..d1].iter().map(|a| a * a).sum::<f64>().sqrt();
                let qy: f64 = gr[d1..dims].iter().map(|a| a * a).sum::<f64>().sqrt();
                (px.powf(gamma) + qy.powf(gamma)) * rho.values[i] * w[i]
            })
            .collect();
        // sequential sum keeps the result independent of the thread count
        let v: f64 = per_node.iter().sum();
        vals.push((rho.t, v));
    }
    Ok(vals.windows(2).map(|p| 0.5 * (p[1].0 - p[0].0) * (p[0].1 + p[1].1)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Axis};
    use crate::hamiltonians::{make_quadratic, SlowPart};
    use crate::hj::{solve, CauchyProblem, SolveOptions};

    fn square(n: usize, half: f64, t: f64) -> Arc<Grid> {
        Arc::new(
            build_grid(
                vec![Axis::new(-half, half, n).unwrap()],
                vec![Axis::new(-half, half, n).unwrap()],
                t,
                0.5,
            )
            .unwrap(),
        )
    }

    #[test]
    fn zero_drift_no_diffusion_is_stationary() {
        let g = square(41, 2.0, 1.0);
        let pb = CauchyProblem::new(Arc::new(make_quadratic(SlowPart::kinetic())), 0.5, Arc::new(|_, _| 0.0), 0.0).unwrap();
        let u = solve(&pb, &g, &SolveOptions::every(1)).unwrap();
        let rho = DensityField::gaussian_bump(g.clone(), 1.0, &[0.2, -0.1], 0.3).unwrap();
        let run = solve_fokker_planck_dual(&u, &rho, 0.0, 0.0).unwrap();
        for s in &run.trajectory {
            assert_eq!(s.values, rho.values);
        }
        assert!(duality_residual(&u, &run, 0.0, 1.0).unwrap() < 1e-14);
        assert_eq!(gamma_moment(&u, &run).unwrap(), 0.0);
        let cert = supnorm_certificate(&u);
        assert!(cert.pass && cert.max_sup == 0.0);
    }

    #[test]
    fn heat_dual_variance_growth() {
        // one fast axis carries the spread; variance grows by 2σ per unit time
        let g = Arc::new(
            build_grid(
                vec![Axis::new(-1.0, 1.0, 3).unwrap()],
                vec![Axis::new(-4.0, 4.0, 801).unwrap()],
                1.0,
                0.5,
            )
            .unwrap(),
        );
        let pb = CauchyProblem::new(Arc::new(make_quadratic(SlowPart::kinetic())), 0.5, Arc::new(|_, _| 0.0), 0.0).unwrap();
        let u = solve(&pb, &g, &SolveOptions::record_only(&[0.5])).unwrap();
        let bump = |x: &[f64], y: &[f64]| (-(y[0] * y[0]) / (2.0 * 0.09)).exp() * (1.0 - 0.0 * x[0]);
        let vals: Vec<f64> = (0..g.len())
            .map(|i| {
                let c = g.coords(i);
                bump(&c[..1], &c[1..2])
            })
            .collect();
        let rho = DensityField::normalized(g.clone(), 1.0, vals).unwrap();
        let sigma = 0.05;
        let run = solve_heat_dual(&u, &rho, sigma, 0.0).unwrap();
        let var = |d: &DensityField| -> f64 {
            (0..g.len()).map(|i| d.values[i] * g.weight(i) * g.coords(i)[1].powi(2)).sum()
        };
        let v1 = var(&run.trajectory[0]);
        let v0 = var(run.trajectory.last().unwrap());
        let growth = (v0 - v1) / 1.0;
        assert!((growth - 2.0 * sigma).abs() < 0.1 * 2.0 * sigma, "growth {growth}");
        assert!(run.mass_drift() < 1e-8);
    }

    #[test]
    fn linear_datum_gamma_moment() {
        // u = a x with H = |p|^2/2 moves linearly; gradients stay a in the interior
        let g = square(61, 3.0, 1.0);
        let a = 0.3;
        let pb = CauchyProblem::new(Arc::new(make_quadratic(SlowPart::kinetic())), 0.5, Arc::new(move |x, _| a * x[0]), 0.0).unwrap();
        let opts = SolveOptions {
            record_times: vec![0.25],
            ..SolveOptions::every(1)
        };
        let u = solve(&pb, &g, &opts).unwrap();
        let rho = DensityField::gaussian_bump(g.clone(), 1.0, &[0.0, 0.0], 0.2).unwrap();
        let run = solve_heat_dual(&u, &rho, 0.0, 0.25).unwrap();
        let m = gamma_moment(&u, &run).unwrap();
        assert!((m - a * a * 0.75).abs() < 1e-12, "{m}");
    }

    #[test]
    fn bump_and_point_mass_validation() {
        let g = square(21, 1.0, 1.0);
        let b = DensityField::gaussian_bump(g.clone(), 0.0, &[0.0, 0.0], 0.2).unwrap();
        assert!((b.mass() - 1.0).abs() < 1e-12);
        let p = DensityField::point_mass(g.clone(), 0.0, 0).unwrap();
        assert!((p.mass() - 1.0).abs() < 1e-12);
        assert!(DensityField::new(g.clone(), 0.0, vec![0.0; g.len()]).is_err());
        let mut neg = b.values.clone();
        neg[3] = -1e-3;
        assert!(DensityField::new(g, 0.0, neg).is_err());
    }
}
