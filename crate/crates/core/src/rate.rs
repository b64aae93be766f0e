//! ε-sweeps and log-log slope fits.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{sup_distance, Grid, ScalarField, Window, MAX_DIMS};
use crate::hamiltonians::SlowPart;
use crate::hj::{fast_gradient_norm, march, solve, CauchyProblem, SchemeHamiltonian, SolveOptions, SolveOutput};

/// Error columns entirely below this are degenerate.
pub const DEGENERATE_FLOOR: f64 = 10.0 * f64::EPSILON;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares on `(ln a, ln e)`.
pub fn fit_order(points: &[(f64, f64)]) -> Result<Fit> {
    if points.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|(a, e)| !(*a > 0.0 && *e > 0.0 && a.is_finite() && e.is_finite())) {
        return Err(Error::Fit(format!("nonpositive entry {p:?}")));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(Fit { slope, intercept, r2 })
}

#[derive(Clone, Debug)]
pub struct EpsSweep {
    pub problem: CauchyProblem,
    pub grid: Arc<Grid>,
    pub eps_list: Vec<f64>,
    pub t_list: Vec<f64>,
    pub window: Window,
    /// Exponent the theory predicts for the sup-norm rates.
    pub predicted: f64,
    /// Estimate discretization error by one coarsening and gate the fits.
    pub gate: bool,
}

impl EpsSweep {
    pub fn new(problem: CauchyProblem, grid: Arc<Grid>, eps_list: Vec<f64>, t_list: Vec<f64>, window: Window, predicted: f64) -> Result<Self> {
        if eps_list.len() < 3 {
            return Err(Error::InvalidArgument("ε list needs at least 3 entries".into()));
        }
        if eps_list.iter().any(|e| !(e.is_finite() && *e > 0.0)) || eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("ε list must be positive and strictly decreasing".into()));
        }
        if t_list.is_empty() || t_list.iter().any(|t| !(*t > 0.0 && *t <= grid.t_final())) {
            return Err(Error::InvalidArgument("probe times must lie in (0, T]".into()));
        }
        window.check(&grid)?;
        Ok(EpsSweep {
            problem,
            grid,
            eps_list,
            t_list,
            window,
            predicted,
            gate: true,
        })
    }

    pub fn without_gate(mut self) -> Self {
        self.gate = false;
        self
    }

    pub fn with_window(mut self, window: Window) -> Result<Self> {
        window.check(&self.grid)?;
        self.window = window;
        Ok(self)
    }

    fn opts(&self) -> SolveOptions {
        SolveOptions::record_only(&self.t_list)
    }

    /// One solve per ε, in parallel, in list order.
    pub fn solve_all(&self) -> Result<Vec<SolveOutput>> {
        let opts = self.opts();
        self.eps_list
            .par_iter()
            .map(|&e| solve(&self.problem.with_eps(e), &self.grid, &opts))
            .collect()
    }

    /// Smallest-ε solve on the once-coarsened grid.
    pub fn coarse_solve(&self) -> Result<SolveOutput> {
        let coarse = Arc::new(self.grid.coarsened()?);
        let e = *self.eps_list.last().unwrap();
        solve(&self.problem.with_eps(e), &coarse, &self.opts())
    }
}

/// `max |fine - coarse|` over coarse window nodes at the probe times.
pub fn refinement_gap(fine: &SolveOutput, coarse: &SolveOutput, window: &Window, times: &[f64]) -> Result<f64> {
    let cg = &coarse.grid;
    let d1 = cg.n_slow();
    let d = cg.dims();
    let mut m = 0.0_f64;
    for &t in times {
        let f = fine.slice_at(t)?;
        let c = coarse.slice_at(t)?;
        for i in 0..cg.len() {
            if !window.contains(cg, i) {
                continue;
            }
            let cc = cg.coords(i);
            let v = f
                .interpolate(&cc[..d1], &cc[d1..d])
                .ok_or_else(|| Error::ShapeMismatch("coarse node outside the fine grid".into()))?;
            m = m.max((v - c.values[i]).abs());
        }
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub kind: String,
    pub predicted: f64,
    pub eps: Vec<f64>,
    pub times: Vec<f64>,
    /// Fit abscissae, one per error entry.
    pub abscissa: Vec<f64>,
    /// `errors[j][i]` at time `times[j]`.
    pub errors: Vec<Vec<f64>>,
    /// Raw `ln e` vs `ln ε` per time.
    pub fits: Vec<Option<Fit>>,
    /// `ln e` vs `ln(ε_i^κ - ε_{i+1}^κ)` with `κ = predicted`, stability sweeps only.
    pub kappa_fits: Vec<Option<Fit>>,
    pub degenerate: Vec<bool>,
    pub discretization: Option<f64>,
    pub min_gap: f64,
    pub refused: bool,
    pub notes: Vec<String>,
}

impl RateReport {
    pub(crate) fn assemble(kind: &str, predicted: f64, eps: &[f64], times: &[f64], abscissa: Vec<f64>, errors: Vec<Vec<f64>>, discretization: Option<f64>) -> Self {
        let degenerate: Vec<bool> = errors.iter().map(|col| col.iter().all(|e| *e < DEGENERATE_FLOOR)).collect();
        let min_gap = errors
            .iter()
            .zip(&degenerate)
            .filter(|(_, d)| !**d)
            .flat_map(|(c, _)| c.iter().copied())
            .fold(f64::INFINITY, f64::min);
        let refused = match discretization {
            Some(est) => min_gap.is_finite() && est >= min_gap / 3.0,
            None => false,
        };
        let mut notes = Vec::new();
        if degenerate.iter().any(|d| *d) {
            notes.push("degenerate error columns excluded from fits".into());
        }
        if refused {
            notes.push(format!(
                "discretization estimate {:.3e} is not below a third of the smallest gap {:.3e}; no fit",
                discretization.unwrap(),
                min_gap
            ));
        }
        let fits = errors
            .iter()
            .zip(&degenerate)
            .map(|(col, d)| {
                if *d || refused {
                    return None;
                }
                let pts: Vec<(f64, f64)> = abscissa.iter().copied().zip(col.iter().copied()).collect();
                fit_order(&pts).ok()
            })
            .collect();
        RateReport {
            kind: kind.into(),
            predicted,
            eps: eps.to_vec(),
            times: times.to_vec(),
            abscissa,
            kappa_fits: vec![None; errors.len()],
            errors,
            fits,
            degenerate,
            discretization,
            min_gap,
            refused,
            notes,
        }
    }

    pub fn slopes(&self) -> Vec<Option<f64>> {
        self.fits.iter().map(|f| f.map(|f| f.slope)).collect()
    }

    /// Every probe time has a fit with slope in `[lo, hi]`.
    pub fn all_within(&self, lo: f64, hi: f64) -> bool {
        !self.fits.is_empty() && self.fits.iter().all(|f| matches!(f, Some(f) if f.slope >= lo && f.slope <= hi))
    }

    pub fn all_finite(&self) -> bool {
        !self.fits.is_empty() && self.fits.iter().all(|f| matches!(f, Some(f) if f.slope.is_finite()))
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate.iter().all(|d| *d)
    }

    /// One row per abscissa: `abscissa, e(t_0), e(t_1), ...`.
    pub fn csv(&self) -> String {
        let mut header = vec!["abscissa".to_string()];
        header.extend(self.times.iter().map(|t| format!("t={t}")));
        let mut s = header.join(",");
        s.push('\n');
        for (i, a) in self.abscissa.iter().enumerate() {
            s.push_str(&format!("{a:.12e}"));
            for col in &self.errors {
                s.push_str(&format!(",{:.12e}", col[i]));
            }
            s.push('\n');
        }
        s
    }
}

fn stability_errors(s: &EpsSweep, outs: &[SolveOutput]) -> Result<Vec<Vec<f64>>> {
    s.t_list
        .iter()
        .map(|&t| {
            (0..outs.len() - 1)
                .map(|i| sup_distance(outs[i].slice_at(t)?, outs[i + 1].slice_at(t)?, Some(&s.window)))
                .collect()
        })
        .collect()
}

/// `e(ε_i, t) = sup_{B_r} |u^{ε_i}(t) - u^{ε_{i+1}}(t)|` fitted against `ε_i`.
pub fn stability_sweep(s: &EpsSweep) -> Result<RateReport> {
    let outs = s.solve_all()?;
    let disc = if s.gate {
        Some(refinement_gap(outs.last().unwrap(), &s.coarse_solve()?, &s.window, &s.t_list)?)
    } else {
        None
    };
    stability_from(s, &outs, disc)
}

/// As [`stability_sweep`] on precomputed solves.
pub fn stability_from(s: &EpsSweep, outs: &[SolveOutput], discretization: Option<f64>) -> Result<RateReport> {
    if outs.len() != s.eps_list.len() {
        return Err(Error::ShapeMismatch("one solve per ε expected".into()));
    }
    let errors = stability_errors(s, outs)?;
    let abscissa = s.eps_list[..s.eps_list.len() - 1].to_vec();
    let mut r = RateReport::assemble("stability", s.predicted, &s.eps_list, &s.t_list, abscissa, errors, discretization);
    let k = s.predicted;
    r.kappa_fits = r
        .errors
        .iter()
        .zip(&r.fits)
        .map(|(col, f)| {
            f.as_ref()?;
            let pts: Vec<(f64, f64)> = col
                .iter()
                .enumerate()
                .map(|(i, e)| (s.eps_list[i].powf(k) - s.eps_list[i + 1].powf(k), *e))
                .collect();
            fit_order(&pts).ok()
        })
        .collect();
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    /// `‖∂_y u^ε(t)‖` on the window against ε, per time.
    pub eps_report: RateReport,
    /// Slope of `ln ‖∂_y u^ε(t)‖` against `ln t`, per ε.
    pub t_fits: Vec<Option<Fit>>,
}

impl GradientReport {
    pub fn t_slopes(&self) -> Vec<Option<f64>> {
        self.t_fits.iter().map(|f| f.map(|f| f.slope)).collect()
    }
}

/// Fits `‖∂_y u^ε(t)‖_{B_r}` against ε at each t and against t at each ε.
pub fn gradient_decay_fit(s: &EpsSweep) -> Result<GradientReport> {
    let outs = s.solve_all()?;
    let norms: Vec<Vec<f64>> = s
        .t_list
        .iter()
        .map(|&t| outs.iter().map(|o| fast_gradient_norm(o, t, &s.window)).collect())
        .collect::<Result<_>>()?;
    let disc = if s.gate {
        let coarse = s.coarse_solve()?;
        let fine = outs.last().unwrap();
        let mut m = 0.0_f64;
        for &t in &s.t_list {
            m = m.max((fast_gradient_norm(fine, t, &s.window)? - fast_gradient_norm(&coarse, t, &s.window)?).abs());
        }
        Some(m)
    } else {
        None
    };
    // the gap between neighbouring ε is what the gate compares against
    let gaps: Vec<Vec<f64>> = norms.iter().map(|c| c.windows(2).map(|w| (w[0] - w[1]).abs()).collect()).collect();
    let gate = RateReport::assemble("gradient-gap", 0.5, &s.eps_list, &s.t_list, s.eps_list[..s.eps_list.len() - 1].to_vec(), gaps, disc);
    let mut eps_report = RateReport::assemble("gradient", s.predicted, &s.eps_list, &s.t_list, s.eps_list.clone(), norms.clone(), None);
    eps_report.discretization = disc;
    eps_report.min_gap = gate.min_gap;
    if gate.refused {
        eps_report.refused = true;
        eps_report.fits = vec![None; eps_report.fits.len()];
        eps_report.notes.extend(gate.notes);
    }
    let t_fits = (0..s.eps_list.len())
        .map(|i| {
            if eps_report.refused || s.t_list.len() < 3 {
                return None;
            }
            let pts: Vec<(f64, f64)> = s.t_list.iter().zip(&norms).map(|(t, c)| (*t, c[i])).collect();
            fit_order(&pts).ok()
        })
        .collect();
    Ok(GradientReport { eps_report, t_fits })
}

/// A closed-form slow Hamiltonian on a slow-only grid.
pub struct SlowScheme(pub SlowPart);

impl SchemeHamiltonian for SlowScheme {
    fn value(&self, _t: f64, _node: usize, c: &[f64], g: &[f64]) -> f64 {
        self.0.value(c, g)
    }

    fn dissipation(&self, _t: f64, _node: usize, c: &[f64], lo: &[f64], hi: &[f64], out: &mut [f64]) {
        // convex in p: extreme slopes sit at the box corners
        let d = c.len();
        let mut g = [0.0; MAX_DIMS];
        let mut p = [0.0; MAX_DIMS];
        for v in out.iter_mut().take(d) {
            *v = 0.0;
        }
        for corner in 0..(1usize << d) {
            for k in 0..d {
                p[k] = if corner >> k & 1 == 1 { hi[k] } else { lo[k] };
            }
            self.0.grad_p(c, &p[..d], &mut g[..d]);
            for k in 0..d {
                out[k] = out[k].max(g[k].abs());
            }
        }
    }

    fn drift(&self, _t: f64, _node: usize, c: &[f64], g: &[f64], out: &mut [f64]) {
        self.0.grad_p(c, g, out);
    }
}

/// Solves `ū_t + H̄(x, ∂_x ū) = 0` on the slow grid from `min_y u0` (grid minimum).
pub fn solve_limit<S: SchemeHamiltonian>(pb: &CauchyProblem, grid: &Arc<Grid>, hbar: &S, times: &[f64]) -> Result<Vec<ScalarField>> {
    let slow = Arc::new(grid.slow_grid()?);
    let d1 = grid.n_slow();
    let d = grid.dims();
    let mut datum = vec![f64::INFINITY; slow.len()];
    for i in 0..grid.len() {
        let c = grid.coords(i);
        let j = slow.ravel(&grid.unravel(i)[..d1]);
        datum[j] = datum[j].min((pb.u0)(&c[..d1], &c[d1..d]));
    }
    let (slices, _) = march(&slow, hbar, 0.0, datum, &SolveOptions::record_only(times))?;
    times
        .iter()
        .map(|&t| {
            slices
                .iter()
                .find(|f| (f.t - t).abs() <= 1e-12 * t.max(1.0))
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("limit solve has no slice at t = {t}")))
        })
        .collect()
}

/// `sup` over the window of `|u(x, y) - ū(x)|`.
pub fn gap_to_limit(u: &ScalarField, limit: &ScalarField, window: &Window) -> Result<f64> {
    let g = &u.grid;
    let d1 = g.n_slow();
    let slow_len: usize = g.shape()[..d1].iter().product();
    if limit.grid.dims() != d1 || limit.grid.len() != slow_len {
        return Err(Error::ShapeMismatch("limit field must live on the slow grid".into()));
    }
    let mut m = 0.0_f64;
    for i in 0..g.len() {
        if window.contains(g, i) {
            let j = limit.grid.ravel(&g.unravel(i)[..d1]);
            m = m.max((u.values[i] - limit.values[j]).abs());
        }
    }
    Ok(m)
}

/// `e(ε, t) = sup_{x, B_r} |u^ε(t) - ū(t)|` fitted against ε.
pub fn limit_gap<S: SchemeHamiltonian>(s: &EpsSweep, hbar: &S) -> Result<RateReport> {
    let outs = s.solve_all()?;
    let limit = solve_limit(&s.problem, &s.grid, hbar, &s.t_list)?;
    let errors: Vec<Vec<f64>> = s
        .t_list
        .iter()
        .zip(&limit)
        .map(|(&t, l)| outs.iter().map(|o| gap_to_limit(o.slice_at(t)?, l, &s.window)).collect())
        .collect::<Result<_>>()?;
    let disc = if s.gate {
        Some(refinement_gap(outs.last().unwrap(), &s.coarse_solve()?, &s.window, &s.t_list)?)
    } else {
        None
    };
    Ok(RateReport::assemble("limit-gap", s.predicted, &s.eps_list, &s.t_list, s.eps_list.clone(), errors, disc))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::grid::{build_grid, Axis};
    use crate::hamiltonians::{make_quadratic, HamiltonianModel};

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = [0.4, 0.2, 0.1, 0.05].iter().map(|&e: &f64| (e, e.sqrt())).collect();
        let f = fit_order(&pts).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        let pts: Vec<(f64, f64)> = [0.4, 0.2, 0.1].iter().map(|&e| (e, 3.0 * e)).collect();
        let f = fit_order(&pts).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn noisy_half_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<(f64, f64)> = (0..8)
            .map(|k| {
                let e = 0.5 * 0.5f64.powi(k);
                (e, e.sqrt() * (1.0 + rng.random_range(-0.05..0.05)))
            })
            .collect();
        let f = fit_order(&pts).unwrap();
        assert!((f.slope - 0.5).abs() < 0.05, "{}", f.slope);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_order(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
        assert!(fit_order(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(fit_order(&[(-1.0, 1.0), (2.0, 1.0), (3.0, 1.0)]).is_err());
    }

    fn sweep(model: HamiltonianModel, u0: crate::hj::Datum) -> EpsSweep {
        let grid = Arc::new(build_grid(vec![Axis::new(-PI, PI, 11).unwrap()], vec![Axis::new(-4.0, 4.0, 81).unwrap()], 0.5, 0.5).unwrap());
        let pb = CauchyProblem::new(Arc::new(model), 0.4, u0, 0.0).unwrap();
        EpsSweep::new(pb, grid, vec![0.4, 0.2, 0.1, 0.05], vec![0.25, 0.5], Window::new(2.0).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn y_independent_datum_is_degenerate() {
        let s = sweep(make_quadratic(SlowPart::kinetic()), Arc::new(|x: &[f64], _: &[f64]| 0.1 * (1.0 - x[0].cos())));
        let r = stability_sweep(&s).unwrap();
        assert!(r.is_degenerate());
        assert!(r.fits.iter().all(|f| f.is_none()));
    }

    #[test]
    fn triangle_and_window_monotonicity() {
        let s = sweep(make_quadratic(SlowPart::kinetic()), Arc::new(|_: &[f64], y: &[f64]| 0.5 * (1.0 - y[0].cos())));
        let outs = s.solve_all().unwrap();
        let small = Window::new(1.0).unwrap();
        for &t in &s.t_list {
            let d = |a: usize, b: usize, w: &Window| sup_distance(outs[a].slice_at(t).unwrap(), outs[b].slice_at(t).unwrap(), Some(w)).unwrap();
            assert!(d(0, 2, &s.window) <= d(0, 1, &s.window) + d(1, 2, &s.window) + 1e-12);
            assert!(d(0, 1, &small) <= d(0, 1, &s.window));
        }
    }

    #[test]
    fn slow_scheme_limit_of_constant_datum() {
        let s = sweep(make_quadratic(SlowPart::kinetic()), Arc::new(|_: &[f64], y: &[f64]| 0.5 * (1.0 - y[0].cos())));
        let l = solve_limit(&s.problem, &s.grid, &SlowScheme(SlowPart::kinetic()), &s.t_list).unwrap();
        assert_eq!(l.len(), 2);
        assert!(l[1].values.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn csv_shape() {
        let r = RateReport::assemble("x", 0.5, &[0.4, 0.2, 0.1, 0.05], &[1.0], vec![0.4, 0.2, 0.1], vec![vec![0.3, 0.2, 0.15]], None);
        assert_eq!(r.csv().lines().count(), 4);
        assert!(r.all_within(0.0, 1.0));
        let refused = RateReport::assemble("x", 0.5, &[0.4, 0.2, 0.1, 0.05], &[1.0], vec![0.4, 0.2, 0.1], vec![vec![0.3, 0.2, 0.15]], Some(0.06));
        assert!(refused.refused);
        assert!(!refused.all_finite());
    }
}
