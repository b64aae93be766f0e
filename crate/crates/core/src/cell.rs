//! Discounted cell problems `δw + H(x̄, y, p̄, ∂_y w) = 0` on the fast grid and
//! the effective Hamiltonian `H̄(x̄, p̄) = -lim δ w_δ`.
//!
//! The discrete equation uses the same local Lax–Friedrichs numerical
//! Hamiltonian as the time-dependent solver (σ = 0, mirror ghosts). With one
//! fast axis it is solved by Newton's method with the dissipation frozen in the
//! Jacobian (a tridiagonal M-matrix); otherwise by relaxed Jacobi sweeps. Both
//! routes stop on the sup-norm residual of the discrete equation.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Grid, ScalarField, MAX_DIMS};
use crate::hamiltonians::HamiltonianModel;
use crate::hj::SchemeHamiltonian;
use crate::io::{read_dump, write_dump, RawDump, TABLE_MAGIC};

pub const DEFAULT_DELTAS: [f64; 4] = [1e-1, 5e-2, 2.5e-2, 1.25e-2];
pub const FLATNESS_LIMIT: f64 = 1e-2;
/// Required sup-norm residual of the discrete cell equation.
pub const RESIDUAL_CHECK: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOptions {
    pub omega: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for CellOptions {
    fn default() -> Self {
        CellOptions {
            omega: 0.5,
            max_iters: 100_000,
            tol: 1e-9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    Newton,
    Jacobi,
}

/// A model, a fast grid and a δ-schedule; `(x̄, p̄)` vary per query.
#[derive(Clone, Debug)]
pub struct CellTemplate {
    pub model: Arc<HamiltonianModel>,
    pub fast_grid: Arc<Grid>,
    pub deltas: Vec<f64>,
    pub opts: CellOptions,
}

#[derive(Clone, Debug)]
pub struct CellQuery {
    pub x_bar: Vec<f64>,
    pub p_bar: Vec<f64>,
    pub template: CellTemplate,
}

impl CellTemplate {
    pub fn new(model: Arc<HamiltonianModel>, fast_axes: Vec<Axis>, deltas: Vec<f64>) -> Result<Self> {
        if fast_axes.is_empty() {
            return Err(Error::InvalidGrid("cell problem needs at least one fast axis".into()));
        }
        if fast_axes.len() != model.fast_dim {
            return Err(Error::ShapeMismatch(format!("model has {} fast dimensions, grid has {}", model.fast_dim, fast_axes.len())));
        }
        check_schedule(&deltas)?;
        let fast_grid = Arc::new(Grid::new(vec![], fast_axes, 1.0, 0.5)?);
        Ok(CellTemplate {
            model,
            fast_grid,
            deltas,
            opts: CellOptions::default(),
        })
    }

    pub fn with_options(mut self, opts: CellOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn query(&self, x_bar: &[f64], p_bar: &[f64]) -> Result<CellQuery> {
        if x_bar.len() != self.model.slow_dim || p_bar.len() != self.model.slow_dim {
            return Err(Error::ShapeMismatch("slow state and momentum must match the model".into()));
        }
        Ok(CellQuery {
            x_bar: x_bar.to_vec(),
            p_bar: p_bar.to_vec(),
            template: self.clone(),
        })
    }
}

fn check_schedule(deltas: &[f64]) -> Result<()> {
    if deltas.is_empty() {
        return Err(Error::InvalidArgument("empty δ schedule".into()));
    }
    if deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::InvalidArgument("δ values must be positive".into()));
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("δ schedule must be strictly decreasing".into()));
    }
    Ok(())
}

/// `G(y, q) = H(x̄, y, p̄, q)` on a fast-only grid.
struct Frozen<'a> {
    model: &'a HamiltonianModel,
    x_bar: &'a [f64],
    p_bar: &'a [f64],
}

impl SchemeHamiltonian for Frozen<'_> {
    fn value(&self, _t: f64, _node: usize, c: &[f64], g: &[f64]) -> f64 {
        self.model.eval(self.x_bar, c, self.p_bar, g)
    }

    fn dissipation(&self, _t: f64, _node: usize, c: &[f64], lo: &[f64], hi: &[f64], out: &mut [f64]) {
        let d1 = self.x_bar.len();
        let mut op = [0.0; MAX_DIMS];
        self.model.dissipation_bound(self.x_bar, c, self.p_bar, self.p_bar, lo, hi, &mut op[..d1], out);
    }

    fn drift(&self, _t: f64, _node: usize, c: &[f64], g: &[f64], out: &mut [f64]) {
        self.model.grad_q(self.x_bar, c, self.p_bar, g, out);
    }
}

#[derive(Clone, Debug)]
pub struct DiscountedSolution {
    pub delta: f64,
    pub w: ScalarField,
    pub route: Route,
    pub iterations: usize,
    /// Sup-norm residual of `δw + Ĥ(w)`.
    pub residual: f64,
    /// Final Lax–Friedrichs coefficient per fast axis.
    pub dissipation: Vec<f64>,
}

/// `(D-, D+)` along axis `k` at node `i` with mirror ghosts.
#[inline]
fn one_sided(grid: &Grid, w: &[f64], i: usize, k: usize) -> (f64, f64) {
    let s = grid.strides()[k];
    let n = grid.shape()[k];
    let m = (i / s) % n;
    let h = grid.spacing(k);
    let left = if m > 0 { w[i - s] } else { w[i + s] };
    let right = if m + 1 < n { w[i + s] } else { w[i - s] };
    ((w[i] - left) / h, (right - w[i]) / h)
}

/// `F(w) = δw + G(y, D̄w) - Σ α_k (D+ - D-)/2` into `out`; returns `sup |F|`.
fn residual(grid: &Grid, ham: &Frozen, alpha: &[f64], delta: f64, w: &[f64], out: &mut [f64]) -> f64 {
    let d = grid.dims();
    out.par_iter_mut()
        .enumerate()
        .map(|(i, o)| {
            let c = grid.coords(i);
            let mut bar = [0.0; MAX_DIMS];
            let mut diss = 0.0;
            for k in 0..d {
                let (dm, dp) = one_sided(grid, w, i, k);
                bar[k] = 0.5 * (dm + dp);
                diss += 0.5 * alpha[k] * (dp - dm);
            }
            *o = delta * w[i] + ham.value(0.0, i, &c[..d], &bar[..d]) - diss;
            o.abs()
        })
        .reduce(|| 0.0, f64::max)
}

/// Per-axis `max |∂_q H|` over the one-sided gradient boxes of `w`.
fn needed_dissipation(grid: &Grid, ham: &Frozen, w: &[f64]) -> [f64; MAX_DIMS] {
    let d = grid.dims();
    (0..w.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.coords(i);
            let mut lo = [0.0; MAX_DIMS];
            let mut hi = [0.0; MAX_DIMS];
            for k in 0..d {
                let (dm, dp) = one_sided(grid, w, i, k);
                lo[k] = dm.min(dp);
                hi[k] = dm.max(dp);
            }
            let mut a = [0.0; MAX_DIMS];
            ham.dissipation(0.0, i, &c[..d], &lo[..d], &hi[..d], &mut a[..d]);
            a
        })
        .reduce(
            || [0.0; MAX_DIMS],
            |a, b| {
                let mut m = [0.0; MAX_DIMS];
                for k in 0..MAX_DIMS {
                    m[k] = a[k].max(b[k]);
                }
                m
            },
        )
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Exact tridiagonal Jacobian of the 1D operator for fixed `α`.
fn jacobian_1d(grid: &Grid, ham: &Frozen, alpha: f64, delta: f64, w: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = w.len();
    let h = grid.spacing(0);
    let mut lower = vec![0.0; n];
    let mut diag = vec![delta + alpha / h; n];
    let mut upper = vec![0.0; n];
    upper[0] = -alpha / h;
    lower[n - 1] = -alpha / h;
    for i in 1..n - 1 {
        let c = grid.coords(i);
        let mut gq = [0.0];
        ham.drift(0.0, i, &c[..1], &[(w[i + 1] - w[i - 1]) / (2.0 * h)], &mut gq);
        lower[i] = -(gq[0] + alpha) / (2.0 * h);
        upper[i] = (gq[0] - alpha) / (2.0 * h);
    }
    diag[0] = delta + alpha / h;
    (lower, diag, upper)
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / m;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Solves the discrete discounted equation at one `δ`.
///
/// The scheme is Lax–Friedrichs with one dissipation coefficient per axis.
/// After each inner solve the coefficients are checked against `|∂_q H|` on
/// the solution and raised (with a 10% margin) until the scheme is monotone
/// there.
pub fn solve_discounted(q: &CellQuery, delta: f64) -> Result<DiscountedSolution> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidArgument(format!("δ must be positive, got {delta}")));
    }
    let tpl = &q.template;
    let grid = &tpl.fast_grid;
    let ham = Frozen {
        model: &tpl.model,
        x_bar: &q.x_bar,
        p_bar: &q.p_bar,
    };
    let n = grid.len();
    let d = grid.dims();
    let mut w: Vec<f64> = (0..n)
        .map(|i| {
            let c = grid.coords(i);
            -ham.value(0.0, i, &c[..d], &[0.0; MAX_DIMS][..d]) / delta
        })
        .collect();
    let route = if d == 1 { Route::Newton } else { Route::Jacobi };
    let mut alpha = [0.0; MAX_DIMS];
    let a0 = needed_dissipation(grid, &ham, &w);
    for k in 0..d {
        alpha[k] = (1.1 * a0[k]).max(1e-3);
    }
    let mut r = vec![0.0; n];
    let mut it = 0;
    let mut outer = 0;
    let mut res;
    loop {
        res = residual(grid, &ham, &alpha, delta, &w, &mut r);
        let mut stalled = false;
        while res > tpl.opts.tol && !stalled {
            if it >= tpl.opts.max_iters {
                return Err(Error::NonConvergence {
                    what: format!("cell problem at δ = {delta}"),
                    iterations: it,
                    residual: res,
                });
            }
            it += 1;
            match route {
                Route::Newton => {
                    let (lo, di, up) = jacobian_1d(grid, &ham, alpha[0], delta, &w);
                    let step = thomas(&lo, &di, &up, &r);
                    let mut lambda = 1.0;
                    let mut trial = vec![0.0; n];
                    let mut tr = vec![0.0; n];
                    loop {
                        for i in 0..n {
                            trial[i] = w[i] - lambda * step[i];
                        }
                        let tres = residual(grid, &ham, &alpha, delta, &trial, &mut tr);
                        if tres < res || l2(&tr) < l2(&r) {
                            std::mem::swap(&mut w, &mut trial);
                            std::mem::swap(&mut r, &mut tr);
                            res = tres;
                            break;
                        }
                        lambda *= 0.5;
                        if lambda < 1e-10 && res <= RESIDUAL_CHECK {
                            // round-off floor
                            stalled = true;
                            break;
                        }
                        if lambda < 1e-10 {
                            return Err(Error::NonConvergence {
                                what: format!("cell Newton line search at δ = {delta}"),
                                iterations: it,
                                residual: res,
                            });
                        }
                    }
                }
                Route::Jacobi => {
                    let denom = delta + (0..d).map(|k| alpha[k] / grid.spacing(k)).sum::<f64>();
                    for i in 0..n {
                        w[i] -= tpl.opts.omega * r[i] / denom;
                    }
                    res = residual(grid, &ham, &alpha, delta, &w, &mut r);
                }
            }
        }
        // settle α at 1.1 × the need of its own solution, from either side
        let need = needed_dissipation(grid, &ham, &w);
        if (0..d).all(|k| need[k] <= alpha[k] && alpha[k] <= 1.2 * need[k].max(1e-3)) {
            break;
        }
        outer += 1;
        if outer > 100 {
            return Err(Error::NonConvergence {
                what: format!("cell dissipation update at δ = {delta}"),
                iterations: outer,
                residual: res,
            });
        }
        for k in 0..d {
            alpha[k] = (1.1 * need[k]).max(1e-3);
        }
    }
    if res > RESIDUAL_CHECK {
        return Err(Error::NonConvergence {
            what: format!("cell problem at δ = {delta}"),
            iterations: it,
            residual: res,
        });
    }
    Ok(DiscountedSolution {
        delta,
        w: ScalarField::new(grid.clone(), 0.0, w)?,
        route,
        iterations: it,
        residual: res,
        dissipation: alpha[..d].to_vec(),
    })
}

/// Effective Hamiltonian estimate with its δ-diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    /// Richardson-extrapolated `-δ w_δ(y₀)`.
    pub value: f64,
    pub deltas: Vec<f64>,
    /// `-δ w_δ(y₀)` per δ.
    pub per_delta: Vec<f64>,
    /// `|δ_k w_k(y₀) - δ_{k+1} w_{k+1}(y₀)|`.
    pub increments: Vec<f64>,
    /// `max_y δw_δ - min_y δw_δ` per δ.
    pub spreads: Vec<f64>,
    /// Spread over y of the extrapolated profile.
    pub extrapolated_spread: f64,
    pub flat: bool,
    pub max_residual: f64,
}

/// `-lim δ w_δ` at the fast-grid center, one Richardson step over the last two
/// δ values.
pub fn effective_hamiltonian(q: &CellQuery) -> Result<CellEstimate> {
    let deltas = &q.template.deltas;
    if deltas.len() < 2 {
        return Err(Error::InvalidArgument("δ schedule needs at least two entries".into()));
    }
    check_schedule(deltas)?;
    let grid = &q.template.fast_grid;
    let center: Vec<f64> = grid.fast_axes().iter().map(|a| a.center()).collect();
    let mut profiles = Vec::with_capacity(deltas.len());
    let mut per_delta = Vec::with_capacity(deltas.len());
    let mut spreads = Vec::with_capacity(deltas.len());
    let mut max_residual = 0.0_f64;
    for &delta in deltas {
        let sol = solve_discounted(q, delta)?;
        max_residual = max_residual.max(sol.residual);
        let prof: Vec<f64> = sol.w.values.iter().map(|v| -delta * v).collect();
        let at = ScalarField::new(grid.clone(), 0.0, prof.clone())?
            .interpolate(&[], &center)
            .ok_or_else(|| Error::InvalidArgument("reference point off the fast grid".into()))?;
        per_delta.push(at);
        spreads.push(spread(&prof));
        profiles.push(prof);
    }
    let k = deltas.len() - 1;
    let ratio = deltas[k - 1] / deltas[k];
    let extrap: Vec<f64> = profiles[k]
        .iter()
        .zip(&profiles[k - 1])
        .map(|(a, b)| (ratio * a - b) / (ratio - 1.0))
        .collect();
    let value = (ratio * per_delta[k] - per_delta[k - 1]) / (ratio - 1.0);
    let extrapolated_spread = spread(&extrap);
    let increments = per_delta.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    Ok(CellEstimate {
        value,
        deltas: deltas.clone(),
        per_delta,
        increments,
        spreads,
        extrapolated_spread,
        flat: extrapolated_spread <= FLATNESS_LIMIT,
        max_residual,
    })
}

fn spread(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    hi - lo
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryDiagnostics {
    pub x: f64,
    pub p: f64,
    pub flat: bool,
    pub extrapolated_spread: f64,
    /// `|value - last per-δ value|`, the size of the Richardson correction.
    pub richardson_correction: f64,
    pub max_residual: f64,
}

/// `H̄` sampled on an `(x̄, p̄)` lattice (one slow dimension), bilinear in between.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HbarTable {
    pub x_axis: Axis,
    pub p_axis: Axis,
    /// Row-major, `x` outer.
    pub values: Vec<f64>,
    pub diagnostics: Vec<EntryDiagnostics>,
}

pub fn tabulate_hbar(x_axis: Axis, p_axis: Axis, template: &CellTemplate) -> Result<HbarTable> {
    if template.model.slow_dim != 1 {
        return Err(Error::InvalidArgument("tables cover one slow dimension".into()));
    }
    let nx = x_axis.n;
    let np = p_axis.n;
    let entries: Vec<Result<CellEstimate>> = (0..nx * np)
        .into_par_iter()
        .map(|k| {
            let q = template.query(&[x_axis.node(k / np)], &[p_axis.node(k % np)])?;
            effective_hamiltonian(&q)
        })
        .collect();
    let mut values = Vec::with_capacity(nx * np);
    let mut diagnostics = Vec::with_capacity(nx * np);
    for (k, e) in entries.into_iter().enumerate() {
        let e = e?;
        diagnostics.push(EntryDiagnostics {
            x: x_axis.node(k / np),
            p: p_axis.node(k % np),
            flat: e.flat,
            extrapolated_spread: e.extrapolated_spread,
            richardson_correction: (e.value - e.per_delta.last().unwrap()).abs(),
            max_residual: e.max_residual,
        });
        values.push(e.value);
    }
    Ok(HbarTable {
        x_axis,
        p_axis,
        values,
        diagnostics,
    })
}

impl HbarTable {
    /// Tabulates a closed form, with empty diagnostics.
    pub fn from_fn(x_axis: Axis, p_axis: Axis, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(x_axis.n * p_axis.n);
        for i in 0..x_axis.n {
            for j in 0..p_axis.n {
                values.push(f(x_axis.node(i), p_axis.node(j)));
            }
        }
        HbarTable {
            x_axis,
            p_axis,
            values,
            diagnostics: Vec::new(),
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p_axis.n + j]
    }

    pub fn flagged(&self) -> usize {
        self.diagnostics.iter().filter(|d| !d.flat).count()
    }

    /// Cell index and fraction, clamped to the table (linear extension beyond).
    fn cell(axis: &Axis, v: f64) -> (usize, f64) {
        let h = axis.spacing();
        let s = (v - axis.lo) / h;
        let i = (s.floor() as isize).clamp(0, axis.n as isize - 2) as usize;
        (i, s - i as f64)
    }

    /// Bilinear in `(x, p)`; `x` clamped to the table, `p` extended linearly.
    pub fn value(&self, x: f64, p: f64) -> f64 {
        let (i, a) = Self::cell(&self.x_axis, x);
        let a = a.clamp(0.0, 1.0);
        let (j, b) = Self::cell(&self.p_axis, p);
        let f = |ii: usize| self.at(ii, j) * (1.0 - b) + self.at(ii, j + 1) * b;
        f(i) * (1.0 - a) + f(i + 1) * a
    }

    /// `∂_p` of the interpolant.
    pub fn slope(&self, x: f64, p: f64) -> f64 {
        let (i, a) = Self::cell(&self.x_axis, x);
        let a = a.clamp(0.0, 1.0);
        let (j, _) = Self::cell(&self.p_axis, p);
        let h = self.p_axis.spacing();
        let s = |ii: usize| (self.at(ii, j + 1) - self.at(ii, j)) / h;
        s(i) * (1.0 - a) + s(i + 1) * a
    }

    /// Max `|∂_p|` of the interpolant over `p ∈ [lo, hi]`.
    pub fn slope_bound(&self, x: f64, lo: f64, hi: f64) -> f64 {
        let (j0, _) = Self::cell(&self.p_axis, lo);
        let (j1, _) = Self::cell(&self.p_axis, hi);
        let h = self.p_axis.spacing();
        (j0..=j1)
            .map(|j| self.slope(x, self.p_axis.lo + (j as f64 + 0.5) * h).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_deviation(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut m = 0.0_f64;
        for i in 0..self.x_axis.n {
            for j in 0..self.p_axis.n {
                m = m.max((self.at(i, j) - f(self.x_axis.node(i), self.p_axis.node(j))).abs());
            }
        }
        m
    }

    /// Writes `path` (binary) and `path.json` (diagnostics sidecar).
    pub fn write(&self, path: &Path) -> Result<()> {
        write_dump(
            path,
            &RawDump {
                magic: TABLE_MAGIC,
                slow: vec![self.x_axis.clone(), self.p_axis.clone()],
                fast: vec![],
                t: 0.0,
                payload: self.values.clone(),
            },
        )?;
        std::fs::write(sidecar(path), serde_json::to_string_pretty(&self.diagnostics)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let d = read_dump(path)?;
        if d.magic != TABLE_MAGIC || d.slow.len() != 2 {
            return Err(Error::InvalidArgument(format!("{} is not an H̄ table", path.display())));
        }
        let side = sidecar(path);
        let diagnostics = if side.exists() {
            serde_json::from_str(&std::fs::read_to_string(side)?)?
        } else {
            Vec::new()
        };
        Ok(HbarTable {
            x_axis: d.slow[0].clone(),
            p_axis: d.slow[1].clone(),
            values: d.payload,
            diagnostics,
        })
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// The limit equation `ū_t + H̄(x, ∂_x ū) = 0` on a slow-only grid.
impl SchemeHamiltonian for HbarTable {
    fn value(&self, _t: f64, _node: usize, c: &[f64], g: &[f64]) -> f64 {
        HbarTable::value(self, c[0], g[0])
    }

    fn dissipation(&self, _t: f64, _node: usize, c: &[f64], lo: &[f64], hi: &[f64], out: &mut [f64]) {
        out[0] = self.slope_bound(c[0], lo[0], hi[0]);
    }

    fn drift(&self, _t: f64, _node: usize, c: &[f64], g: &[f64], out: &mut [f64]) {
        out[0] = self.slope(c[0], g[0]);
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::hamiltonians::{make_mechanical, make_quadratic, shifted, SlowPart};
    use crate::hj::{march, SolveOptions};

    fn pendulum() -> Arc<HamiltonianModel> {
        Arc::new(make_mechanical(SlowPart::zero(), |y: &[f64]| -y[0].cos()))
    }

    fn template(model: Arc<HamiltonianModel>, n: usize) -> CellTemplate {
        CellTemplate::new(model, vec![Axis::new(-PI, PI, n).unwrap()], DEFAULT_DELTAS.to_vec()).unwrap()
    }

    #[test]
    fn y_independent_hamiltonian_gives_constant() {
        let m = Arc::new(shifted(&make_quadratic(SlowPart::zero()), 0.7));
        let q = template(m, 41).query(&[0.0], &[0.0]).unwrap();
        let s = solve_discounted(&q, 0.05).unwrap();
        for v in &s.w.values {
            assert!((v + 0.7 / 0.05).abs() < 1e-9);
        }
        let e = effective_hamiltonian(&q).unwrap();
        assert!((e.value - 0.7).abs() < 1e-8);
        assert!(e.flat);
    }

    #[test]
    fn pure_kinetic_gives_zero() {
        let q = template(Arc::new(make_quadratic(SlowPart::zero())), 41).query(&[0.0], &[0.0]).unwrap();
        let s = solve_discounted(&q, 0.1).unwrap();
        assert!(s.w.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn pendulum_residual_and_refinement() {
        let coarse = template(pendulum(), 60001).query(&[0.0], &[0.0]).unwrap();
        let fine = template(pendulum(), 240001).query(&[0.0], &[0.0]).unwrap();
        let a = solve_discounted(&coarse, 0.1).unwrap();
        let b = solve_discounted(&fine, 0.1).unwrap();
        assert_eq!(a.route, Route::Newton);
        assert!(a.residual <= RESIDUAL_CHECK);
        let mut gap = 0.0_f64;
        for (i, v) in a.w.values.iter().enumerate() {
            gap = gap.max((v - b.w.values[4 * i]).abs());
        }
        assert!(gap < 1e-3, "gap {gap} after {} and {} iterations", a.iterations, b.iterations);
    }

    #[test]
    fn pendulum_matches_known_constant() {
        let q = template(pendulum(), 3201).query(&[0.0], &[0.0]).unwrap();
        let e = effective_hamiltonian(&q).unwrap();
        assert!((e.value - 1.0).abs() < 1e-2, "{e:?}");
        assert!(e.increments.windows(2).all(|w| w[1] < w[0]), "{:?}", e.increments);
        assert!(e.spreads.windows(2).all(|w| w[1] < w[0]), "{:?}", e.spreads);
    }

    #[test]
    fn pendulum_matches_long_time_average() {
        let tpl = template(pendulum(), 801);
        let q = tpl.query(&[0.0], &[0.0]).unwrap();
        let e = effective_hamiltonian(&q).unwrap();
        let t_end = 200.0;
        let grid = Arc::new(Grid::new(vec![], vec![Axis::new(-PI, PI, 201).unwrap()], t_end, 0.5).unwrap());
        let ham = Frozen {
            model: &tpl.model,
            x_bar: &[0.0],
            p_bar: &[0.0],
        };
        let (slices, _) = march(&grid, &ham, 0.0, vec![0.0; 201], &SolveOptions::record_only(&[t_end / 2.0])).unwrap();
        let mid = &slices[1];
        let last = &slices[2];
        assert_eq!(mid.t, t_end / 2.0);
        let c = 100;
        let avg = -(last.values[c] - mid.values[c]) / (t_end / 2.0);
        assert!((avg - e.value).abs() < 1e-2, "long-time {avg} vs {}", e.value);
    }

    #[test]
    fn shift_covariance() {
        let base = template(pendulum(), 101);
        let moved = template(Arc::new(shifted(&base.model, 0.3)), 101);
        for p in [-0.5, 0.0, 0.4] {
            let a = effective_hamiltonian(&base.query(&[0.0], &[p]).unwrap()).unwrap();
            let b = effective_hamiltonian(&moved.query(&[0.0], &[p]).unwrap()).unwrap();
            assert!((b.value - a.value - 0.3).abs() < 1e-6);
        }
    }

    #[test]
    fn mechanical_identity_table() {
        let slow = SlowPart::modulated_kinetic(0.25);
        let model = Arc::new(make_mechanical(slow.clone(), |_: &[f64]| 0.0));
        let tpl = template(model, 41);
        let t = tabulate_hbar(Axis::new(-PI, PI, 9).unwrap(), Axis::new(-1.0, 1.0, 9).unwrap(), &tpl).unwrap();
        let dev = t.max_deviation(|x, p| slow.value(&[x], &[p]));
        assert!(dev <= 1e-4, "{dev}");
        assert_eq!(t.flagged(), 0);
    }

    #[test]
    fn interpolation_is_exact_at_nodes() {
        let t = HbarTable::from_fn(Axis::new(0.0, 1.0, 5).unwrap(), Axis::new(-1.0, 1.0, 9).unwrap(), |x, p| x * x + p.sin());
        for i in 0..5 {
            for j in 0..9 {
                assert_eq!(t.value(t.x_axis.node(i), t.p_axis.node(j)), t.at(i, j));
            }
        }
        let lin = HbarTable::from_fn(Axis::new(0.0, 1.0, 3).unwrap(), Axis::new(-1.0, 1.0, 3).unwrap(), |x, p| 2.0 * x - 3.0 * p);
        assert!((lin.value(0.3, 0.7) - (0.6 - 2.1)).abs() < 1e-14);
        assert!((lin.slope(0.3, 1.7) + 3.0).abs() < 1e-14);
    }

    #[test]
    fn table_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("hbar.bin");
        let tpl = template(Arc::new(make_quadratic(SlowPart::kinetic())), 21);
        let t = tabulate_hbar(Axis::new(-1.0, 1.0, 3).unwrap(), Axis::new(-1.0, 1.0, 5).unwrap(), &tpl).unwrap();
        t.write(&p).unwrap();
        assert!(dir.path().join("hbar.bin.json").exists());
        assert_eq!(HbarTable::read(&p).unwrap(), t);
    }

    #[test]
    fn two_fast_axes_use_jacobi() {
        let m = Arc::new(shifted(&make_quadratic(SlowPart::zero()).with_dims(1, 2), -0.2));
        let tpl = CellTemplate::new(m, vec![Axis::new(-1.0, 1.0, 9).unwrap(); 2], vec![0.1, 0.05]).unwrap();
        let q = tpl.query(&[0.0], &[0.0]).unwrap();
        let s = solve_discounted(&q, 0.1).unwrap();
        assert_eq!(s.route, Route::Jacobi);
        assert!(s.w.values.iter().all(|v| (v - 2.0).abs() < 1e-8));
    }

    #[test]
    fn schedule_validation() {
        let m = Arc::new(make_quadratic(SlowPart::zero()));
        assert!(CellTemplate::new(m.clone(), vec![Axis::new(-1.0, 1.0, 5).unwrap()], vec![0.1, 0.2]).is_err());
        let tpl = CellTemplate::new(m, vec![Axis::new(-1.0, 1.0, 5).unwrap()], vec![0.1]).unwrap();
        assert!(effective_hamiltonian(&tpl.query(&[0.0], &[0.0]).unwrap()).is_err());
    }
}
