//! Explicit monotone solvers for `u_t - σΔu + H(x, y, ∂_x u, ∂_y u / ε^κ) = 0`.
//!
//! The spatial operator is a local Lax–Friedrichs numerical Hamiltonian on the
//! grid gradient, with node-local dissipation bounded through the model. Time
//! steps are explicit Euler, chosen adaptively from the observed wave speeds
//! unless the grid pins a step.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Binding, Grid, ScalarField, Window, MAX_DIMS};
use crate::hamiltonians::HamiltonianModel;

/// Initial (or terminal) datum `(x, y) -> u0`.
pub type Datum = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Stored slices beyond this many bytes are thinned.
pub const SLICE_MEMORY_CAP: usize = 256 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Initial-value problem marching from `t = 0`.
    Forward,
    /// Terminal-value problem `-u_t - σΔu + H = 0` with data at `t = T`.
    Backward,
}

/// The Hamiltonian as seen by the scheme: a function of node coordinates and the
/// raw grid gradient over all axes (slow first).
pub trait SchemeHamiltonian: Sync {
    /// `G(t, node, c, g)` where `t` is march time.
    fn value(&self, t: f64, node: usize, c: &[f64], g: &[f64]) -> f64;

    /// Per-axis bounds on `|∂G/∂g_k|` over the box `[lo, hi]`.
    fn dissipation(&self, t: f64, node: usize, c: &[f64], lo: &[f64], hi: &[f64], out: &mut [f64]);

    /// `∇_g G`, the characteristic velocity.
    fn drift(&self, t: f64, node: usize, c: &[f64], g: &[f64], out: &mut [f64]);
}

/// A catalog model with its fast arguments divided by `ε^κ`.
#[derive(Clone, Debug)]
pub struct ScaledModel {
    pub model: Arc<HamiltonianModel>,
    pub slow_dim: usize,
    /// `ε^κ`.
    pub scale: f64,
}

impl ScaledModel {
    pub fn new(model: Arc<HamiltonianModel>, slow_dim: usize, eps: f64) -> Self {
        let scale = eps.powf(model.kappa);
        ScaledModel { model, slow_dim, scale }
    }
}

impl SchemeHamiltonian for ScaledModel {
    #[inline]
    fn value(&self, _t: f64, _node: usize, c: &[f64], g: &[f64]) -> f64 {
        let d1 = self.slow_dim;
        let d = c.len();
        let mut q = [0.0; MAX_DIMS];
        for k in d1..d {
            q[k - d1] = g[k] / self.scale;
        }
        self.model.eval(&c[..d1], &c[d1..], &g[..d1], &q[..d - d1])
    }

    #[inline]
    fn dissipation(&self, _t: f64, _node: usize, c: &[f64], lo: &[f64], hi: &[f64], out: &mut [f64]) {
        let d1 = self.slow_dim;
        let d = c.len();
        let mut qlo = [0.0; MAX_DIMS];
        let mut qhi = [0.0; MAX_DIMS];
        for k in d1..d {
            qlo[k - d1] = lo[k] / self.scale;
            qhi[k - d1] = hi[k] / self.scale;
        }
        let (op, oq) = out.split_at_mut(d1);
        self.model.dissipation_bound(
            &c[..d1],
            &c[d1..],
            &lo[..d1],
            &hi[..d1],
            &qlo[..d - d1],
            &qhi[..d - d1],
            op,
            &mut oq[..d - d1],
        );
        for v in oq.iter_mut().take(d - d1) {
            *v /= self.scale;
        }
    }

    #[inline]
    fn drift(&self, _t: f64, _node: usize, c: &[f64], g: &[f64], out: &mut [f64]) {
        let d1 = self.slow_dim;
        let d = c.len();
        let mut q = [0.0; MAX_DIMS];
        for k in d1..d {
            q[k - d1] = g[k] / self.scale;
        }
        let (op, oq) = out.split_at_mut(d1);
        self.model.grad_p(&c[..d1], &c[d1..], &g[..d1], &q[..d - d1], op);
        self.model.grad_q(&c[..d1], &c[d1..], &g[..d1], &q[..d - d1], &mut oq[..d - d1]);
        for v in oq.iter_mut().take(d - d1) {
            *v /= self.scale;
        }
    }
}

#[derive(Clone)]
pub struct CauchyProblem {
    pub model: Arc<HamiltonianModel>,
    pub eps: f64,
    pub u0: Datum,
    pub sigma: f64,
    pub direction: Direction,
}

impl std::fmt::Debug for CauchyProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CauchyProblem")
            .field("model", &self.model.name)
            .field("eps", &self.eps)
            .field("sigma", &self.sigma)
            .field("direction", &self.direction)
            .finish()
    }
}

impl CauchyProblem {
    pub fn new(model: Arc<HamiltonianModel>, eps: f64, u0: Datum, sigma: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be nonnegative, got {sigma}")));
        }
        Ok(CauchyProblem {
            model,
            eps,
            u0,
            sigma,
            direction: Direction::Forward,
        })
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        let mut p = self.clone();
        p.sigma = sigma;
        p
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        let mut p = self.clone();
        p.eps = eps;
        p
    }

    pub fn scaled(&self, grid: &Grid) -> ScaledModel {
        ScaledModel::new(self.model.clone(), grid.n_slow(), self.eps)
    }

    /// Sup and Lipschitz constant of the datum sampled on the grid.
    pub fn datum_bounds(&self, grid: &Arc<Grid>) -> (f64, f64) {
        let f = ScalarField::from_fn(grid.clone(), 0.0, |x, y| (self.u0)(x, y));
        let sup = f.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut lip: f64 = 0.0;
        for k in 0..grid.dims() {
            let s = grid.strides()[k];
            let n = grid.shape()[k];
            let h = grid.spacing(k);
            for i in 0..grid.len() {
                if (i / s) % n + 1 < n {
                    lip = lip.max((f.values[i + s] - f.values[i]).abs() / h);
                }
            }
        }
        (sup, lip)
    }
}

/// Which slices a solve keeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SliceStorage {
    /// Only `t = 0`, the requested record times and the final time.
    RecordOnly,
    /// Every `k`-th step plus the record times.
    Every(usize),
    /// Every step, thinned by halving whenever the memory cap would be exceeded.
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Times (in march time) the stepper must hit and store.
    pub record_times: Vec<f64>,
    pub storage: SliceStorage,
    pub max_steps: usize,
    pub memory_cap: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            record_times: Vec::new(),
            storage: SliceStorage::Auto,
            max_steps: 50_000_000,
            memory_cap: SLICE_MEMORY_CAP,
        }
    }
}

impl SolveOptions {
    pub fn record_only(times: &[f64]) -> Self {
        SolveOptions {
            record_times: times.to_vec(),
            storage: SliceStorage::RecordOnly,
            ..Default::default()
        }
    }

    pub fn every(k: usize) -> Self {
        SolveOptions {
            storage: SliceStorage::Every(k.max(1)),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub steps: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub advective_bound_steps: usize,
    pub viscous_bound_steps: usize,
    /// `(t, dt, stable bound)` for a thinned subset of steps.
    pub cfl_history: Vec<(f64, f64, f64)>,
    /// `(t, max u, min u)` at every stored slice.
    pub sup_history: Vec<(f64, f64, f64)>,
    /// Final stride between stored step slices (0 when only record times are kept).
    pub slice_stride: usize,
}

#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub grid: Arc<Grid>,
    pub model: Option<Arc<HamiltonianModel>>,
    pub eps: f64,
    pub sigma: f64,
    pub direction: Direction,
    /// Slices in increasing physical time.
    pub trajectory: Vec<ScalarField>,
    pub diagnostics: SolveDiagnostics,
}

impl SolveOutput {
    pub fn times(&self) -> Vec<f64> {
        self.trajectory.iter().map(|f| f.t).collect()
    }

    /// Index of the stored slice nearest to `t`.
    pub fn nearest_index(&self, t: f64) -> Result<usize> {
        if self.trajectory.is_empty() {
            return Err(Error::InvalidArgument("empty trajectory".into()));
        }
        let mut best = (f64::INFINITY, 0);
        for (i, f) in self.trajectory.iter().enumerate() {
            let d = (f.t - t).abs();
            if d < best.0 {
                best = (d, i);
            }
        }
        Ok(best.1)
    }

    pub fn slice_at(&self, t: f64) -> Result<&ScalarField> {
        Ok(&self.trajectory[self.nearest_index(t)?])
    }

    pub fn first(&self) -> &ScalarField {
        &self.trajectory[0]
    }

    pub fn last(&self) -> &ScalarField {
        self.trajectory.last().expect("nonempty trajectory")
    }

    /// Upwind fast derivative along fast axis `j` at stored slice `idx`.
    pub fn fast_gradient(&self, idx: usize, j: usize) -> ScalarField {
        upwind_by_central_sign(&self.trajectory[idx], self.grid.n_slow() + j)
    }

    /// Upwind slow derivative along slow axis `k` at stored slice `idx`.
    pub fn slow_gradient(&self, idx: usize, k: usize) -> ScalarField {
        upwind_by_central_sign(&self.trajectory[idx], k)
    }
}

/// Nodewise upwind derivative: the transport speed of a convex Hamiltonian has
/// the sign of the gradient, so the central difference picks the side.
pub fn upwind_by_central_sign(f: &ScalarField, axis: usize) -> ScalarField {
    let g = &f.grid;
    let s = g.strides()[axis];
    let n = g.shape()[axis];
    let h = g.spacing(axis);
    let u = &f.values;
    let values = (0..g.len())
        .map(|i| {
            let m = (i / s) % n;
            let back = if m > 0 { (u[i] - u[i - s]) / h } else { (u[i] - u[i + s]) / h };
            let fwd = if m + 1 < n { (u[i + s] - u[i]) / h } else { (u[i] - u[i - s]) / h };
            if back + fwd >= 0.0 {
                back
            } else {
                fwd
            }
        })
        .collect();
    ScalarField {
        grid: f.grid.clone(),
        t: f.t,
        values,
    }
}

/// Central gradient over all axes at one node with reflective closure.
#[inline]
pub fn central_gradient_at(grid: &Grid, u: &[f64], i: usize, out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate().take(grid.dims()) {
        let s = grid.strides()[k];
        let n = grid.shape()[k];
        let m = (i / s) % n;
        let h = grid.spacing(k);
        *o = if m == 0 || m + 1 == n {
            0.0
        } else {
            (u[i + s] - u[i - s]) / (2.0 * h)
        };
    }
}

/// One-sided differences `(D-, D+)` along every axis with mirror ghosts.
#[inline]
fn one_sided(grid: &Grid, u: &[f64], i: usize, dm: &mut [f64; MAX_DIMS], dp: &mut [f64; MAX_DIMS]) {
    for k in 0..grid.dims() {
        let s = grid.strides()[k];
        let n = grid.shape()[k];
        let m = (i / s) % n;
        let h = grid.spacing(k);
        let left = if m > 0 { u[i - s] } else { u[i + s] };
        let right = if m + 1 < n { u[i + s] } else { u[i - s] };
        dm[k] = (u[i] - left) / h;
        dp[k] = (right - u[i]) / h;
    }
}

/// Local Lax–Friedrichs residual `Ĥ - σΔu` at every node plus per-axis maximum
/// dissipation.
pub fn llf_rate<S: SchemeHamiltonian>(grid: &Grid, ham: &S, sigma: f64, t: f64, u: &[f64], rate: &mut [f64]) -> [f64; MAX_DIMS] {
    let d = grid.dims();
    rate.par_iter_mut()
        .enumerate()
        .map(|(i, r)| {
            let c = grid.coords(i);
            let mut dm = [0.0; MAX_DIMS];
            let mut dp = [0.0; MAX_DIMS];
            one_sided(grid, u, i, &mut dm, &mut dp);
            let mut bar = [0.0; MAX_DIMS];
            let mut lo = [0.0; MAX_DIMS];
            let mut hi = [0.0; MAX_DIMS];
            for k in 0..d {
                bar[k] = 0.5 * (dm[k] + dp[k]);
                lo[k] = dm[k].min(dp[k]);
                hi[k] = dm[k].max(dp[k]);
            }
            let mut alpha = [0.0; MAX_DIMS];
            ham.dissipation(t, i, &c[..d], &lo[..d], &hi[..d], &mut alpha[..d]);
            let mut v = ham.value(t, i, &c[..d], &bar[..d]);
            for k in 0..d {
                let jump = dp[k] - dm[k];
                v -= 0.5 * alpha[k] * jump;
                if sigma > 0.0 {
                    v -= sigma * jump / grid.spacing(k);
                }
            }
            *r = v;
            alpha
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

/// Marches `u_s + Ĥ - σΔu = 0` in march time `s` from `0` to `grid.t_final()`.
/// Returned slices carry march time.
pub fn march<S: SchemeHamiltonian>(grid: &Arc<Grid>, ham: &S, sigma: f64, initial: Vec<f64>, opts: &SolveOptions) -> Result<(Vec<ScalarField>, SolveDiagnostics)> {
    if initial.len() != grid.len() {
        return Err(Error::ShapeMismatch("initial datum does not match the grid".into()));
    }
    if let Some(i) = initial.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("initial datum is not finite at node {i}")));
    }
    let t_final = grid.t_final();
    let mut stops: Vec<f64> = opts
        .record_times
        .iter()
        .copied()
        .filter(|&t| t > 0.0 && t < t_final)
        .collect();
    stops.sort_by(|a, b| a.partial_cmp(b).unwrap());
    stops.dedup();
    stops.push(t_final);

    let slice_bytes = grid.len() * std::mem::size_of::<f64>();
    let cap_slices = (opts.memory_cap / slice_bytes.max(1)).max(4);
    let mut stride = match opts.storage {
        SliceStorage::RecordOnly => 0,
        SliceStorage::Every(k) => k,
        SliceStorage::Auto => 1,
    };

    let mut diag = SolveDiagnostics {
        dt_min: f64::INFINITY,
        ..Default::default()
    };
    // (slice, pinned) where pinned slices survive thinning.
    let mut stored: Vec<(ScalarField, bool, usize)> = Vec::new();
    let push = |stored: &mut Vec<(ScalarField, bool, usize)>, diag: &mut SolveDiagnostics, f: ScalarField, pinned: bool, step: usize| {
        diag.sup_history.push((f.t, f.max(), f.min()));
        stored.push((f, pinned, step));
    };
    push(&mut stored, &mut diag, ScalarField::new(grid.clone(), 0.0, initial.clone())?, true, 0);

    let mut u = initial;
    let mut rate = vec![0.0; grid.len()];
    let mut t = 0.0;
    let mut step = 0usize;
    let mut next_stop = 0usize;
    let mut prev_dt = 0.0_f64;
    let history_every = 64usize;
    while next_stop < stops.len() {
        if step >= opts.max_steps {
            return Err(Error::NonConvergence {
                what: "time march".into(),
                iterations: step,
                residual: t_final - t,
            });
        }
        let alpha = llf_rate(grid, ham, sigma, t, &u, &mut rate);
        let (bound, binding) = grid.cfl_bound(&alpha[..grid.dims()], sigma);
        let target = stops[next_stop];
        let remaining = target - t;
        let dt = match grid.dt() {
            Some(fixed) => {
                if fixed > bound * (1.0 + 1e-12) {
                    return Err(Error::Cfl {
                        binding: binding.to_string(),
                        dt: fixed,
                        bound,
                    });
                }
                fixed.min(remaining)
            }
            None => {
                // a flat state has no wave speed yet; grow from a unit-speed step
                let cap = if prev_dt > 0.0 { 2.0 * prev_dt } else { grid.cfl_safety() * grid.min_spacing() };
                let bound = bound.min(cap);
                // avoid a sliver step right before a stop
                let n = (remaining / bound).ceil().max(1.0);
                if n <= 2.0 {
                    remaining / n
                } else {
                    bound
                }
            }
        };
        let hit = dt >= remaining * (1.0 - 1e-12);
        let dt = if hit { remaining } else { dt };
        u.par_iter_mut().zip(rate.par_iter()).for_each(|(v, r)| *v -= dt * r);
        step += 1;
        t = if hit { target } else { t + dt };
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            let _ = i;
            return Err(Error::NonFinite { step, t });
        }
        diag.dt_min = diag.dt_min.min(dt);
        diag.dt_max = diag.dt_max.max(dt);
        if !hit {
            prev_dt = dt;
        }
        match binding {
            Binding::Advective => diag.advective_bound_steps += 1,
            Binding::Viscous => diag.viscous_bound_steps += 1,
        }
        if step % history_every == 1 {
            diag.cfl_history.push((t, dt, bound));
        }
        if hit {
            push(&mut stored, &mut diag, ScalarField::new(grid.clone(), t, u.clone())?, true, step);
            next_stop += 1;
        } else if stride > 0 && step % stride == 0 {
            push(&mut stored, &mut diag, ScalarField::new(grid.clone(), t, u.clone())?, false, step);
            if matches!(opts.storage, SliceStorage::Auto) && stored.len() > cap_slices {
                stride *= 2;
                let s = stride;
                stored.retain(|(_, pinned, st)| *pinned || st % s == 0);
            }
        }
    }
    diag.steps = step;
    diag.slice_stride = stride;
    if diag.dt_min.is_infinite() {
        diag.dt_min = 0.0;
    }
    Ok((stored.into_iter().map(|(f, _, _)| f).collect(), diag))
}

fn run(pb: &CauchyProblem, grid: &Arc<Grid>, opts: &SolveOptions) -> Result<SolveOutput> {
    let ham = pb.scaled(grid);
    let t_final = grid.t_final();
    let u0 = ScalarField::from_fn(grid.clone(), 0.0, |x, y| (pb.u0)(x, y));
    let mut march_opts = opts.clone();
    if pb.direction == Direction::Backward {
        march_opts.record_times = opts.record_times.iter().map(|t| t_final - t).collect();
    }
    let (mut slices, mut diag) = march(grid, &ham, pb.sigma, u0.values, &march_opts)?;
    if pb.direction == Direction::Backward {
        for f in slices.iter_mut() {
            f.t = t_final - f.t;
        }
        slices.reverse();
        for h in diag.sup_history.iter_mut() {
            h.0 = t_final - h.0;
        }
        diag.sup_history.reverse();
    }
    Ok(SolveOutput {
        grid: grid.clone(),
        model: Some(pb.model.clone()),
        eps: pb.eps,
        sigma: pb.sigma,
        direction: pb.direction,
        trajectory: slices,
        diagnostics: diag,
    })
}

/// Solves with `σ ≥ 0`; the inviscid case is the `σ = 0` scheme.
pub fn solve(pb: &CauchyProblem, grid: &Arc<Grid>, opts: &SolveOptions) -> Result<SolveOutput> {
    run(pb, grid, opts)
}

/// Viscous solve with default slice storage; requires `σ > 0`.
pub fn solve_viscous(pb: &CauchyProblem, grid: &Arc<Grid>) -> Result<SolveOutput> {
    if pb.sigma <= 0.0 {
        return Err(Error::InvalidArgument("viscous solve needs sigma > 0".into()));
    }
    run(pb, grid, &SolveOptions::default())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VanishingViscosityReport {
    pub sigmas: Vec<f64>,
    /// Sup-norm gap at the final time between consecutive schedule members.
    pub gaps: Vec<f64>,
    pub gaps_decreasing: bool,
    /// Richardson extrapolation to σ = 0 of the final slice (linear in σ).
    pub extrapolated: Vec<f64>,
}

/// Solves along a strictly decreasing σ schedule and returns the smallest-σ solve.
pub fn solve_vanishing_viscosity(pb: &CauchyProblem, grid: &Arc<Grid>, schedule: &[f64], opts: &SolveOptions) -> Result<(SolveOutput, VanishingViscosityReport)> {
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("empty sigma schedule".into()));
    }
    if schedule.iter().any(|s| !(*s > 0.0)) || schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("sigma schedule must be positive and strictly decreasing".into()));
    }
    let outs: Vec<SolveOutput> = schedule
        .par_iter()
        .map(|&s| solve(&pb.with_sigma(s), grid, opts))
        .collect::<Result<Vec<_>>>()?;
    let gaps: Vec<f64> = outs
        .windows(2)
        .map(|w| {
            w[0].last()
                .values
                .iter()
                .zip(&w[1].last().values)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        })
        .collect();
    let gaps_decreasing = gaps.windows(2).all(|w| w[1] <= w[0]);
    let n = outs.len();
    let extrapolated = if n >= 2 {
        let r = schedule[n - 2] / schedule[n - 1];
        outs[n - 1]
            .last()
            .values
            .iter()
            .zip(&outs[n - 2].last().values)
            .map(|(a, b)| (r * a - b) / (r - 1.0))
            .collect()
    } else {
        outs[0].last().values.clone()
    };
    let report = VanishingViscosityReport {
        sigmas: schedule.to_vec(),
        gaps,
        gaps_decreasing,
        extrapolated,
    };
    let out = outs.into_iter().last().expect("nonempty schedule");
    Ok((out, report))
}

fn check_scaling(out: &SolveOutput, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let kappa = out.model.as_ref().map(|m| m.kappa).ok_or_else(|| Error::InvalidArgument("solve output carries no model".into()))?;
    Ok(eps.powf(kappa))
}

/// `w(t, x, y) = u(t, x, y / ε^κ)` on fast axes scaled by `ε^κ`; node values are
/// carried over unchanged.
pub fn rescale_fast(out: &SolveOutput, eps: f64) -> Result<SolveOutput> {
    let s = check_scaling(out, eps)?;
    let fast: Vec<Axis> = out
        .grid
        .fast_axes()
        .iter()
        .map(|a| Axis::new(a.lo * s, a.hi * s, a.n))
        .collect::<Result<_>>()?;
    let src = &out.grid;
    let mut g = Grid::new(src.slow_axes().to_vec(), fast, src.t_final(), src.cfl_safety())?.with_padding(src.padding())?;
    if let Some(dt) = src.dt() {
        g = g.with_time_step(dt)?;
    }
    let grid = Arc::new(g);
    let trajectory = out
        .trajectory
        .iter()
        .map(|f| ScalarField::new(grid.clone(), f.t, f.values.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(SolveOutput {
        grid,
        model: out.model.clone(),
        eps: out.eps,
        sigma: out.sigma,
        direction: out.direction,
        trajectory,
        diagnostics: out.diagnostics.clone(),
    })
}

/// Same change of variables resampled by multilinear interpolation onto the
/// given fast axes.
pub fn rescale_fast_onto(out: &SolveOutput, eps: f64, fast: Vec<Axis>) -> Result<SolveOutput> {
    let s = check_scaling(out, eps)?;
    let src = &out.grid;
    if fast.len() != src.n_fast() {
        return Err(Error::ShapeMismatch("fast axis count differs".into()));
    }
    for (a, b) in fast.iter().zip(src.fast_axes()) {
        let tol = 1e-12 * (b.hi - b.lo);
        if a.lo / s < b.lo - tol || a.hi / s > b.hi + tol {
            return Err(Error::OutOfDomain(format!(
                "[{}, {}] / {s} leaves the source axis [{}, {}]",
                a.lo, a.hi, b.lo, b.hi
            )));
        }
    }
    let mut g = Grid::new(src.slow_axes().to_vec(), fast, src.t_final(), src.cfl_safety())?.with_padding(src.padding())?;
    if let Some(dt) = src.dt() {
        g = g.with_time_step(dt)?;
    }
    let grid = Arc::new(g);
    let trajectory = out
        .trajectory
        .iter()
        .map(|f| {
            let d1 = grid.n_slow();
            let d = grid.dims();
            let values = (0..grid.len())
                .map(|i| {
                    let c = grid.coords(i);
                    let mut y = [0.0; MAX_DIMS];
                    for k in d1..d {
                        y[k - d1] = c[k] / s;
                    }
                    f.interpolate(&c[..d1], &y[..d - d1]).ok_or_else(|| Error::OutOfDomain("interpolation left the source grid".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            ScalarField::new(grid.clone(), f.t, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SolveOutput {
        grid,
        model: out.model.clone(),
        eps: out.eps,
        sigma: out.sigma,
        direction: out.direction,
        trajectory,
        diagnostics: out.diagnostics.clone(),
    })
}

/// Sup over the window of the upwind fast derivative (Euclidean norm over fast
/// axes) at the stored slice nearest `t`.
pub fn fast_gradient_norm(out: &SolveOutput, t: f64, w: &Window) -> Result<f64> {
    let idx = out.nearest_index(t)?;
    w.check(&out.grid)?;
    let d2 = out.grid.n_fast();
    let grads: Vec<ScalarField> = (0..d2).map(|j| out.fast_gradient(idx, j)).collect();
    let mut m: f64 = 0.0;
    for i in 0..out.grid.len() {
        if w.contains(&out.grid, i) {
            let n2: f64 = grads.iter().map(|g| g.values[i] * g.values[i]).sum();
            m = m.max(n2.sqrt());
        }
    }
    Ok(m)
}

/// Candidate points for the Hopf–Lax minimization in one slow and one fast
/// dimension. Slow candidates are offsets from the query point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub slow_offsets: Vec<f64>,
    pub fast: Vec<f64>,
}

impl SearchGrid {
    pub fn new(slow_half_width: f64, n_slow: usize, fast_lo: f64, fast_hi: f64, n_fast: usize) -> Result<Self> {
        let slow_offsets = if n_slow <= 1 {
            vec![0.0]
        } else {
            Axis::new(-slow_half_width, slow_half_width, n_slow)?.nodes()
        };
        let fast = Axis::new(fast_lo, fast_hi, n_fast)?.nodes();
        Ok(SearchGrid { slow_offsets, fast })
    }
}

/// Value and minimizer `(x*, y*)` of
/// `min |x - x'|^2/(2t) + ε|y - y'|^2/(2t) + u0(x', y')` over the search grid.
pub fn hopf_lax_minimizer(u0: &dyn Fn(&[f64], &[f64]) -> f64, t: f64, x: f64, y: f64, eps: f64, search: &SearchGrid) -> Result<(f64, f64, f64)> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("Hopf-Lax needs t > 0, got {t}")));
    }
    // the query point itself is always a candidate
    let mut best = (u0(&[x], &[y]), x, y);
    for &dx in &search.slow_offsets {
        let xp = x + dx;
        let cx = dx * dx / (2.0 * t);
        for &yp in &search.fast {
            let v = cx + eps * (y - yp).powi(2) / (2.0 * t) + u0(&[xp], &[yp]);
            if v < best.0 {
                best = (v, xp, yp);
            }
        }
    }
    Ok(best)
}

/// Closed-form solution for `H = |p|^2/2 + |q|^2/2` with fast argument `∂_y u/√ε`.
pub fn hopf_lax_oracle(u0: &dyn Fn(&[f64], &[f64]) -> f64, t: f64, x: f64, y: f64, eps: f64, search: &SearchGrid) -> Result<f64> {
    Ok(hopf_lax_minimizer(u0, t, x, y, eps, search)?.0)
}

/// Exact fast derivative `ε (y - y*) / t` of the oracle.
pub fn hopf_lax_fast_gradient(u0: &dyn Fn(&[f64], &[f64]) -> f64, t: f64, x: f64, y: f64, eps: f64, search: &SearchGrid) -> Result<f64> {
    let (_, _, ys) = hopf_lax_minimizer(u0, t, x, y, eps, search)?;
    Ok(eps * (y - ys) / t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, sup_norm};
    use crate::hamiltonians::{make_quadratic, SlowPart};

    fn quad() -> Arc<HamiltonianModel> {
        Arc::new(make_quadratic(SlowPart::kinetic()))
    }

    fn grid(ny: usize, t: f64) -> Arc<Grid> {
        Arc::new(
            build_grid(
                vec![Axis::new(-1.0, 1.0, 5).unwrap()],
                vec![Axis::new(-std::f64::consts::PI, std::f64::consts::PI, ny).unwrap()],
                t,
                0.5,
            )
            .unwrap(),
        )
    }

    #[test]
    fn zero_datum_is_stationary() {
        let pb = CauchyProblem::new(quad(), 0.1, Arc::new(|_, _| 0.0), 0.01).unwrap();
        let out = solve_viscous(&pb, &grid(41, 0.5)).unwrap();
        for f in &out.trajectory {
            assert!(f.values.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn slow_only_datum_keeps_zero_fast_gradient() {
        let pb = CauchyProblem::new(quad(), 0.1, Arc::new(|x, _| x[0].sin()), 0.01).unwrap();
        let out = solve(&pb, &grid(41, 0.5), &SolveOptions::record_only(&[0.25])).unwrap();
        for idx in 0..out.trajectory.len() {
            let g = out.fast_gradient(idx, 0);
            assert_eq!(sup_norm(&g, None).unwrap(), 0.0);
        }
    }

    #[test]
    fn record_times_are_hit_exactly() {
        let pb = CauchyProblem::new(quad(), 0.1, Arc::new(|_, y| 0.5 * (1.0 - y[0].cos())), 0.0).unwrap();
        let out = solve(&pb, &grid(41, 1.0), &SolveOptions::record_only(&[0.25, 0.5])).unwrap();
        assert_eq!(out.times(), vec![0.0, 0.25, 0.5, 1.0]);
    }

    #[test]
    fn fixed_step_violating_cfl_is_rejected() {
        let g = Arc::new(
            build_grid(
                vec![Axis::new(-1.0, 1.0, 5).unwrap()],
                vec![Axis::new(-3.0, 3.0, 61).unwrap()],
                0.1,
                0.5,
            )
            .unwrap()
            .with_time_step(0.05)
            .unwrap(),
        );
        let pb = CauchyProblem::new(quad(), 1.0, Arc::new(|_, y| y[0].sin()), 0.1).unwrap();
        match solve(&pb, &g, &SolveOptions::default()) {
            Err(Error::Cfl { binding, .. }) => assert_eq!(binding, "viscous"),
            other => panic!("expected a CFL error, got {other:?}"),
        }
    }

    #[test]
    fn backward_direction_reports_physical_time() {
        let pb = CauchyProblem::new(quad(), 0.2, Arc::new(|_, y| 0.5 * (1.0 - y[0].cos())), 0.0)
            .unwrap()
            .with_direction(Direction::Backward);
        let out = solve(&pb, &grid(41, 1.0), &SolveOptions::record_only(&[0.5])).unwrap();
        assert_eq!(out.times(), vec![0.0, 0.5, 1.0]);
        // the datum sits at t = T
        let fwd = solve(&pb.clone().with_direction(Direction::Forward), &grid(41, 1.0), &SolveOptions::record_only(&[0.5])).unwrap();
        assert_eq!(out.last().values, fwd.first().values);
        assert_eq!(out.first().values, fwd.last().values);
    }

    #[test]
    fn hopf_lax_constant_and_limit() {
        let s = SearchGrid::new(0.0, 1, -2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI, 10_001).unwrap();
        let c = |_: &[f64], _: &[f64]| 0.7;
        assert_eq!(hopf_lax_oracle(&c, 0.3, 0.1, 2.0, 0.5, &s).unwrap(), 0.7);
        let u0 = |_: &[f64], y: &[f64]| 0.5 * (1.0 - y[0].cos());
        let v = hopf_lax_oracle(&u0, 1.0, 0.0, std::f64::consts::PI, 1e-6, &s).unwrap();
        assert!(v < 1e-4, "{v}");
        // brute-force reference
        let eps = 0.1;
        let y = std::f64::consts::PI;
        let bf = s
            .fast
            .iter()
            .map(|&yp| eps * (y - yp) * (y - yp) / 2.0 + u0(&[0.0], &[yp]))
            .fold(u0(&[0.0], &[y]), f64::min);
        assert!((hopf_lax_oracle(&u0, 1.0, 0.0, y, eps, &s).unwrap() - bf).abs() < 1e-14);
        assert!(hopf_lax_oracle(&u0, 0.0, 0.0, y, eps, &s).is_err());
    }

    #[test]
    fn rescale_identity_and_linear() {
        let pb = CauchyProblem::new(quad(), 0.25, Arc::new(|_, y| 3.0 * y[0]), 0.0).unwrap();
        let g = grid(41, 0.01);
        let out = solve(&pb, &g, &SolveOptions::record_only(&[])).unwrap();
        let same = rescale_fast(&out, 1.0).unwrap();
        assert_eq!(same.first().values, out.first().values);
        // onto the source axes: w(y) = u(y / sqrt(eps)) = 3 y / 0.5 on the covered part
        let target = vec![Axis::new(-1.5, 1.5, 31).unwrap()];
        let w = rescale_fast_onto(&out, 0.25, target).unwrap();
        let f = w.first();
        for i in 0..f.len() {
            let y = f.grid.coords(i)[1];
            assert!((f.values[i] - 3.0 * y / 0.5).abs() < 1e-12);
        }
        let too_wide = vec![Axis::new(-3.0, 3.0, 31).unwrap()];
        assert!(matches!(rescale_fast_onto(&out, 0.25, too_wide), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn vanishing_viscosity_single_entry_matches_direct() {
        let pb = CauchyProblem::new(quad(), 0.2, Arc::new(|_, y| 0.5 * (1.0 - y[0].cos())), 0.0).unwrap();
        let g = grid(41, 0.5);
        let opts = SolveOptions::record_only(&[]);
        let (out, rep) = solve_vanishing_viscosity(&pb, &g, &[0.01], &opts).unwrap();
        let direct = solve(&pb.with_sigma(0.01), &g, &opts).unwrap();
        assert_eq!(out.last().values, direct.last().values);
        assert!(rep.gaps.is_empty());
        assert!(solve_vanishing_viscosity(&pb, &g, &[0.01, 0.02], &opts).is_err());
    }
}
