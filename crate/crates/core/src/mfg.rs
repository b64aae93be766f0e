//! Mean field games of acceleration and their limit MFG of control.
//!
//! The ε-system lives on `(x, v)`:
//!
//! ```text
//! -u_t + |u_v|^2 / (2ε) - <u_x, v> - L0(x, v, m_t) = 0,   u(T) = g(x, m_T)
//!  μ_t + div_{(x,v)}(μ (v, -u_v / ε)) = 0,                 μ(0) = μ_0
//! ```
//!
//! where `m_t` is the x-marginal of `μ_t` smoothed by a hat kernel of half-width
//! `2h`. The backward equation is marched in `s = T - t` with
//! `G = |q|^2/2 - v p - L0` and `q = u_v / √ε`. The terminal cost is extended
//! constantly in `v`.
//!
//! The limit system on `x` alone replaces the HJ by `-u_t + H0(x, u_x, m_t) = 0`
//! with `H0 = max_{|v| ≤ R} p v - L0`, moves `m` with velocity `-D_p H0`, and
//! lifts `m_t` to `(x, v)` at that velocity.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{advance_density, node_drift, DensityField, TransportStats};
use crate::error::{Error, Result};
use crate::grid::{Axis, Grid, ScalarField, Window};
use crate::hamiltonians::{HamiltonianModel, LagrangianModel, ModelFlags, SlowMarginal};
use crate::hj::{central_gradient_at, march, Direction, SchemeHamiltonian, SliceStorage, SolveDiagnostics, SolveOptions, SolveOutput};
use crate::rate::{fit_order, refinement_gap, Fit, RateReport};
use crate::transport::slice_distance;

pub const DEFAULT_THETA: f64 = 0.5;
pub const MIN_THETA: f64 = 1.0 / 64.0;
pub const DEFAULT_SEGMENTS: usize = 20;
pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default ε list and elapsed probe times of the shipped rate study.
pub const DEFAULT_MFG_EPS: [f64; 5] = [0.1, 0.05, 0.025, 0.0125, 0.00625];
pub const DEFAULT_PROBES: [f64; 3] = [0.25, 0.5, 1.0];

pub type TerminalFn = Arc<dyn Fn(&[f64], Option<&SlowMarginal>) -> f64 + Send + Sync>;

/// Terminal cost `g(x, m_T)`.
#[derive(Clone)]
pub struct TerminalCost {
    pub name: String,
    eval: TerminalFn,
    pub coupled: bool,
}

impl fmt::Debug for TerminalCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalCost")
            .field("name", &self.name)
            .field("coupled", &self.coupled)
            .finish()
    }
}

impl TerminalCost {
    pub fn new(name: impl Into<String>, eval: impl Fn(&[f64], Option<&SlowMarginal>) -> f64 + Send + Sync + 'static, coupled: bool) -> Self {
        TerminalCost {
            name: name.into(),
            eval: Arc::new(eval),
            coupled,
        }
    }

    pub fn constant(c: f64) -> Self {
        TerminalCost::new(format!("constant({c})"), move |_, _| c, false)
    }

    /// A cost of `x` alone.
    pub fn slow(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        TerminalCost::new(name, move |x, _| f(x[0]), false)
    }

    #[inline]
    pub fn eval(&self, x: &[f64], m: Option<&SlowMarginal>) -> f64 {
        (self.eval)(x, m)
    }
}

/// `H = |q|^2/2 - <y, p> - c` with κ = 1/2: the acceleration Hamiltonian with a
/// constant running cost, as a catalog model for direct solves.
pub fn acceleration_hamiltonian(c: f64) -> HamiltonianModel {
    HamiltonianModel::new(
        format!("acceleration({c})"),
        2.0,
        1.0,
        ModelFlags {
            nonneg: false,
            convex_p: true,
            convex_q: true,
        },
        0.5,
        Arc::new(move |_x, y, p, q| 0.5 * q[0] * q[0] - y[0] * p[0] - c),
        Arc::new(|_x, y, _p, _q, out| out[0] = -y[0]),
        Arc::new(|_x, _y, _p, q, out| out[0] = q[0]),
        Arc::new(|_x, _y, p, _q, out| out[0] = -p[0]),
    )
    .expect("static model")
}

#[derive(Clone, Debug)]
pub struct MfgProblem {
    pub l0: LagrangianModel,
    pub g: TerminalCost,
    /// Initial measure on the `(x, v)` grid.
    pub mu0: DensityField,
    pub horizon: f64,
    pub eps: f64,
    /// `μ` is stored and mixed at `segments + 1` uniform times.
    pub segments: usize,
    pub theta: f64,
    /// The `(x, v)` grid with `t_final = horizon`.
    pub grid: Arc<Grid>,
}

impl MfgProblem {
    pub fn new(l0: LagrangianModel, g: TerminalCost, mu0: DensityField, horizon: f64, eps: f64) -> Result<Self> {
        if mu0.grid.n_slow() != 1 || mu0.grid.n_fast() != 1 {
            return Err(Error::InvalidArgument("MFG grids are (x, v) with one axis each".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        let grid = Arc::new((*mu0.grid).clone().with_t_final(horizon)?);
        let xs = grid.axis(0).nodes();
        let vs = grid.axis(1).nodes();
        let sup = l0.sampled_sup(&xs, &vs, None);
        if !(sup <= l0.bound * (1.0 + 1e-12)) {
            return Err(Error::InvalidArgument(format!("running cost reaches {sup}, above its declared bound {}", l0.bound)));
        }
        if let Some(x) = xs.iter().find(|x| !g.eval(&[**x], None).is_finite()) {
            return Err(Error::InvalidArgument(format!("terminal cost is not finite at x = {x}")));
        }
        let mu0 = DensityField::new(grid.clone(), 0.0, mu0.values)?;
        Ok(MfgProblem {
            l0,
            g,
            mu0,
            horizon,
            eps,
            segments: DEFAULT_SEGMENTS,
            theta: DEFAULT_THETA,
            grid,
        })
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        let mut p = self.clone();
        p.eps = eps;
        Ok(p)
    }

    pub fn with_segments(mut self, segments: usize) -> Result<Self> {
        if segments == 0 {
            return Err(Error::InvalidArgument("at least one time segment is needed".into()));
        }
        self.segments = segments;
        Ok(self)
    }

    pub fn with_theta(mut self, theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::InvalidArgument(format!("damping must lie in (0, 1], got {theta}")));
        }
        self.theta = theta;
        Ok(self)
    }

    pub fn coupled(&self) -> bool {
        self.l0.coupled || self.g.coupled
    }

    pub fn output_times(&self) -> Vec<f64> {
        let n = self.segments;
        (0..=n).map(|j| if j == n { self.horizon } else { self.horizon * j as f64 / n as f64 }).collect()
    }

    /// Largest `|v|` on the grid, the velocity truncation `R`.
    pub fn velocity_radius(&self) -> f64 {
        let a = self.grid.axis(1);
        a.lo.abs().max(a.hi.abs())
    }

    /// `‖g‖∞ + T ‖L0‖∞` from the declared cost bound and sampled `g`.
    pub fn sup_bound(&self) -> f64 {
        let gs = self
            .grid
            .axis(0)
            .nodes()
            .iter()
            .fold(0.0_f64, |m, x| m.max(self.g.eval(&[*x], None).abs()));
        gs + self.horizon * self.l0.bound
    }

    /// The same problem on the once-coarsened grid, with `μ_0` injected.
    pub fn coarsened(&self) -> Result<Self> {
        let coarse = Arc::new(self.grid.coarsened()?);
        let values: Vec<f64> = (0..coarse.len())
            .map(|i| {
                let m = coarse.unravel(i);
                self.mu0.values[self.grid.ravel(&[2 * m[0], 2 * m[1]])]
            })
            .collect();
        let mu0 = DensityField::normalized(coarse, 0.0, values)?;
        let mut p = MfgProblem::new(self.l0.clone(), self.g.clone(), mu0, self.horizon, self.eps)?;
        p.segments = self.segments;
        p.theta = self.theta;
        Ok(p)
    }
}

/// Density of the x-marginal of `mu`, smoothed by the kernel `[1/4, 1/2, 1/4]`
/// (a hat of half-width `2h` sampled at the nodes) with mirrored ends.
pub fn mollified_marginal(mu: &DensityField) -> SlowMarginal {
    let axis = mu.grid.axis(0).clone();
    let n = axis.n;
    let masses = mu.marginal(0);
    let dens: Vec<f64> = (0..n).map(|i| masses[i] / axis.weight(i)).collect();
    let at = |i: isize| -> f64 {
        let j = if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * (n - 1) - i as usize
        } else {
            i as usize
        };
        dens[j.min(n - 1)]
    };
    let values = (0..n as isize)
        .map(|i| if n < 2 { dens[0] } else { 0.25 * at(i - 1) + 0.5 * at(i) + 0.25 * at(i + 1) })
        .collect();
    SlowMarginal { axis, values }
}

/// Piecewise-linear-in-time table over uniform times `j * dt`.
struct TimeTable {
    dt: f64,
    slices: Vec<Vec<f64>>,
}

impl TimeTable {
    #[inline]
    fn at(&self, t: f64, i: usize) -> f64 {
        let n = self.slices.len();
        if n == 1 {
            return self.slices[0][i];
        }
        let r = (t / self.dt).clamp(0.0, (n - 1) as f64);
        let j = (r.floor() as usize).min(n - 2);
        let w = r - j as f64;
        if w == 0.0 {
            self.slices[j][i]
        } else {
            (1.0 - w) * self.slices[j][i] + w * self.slices[j + 1][i]
        }
    }
}

/// Backward HJ of the ε-system seen by the scheme.
struct AccelScheme {
    /// `√ε`.
    scale: f64,
    horizon: f64,
    running: TimeTable,
}

impl SchemeHamiltonian for AccelScheme {
    #[inline]
    fn value(&self, s: f64, node: usize, c: &[f64], g: &[f64]) -> f64 {
        let q = g[1] / self.scale;
        0.5 * q * q - c[1] * g[0] - self.running.at(self.horizon - s, node)
    }

    #[inline]
    fn dissipation(&self, _s: f64, _node: usize, c: &[f64], lo: &[f64], hi: &[f64], out: &mut [f64]) {
        out[0] = c[1].abs();
        out[1] = (lo[1].abs().max(hi[1].abs()) / self.scale) / self.scale;
    }

    #[inline]
    fn drift(&self, _s: f64, _node: usize, c: &[f64], g: &[f64], out: &mut [f64]) {
        out[0] = -c[1];
        out[1] = (g[1] / self.scale) / self.scale;
    }
}

/// Limit backward HJ: `H0(x, p, m_t)` by enumeration of the velocity nodes.
struct LegendreScheme {
    v: Vec<f64>,
    radius: f64,
    horizon: f64,
    /// Running cost per time, indexed `ix * nv + iv`.
    running: TimeTable,
}

impl LegendreScheme {
    #[inline]
    fn best(&self, t: f64, ix: usize, p: f64) -> (f64, usize) {
        let nv = self.v.len();
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (iv, v) in self.v.iter().enumerate() {
            let val = p * v - self.running.at(t, ix * nv + iv);
            if val > best.0 {
                best = (val, iv);
            }
        }
        best
    }
}

impl SchemeHamiltonian for LegendreScheme {
    #[inline]
    fn value(&self, s: f64, node: usize, _c: &[f64], g: &[f64]) -> f64 {
        self.best(self.horizon - s, node, g[0]).0
    }

    #[inline]
    fn dissipation(&self, _s: f64, _node: usize, _c: &[f64], _lo: &[f64], _hi: &[f64], out: &mut [f64]) {
        out[0] = self.radius;
    }

    #[inline]
    fn drift(&self, s: f64, node: usize, _c: &[f64], g: &[f64], out: &mut [f64]) {
        out[0] = self.v[self.best(self.horizon - s, node, g[0]).1];
    }
}

/// One Picard iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointDiag {
    pub iteration: usize,
    /// `max_t sup |u^k - u^{k-1}|`; the first iteration is measured from zero.
    pub du: f64,
    /// `max_t W1` between consecutive mixed measures (marginal proxy on `(x, v)`).
    pub dmu: f64,
    /// Damping used to form this iterate.
    pub theta: f64,
}

#[derive(Clone, Debug)]
pub struct MfgState {
    /// Backward solve, slices in increasing physical time.
    pub u: SolveOutput,
    /// Measures at the output times, increasing.
    pub mu: Vec<DensityField>,
}

#[derive(Clone, Debug)]
pub struct MfgSolution {
    pub state: MfgState,
    pub diagnostics: Vec<FixedPointDiag>,
    pub converged: bool,
    pub transport: TransportStats,
}

impl MfgSolution {
    pub fn iterations(&self) -> usize {
        self.diagnostics.len()
    }

    /// Turns an unconverged run into a non-convergence error.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            return Ok(self);
        }
        let last = self.diagnostics.last().cloned();
        Err(Error::NonConvergence {
            what: "MFG fixed point".into(),
            iterations: self.diagnostics.len(),
            residual: last.map(|d| d.du.max(d.dmu)).unwrap_or(f64::NAN),
        })
    }

    /// Per-iteration diagnostics as CSV.
    pub fn diagnostics_csv(&self) -> String {
        let mut s = String::from("iteration,du,dmu,theta\n");
        for d in &self.diagnostics {
            s.push_str(&format!("{},{:.12e},{:.12e},{:.12e}\n", d.iteration, d.du, d.dmu, d.theta));
        }
        s
    }
}

struct PassOut<U> {
    extra: U,
    u_at: Vec<ScalarField>,
    pushed: Vec<DensityField>,
    stats: TransportStats,
}

struct LoopOut<U> {
    last: PassOut<U>,
    diagnostics: Vec<FixedPointDiag>,
    converged: bool,
}

fn sup_diff(a: &[ScalarField], b: &[ScalarField]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.values.iter().zip(&y.values).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn damped_loop<U>(
    init: Vec<DensityField>,
    coupled: bool,
    theta0: f64,
    max_iters: usize,
    tol: f64,
    mut pass: impl FnMut(&[DensityField]) -> Result<PassOut<U>>,
) -> Result<LoopOut<U>> {
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be positive".into()));
    }
    if !coupled {
        // u does not read μ, so one pass is the fixed point
        let last = pass(&init)?;
        return Ok(LoopOut {
            last,
            diagnostics: vec![FixedPointDiag {
                iteration: 1,
                du: 0.0,
                dmu: 0.0,
                theta: 1.0,
            }],
            converged: true,
        });
    }
    let mut mu = init;
    let mut theta = theta0;
    let mut prev_u: Option<Vec<ScalarField>> = None;
    let mut diagnostics: Vec<FixedPointDiag> = Vec::new();
    let mut last = None;
    for it in 1..=max_iters {
        let out = pass(&mu)?;
        let du = match &prev_u {
            Some(p) => sup_diff(&out.u_at, p),
            None => out.u_at.iter().flat_map(|f| f.values.iter()).fold(0.0_f64, |m, v| m.max(v.abs())),
        };
        let mixed: Vec<DensityField> = mu
            .iter()
            .zip(&out.pushed)
            .map(|(a, b)| DensityField {
                grid: a.grid.clone(),
                t: a.t,
                values: a.values.iter().zip(&b.values).map(|(x, y)| (1.0 - theta) * x + theta * y).collect(),
            })
            .collect();
        let dmu = mixed
            .iter()
            .zip(&mu)
            .map(|(a, b)| slice_distance(a, b))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        diagnostics.push(FixedPointDiag { iteration: it, du, dmu, theta });
        prev_u = Some(out.u_at.clone());
        mu = mixed;
        let done = du <= tol && dmu <= tol;
        last = Some(out);
        if done {
            return Ok(LoopOut {
                last: last.unwrap(),
                diagnostics,
                converged: true,
            });
        }
        let n = diagnostics.len();
        if n >= 3 && diagnostics[n - 1].dmu > diagnostics[n - 2].dmu {
            theta = (0.5 * theta).max(MIN_THETA);
        }
    }
    Ok(LoopOut {
        last: last.expect("at least one pass"),
        diagnostics,
        converged: false,
    })
}

fn slices_at(traj: &[ScalarField], times: &[f64]) -> Result<Vec<ScalarField>> {
    times
        .iter()
        .map(|&t| {
            traj.iter()
                .find(|f| (f.t - t).abs() <= 1e-12 * t.abs().max(1.0))
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("no stored slice at t = {t}")))
        })
        .collect()
}

/// Marches a terminal-value problem backward and returns slices in physical time.
fn backward_march<S: SchemeHamiltonian>(grid: &Arc<Grid>, ham: &S, terminal: Vec<f64>, times: &[f64], horizon: f64) -> Result<(Vec<ScalarField>, SolveDiagnostics)> {
    let opts = SolveOptions {
        record_times: times.iter().map(|t| horizon - t).collect(),
        storage: SliceStorage::Every(1),
        ..Default::default()
    };
    let (mut slices, mut diag) = march(grid, ham, 0.0, terminal, &opts)?;
    for f in slices.iter_mut() {
        f.t = horizon - f.t;
    }
    slices.reverse();
    for h in diag.sup_history.iter_mut() {
        h.0 = horizon - h.0;
    }
    diag.sup_history.reverse();
    Ok((slices, diag))
}

/// Pushes `rho0` forward along the stored slices with node velocities from
/// `drift`, averaging the endpoint velocities on each interval.
fn push_forward(grid: &Arc<Grid>, rho0: &DensityField, traj: &[ScalarField], times: &[f64], drift: impl Fn(&ScalarField) -> Vec<f64>) -> Result<(Vec<DensityField>, TransportStats)> {
    let mut rho = rho0.values.clone();
    let mut stats = TransportStats::default();
    let mut out = vec![DensityField::new(grid.clone(), 0.0, rho.clone())?];
    let mut next = 1;
    let mut lower = drift(&traj[0]);
    for k in 0..traj.len() - 1 {
        let upper = drift(&traj[k + 1]);
        let vel: Vec<f64> = lower.iter().zip(&upper).map(|(a, b)| 0.5 * (a + b)).collect();
        advance_density(grid, &mut rho, &vel, 0.0, traj[k + 1].t - traj[k].t, grid.cfl_safety(), &mut stats)?;
        let t = traj[k + 1].t;
        if next < times.len() && (t - times[next]).abs() <= 1e-12 * t.abs().max(1.0) {
            out.push(DensityField::new(grid.clone(), times[next], rho.clone())?);
            next += 1;
        }
        lower = upper;
    }
    if out.len() != times.len() {
        return Err(Error::InvalidArgument("forward push missed an output time".into()));
    }
    Ok((out, stats))
}

fn running_table(pb: &MfgProblem, grid: &Grid, marginals: &[SlowMarginal], dt: f64) -> TimeTable {
    let eval = |m: Option<&SlowMarginal>| -> Vec<f64> {
        (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let c = grid.coords(i);
                pb.l0.eval(&c[..1], &c[1..2], m)
            })
            .collect()
    };
    let slices = if pb.l0.coupled {
        marginals.iter().map(|m| eval(Some(m))).collect()
    } else {
        vec![eval(None)]
    };
    TimeTable { dt, slices }
}

fn terminal_values(pb: &MfgProblem, grid: &Grid, m_t: Option<&SlowMarginal>) -> Vec<f64> {
    let m = if pb.g.coupled { m_t } else { None };
    (0..grid.len()).map(|i| pb.g.eval(&grid.coords(i)[..1], m)).collect()
}

/// Damped Picard iteration for the ε-system.
pub fn solve_mfg_acc(pb: &MfgProblem, max_iters: usize, tol: f64) -> Result<MfgSolution> {
    let grid = pb.grid.clone();
    let times = pb.output_times();
    let dt = pb.horizon / pb.segments as f64;
    let scale = pb.eps.sqrt();
    let init: Vec<DensityField> = times
        .iter()
        .map(|&t| DensityField {
            grid: grid.clone(),
            t,
            values: pb.mu0.values.clone(),
        })
        .collect();
    let pass = |mu: &[DensityField]| -> Result<PassOut<(Vec<ScalarField>, SolveDiagnostics)>> {
        let marginals: Vec<SlowMarginal> = if pb.coupled() { mu.iter().map(mollified_marginal).collect() } else { Vec::new() };
        let scheme = AccelScheme {
            scale,
            horizon: pb.horizon,
            running: running_table(pb, &grid, &marginals, dt),
        };
        let terminal = terminal_values(pb, &grid, marginals.last());
        let (traj, diag) = backward_march(&grid, &scheme, terminal, &times, pb.horizon)?;
        let (pushed, stats) = push_forward(&grid, &pb.mu0, &traj, &times, |f| node_drift(&grid, &scheme, pb.horizon - f.t, &f.values, -1.0))?;
        let u_at = slices_at(&traj, &times)?;
        Ok(PassOut {
            extra: (traj, diag),
            u_at,
            pushed,
            stats,
        })
    };
    let out = damped_loop(init, pb.coupled(), pb.theta, max_iters, tol, pass)?;
    let (traj, diag) = out.last.extra;
    Ok(MfgSolution {
        state: MfgState {
            u: SolveOutput {
                grid: grid.clone(),
                model: None,
                eps: pb.eps,
                sigma: 0.0,
                direction: Direction::Backward,
                trajectory: traj,
                diagnostics: diag,
            },
            mu: out.last.pushed,
        },
        diagnostics: out.diagnostics,
        converged: out.converged,
        transport: out.last.stats,
    })
}

#[derive(Clone, Debug)]
pub struct LimitState {
    /// Backward solve on the x grid.
    pub u: SolveOutput,
    /// Slow measures at the output times.
    pub m: Vec<DensityField>,
    /// `m_t` lifted to `(x, v)` at the optimal velocity.
    pub mu: Vec<DensityField>,
}

#[derive(Clone, Debug)]
pub struct LimitSolution {
    pub state: LimitState,
    pub diagnostics: Vec<FixedPointDiag>,
    pub converged: bool,
}

impl LimitSolution {
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            return Ok(self);
        }
        Err(Error::NonConvergence {
            what: "limit MFG fixed point".into(),
            iterations: self.diagnostics.len(),
            residual: self.diagnostics.last().map(|d| d.du.max(d.dmu)).unwrap_or(f64::NAN),
        })
    }
}

/// Slow grid of the problem with its x-marginal density of `μ_0`.
fn slow_setup(pb: &MfgProblem) -> Result<(Arc<Grid>, DensityField)> {
    let slow = Arc::new(pb.grid.slow_grid()?.with_t_final(pb.horizon)?);
    let axis = slow.axis(0);
    let masses = pb.mu0.marginal(0);
    let values = (0..axis.n).map(|i| masses[i] / axis.weight(i)).collect();
    Ok((slow.clone(), DensityField::new(slow, 0.0, values)?))
}

fn legendre_scheme(pb: &MfgProblem, marginals: &[SlowMarginal], dt: f64) -> LegendreScheme {
    let xs = pb.grid.axis(0).nodes();
    let v = pb.grid.axis(1).nodes();
    let eval = |m: Option<&SlowMarginal>| -> Vec<f64> {
        let mut out = Vec::with_capacity(xs.len() * v.len());
        for x in &xs {
            for vv in &v {
                out.push(pb.l0.eval(&[*x], &[*vv], m));
            }
        }
        out
    };
    let slices = if pb.l0.coupled {
        marginals.iter().map(|m| eval(Some(m))).collect()
    } else {
        vec![eval(None)]
    };
    LegendreScheme {
        radius: pb.velocity_radius(),
        v,
        horizon: pb.horizon,
        running: TimeTable { dt, slices },
    }
}

/// Lifts slow densities to `(x, v)` at the velocity `-D_p H0(x, u_x)`, splitting
/// mass linearly between the two nearest velocity nodes.
fn lift(pb: &MfgProblem, scheme: &LegendreScheme, m: &[DensityField], u_at: &[ScalarField]) -> Result<Vec<DensityField>> {
    let grid = &pb.grid;
    let vaxis = grid.axis(1);
    let nv = vaxis.n;
    m.iter()
        .zip(u_at)
        .map(|(mt, ut)| {
            let masses = mt.marginal(0);
            let mut values = vec![0.0; grid.len()];
            for (ix, mass) in masses.iter().enumerate() {
                let mut g = [0.0; 1];
                central_gradient_at(&ut.grid, &ut.values, ix, &mut g);
                let mut b = [0.0; 1];
                scheme.drift(pb.horizon - ut.t, ix, &[0.0], &g, &mut b);
                let vel = -b[0];
                let (iv, s) = vaxis
                    .locate(vel)
                    .ok_or_else(|| Error::OutOfDomain(format!("velocity {vel} outside the v axis")))?;
                for (j, w) in [(iv, 1.0 - s), (iv + 1, s)] {
                    if w > 0.0 && j < nv {
                        let node = ix * nv + j;
                        values[node] += w * mass / grid.weight(node);
                    }
                }
            }
            Ok(DensityField {
                grid: grid.clone(),
                t: mt.t,
                values,
            })
        })
        .collect()
}

/// Damped Picard iteration for the limit MFG of control on the x grid.
pub fn solve_mfg_control_limit(pb: &MfgProblem, max_iters: usize, tol: f64) -> Result<LimitSolution> {
    let (slow, m0) = slow_setup(pb)?;
    let times = pb.output_times();
    let dt = pb.horizon / pb.segments as f64;
    let init: Vec<DensityField> = times
        .iter()
        .map(|&t| DensityField {
            grid: slow.clone(),
            t,
            values: m0.values.clone(),
        })
        .collect();
    let pass = |m: &[DensityField]| -> Result<PassOut<(Vec<ScalarField>, SolveDiagnostics, LegendreScheme)>> {
        let marginals: Vec<SlowMarginal> = if pb.coupled() { m.iter().map(mollified_marginal).collect() } else { Vec::new() };
        let scheme = legendre_scheme(pb, &marginals, dt);
        let terminal = terminal_values(pb, &slow, marginals.last());
        let (traj, diag) = backward_march(&slow, &scheme, terminal, &times, pb.horizon)?;
        let (pushed, stats) = push_forward(&slow, &m0, &traj, &times, |f| node_drift(&slow, &scheme, pb.horizon - f.t, &f.values, -1.0))?;
        let u_at = slices_at(&traj, &times)?;
        Ok(PassOut {
            extra: (traj, diag, scheme),
            u_at,
            pushed,
            stats,
        })
    };
    let out = damped_loop(init, pb.coupled(), pb.theta, max_iters, tol, pass)?;
    let (traj, diag, scheme) = out.last.extra;
    let mu = lift(pb, &scheme, &out.last.pushed, &out.last.u_at)?;
    Ok(LimitSolution {
        state: LimitState {
            u: SolveOutput {
                grid: slow,
                model: None,
                eps: 0.0,
                sigma: 0.0,
                direction: Direction::Backward,
                trajectory: traj,
                diagnostics: diag,
            },
            m: out.last.pushed,
            mu,
        },
        diagnostics: out.diagnostics,
        converged: out.converged,
    })
}

/// ε-sweep of the coupled system.
#[derive(Clone, Debug)]
pub struct MfgRateStudy {
    pub template: MfgProblem,
    pub eps_list: Vec<f64>,
    /// Elapsed backward times `T - t` at which `u` is compared.
    pub probes: Vec<f64>,
    pub window: Window,
    pub max_iters: usize,
    pub tol: f64,
    /// Estimate the discretization error by a coarse solve at the smallest ε.
    pub gate: bool,
}

impl MfgRateStudy {
    pub fn new(template: MfgProblem, eps_list: Vec<f64>, probes: Vec<f64>) -> Result<Self> {
        if eps_list.len() < 3 {
            return Err(Error::InvalidArgument("an MFG rate study needs at least three eps values".into()));
        }
        if eps_list.windows(2).any(|w| !(w[1] < w[0])) || eps_list.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidArgument("eps values must be positive and strictly decreasing".into()));
        }
        let dt = template.horizon / template.segments as f64;
        for &p in &probes {
            let r = p / dt;
            if !(p > 0.0 && p <= template.horizon) || (r - r.round()).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("probe {p} is not an output time in (0, T]")));
            }
        }
        let window = Window::default_for(&template.grid);
        Ok(MfgRateStudy {
            template,
            eps_list,
            probes,
            window,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            gate: true,
        })
    }

    fn physical(&self) -> Vec<f64> {
        self.probes.iter().map(|p| self.template.horizon - p).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MfgRateReport {
    /// Error columns per probe, over consecutive converged members.
    pub report: RateReport,
    /// `e(ε_i)`: the maximum over probes.
    pub max_errors: Vec<f64>,
    pub max_fit: Option<Fit>,
    /// `e` at the first probe over `e` at the last probe, on the smallest-ε pair.
    pub time_ratio: Option<f64>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// Members dropped for failing to converge.
    pub excluded: Vec<f64>,
    /// Exploratory only: `(t, W1 proxy)` per consecutive pair and output time.
    pub w1_exploratory: Vec<Vec<(f64, f64)>>,
}

impl MfgRateReport {
    pub fn slope(&self) -> Option<f64> {
        self.max_fit.map(|f| f.slope)
    }
}

fn window_sup(a: &ScalarField, b: &ScalarField, w: &Window) -> f64 {
    let g = &a.grid;
    (0..g.len())
        .filter(|&i| w.contains(g, i))
        .map(|i| (a.values[i] - b.values[i]).abs())
        .fold(0.0, f64::max)
}

pub fn mfg_rate_study(study: &MfgRateStudy) -> Result<MfgRateReport> {
    study.window.check(&study.template.grid)?;
    let runs: Vec<Result<MfgSolution>> = study
        .eps_list
        .par_iter()
        .map(|&e| solve_mfg_acc(&study.template.with_eps(e)?, study.max_iters, study.tol))
        .collect();
    let mut iterations = Vec::new();
    let mut converged = Vec::new();
    let mut kept: Vec<(f64, MfgSolution)> = Vec::new();
    let mut excluded = Vec::new();
    for (&e, r) in study.eps_list.iter().zip(runs) {
        match r {
            Ok(s) => {
                iterations.push(s.iterations());
                converged.push(s.converged);
                if s.converged {
                    kept.push((e, s));
                } else {
                    excluded.push(e);
                }
            }
            Err(Error::NonConvergence { iterations: n, .. }) => {
                iterations.push(n);
                converged.push(false);
                excluded.push(e);
            }
            Err(other) => return Err(other),
        }
    }
    let times = study.physical();
    let eps_kept: Vec<f64> = kept.iter().map(|k| k.0).collect();
    let mut errors = vec![Vec::new(); times.len()];
    let mut w1_exploratory = Vec::new();
    for pair in kept.windows(2) {
        let (a, b) = (&pair[0].1, &pair[1].1);
        for (ti, &t) in times.iter().enumerate() {
            errors[ti].push(window_sup(a.state.u.slice_at(t)?, b.state.u.slice_at(t)?, &study.window));
        }
        let w1 = a
            .state
            .mu
            .iter()
            .zip(&b.state.mu)
            .map(|(x, y)| Ok((x.t, slice_distance(x, y)?)))
            .collect::<Result<Vec<_>>>()?;
        w1_exploratory.push(w1);
    }
    let npairs = kept.len().saturating_sub(1);
    let max_errors: Vec<f64> = (0..npairs).map(|i| errors.iter().map(|c| c[i]).fold(0.0, f64::max)).collect();
    let discretization = match (study.gate, kept.last()) {
        (true, Some((e, fine))) => {
            let coarse = solve_mfg_acc(&study.template.coarsened()?.with_eps(*e)?, study.max_iters, study.tol)?;
            Some(refinement_gap(&fine.state.u, &coarse.state.u, &study.window, &times)?)
        }
        _ => None,
    };
    let abscissa: Vec<f64> = eps_kept[..npairs].to_vec();
    let report = RateReport::assemble("mfg-acceleration", 0.5, &eps_kept, &study.probes, abscissa.clone(), errors.clone(), discretization);
    let max_fit = if report.refused || report.degenerate.iter().all(|d| *d) || npairs < 2 {
        None
    } else {
        fit_order(&abscissa.iter().copied().zip(max_errors.iter().copied()).collect::<Vec<_>>()).ok()
    };
    let time_ratio = if npairs > 0 && times.len() >= 2 {
        let first = errors[0][npairs - 1];
        let last = errors[times.len() - 1][npairs - 1];
        if last > 0.0 {
            Some(first / last)
        } else {
            None
        }
    } else {
        None
    };
    let mut report = report;
    if !excluded.is_empty() {
        report.notes.push(format!("excluded unconverged members: {excluded:?}"));
    }
    report.notes.push("W1 columns use the marginal proxy and are exploratory".into());
    Ok(MfgRateReport {
        report,
        max_errors,
        max_fit,
        time_ratio,
        iterations,
        converged,
        excluded,
        w1_exploratory,
    })
}

/// Shipped MFG demos on `x ∈ [-π, π]`, `v ∈ [-4, 4]`.
pub const MFG_KEYS: [&str; 4] = ["weak-coupling", "uncoupled", "constant-cost", "trivial"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfgDemo {
    pub nx: usize,
    pub nv: usize,
    pub v_max: f64,
    pub horizon: f64,
    pub coupling: f64,
    pub density_cap: f64,
}

impl Default for MfgDemo {
    fn default() -> Self {
        MfgDemo {
            nx: 81,
            nv: 161,
            v_max: 4.0,
            horizon: 1.0,
            coupling: 0.1,
            density_cap: 10.0,
        }
    }
}

impl MfgDemo {
    pub fn grid(&self) -> Result<Arc<Grid>> {
        Ok(Arc::new(Grid::new(
            vec![Axis::new(-std::f64::consts::PI, std::f64::consts::PI, self.nx)?],
            vec![Axis::new(-self.v_max, self.v_max, self.nv)?],
            self.horizon,
            0.5,
        )?))
    }

    /// The demo named `key` at `eps`.
    pub fn problem(&self, key: &str, eps: f64) -> Result<MfgProblem> {
        let grid = self.grid()?;
        let mu0 = DensityField::gaussian_bump(grid, 0.0, &[-1.0, 0.5], 0.5)?;
        let slow_g = TerminalCost::slow("0.3(1-cos x)", |x| 0.3 * (1.0 - x.cos()));
        let (l0, g) = match key {
            "weak-coupling" => (LagrangianModel::weak_coupling(self.coupling, self.density_cap), slow_g),
            "uncoupled" => (LagrangianModel::weak_coupling(0.0, self.density_cap), slow_g),
            "constant-cost" => (LagrangianModel::constant(0.5), slow_g),
            "trivial" => (LagrangianModel::constant(0.5), TerminalCost::constant(0.2)),
            other => return Err(Error::Config(format!("unknown MFG scenario '{other}' (known: {})", MFG_KEYS.join(", ")))),
        };
        MfgProblem::new(l0, g, mu0, self.horizon, eps)
    }
}
