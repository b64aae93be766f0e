//! Truncated tensor-product grids, grid functions and the discrete operators
//! shared by every solver.
//!
//! Nodes are stored row-major with slow axes first and fast axes last, so the
//! last fast axis varies fastest. At the truncation boundary grid functions use
//! a homogeneous Neumann closure (mirror ghost nodes).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on the total number of space dimensions.
pub const MAX_DIMS: usize = 3;

/// Fraction of each fast half-width kept free of windows by default.
pub const DEFAULT_PADDING: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidAxis(format!("non-finite bounds [{lo}, {hi}]")));
        }
        if lo >= hi {
            return Err(Error::InvalidAxis(format!("degenerate bounds [{lo}, {hi}]")));
        }
        if n < 3 {
            return Err(Error::InvalidAxis(format!("need at least 3 nodes, got {n}")));
        }
        Ok(Axis { lo, hi, n })
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    /// Trapezoidal quadrature weight of node `i`.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        let h = self.spacing();
        if i == 0 || i + 1 == self.n {
            0.5 * h
        } else {
            h
        }
    }

    /// Every other node of this axis. Requires an odd node count.
    pub fn coarsened(&self) -> Result<Axis> {
        if self.n % 2 == 0 {
            return Err(Error::InvalidAxis(format!(
                "cannot coarsen an axis with an even node count ({})",
                self.n
            )));
        }
        Axis::new(self.lo, self.hi, (self.n - 1) / 2 + 1)
    }

    /// Twice the resolution on the same interval.
    pub fn refined(&self) -> Axis {
        Axis {
            lo: self.lo,
            hi: self.hi,
            n: 2 * (self.n - 1) + 1,
        }
    }

    /// Cell index and local coordinate in [0, 1] for linear interpolation.
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let tol = 1e-12 * (self.hi - self.lo);
        if !(x >= self.lo - tol && x <= self.hi + tol) {
            return None;
        }
        let s = ((x - self.lo) / self.spacing()).clamp(0.0, (self.n - 1) as f64);
        let i = (s.floor() as usize).min(self.n - 2);
        Some((i, s - i as f64))
    }

    /// Nearest node index.
    pub fn nearest(&self, x: f64) -> usize {
        let s = ((x - self.lo) / self.spacing()).round();
        s.clamp(0.0, (self.n - 1) as f64) as usize
    }
}

/// Which constraint limits the explicit time step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Binding {
    Advective,
    Viscous,
}

impl std::fmt::Display for Binding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Binding::Advective => write!(f, "advective"),
            Binding::Viscous => write!(f, "viscous"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    slow: Vec<Axis>,
    fast: Vec<Axis>,
    t_final: f64,
    /// Fixed time step, or `None` when the solver picks steps from the CFL bound.
    dt: Option<f64>,
    cfl_safety: f64,
    padding: f64,
    shape: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

/// Builds a validated grid. The time step is left to the solver, which picks it
/// from the wave speeds it observes; use [`Grid::with_time_step`] to pin it.
pub fn build_grid(slow_axes: Vec<Axis>, fast_axes: Vec<Axis>, t_final: f64, cfl_safety: f64) -> Result<Grid> {
    Grid::new(slow_axes, fast_axes, t_final, cfl_safety)
}

impl Grid {
    pub fn new(slow: Vec<Axis>, fast: Vec<Axis>, t_final: f64, cfl_safety: f64) -> Result<Self> {
        let dims = slow.len() + fast.len();
        if dims == 0 {
            return Err(Error::InvalidGrid("no axes".into()));
        }
        if dims > MAX_DIMS {
            return Err(Error::InvalidGrid(format!("{dims} dimensions exceed the cap of {MAX_DIMS}")));
        }
        for a in slow.iter().chain(fast.iter()) {
            Axis::new(a.lo, a.hi, a.n)?;
        }
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::InvalidGrid(format!("final time must be positive, got {t_final}")));
        }
        if !(cfl_safety > 0.0 && cfl_safety <= 1.0) {
            return Err(Error::InvalidGrid(format!("cfl safety must lie in (0, 1], got {cfl_safety}")));
        }
        let shape: Vec<usize> = slow.iter().chain(fast.iter()).map(|a| a.n).collect();
        let mut strides = vec![1usize; dims];
        for k in (0..dims.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * shape[k + 1];
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| Error::InvalidGrid("node count overflows".into()))?;
        Ok(Grid {
            slow,
            fast,
            t_final,
            dt: None,
            cfl_safety,
            padding: DEFAULT_PADDING,
            shape,
            strides,
            len,
        })
    }

    /// Pins the time step. Solvers validate it against the CFL bound.
    pub fn with_time_step(mut self, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidGrid(format!("time step must be positive, got {dt}")));
        }
        self.dt = Some(dt);
        Ok(self)
    }

    pub fn with_padding(mut self, padding: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&padding) {
            return Err(Error::InvalidGrid(format!("padding must lie in [0, 1), got {padding}")));
        }
        self.padding = padding;
        Ok(self)
    }

    pub fn with_t_final(mut self, t_final: f64) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::InvalidGrid(format!("final time must be positive, got {t_final}")));
        }
        self.t_final = t_final;
        Ok(self)
    }

    pub fn slow_axes(&self) -> &[Axis] {
        &self.slow
    }
    pub fn fast_axes(&self) -> &[Axis] {
        &self.fast
    }
    pub fn n_slow(&self) -> usize {
        self.slow.len()
    }
    pub fn n_fast(&self) -> usize {
        self.fast.len()
    }
    pub fn dims(&self) -> usize {
        self.shape.len()
    }
    pub fn t_final(&self) -> f64 {
        self.t_final
    }
    pub fn dt(&self) -> Option<f64> {
        self.dt
    }
    pub fn cfl_safety(&self) -> f64 {
        self.cfl_safety
    }
    pub fn padding(&self) -> f64 {
        self.padding
    }
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }
    pub fn len(&self) -> usize {
        self.len
    }
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Axis `k` in storage order (slow axes first).
    pub fn axis(&self, k: usize) -> &Axis {
        if k < self.slow.len() {
            &self.slow[k]
        } else {
            &self.fast[k - self.slow.len()]
        }
    }

    pub fn spacing(&self, k: usize) -> f64 {
        self.axis(k).spacing()
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dims()).map(|k| self.spacing(k)).fold(f64::INFINITY, f64::min)
    }

    #[inline]
    pub fn unravel(&self, mut idx: usize) -> [usize; MAX_DIMS] {
        let mut out = [0usize; MAX_DIMS];
        for k in 0..self.dims() {
            out[k] = idx / self.strides[k];
            idx %= self.strides[k];
        }
        out
    }

    #[inline]
    pub fn ravel(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Coordinates of node `idx` in storage order.
    #[inline]
    pub fn coords(&self, idx: usize) -> [f64; MAX_DIMS] {
        let m = self.unravel(idx);
        let mut c = [0.0; MAX_DIMS];
        for k in 0..self.dims() {
            c[k] = self.axis(k).node(m[k]);
        }
        c
    }

    /// Trapezoidal quadrature weight of node `idx`.
    pub fn weight(&self, idx: usize) -> f64 {
        let m = self.unravel(idx);
        (0..self.dims()).map(|k| self.axis(k).weight(m[k])).product()
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.weight(i)).collect()
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.dims()).map(|k| self.axis(k).hi - self.axis(k).lo).product()
    }

    /// Largest stable explicit step for per-axis wave speeds and viscosity `sigma`.
    ///
    /// The advective and viscous contributions are added so that the monotonicity
    /// condition `dt * (sum a_k / h_k + 2 sigma sum 1 / h_k^2) <= cfl` holds.
    pub fn cfl_bound(&self, speeds: &[f64], sigma: f64) -> (f64, Binding) {
        let adv: f64 = (0..self.dims())
            .map(|k| speeds.get(k).copied().unwrap_or(0.0).abs() / self.spacing(k))
            .sum();
        let visc: f64 = (0..self.dims()).map(|k| 2.0 * sigma / self.spacing(k).powi(2)).sum();
        let binding = if visc > adv { Binding::Viscous } else { Binding::Advective };
        let rate = adv + visc;
        if rate <= 0.0 {
            (f64::INFINITY, binding)
        } else {
            (self.cfl_safety / rate, binding)
        }
    }

    /// Same grid with every axis coarsened by a factor two.
    pub fn coarsened(&self) -> Result<Grid> {
        let slow = self.slow.iter().map(Axis::coarsened).collect::<Result<Vec<_>>>()?;
        let fast = self.fast.iter().map(Axis::coarsened).collect::<Result<Vec<_>>>()?;
        let mut g = Grid::new(slow, fast, self.t_final, self.cfl_safety)?;
        g.padding = self.padding;
        g.dt = self.dt;
        Ok(g)
    }

    /// Same grid with every axis refined by a factor two.
    pub fn refined(&self) -> Result<Grid> {
        let slow = self.slow.iter().map(Axis::refined).collect();
        let fast = self.fast.iter().map(Axis::refined).collect();
        let mut g = Grid::new(slow, fast, self.t_final, self.cfl_safety)?;
        g.padding = self.padding;
        g.dt = self.dt.map(|dt| dt * 0.25);
        Ok(g)
    }

    /// Grid over the slow axes only.
    pub fn slow_grid(&self) -> Result<Grid> {
        let mut g = Grid::new(self.slow.clone(), Vec::new(), self.t_final, self.cfl_safety)?;
        g.padding = self.padding;
        Ok(g)
    }

    /// Grid over the fast axes only.
    pub fn fast_grid(&self) -> Result<Grid> {
        let mut g = Grid::new(Vec::new(), self.fast.clone(), self.t_final, self.cfl_safety)?;
        g.padding = self.padding;
        Ok(g)
    }

    /// Whether both grids share axes (time settings may differ).
    pub fn same_space(&self, other: &Grid) -> bool {
        self.slow == other.slow && self.fast == other.fast
    }

    /// Largest window radius allowed by the padding margin.
    pub fn max_window_radius(&self) -> f64 {
        let hw = self
            .fast
            .iter()
            .map(Axis::half_width)
            .fold(f64::INFINITY, f64::min);
        if hw.is_finite() {
            (1.0 - self.padding) * hw
        } else {
            0.0
        }
    }
}

/// A ball `B_r` in the fast variables, centered at the center of the fast box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub radius: f64,
}

impl Window {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::InvalidArgument(format!("window radius must be nonnegative, got {radius}")));
        }
        Ok(Window { radius })
    }

    /// Half the smallest fast half-width.
    pub fn default_for(grid: &Grid) -> Window {
        let hw = grid
            .fast_axes()
            .iter()
            .map(Axis::half_width)
            .fold(f64::INFINITY, f64::min);
        Window {
            radius: if hw.is_finite() { 0.5 * hw } else { 0.0 },
        }
    }

    pub fn check(&self, grid: &Grid) -> Result<()> {
        if grid.n_fast() == 0 {
            return Ok(());
        }
        let limit = grid.max_window_radius();
        if self.radius > limit + 1e-12 {
            return Err(Error::WindowTooLarge {
                radius: self.radius,
                limit,
            });
        }
        Ok(())
    }

    /// Whether node `idx` has its fast coordinates inside the ball.
    #[inline]
    pub fn contains(&self, grid: &Grid, idx: usize) -> bool {
        let c = grid.coords(idx);
        let d1 = grid.n_slow();
        let mut r2 = 0.0;
        for (j, a) in grid.fast_axes().iter().enumerate() {
            let d = c[d1 + j] - a.center();
            r2 += d * d;
        }
        r2.sqrt() <= self.radius * (1.0 + 1e-12) + 1e-12
    }

    pub fn mask(&self, grid: &Grid) -> Vec<bool> {
        (0..grid.len()).map(|i| self.contains(grid, i)).collect()
    }
}

/// A grid function at one time slice.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub t: f64,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, t: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(ScalarField { grid, t, values })
    }

    pub fn zeros(grid: Arc<Grid>, t: f64) -> Self {
        let n = grid.len();
        ScalarField {
            grid,
            t,
            values: vec![0.0; n],
        }
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(grid: Arc<Grid>, t: f64, f: impl Fn(&[f64], &[f64]) -> f64) -> Self {
        let d1 = grid.n_slow();
        let d = grid.dims();
        let values = (0..grid.len())
            .map(|i| {
                let c = grid.coords(i);
                f(&c[..d1], &c[d1..d])
            })
            .collect();
        ScalarField { grid, t, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Discrete integral with trapezoidal weights.
    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.grid.weight(i))
            .sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            t: self.t,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Nodewise difference `self - other`.
    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        if !self.grid.same_space(&other.grid) {
            return Err(Error::ShapeMismatch("fields live on different grids".into()));
        }
        Ok(ScalarField {
            grid: self.grid.clone(),
            t: self.t,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    /// Multilinear interpolation at `(x, y)`; `None` outside the grid.
    pub fn interpolate(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        let g = &self.grid;
        let d1 = g.n_slow();
        let d = g.dims();
        if x.len() != d1 || y.len() != g.n_fast() {
            return None;
        }
        let mut base = [0usize; MAX_DIMS];
        let mut frac = [0.0; MAX_DIMS];
        for k in 0..d {
            let c = if k < d1 { x[k] } else { y[k - d1] };
            let (i, s) = g.axis(k).locate(c)?;
            base[k] = i;
            frac[k] = s;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            for k in 0..d {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                idx += (base[k] + bit) * g.strides()[k];
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        Some(acc)
    }
}

/// Direction of the transport speed used to pick a one-sided difference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpeedSign {
    Negative,
    Zero,
    Positive,
}

impl SpeedSign {
    pub fn from_i32(s: i32) -> Result<Self> {
        match s {
            -1 => Ok(SpeedSign::Negative),
            0 => Ok(SpeedSign::Zero),
            1 => Ok(SpeedSign::Positive),
            _ => Err(Error::InvalidArgument(format!("speed sign must be -1, 0 or 1, got {s}"))),
        }
    }
}

/// First-order upwind derivative along `axis`.
///
/// A positive speed takes the backward difference, a negative speed the forward
/// one and a zero speed the central difference. Where the preferred stencil
/// leaves the grid the available one-sided stencil is used.
pub fn upwind_gradient(f: &ScalarField, axis: usize, sign: SpeedSign) -> Result<ScalarField> {
    let g = &f.grid;
    if axis >= g.dims() {
        return Err(Error::InvalidArgument(format!("axis {axis} out of range for {} dimensions", g.dims())));
    }
    let stride = g.strides()[axis];
    let n = g.shape()[axis];
    let h = g.spacing(axis);
    let u = &f.values;
    let values = (0..g.len())
        .map(|i| {
            let k = (i / stride) % n;
            let back = (k > 0).then(|| (u[i] - u[i - stride]) / h);
            let fwd = (k + 1 < n).then(|| (u[i + stride] - u[i]) / h);
            match (sign, back, fwd) {
                (SpeedSign::Positive, Some(b), _) => b,
                (SpeedSign::Positive, None, Some(fw)) => fw,
                (SpeedSign::Negative, _, Some(fw)) => fw,
                (SpeedSign::Negative, Some(b), None) => b,
                (SpeedSign::Zero, Some(b), Some(fw)) => 0.5 * (b + fw),
                (SpeedSign::Zero, Some(b), None) => b,
                (SpeedSign::Zero, None, Some(fw)) => fw,
                _ => 0.0,
            }
        })
        .collect();
    Ok(ScalarField {
        grid: f.grid.clone(),
        t: f.t,
        values,
    })
}

/// Five-point (or 2d+1-point) Laplacian with homogeneous Neumann closure.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let g = &f.grid;
    let u = &f.values;
    let mut out = vec![0.0; g.len()];
    for k in 0..g.dims() {
        let stride = g.strides()[k];
        let n = g.shape()[k];
        let h2 = g.spacing(k).powi(2);
        for (i, o) in out.iter_mut().enumerate() {
            let m = (i / stride) % n;
            let left = if m > 0 { u[i - stride] } else { u[i + stride] };
            let right = if m + 1 < n { u[i + stride] } else { u[i - stride] };
            *o += (left - 2.0 * u[i] + right) / h2;
        }
    }
    ScalarField {
        grid: f.grid.clone(),
        t: f.t,
        values: out,
    }
}

/// Max of `|f|` over the nodes whose fast coordinates lie in the window, or over
/// the whole grid.
pub fn sup_norm(f: &ScalarField, window: Option<&Window>) -> Result<f64> {
    match window {
        None => Ok(f.values.iter().fold(0.0, |m, v| m.max(v.abs()))),
        Some(w) => {
            w.check(&f.grid)?;
            Ok((0..f.len())
                .filter(|&i| w.contains(&f.grid, i))
                .fold(0.0, |m, i| m.max(f.values[i].abs())))
        }
    }
}

/// Windowed sup norm of `a - b`.
pub fn sup_distance(a: &ScalarField, b: &ScalarField, window: Option<&Window>) -> Result<f64> {
    sup_norm(&a.sub(b)?, window)
}
