//! Hamiltonian models H(x, y, p, q) with analytic derivative evaluators.
//!
//! A model is evaluated in "model units": the solver feeds `q = ∂_y u / ε^κ`
//! where κ is the model's declared fast scaling exponent.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, MAX_DIMS};

pub type ScalarFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The slow part `(x, p) -> h(x, p)` of a separable Hamiltonian.
#[derive(Clone)]
pub struct SlowPart {
    pub name: String,
    value: Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
    grad_p: Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>,
}

impl fmt::Debug for SlowPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SlowPart").field("name", &self.name).finish()
    }
}

impl SlowPart {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        grad_p: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        SlowPart {
            name: name.into(),
            value: Arc::new(value),
            grad_p: Arc::new(grad_p),
        }
    }

    /// `|p|^2 / 2`.
    pub fn kinetic() -> Self {
        SlowPart::new(
            "kinetic",
            |_, p| 0.5 * dot(p, p),
            |_, p, out| out.copy_from_slice(p),
        )
    }

    /// `b(x) |p|^2 / 2` with `b(x) = 1 + a sin(x_1)`.
    pub fn modulated_kinetic(a: f64) -> Self {
        SlowPart::new(
            format!("modulated_kinetic({a})"),
            move |x, p| 0.5 * (1.0 + a * x[0].sin()) * dot(p, p),
            move |x, p, out| {
                let b = 1.0 + a * x[0].sin();
                for (o, pi) in out.iter_mut().zip(p) {
                    *o = b * pi;
                }
            },
        )
    }

    pub fn zero() -> Self {
        SlowPart::new("zero", |_, _| 0.0, |_, _, out| out.fill(0.0))
    }

    #[inline]
    pub fn value(&self, x: &[f64], p: &[f64]) -> f64 {
        (self.value)(x, p)
    }

    #[inline]
    pub fn grad_p(&self, x: &[f64], p: &[f64], out: &mut [f64]) {
        (self.grad_p)(x, p, out)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFlags {
    pub nonneg: bool,
    pub convex_p: bool,
    pub convex_q: bool,
}

/// Constant bounds on `|∂_p H|` and `|∂_q H|` per component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedCap {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Clone)]
pub struct HamiltonianModel {
    pub name: String,
    pub gamma: f64,
    pub c_h: f64,
    pub flags: ModelFlags,
    /// Fast scaling exponent κ: the solver evaluates H at `∂_y u / ε^κ`.
    pub kappa: f64,
    pub slow_dim: usize,
    pub fast_dim: usize,
    eval: ScalarFn,
    grad_p: VectorFn,
    grad_q: VectorFn,
    grad_y: VectorFn,
    speed_cap: Option<SpeedCap>,
}

impl fmt::Debug for HamiltonianModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianModel")
            .field("name", &self.name)
            .field("gamma", &self.gamma)
            .field("c_h", &self.c_h)
            .field("flags", &self.flags)
            .field("kappa", &self.kappa)
            .finish()
    }
}

impl HamiltonianModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        gamma: f64,
        c_h: f64,
        flags: ModelFlags,
        kappa: f64,
        eval: ScalarFn,
        grad_p: VectorFn,
        grad_q: VectorFn,
        grad_y: VectorFn,
    ) -> Result<Self> {
        if !(gamma >= 1.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("growth exponent must be >= 1, got {gamma}")));
        }
        if !(c_h > 0.0 && c_h.is_finite()) {
            return Err(Error::InvalidArgument(format!("C_H must be positive, got {c_h}")));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!("fast scaling must be positive, got {kappa}")));
        }
        Ok(HamiltonianModel {
            name: name.into(),
            gamma,
            c_h,
            flags,
            kappa,
            slow_dim: 1,
            fast_dim: 1,
            eval,
            grad_p,
            grad_q,
            grad_y,
            speed_cap: None,
        })
    }

    pub fn with_dims(mut self, slow_dim: usize, fast_dim: usize) -> Self {
        self.slow_dim = slow_dim;
        self.fast_dim = fast_dim;
        self
    }

    pub fn with_c_h(mut self, c_h: f64) -> Self {
        self.c_h = c_h;
        self
    }

    pub fn with_speed_cap(mut self, cap: SpeedCap) -> Self {
        self.speed_cap = Some(cap);
        self
    }

    pub fn speed_cap(&self) -> Option<&SpeedCap> {
        self.speed_cap.as_ref()
    }

    /// Conjugate exponent γ/(γ−1); infinite for γ = 1.
    pub fn conjugate(&self) -> f64 {
        if self.gamma > 1.0 {
            self.gamma / (self.gamma - 1.0)
        } else {
            f64::INFINITY
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64], p: &[f64], q: &[f64]) -> f64 {
        (self.eval)(x, y, p, q)
    }
    #[inline]
    pub fn grad_p(&self, x: &[f64], y: &[f64], p: &[f64], q: &[f64], out: &mut [f64]) {
        (self.grad_p)(x, y, p, q, out)
    }
    #[inline]
    pub fn grad_q(&self, x: &[f64], y: &[f64], p: &[f64], q: &[f64], out: &mut [f64]) {
        (self.grad_q)(x, y, p, q, out)
    }
    #[inline]
    pub fn grad_y(&self, x: &[f64], y: &[f64], p: &[f64], q: &[f64], out: &mut [f64]) {
        (self.grad_y)(x, y, p, q, out)
    }

    /// Upper bounds on `|∂_p H|` and `|∂_q H|` over the box `[p_lo, p_hi] x [q_lo, q_hi]`.
    ///
    /// Without a declared cap the derivatives are sampled at the box corners, which
    /// is exact for Hamiltonians whose partial derivatives are monotone along
    /// each coordinate (all separable convex catalog models).
    #[allow(clippy::too_many_arguments)]
    pub fn dissipation_bound(
        &self,
        x: &[f64],
        y: &[f64],
        p_lo: &[f64],
        p_hi: &[f64],
        q_lo: &[f64],
        q_hi: &[f64],
        out_p: &mut [f64],
        out_q: &mut [f64],
    ) {
        if let Some(cap) = &self.speed_cap {
            out_p.copy_from_slice(&cap.p[..out_p.len()]);
            out_q.copy_from_slice(&cap.q[..out_q.len()]);
            return;
        }
        let d1 = p_lo.len();
        let d = d1 + q_lo.len();
        out_p.fill(0.0);
        out_q.fill(0.0);
        let mut p = [0.0; MAX_DIMS];
        let mut q = [0.0; MAX_DIMS];
        let mut gp = [0.0; MAX_DIMS];
        let mut gq = [0.0; MAX_DIMS];
        for corner in 0..(1usize << d) {
            for k in 0..d {
                let hi = (corner >> k) & 1 == 1;
                if k < d1 {
                    p[k] = if hi { p_hi[k] } else { p_lo[k] };
                } else {
                    q[k - d1] = if hi { q_hi[k - d1] } else { q_lo[k - d1] };
                }
            }
            let pp = &p[..d1];
            let qq = &q[..d - d1];
            self.grad_p(x, y, pp, qq, &mut gp[..d1]);
            self.grad_q(x, y, pp, qq, &mut gq[..d - d1]);
            for k in 0..d1 {
                out_p[k] = out_p[k].max(gp[k].abs());
            }
            for k in 0..d - d1 {
                out_q[k] = out_q[k].max(gq[k].abs());
            }
        }
    }
}

/// `H = slow(x, p) + |q|^2 / 2`.
pub fn make_quadratic(slow: SlowPart) -> HamiltonianModel {
    let mut m = make_gamma_power(slow, 2.0).expect("gamma 2 is valid");
    m.name = "quadratic".into();
    m
}

/// `H = slow(x, p) + |q|^γ / γ` with fast scaling κ = 1/γ, so that the fast term
/// reads `|∂_y u|^γ / (γ ε)`.
pub fn make_gamma_power(slow: SlowPart, gamma: f64) -> Result<HamiltonianModel> {
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must exceed 1, got {gamma}")));
    }
    let s1 = slow.clone();
    let s2 = slow.clone();
    let eval: ScalarFn = Arc::new(move |x, _y, p, q| s1.value(x, p) + norm(q).powf(gamma) / gamma);
    let grad_p: VectorFn = Arc::new(move |x, _y, p, _q, out| s2.grad_p(x, p, out));
    let grad_q: VectorFn = Arc::new(move |_x, _y, _p, q, out| {
        let n = norm(q);
        let s = if n > 0.0 { n.powf(gamma - 2.0) } else { 0.0 };
        for (o, qi) in out.iter_mut().zip(q) {
            *o = s * qi;
        }
    });
    let grad_y: VectorFn = Arc::new(|_, _, _, _, out| out.fill(0.0));
    let slow_nonneg = matches!(slow.name.as_str(), "kinetic" | "zero") || slow.name.starts_with("modulated_kinetic");
    HamiltonianModel::new(
        format!("gamma_power({gamma})"),
        gamma,
        gamma_power_c_h(gamma),
        ModelFlags {
            nonneg: slow_nonneg,
            convex_p: slow_nonneg,
            convex_q: true,
        },
        1.0 / gamma,
        eval,
        grad_p,
        grad_q,
        grad_y,
    )
}

/// A constant that makes the structural inequalities hold for the pure power
/// model with a kinetic slow part.
fn gamma_power_c_h(gamma: f64) -> f64 {
    let c: f64 = 2.0;
    c.max(gamma)
}

/// `H = b(x)|p|^2/2 + a(y)|q|^2/2` with `b = 1 + 0.25 sin x`, `a = 1 + 0.5 cos y`,
/// fast scaling κ = 1. Satisfies the structural inequalities with `C_H = 4`.
pub fn fully_nonlinear_demo() -> HamiltonianModel {
    let a = |y: &[f64]| 1.0 + 0.5 * y[0].cos();
    let b = |x: &[f64]| 1.0 + 0.25 * x[0].sin();
    let eval: ScalarFn = Arc::new(move |x, y, p, q| 0.5 * b(x) * dot(p, p) + 0.5 * a(y) * dot(q, q));
    let grad_p: VectorFn = Arc::new(move |x, _y, p, _q, out| {
        let bx = b(x);
        for (o, pi) in out.iter_mut().zip(p) {
            *o = bx * pi;
        }
    });
    let grad_q: VectorFn = Arc::new(move |_x, y, _p, q, out| {
        let ay = a(y);
        for (o, qi) in out.iter_mut().zip(q) {
            *o = ay * qi;
        }
    });
    let grad_y: VectorFn = Arc::new(|_x, y, _p, q, out| {
        out.fill(0.0);
        out[0] = -0.25 * y[0].sin() * dot(q, q);
    });
    HamiltonianModel::new(
        "fully_nonlinear_demo",
        2.0,
        4.0,
        ModelFlags {
            nonneg: true,
            convex_p: true,
            convex_q: true,
        },
        1.0,
        eval,
        grad_p,
        grad_q,
        grad_y,
    )
    .expect("demo parameters are valid")
}

/// Slow part of [`fully_nonlinear_demo`], i.e. its effective Hamiltonian.
pub fn fully_nonlinear_demo_slow() -> SlowPart {
    SlowPart::modulated_kinetic(0.25)
}

/// `H = slow(x, p) + |q|^2/2 + V(y)`, the mechanical family with a fast potential.
pub fn make_mechanical(slow: SlowPart, potential: impl Fn(&[f64]) -> f64 + Send + Sync + Clone + 'static) -> HamiltonianModel {
    let s1 = slow.clone();
    let v1 = potential.clone();
    let eval: ScalarFn = Arc::new(move |x, y, p, q| s1.value(x, p) + 0.5 * dot(q, q) + v1(y));
    let grad_p: VectorFn = Arc::new(move |x, _y, p, _q, out| slow.grad_p(x, p, out));
    let grad_q: VectorFn = Arc::new(|_x, _y, _p, q, out| out.copy_from_slice(q));
    let grad_y: VectorFn = Arc::new(move |_x, y, _p, _q, out| {
        let mut yy = [0.0; MAX_DIMS];
        let n = y.len();
        yy[..n].copy_from_slice(y);
        for k in 0..n {
            let h = 1e-6 * (1.0 + y[k].abs());
            yy[k] = y[k] + h;
            let fp = potential(&yy[..n]);
            yy[k] = y[k] - h;
            let fm = potential(&yy[..n]);
            yy[k] = y[k];
            out[k] = (fp - fm) / (2.0 * h);
        }
    });
    HamiltonianModel::new(
        "mechanical",
        2.0,
        2.0,
        ModelFlags {
            nonneg: false,
            convex_p: true,
            convex_q: true,
        },
        0.5,
        eval,
        grad_p,
        grad_q,
        grad_y,
    )
    .expect("mechanical parameters are valid")
}

/// Adds a constant to a model.
pub fn shifted(m: &HamiltonianModel, c: f64) -> HamiltonianModel {
    let inner = m.eval.clone();
    let mut out = m.clone();
    out.eval = Arc::new(move |x, y, p, q| inner(x, y, p, q) + c);
    out.name = format!("{}+{c}", m.name);
    out.flags.nonneg = m.flags.nonneg && c >= 0.0;
    out
}

/// A finite discretization of a compact control set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    pub points: Vec<Vec<f64>>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ControlSet {
    pub fn from_points(points: Vec<Vec<f64>>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("empty control set".into()));
        }
        let m = lo.len();
        if hi.len() != m || lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(Error::InvalidArgument("control bounds malformed".into()));
        }
        for pt in &points {
            if pt.len() != m {
                return Err(Error::InvalidArgument("control point dimension mismatch".into()));
            }
            if pt.iter().zip(lo.iter().zip(&hi)).any(|(c, (a, b))| !(c >= a && c <= b)) {
                return Err(Error::InvalidArgument(format!("control {pt:?} outside its bounds")));
            }
        }
        Ok(ControlSet { points, lo, hi })
    }

    /// Tensor grid with `n` points per dimension on the box `[lo, hi]`.
    pub fn uniform(lo: &[f64], hi: &[f64], n: usize) -> Result<Self> {
        if n == 0 || lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidArgument("bad uniform control set".into()));
        }
        let m = lo.len();
        let total = n.pow(m as u32);
        let mut points = Vec::with_capacity(total);
        for mut idx in 0..total {
            let mut pt = vec![0.0; m];
            for k in (0..m).rev() {
                let i = idx % n;
                idx /= n;
                pt[k] = if n == 1 {
                    0.5 * (lo[k] + hi[k])
                } else {
                    lo[k] + (hi[k] - lo[k]) * i as f64 / (n - 1) as f64
                };
            }
            points.push(pt);
        }
        ControlSet::from_points(points, lo.to_vec(), hi.to_vec())
    }

    pub fn singleton(point: Vec<f64>) -> Self {
        ControlSet {
            lo: point.clone(),
            hi: point.clone(),
            points: vec![point],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub type DynamicsFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type RunningCostFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;

/// Data of a zero-sum game: slow dynamics `f(x, y, a, b)`, fast dynamics
/// `g(x, y, a, b)` and running cost `L(x, y, a, b)`.
#[derive(Clone)]
pub struct GameData {
    pub f: DynamicsFn,
    pub g: DynamicsFn,
    pub l: RunningCostFn,
    pub a: ControlSet,
    pub b: ControlSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Order {
    Upper,
    Lower,
}

struct Isaacs {
    data: GameData,
    order: Order,
}

impl Isaacs {
    #[inline]
    fn payoff(&self, x: &[f64], y: &[f64], p: &[f64], q: &[f64], ia: usize, ib: usize) -> f64 {
        let a = &self.data.a.points[ia];
        let b = &self.data.b.points[ib];
        let mut fv = [0.0; MAX_DIMS];
        let mut gv = [0.0; MAX_DIMS];
        (self.data.f)(x, y, a, b, &mut fv[..p.len()]);
        (self.data.g)(x, y, a, b, &mut gv[..q.len()]);
        -dot(p, &fv[..p.len()]) - dot(q, &gv[..q.len()]) - (self.data.l)(x, y, a, b)
    }

    /// Value and optimizing pair; ties go to the lowest index.
    fn solve(&self, x: &[f64], y: &[f64], p: &[f64], q: &[f64]) -> (f64, usize, usize) {
        let na = self.data.a.len();
        let nb = self.data.b.len();
        match self.order {
            Order::Upper => {
                // min over b of max over a
                let mut best = (f64::INFINITY, 0, 0);
                for ib in 0..nb {
                    let mut inner = (f64::NEG_INFINITY, 0);
                    for ia in 0..na {
                        let v = self.payoff(x, y, p, q, ia, ib);
                        if v > inner.0 {
                            inner = (v, ia);
                        }
                    }
                    if inner.0 < best.0 {
                        best = (inner.0, inner.1, ib);
                    }
                }
                best
            }
            Order::Lower => {
                // max over a of min over b
                let mut best = (f64::NEG_INFINITY, 0, 0);
                for ia in 0..na {
                    let mut inner = (f64::INFINITY, 0);
                    for ib in 0..nb {
                        let v = self.payoff(x, y, p, q, ia, ib);
                        if v < inner.0 {
                            inner = (v, ib);
                        }
                    }
                    if inner.0 > best.0 {
                        best = (inner.0, ia, inner.1);
                    }
                }
                best
            }
        }
    }
}

fn isaacs(data: GameData, order: Order, slow_dim: usize, fast_dim: usize) -> Result<HamiltonianModel> {
    if data.a.is_empty() || data.b.is_empty() {
        return Err(Error::InvalidArgument("empty control set".into()));
    }
    // Speed caps: sup |f| and sup |g| over controls at a handful of states would
    // depend on (x, y); games shipped here have state-independent dynamics, so
    // the cap is taken at the origin.
    let zero_x = vec![0.0; slow_dim];
    let zero_y = vec![0.0; fast_dim];
    let mut cap = SpeedCap {
        p: vec![0.0; slow_dim],
        q: vec![0.0; fast_dim],
    };
    let mut fv = vec![0.0; slow_dim];
    let mut gv = vec![0.0; fast_dim];
    for a in &data.a.points {
        for b in &data.b.points {
            (data.f)(&zero_x, &zero_y, a, b, &mut fv);
            (data.g)(&zero_x, &zero_y, a, b, &mut gv);
            for k in 0..slow_dim {
                cap.p[k] = cap.p[k].max(fv[k].abs());
            }
            for k in 0..fast_dim {
                cap.q[k] = cap.q[k].max(gv[k].abs());
            }
        }
    }
    let game = Arc::new(Isaacs { data, order });
    let g1 = game.clone();
    let eval: ScalarFn = Arc::new(move |x, y, p, q| g1.solve(x, y, p, q).0);
    let g2 = game.clone();
    let grad_p: VectorFn = Arc::new(move |x, y, p, q, out| {
        let (_, ia, ib) = g2.solve(x, y, p, q);
        (g2.data.f)(x, y, &g2.data.a.points[ia], &g2.data.b.points[ib], out);
        out.iter_mut().for_each(|v| *v = -*v);
    });
    let g3 = game.clone();
    let grad_q: VectorFn = Arc::new(move |x, y, p, q, out| {
        let (_, ia, ib) = g3.solve(x, y, p, q);
        (g3.data.g)(x, y, &g3.data.a.points[ia], &g3.data.b.points[ib], out);
        out.iter_mut().for_each(|v| *v = -*v);
    });
    let g4 = game;
    let grad_y: VectorFn = Arc::new(move |x, y, p, q, out| {
        let (_, ia, ib) = g4.solve(x, y, p, q);
        let n = y.len();
        let mut yy = [0.0; MAX_DIMS];
        yy[..n].copy_from_slice(y);
        for k in 0..n {
            let h = 1e-6 * (1.0 + y[k].abs());
            yy[k] = y[k] + h;
            let fp = g4.payoff(x, &yy[..n], p, q, ia, ib);
            yy[k] = y[k] - h;
            let fm = g4.payoff(x, &yy[..n], p, q, ia, ib);
            yy[k] = y[k];
            out[k] = (fp - fm) / (2.0 * h);
        }
    });
    let name = match order {
        Order::Upper => "isaacs_upper",
        Order::Lower => "isaacs_lower",
    };
    Ok(HamiltonianModel::new(
        name,
        1.0,
        1.0,
        ModelFlags::default(),
        1.0,
        eval,
        grad_p,
        grad_q,
        grad_y,
    )?
    .with_dims(slow_dim, fast_dim)
    .with_speed_cap(cap))
}

/// `H = min_b max_a { -<p, f> - <q, g> - L }` over the discrete control sets.
pub fn isaacs_upper(data: GameData, slow_dim: usize, fast_dim: usize) -> Result<HamiltonianModel> {
    isaacs(data, Order::Upper, slow_dim, fast_dim)
}

/// `H = max_a min_b { -<p, f> - <q, g> - L }` over the discrete control sets.
pub fn isaacs_lower(data: GameData, slow_dim: usize, fast_dim: usize) -> Result<HamiltonianModel> {
    isaacs(data, Order::Lower, slow_dim, fast_dim)
}

/// The shipped game in one slow and one fast dimension: `f = a`, `g = b`,
/// `L = -k (a - b)^2 / 2 + c (1 - cos y)` with controls in `[-1, 1]`.
///
/// The cross term makes the min–max and max–min differ.
pub fn demo_game(n_controls: usize, a_singleton: bool) -> Result<GameData> {
    let a = if a_singleton {
        ControlSet::singleton(vec![0.0])
    } else {
        ControlSet::uniform(&[-1.0], &[1.0], n_controls)?
    };
    let b = ControlSet::uniform(&[-1.0], &[1.0], n_controls)?;
    Ok(GameData {
        f: Arc::new(|_x, _y, a, _b, out| out[0] = a[0]),
        g: Arc::new(|_x, _y, _a, b, out| out[0] = b[0]),
        l: Arc::new(|_x, y, a, b| -0.5 * (a[0] - b[0]).powi(2) + 0.5 * (1.0 - y[0].cos())),
        a,
        b,
    })
}

/// Registry of catalog models addressable by key.
pub fn catalog(key: &str) -> Result<HamiltonianModel> {
    match key {
        "quadratic" => Ok(make_quadratic(SlowPart::kinetic())),
        "gamma_power" => make_gamma_power(SlowPart::kinetic(), 3.0),
        "fully_nonlinear_demo" => Ok(fully_nonlinear_demo()),
        "isaacs_upper" => isaacs_upper(demo_game(11, false)?, 1, 1),
        "isaacs_lower" => isaacs_lower(demo_game(11, false)?, 1, 1),
        other => Err(Error::Config(format!("unknown model key '{other}'"))),
    }
}

pub const CATALOG_KEYS: [&str; 5] = [
    "quadratic",
    "gamma_power",
    "fully_nonlinear_demo",
    "isaacs_upper",
    "isaacs_lower",
];

/// One argument `(x, y, p, q)` of a Hamiltonian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// Uniform cloud in the box `[-radius, radius]` for every coordinate.
pub fn sample_cloud(seed: u64, n: usize, slow_dim: usize, fast_dim: usize, radius: f64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |k: usize| (0..k).map(|_| rng.random_range(-radius..=radius)).collect::<Vec<_>>();
    (0..n)
        .map(|_| Sample {
            x: draw(slow_dim),
            y: draw(fast_dim),
            p: draw(slow_dim),
            q: draw(fast_dim),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    /// Worst value of the quantity that must be nonnegative.
    pub worst_margin: f64,
    pub worst_sample: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub model: String,
    pub c_h: f64,
    pub samples: usize,
    /// `H >= 0`.
    pub nonneg: InequalityCheck,
    /// `C_H (1 + |p|^γ + |q|^γ) - |∂_y H| >= 0`; the worst ratio is also kept.
    pub h1: InequalityCheck,
    pub h1_worst_ratio: f64,
    /// `<∂_p H, p> + <∂_q H, q> - H - C_H^{-1}(|p|^γ + |q|^γ) + C_H >= 0`.
    pub h2: InequalityCheck,
    pub convex_p: Option<bool>,
    pub convex_q: Option<bool>,
    pub pass: bool,
}

fn worst(margins: &[f64]) -> InequalityCheck {
    let (mut w, mut at) = (f64::INFINITY, 0);
    for (i, &m) in margins.iter().enumerate() {
        if m < w {
            w = m;
            at = i;
        }
    }
    InequalityCheck {
        worst_margin: w,
        worst_sample: at,
        pass: w >= -1e-12,
    }
}

/// Evaluates the structural inequalities on every sample of the cloud.
pub fn check_assumptions(m: &HamiltonianModel, cloud: &[Sample]) -> Result<AssumptionReport> {
    if cloud.is_empty() {
        return Err(Error::InvalidArgument("empty sample cloud".into()));
    }
    let g = m.gamma;
    let c = m.c_h;
    let mut nonneg = Vec::with_capacity(cloud.len());
    let mut h1 = Vec::with_capacity(cloud.len());
    let mut h2 = Vec::with_capacity(cloud.len());
    let mut ratio: f64 = 0.0;
    let mut convex_p = true;
    let mut convex_q = true;
    for s in cloud {
        let h = m.eval(&s.x, &s.y, &s.p, &s.q);
        let mut gp = vec![0.0; s.p.len()];
        let mut gq = vec![0.0; s.q.len()];
        let mut gy = vec![0.0; s.y.len()];
        m.grad_p(&s.x, &s.y, &s.p, &s.q, &mut gp);
        m.grad_q(&s.x, &s.y, &s.p, &s.q, &mut gq);
        m.grad_y(&s.x, &s.y, &s.p, &s.q, &mut gy);
        let growth = norm(&s.p).powf(g) + norm(&s.q).powf(g);
        nonneg.push(h);
        let dy = norm(&gy);
        let rhs = c * (1.0 + growth);
        h1.push(rhs - dy);
        ratio = ratio.max(dy / rhs);
        h2.push(dot(&gp, &s.p) + dot(&gq, &s.q) - h - growth / c + c);
        if m.flags.convex_p {
            convex_p &= second_difference_nonneg(m, s, true);
        }
        if m.flags.convex_q {
            convex_q &= second_difference_nonneg(m, s, false);
        }
    }
    let nonneg = worst(&nonneg);
    let h1 = worst(&h1);
    let h2 = worst(&h2);
    let convex_p = m.flags.convex_p.then_some(convex_p);
    let convex_q = m.flags.convex_q.then_some(convex_q);
    let pass = nonneg.pass && h1.pass && h2.pass && convex_p != Some(false) && convex_q != Some(false);
    Ok(AssumptionReport {
        model: m.name.clone(),
        c_h: c,
        samples: cloud.len(),
        nonneg,
        h1,
        h1_worst_ratio: ratio,
        h2,
        convex_p,
        convex_q,
        pass,
    })
}

fn second_difference_nonneg(m: &HamiltonianModel, s: &Sample, in_p: bool) -> bool {
    let v = if in_p { &s.p } else { &s.q };
    let mut ok = true;
    for k in 0..v.len() {
        let h = 1e-3 * (1.0 + v[k].abs());
        let at = |d: f64| {
            let mut w = v.clone();
            w[k] += d;
            if in_p {
                m.eval(&s.x, &s.y, &w, &s.q)
            } else {
                m.eval(&s.x, &s.y, &s.p, &w)
            }
        };
        let d2 = at(h) - 2.0 * at(0.0) + at(-h);
        ok &= d2 >= -1e-9 * (1.0 + at(0.0).abs());
    }
    ok
}

/// Density of the slow marginal of a measure, sampled on an axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlowMarginal {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl SlowMarginal {
    /// Linear interpolation, zero outside the axis.
    pub fn value_at(&self, x: f64) -> f64 {
        match self.axis.locate(x) {
            Some((i, s)) => (1.0 - s) * self.values[i] + s * self.values[i + 1],
            None => 0.0,
        }
    }
}

pub type LagrangianFn = Arc<dyn Fn(&[f64], &[f64], Option<&SlowMarginal>) -> f64 + Send + Sync>;

/// Running cost `L0(x, v, μ)` with its uniform bound and continuity modulus.
#[derive(Clone)]
pub struct LagrangianModel {
    pub name: String,
    eval: LagrangianFn,
    pub bound: f64,
    pub modulus: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Whether the cost reads the measure at all.
    pub coupled: bool,
}

impl fmt::Debug for LagrangianModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LagrangianModel")
            .field("name", &self.name)
            .field("bound", &self.bound)
            .field("coupled", &self.coupled)
            .finish()
    }
}

impl LagrangianModel {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(&[f64], &[f64], Option<&SlowMarginal>) -> f64 + Send + Sync + 'static,
        bound: f64,
        modulus: impl Fn(f64) -> f64 + Send + Sync + 'static,
        coupled: bool,
    ) -> Self {
        LagrangianModel {
            name: name.into(),
            eval: Arc::new(eval),
            bound,
            modulus: Arc::new(modulus),
            coupled,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], v: &[f64], mu: Option<&SlowMarginal>) -> f64 {
        (self.eval)(x, v, mu)
    }

    /// Constant cost `c`.
    pub fn constant(c: f64) -> Self {
        LagrangianModel::new(format!("constant({c})"), move |_, _, _| c, c.abs(), |_| 0.0, false)
    }

    /// `min(|v|^2 / 2, cap)`.
    pub fn clipped_kinetic(cap: f64) -> Self {
        LagrangianModel::new(
            format!("clipped_kinetic({cap})"),
            move |_, v, _| (0.5 * dot(v, v)).min(cap),
            cap,
            |_| 0.0,
            false,
        )
    }

    /// `min(|v|^2/2, 2) + 0.25 (1 - cos x) + coupling * m(x)` where `m` is the
    /// mollified slow density supplied by the caller.
    pub fn weak_coupling(coupling: f64, density_cap: f64) -> Self {
        LagrangianModel::new(
            format!("weak_coupling({coupling})"),
            move |x, v, mu| {
                let base = (0.5 * dot(v, v)).min(2.0) + 0.25 * (1.0 - x[0].cos());
                match mu {
                    Some(m) => base + coupling * m.value_at(x[0]).min(density_cap),
                    None => base,
                }
            },
            2.5 + coupling * density_cap,
            move |w| coupling * w,
            coupling != 0.0,
        )
    }

    /// Largest `|L0|` over sampled `(x, v)` pairs, compared against the declared bound.
    pub fn sampled_sup(&self, xs: &[f64], vs: &[f64], mu: Option<&SlowMarginal>) -> f64 {
        let mut m: f64 = 0.0;
        for &x in xs {
            for &v in vs {
                m = m.max(self.eval(&[x], &[v], mu).abs());
            }
        }
        m
    }
}

/// `H0(x, p, μ) = max_v <p, v> - L0(x, v, μ)` over a finite velocity set, with
/// the maximizing velocity (lowest index on ties).
pub fn legendre_h0(l: &LagrangianModel, v_set: &ControlSet, x: &[f64], p: &[f64], mu: Option<&SlowMarginal>) -> Result<(f64, Vec<f64>)> {
    if v_set.is_empty() {
        return Err(Error::InvalidArgument("empty velocity set".into()));
    }
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (i, v) in v_set.points.iter().enumerate() {
        let val = dot(p, v) - l.eval(x, v, mu);
        if val > best.0 {
            best = (val, i);
        }
    }
    Ok((best.0, v_set.points[best.1].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(m: &HamiltonianModel, seed: u64) {
        let cloud = sample_cloud(seed, 1000, 1, 1, 3.0);
        for s in &cloud {
            let mut gp = [0.0];
            let mut gq = [0.0];
            let mut gy = [0.0];
            m.grad_p(&s.x, &s.y, &s.p, &s.q, &mut gp);
            m.grad_q(&s.x, &s.y, &s.p, &s.q, &mut gq);
            m.grad_y(&s.x, &s.y, &s.p, &s.q, &mut gy);
            let h = |v: f64| 1e-4 * (1.0 + v.abs());
            let hp = h(s.p[0]);
            let fd_p = (m.eval(&s.x, &s.y, &[s.p[0] + hp], &s.q) - m.eval(&s.x, &s.y, &[s.p[0] - hp], &s.q)) / (2.0 * hp);
            let hq = h(s.q[0]);
            let fd_q = (m.eval(&s.x, &s.y, &s.p, &[s.q[0] + hq]) - m.eval(&s.x, &s.y, &s.p, &[s.q[0] - hq])) / (2.0 * hq);
            let hy = h(s.y[0]);
            let fd_y = (m.eval(&s.x, &[s.y[0] + hy], &s.p, &s.q) - m.eval(&s.x, &[s.y[0] - hy], &s.p, &s.q)) / (2.0 * hy);
            for (a, f) in [(gp[0], fd_p), (gq[0], fd_q), (gy[0], fd_y)] {
                let scale = 1.0 + a.abs();
                assert!((a - f).abs() / scale < 1e-5, "{}: analytic {a} fd {f} at {s:?}", m.name);
            }
        }
    }

    #[test]
    fn analytic_gradients_match_differences() {
        fd_check(&make_quadratic(SlowPart::kinetic()), 1);
        fd_check(&make_gamma_power(SlowPart::kinetic(), 3.0).unwrap(), 2);
        fd_check(&make_gamma_power(SlowPart::modulated_kinetic(0.3), 1.5).unwrap(), 3);
        fd_check(&fully_nonlinear_demo(), 4);
        fd_check(&make_mechanical(SlowPart::kinetic(), |y| -y[0].cos()), 5);
    }

    #[test]
    fn quadratic_values() {
        let m = make_quadratic(SlowPart::kinetic());
        assert_eq!(m.eval(&[0.0], &[0.0], &[2.0], &[0.0]), 2.0);
        assert_eq!(m.eval(&[0.0], &[0.0], &[0.0], &[0.0]), 0.0);
        assert_eq!(m.eval(&[0.4], &[1.0], &[1.0], &[3.0]), 0.5 + 4.5);
        assert_eq!(m.kappa, 0.5);
    }

    #[test]
    fn gamma_power_values() {
        let g2 = make_gamma_power(SlowPart::zero(), 2.0).unwrap();
        assert_eq!(g2.eval(&[0.0], &[0.0], &[0.0], &[1.0]), 0.5);
        let g3 = make_gamma_power(SlowPart::zero(), 3.0).unwrap();
        assert!((g3.eval(&[0.0], &[0.0], &[0.0], &[1.0]) - 1.0 / 3.0).abs() < 1e-15);
        let g15 = make_gamma_power(SlowPart::zero(), 1.5).unwrap();
        assert!((g15.conjugate() - 3.0).abs() < 1e-12);
        assert!((1.0 / 1.5 + 1.0 / g15.conjugate() - 1.0).abs() < 1e-15);
        assert!(make_gamma_power(SlowPart::zero(), 1.0).is_err());
    }

    #[test]
    fn isaacs_singleton_coincides() {
        let up = isaacs_upper(demo_game(11, true).unwrap(), 1, 1).unwrap();
        let lo = isaacs_lower(demo_game(11, true).unwrap(), 1, 1).unwrap();
        for s in sample_cloud(7, 200, 1, 1, 2.0) {
            assert_eq!(up.eval(&s.x, &s.y, &s.p, &s.q), lo.eval(&s.x, &s.y, &s.p, &s.q));
        }
    }

    #[test]
    fn isaacs_matches_scan_and_orders() {
        let data = demo_game(9, false).unwrap();
        let up = isaacs_upper(data.clone(), 1, 1).unwrap();
        let lo = isaacs_lower(data.clone(), 1, 1).unwrap();
        for s in sample_cloud(11, 200, 1, 1, 2.0) {
            // brute force over the control product grid
            let pay = |a: f64, b: f64| -s.p[0] * a - s.q[0] * b - (data.l)(&s.x, &s.y, &[a], &[b]);
            let pts: Vec<f64> = data.a.points.iter().map(|v| v[0]).collect();
            let minmax = pts
                .iter()
                .map(|&b| pts.iter().map(|&a| pay(a, b)).fold(f64::NEG_INFINITY, f64::max))
                .fold(f64::INFINITY, f64::min);
            let maxmin = pts
                .iter()
                .map(|&a| pts.iter().map(|&b| pay(a, b)).fold(f64::INFINITY, f64::min))
                .fold(f64::NEG_INFINITY, f64::max);
            let u = up.eval(&s.x, &s.y, &s.p, &s.q);
            let l = lo.eval(&s.x, &s.y, &s.p, &s.q);
            assert_eq!(u, minmax);
            assert_eq!(l, maxmin);
            assert!(u >= l);
        }
        // p = q = 0
        let z = up.eval(&[0.3], &[0.0], &[0.0], &[0.0]);
        assert!((z - 0.5).abs() < 1e-12, "min_b max_a (a-b)^2/2 on [-1,1] is 1/2, got {z}");
        assert_eq!(lo.eval(&[0.3], &[0.0], &[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn legendre_examples() {
        let vs = ControlSet::uniform(&[-4.0], &[4.0], 81).unwrap();
        let (h, v) = legendre_h0(&LagrangianModel::clipped_kinetic(8.0), &vs, &[0.0], &[0.0], None).unwrap();
        assert_eq!(h, 0.0);
        assert_eq!(v, vec![0.0]);
        let (h, v) = legendre_h0(&LagrangianModel::clipped_kinetic(8.0), &vs, &[0.0], &[1.0], None).unwrap();
        assert!((h - 0.5).abs() < 1e-12);
        assert!((v[0] - 1.0).abs() < 1e-12);
        let (h, _) = legendre_h0(&LagrangianModel::constant(0.0), &vs, &[0.0], &[1.0], None).unwrap();
        assert_eq!(h, 4.0);
        let empty = ControlSet {
            points: vec![],
            lo: vec![],
            hi: vec![],
        };
        assert!(legendre_h0(&LagrangianModel::constant(0.0), &empty, &[0.0], &[1.0], None).is_err());
    }

    #[test]
    fn assumption_reports() {
        let cloud = sample_cloud(3, 1000, 1, 1, 5.0);
        let q = make_quadratic(SlowPart::kinetic()).with_c_h(2.0);
        let r = check_assumptions(&q, &cloud).unwrap();
        assert!(r.pass, "{r:?}");
        // (H2) margin for the quadratic model is |p|^2/2 + |q|^2/2 + C - (|p|^2 + |q|^2)/C
        for (i, s) in cloud.iter().enumerate().take(10) {
            let g = s.p[0].powi(2) + s.q[0].powi(2);
            let margin = 0.5 * g + 2.0 - g / 2.0;
            assert!(margin >= r.h2.worst_margin - 1e-12, "sample {i}");
        }
        let fnl = check_assumptions(&fully_nonlinear_demo(), &cloud).unwrap();
        assert!(fnl.pass, "{fnl:?}");
        let neg = HamiltonianModel::new(
            "minus_one",
            2.0,
            1.0,
            ModelFlags::default(),
            1.0,
            Arc::new(|_, _, _, _| -1.0),
            Arc::new(|_, _, _, _, o| o.fill(0.0)),
            Arc::new(|_, _, _, _, o| o.fill(0.0)),
            Arc::new(|_, _, _, _, o| o.fill(0.0)),
        )
        .unwrap();
        let r = check_assumptions(&neg, &cloud).unwrap();
        assert!(!r.nonneg.pass);
        assert!(r.h1.pass);
    }

    #[test]
    fn unknown_catalog_key() {
        assert!(matches!(catalog("nope"), Err(Error::Config(_))));
        for k in CATALOG_KEYS {
            assert!(catalog(k).is_ok());
        }
    }
}
