//! Shipped ε-sweep scenarios.
//!
//! Every scenario uses a slow datum `0.1 (1 - cos x)` on `[-π, π]` plus a fast
//! profile. Scenarios that fit an inviscid rate use a bump with algebraic tails
//! so the fast infimum is approached but not attained inside the window; the
//! gradient scenario uses a well with an attained minimum.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{tabulate_hbar, CellTemplate, HbarTable, DEFAULT_DELTAS};
use crate::error::{Error, Result};
use crate::grid::{build_grid, Axis, Window};
use crate::hamiltonians::{demo_game, fully_nonlinear_demo, fully_nonlinear_demo_slow, isaacs_lower, isaacs_upper, make_gamma_power, make_quadratic, HamiltonianModel, SlowPart};
use crate::hj::{solve, CauchyProblem, Datum, SolveOptions};
use crate::rate::EpsSweep;

pub const SCENARIO_KEYS: [&str; 6] = ["homogeneous", "gamma", "fully-nonlinear", "isaacs-upper", "isaacs-lower", "gradient"];

/// `0.0625 / (0.0625 + y^2)`.
pub fn tail_bump(y: f64) -> f64 {
    0.0625 / (0.0625 + y * y)
}

/// `1 - exp(-y^2 / 0.08)`.
pub fn well(y: f64) -> f64 {
    1.0 - (-y * y / 0.08).exp()
}

pub fn slow_datum(x: f64) -> f64 {
    0.1 * (1.0 - x.cos())
}

/// Resolution and schedule knobs; `None` keeps the scenario default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioOverrides {
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub eps: Option<Vec<f64>>,
    pub times: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub sigma: Option<f64>,
    pub controls: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub key: String,
    pub sweep: EpsSweep,
    /// Band the raw slope must fall in, when the theory fixes one.
    pub band: Option<(f64, f64)>,
    /// Closed-form effective Hamiltonian, when the cell problem has a constant solution.
    pub limit: Option<SlowPart>,
}

struct Base {
    model: HamiltonianModel,
    datum: Datum,
    half: f64,
    ny: usize,
    nx: usize,
    radius: f64,
    eps: Vec<f64>,
    predicted: f64,
    band: Option<(f64, f64)>,
    limit: Option<SlowPart>,
}

const DEFAULT_EPS: [f64; 5] = [0.4, 0.2, 0.1, 0.05, 0.025];
const DEFAULT_TIMES: [f64; 3] = [0.25, 0.5, 1.0];

fn tail_datum() -> Datum {
    Arc::new(|x: &[f64], y: &[f64]| slow_datum(x[0]) + tail_bump(y[0]))
}

fn base(key: &str, controls: usize) -> Result<Base> {
    let tail = |model, predicted, band, limit| Base {
        model,
        datum: tail_datum(),
        half: 8.0,
        ny: 801,
        nx: 41,
        radius: 4.0,
        eps: DEFAULT_EPS.to_vec(),
        predicted,
        band,
        limit,
    };
    let game = |model| Base {
        model,
        datum: Arc::new(|x: &[f64], y: &[f64]| slow_datum(x[0]) + 0.5 * (1.0 - y[0].cos())),
        half: PI,
        ny: 201,
        nx: 21,
        radius: PI / 2.0,
        eps: vec![0.4, 0.2, 0.1, 0.05],
        predicted: 1.0,
        band: None,
        limit: None,
    };
    Ok(match key {
        "homogeneous" => tail(make_quadratic(SlowPart::kinetic()), 0.5, Some((0.4, 0.6)), Some(SlowPart::kinetic())),
        "gamma" => {
            let m = make_gamma_power(SlowPart::kinetic(), 3.0)?;
            let p = 1.0 / m.conjugate();
            tail(m, p, Some((p - 0.1, p + 0.1)), Some(SlowPart::kinetic()))
        }
        "fully-nonlinear" => tail(fully_nonlinear_demo(), 1.0, Some((0.85, 1.15)), Some(fully_nonlinear_demo_slow())),
        "gradient" => Base {
            model: make_quadratic(SlowPart::kinetic()),
            datum: Arc::new(|x: &[f64], y: &[f64]| slow_datum(x[0]) + well(y[0])),
            half: 14.0,
            ny: 801,
            nx: 41,
            radius: 10.5,
            eps: DEFAULT_EPS.to_vec(),
            predicted: 0.5,
            band: Some((0.4, 0.6)),
            limit: Some(SlowPart::kinetic()),
        },
        "isaacs-upper" => game(isaacs_upper(demo_game(controls, false)?, 1, 1)?),
        "isaacs-lower" => game(isaacs_lower(demo_game(controls, false)?, 1, 1)?),
        other => return Err(Error::Config(format!("unknown scenario '{other}' (known: {})", SCENARIO_KEYS.join(", ")))),
    })
}

pub fn scenario(key: &str) -> Result<Scenario> {
    scenario_with(key, &ScenarioOverrides::default())
}

pub fn scenario_with(key: &str, o: &ScenarioOverrides) -> Result<Scenario> {
    let b = base(key, o.controls.unwrap_or(11))?;
    let times = o.times.clone().unwrap_or_else(|| DEFAULT_TIMES.to_vec());
    let t_final = times.iter().copied().fold(0.0, f64::max);
    let grid = Arc::new(build_grid(
        vec![Axis::new(-PI, PI, o.nx.unwrap_or(b.nx))?],
        vec![Axis::new(-b.half, b.half, o.ny.unwrap_or(b.ny))?],
        if t_final > 0.0 { t_final } else { 1.0 },
        0.5,
    )?);
    let eps = o.eps.clone().unwrap_or(b.eps);
    let pb = CauchyProblem::new(Arc::new(b.model), eps[0], b.datum, o.sigma.unwrap_or(0.0))?;
    let window = Window::new(o.radius.unwrap_or(b.radius))?;
    let sweep = EpsSweep::new(pb, grid, eps, times, window, b.predicted)?;
    Ok(Scenario {
        key: key.into(),
        sweep,
        band: b.band,
        limit: b.limit,
    })
}

/// Default `p̄` axis of limit tables; the slow datum is 0.1-Lipschitz.
pub fn default_p_axis() -> Axis {
    Axis::new(-0.5, 0.5, 41).expect("static axis")
}

impl Scenario {
    /// `H̄` tabulated by the cell problem over the sweep's slow axis, on a
    /// 101-node copy of the fast axis.
    pub fn limit_table(&self, p_axis: Axis) -> Result<HbarTable> {
        let g = &self.sweep.grid;
        let fast = g.fast_axes()[0].clone();
        let cell_fast = Axis::new(fast.lo, fast.hi, 101)?;
        let tpl = CellTemplate::new(self.sweep.problem.model.clone(), vec![cell_fast], DEFAULT_DELTAS.to_vec())?;
        tabulate_hbar(g.slow_axes()[0].clone(), p_axis, &tpl)
    }
}

/// Upper against lower value of the demo game on the Isaacs scenario grid.
///
/// The min–max Hamiltonian yields the lower value and the max–min Hamiltonian
/// the upper value, so `margin = min (upper - lower)` should be nonnegative up
/// to discretization error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsaacsComparison {
    pub a_singleton: bool,
    pub eps: Vec<f64>,
    pub times: Vec<f64>,
    pub margin: f64,
    pub max_gap: f64,
    /// Largest grid spacing, the scale of the allowed undershoot.
    pub h: f64,
}

pub fn isaacs_comparison(o: &ScenarioOverrides, a_singleton: bool) -> Result<IsaacsComparison> {
    let base = scenario_with("isaacs-upper", o)?;
    let sw = &base.sweep;
    let controls = o.controls.unwrap_or(11);
    let upper_h = Arc::new(isaacs_upper(demo_game(controls, a_singleton)?, 1, 1)?);
    let lower_h = Arc::new(isaacs_lower(demo_game(controls, a_singleton)?, 1, 1)?);
    let opts = SolveOptions::record_only(&sw.t_list);
    let per_eps: Vec<(f64, f64)> = sw
        .eps_list
        .par_iter()
        .map(|&e| {
            let run = |m: &Arc<HamiltonianModel>| solve(&CauchyProblem::new(m.clone(), e, sw.problem.u0.clone(), sw.problem.sigma)?, &sw.grid, &opts);
            let lower_value = run(&upper_h)?;
            let upper_value = run(&lower_h)?;
            let mut margin = f64::INFINITY;
            let mut gap: f64 = 0.0;
            for &t in &sw.t_list {
                let a = upper_value.slice_at(t)?;
                let b = lower_value.slice_at(t)?;
                for (x, y) in a.values.iter().zip(&b.values) {
                    margin = margin.min(x - y);
                    gap = gap.max((x - y).abs());
                }
            }
            Ok((margin, gap))
        })
        .collect::<Result<_>>()?;
    let h = (0..sw.grid.dims()).map(|k| sw.grid.spacing(k)).fold(0.0, f64::max);
    Ok(IsaacsComparison {
        a_singleton,
        eps: sw.eps_list.clone(),
        times: sw.t_list.clone(),
        margin: per_eps.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        max_gap: per_eps.iter().map(|p| p.1).fold(0.0, f64::max),
        h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_builds() {
        for k in SCENARIO_KEYS {
            let s = scenario(k).unwrap();
            assert!(s.sweep.eps_list.len() >= 3);
            s.sweep.window.check(&s.sweep.grid).unwrap();
        }
        assert!(matches!(scenario("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_apply() {
        let o = ScenarioOverrides {
            nx: Some(11),
            ny: Some(81),
            eps: Some(vec![0.4, 0.2, 0.1]),
            times: Some(vec![0.5]),
            ..Default::default()
        };
        let s = scenario_with("homogeneous", &o).unwrap();
        assert_eq!(s.sweep.grid.shape(), &[11, 81]);
        assert_eq!(s.sweep.grid.t_final(), 0.5);
    }

    #[test]
    fn singleton_game_values_coincide() {
        let o = ScenarioOverrides {
            nx: Some(11),
            ny: Some(41),
            eps: Some(vec![0.4, 0.2, 0.1]),
            times: Some(vec![0.5]),
            ..Default::default()
        };
        let c = isaacs_comparison(&o, true).unwrap();
        assert!(c.max_gap <= 1e-10, "{c:?}");
        let c = isaacs_comparison(&o, false).unwrap();
        assert!(c.margin >= -c.h, "{c:?}");
        assert!(c.max_gap > 0.0);
    }

    #[test]
    fn gamma_band_is_conjugate() {
        let s = scenario("gamma").unwrap();
        let (lo, hi) = s.band.unwrap();
        assert!((lo - (2.0 / 3.0 - 0.1)).abs() < 1e-12 && (hi - (2.0 / 3.0 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn limit_table_matches_closed_form() {
        let o = ScenarioOverrides {
            nx: Some(9),
            ..Default::default()
        };
        let s = scenario_with("fully-nonlinear", &o).unwrap();
        let t = s.limit_table(Axis::new(-0.5, 0.5, 11).unwrap()).unwrap();
        let slow = s.limit.clone().unwrap();
        assert!(t.max_deviation(|x, p| slow.value(&[x], &[p])) < 1e-10);
    }
}
