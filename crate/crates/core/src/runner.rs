//! Experiment runner: configuration, dry-run validation, execution and
//! artifact emission for every subcommand of the `hj-lab` binary.
//!
//! A config is TOML (or JSON when the file ends in `.json`). Every field is
//! optional; unset fields fall back to the defaults of the chosen command.
//!
//! ```toml
//! command = "rate"
//! scenario = "homogeneous"
//! kind = "stability"
//! eps = [0.4, 0.2, 0.1, 0.05, 0.025]
//! times = [0.25, 0.5, 1.0]
//!
//! [grid]
//! nx = 41
//! ny = 801
//! ```

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::adjoint::{duality_terms, gamma_moment, solve_fokker_planck_dual, supnorm_certificate, DensityField};
use crate::cell::{tabulate_hbar, CellTemplate, DEFAULT_DELTAS};
use crate::error::{Error, Result};
use crate::grid::{build_grid, Axis, Grid};
use crate::hamiltonians::{catalog, check_assumptions, sample_cloud, CATALOG_KEYS};
use crate::hj::{llf_rate, solve, CauchyProblem, Datum, SolveOptions, SLICE_MEMORY_CAP};
use crate::io::{field_csv, table_csv, write_field_bin};
use crate::mfg::{mfg_rate_study, solve_mfg_acc, MfgDemo, MfgRateStudy, DEFAULT_MAX_ITERS, DEFAULT_MFG_EPS, DEFAULT_PROBES, DEFAULT_TOL, MFG_KEYS};
use crate::plot::{LogLogPlot, Series, Style};
use crate::rate::{fit_order, gradient_decay_fit, limit_gap, stability_sweep, RateReport};
use crate::scenarios::{default_p_axis, isaacs_comparison, scenario_with, ScenarioOverrides};

pub const COMMANDS: [&str; 7] = ["solve", "duality", "cell", "rate", "isaacs", "mfg", "validate"];
pub const RATE_KINDS: [&str; 3] = ["stability", "gradient", "limit"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub x_half: Option<f64>,
    pub y_half: Option<f64>,
    pub t_final: Option<f64>,
    /// Fixed time step; adaptive when unset.
    pub dt: Option<f64>,
    pub cfl: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<String>,
    pub scenario: Option<String>,
    pub model: Option<String>,
    /// Rate sweep flavour: stability, gradient or limit.
    pub kind: Option<String>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub grid: GridSpec,
    pub eps: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
    pub deltas: Option<Vec<f64>>,
    pub times: Option<Vec<f64>>,
    pub window: Option<f64>,
    pub iters: Option<usize>,
    pub tol: Option<f64>,
    pub mfg: Option<MfgDemo>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Reads TOML, or JSON for `.json` files.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            ExperimentConfig::from_json(&text)
        } else {
            ExperimentConfig::from_toml(&text)
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring the output location.
    pub fn hash(&self) -> String {
        let cfg = ExperimentConfig { out: None, ..self.clone() };
        hex(&Sha256::digest(serde_json::to_vec(&cfg).expect("config serializes")))
    }

    fn overrides(&self) -> ScenarioOverrides {
        ScenarioOverrides {
            nx: self.grid.nx,
            ny: self.grid.ny,
            eps: self.eps.clone(),
            times: self.times.clone(),
            radius: self.window,
            sigma: self.sigma.as_ref().and_then(|s| s.first().copied()),
            controls: None,
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects artifacts in one directory; all writes go through here.
pub struct Artifacts {
    pub dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        fs::write(self.path(name), bytes)?;
        self.record(name);
        Ok(())
    }

    pub fn json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.write(name, s)
    }

    /// Registers a file written by another routine.
    pub fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// `manifest.json` with the config hash, code version and file checksums.
    pub fn finish(mut self, cfg: &ExperimentConfig, command: &str) -> Result<PathBuf> {
        self.files.sort();
        let mut entries = Vec::new();
        for f in &self.files {
            let bytes = fs::read(self.path(f))?;
            entries.push(json!({
                "file": f,
                "bytes": bytes.len(),
                "sha256": hex(&Sha256::digest(&bytes)),
            }));
        }
        let manifest = json!({
            "command": command,
            "config_sha256": cfg.hash(),
            "code_version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.seed,
            "files": entries,
        });
        let path = self.path("manifest.json");
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        fs::write(&path, s)?;
        Ok(path)
    }
}

/// The demo datum `(1 - cos y)/2 + 0.1 (1 - cos x)`.
pub fn demo_datum() -> Datum {
    Arc::new(|x: &[f64], y: &[f64]| 0.5 * (1.0 - y[0].cos()) + 0.1 * (1.0 - x[0].cos()))
}

fn check_list(name: &str, v: &[f64], positive: bool) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Config(format!("{name} must not be empty")));
    }
    if v.iter().any(|x| !x.is_finite() || (positive && *x <= 0.0) || *x < 0.0) {
        return Err(Error::Config(format!("{name} has invalid entries: {v:?}")));
    }
    Ok(())
}

fn model_key(cfg: &ExperimentConfig) -> Result<String> {
    let key = cfg.model.clone().unwrap_or_else(|| "quadratic".into());
    if !CATALOG_KEYS.contains(&key.as_str()) {
        return Err(Error::Config(format!("unknown model key '{key}' (known: {})", CATALOG_KEYS.join(", "))));
    }
    Ok(key)
}

/// Grid of the solve and duality commands.
fn demo_grid(cfg: &ExperimentConfig, nx: usize, ny: usize) -> Result<Grid> {
    let g = &cfg.grid;
    let xh = g.x_half.unwrap_or(PI);
    let yh = g.y_half.unwrap_or(PI);
    let t = g.t_final.unwrap_or(1.0);
    let mut grid = build_grid(
        vec![Axis::new(-xh, xh, g.nx.unwrap_or(nx))?],
        vec![Axis::new(-yh, yh, g.ny.unwrap_or(ny))?],
        t,
        g.cfl.unwrap_or(0.5),
    )?;
    if let Some(dt) = g.dt {
        grid = grid.with_time_step(dt)?;
    }
    Ok(grid)
}

fn solve_setup(cfg: &ExperimentConfig) -> Result<(CauchyProblem, Arc<Grid>, Vec<f64>)> {
    let model = Arc::new(catalog(&model_key(cfg)?)?);
    let grid = Arc::new(demo_grid(cfg, 41, 81)?);
    let eps = cfg.eps.as_ref().and_then(|e| e.first().copied()).unwrap_or(0.1);
    let sigma = cfg.sigma.as_ref().and_then(|s| s.first().copied()).unwrap_or(0.0);
    let pb = CauchyProblem::new(model, eps, demo_datum(), sigma).map_err(as_config)?;
    let times = cfg.times.clone().unwrap_or_else(|| vec![grid.t_final()]);
    if times.iter().any(|t| !(*t > 0.0 && *t <= grid.t_final())) {
        return Err(Error::Config(format!("record times must lie in (0, {}]", grid.t_final())));
    }
    Ok((pb, grid, times))
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) | Error::InvalidAxis(m) | Error::InvalidGrid(m) => Error::Config(m),
        other => other,
    }
}

/// Resolved command with validated inputs.
enum Plan {
    Solve,
    Duality,
    Cell,
    Rate { key: String, kind: String },
    Isaacs,
    Mfg { key: String, eps: Vec<f64> },
}

fn plan(command: &str, cfg: &ExperimentConfig) -> Result<Plan> {
    if let Some(s) = &cfg.sigma {
        check_list("sigma", s, false)?;
    }
    if let Some(e) = &cfg.eps {
        check_list("eps", e, true)?;
    }
    if let Some(t) = &cfg.times {
        check_list("times", t, true)?;
    }
    if let Some(d) = &cfg.deltas {
        check_list("deltas", d, true)?;
    }
    Ok(match command {
        "solve" => {
            solve_setup(cfg)?;
            Plan::Solve
        }
        "duality" => {
            let key = model_key(cfg)?;
            if key != "quadratic" {
                return Err(Error::Config("the duality study runs on the quadratic demo".into()));
            }
            Plan::Duality
        }
        "cell" => {
            model_key(cfg)?;
            Plan::Cell
        }
        "rate" => {
            let key = cfg.scenario.clone().unwrap_or_else(|| "homogeneous".into());
            scenario_with(&key, &cfg.overrides()).map_err(as_config)?;
            let kind = cfg.kind.clone().unwrap_or_else(|| "stability".into());
            if !RATE_KINDS.contains(&kind.as_str()) {
                return Err(Error::Config(format!("unknown rate kind '{kind}' (known: {})", RATE_KINDS.join(", "))));
            }
            Plan::Rate { key, kind }
        }
        "isaacs" => {
            scenario_with("isaacs-upper", &cfg.overrides()).map_err(as_config)?;
            Plan::Isaacs
        }
        "mfg" => {
            let key = cfg.scenario.clone().unwrap_or_else(|| "weak-coupling".into());
            if !MFG_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown MFG scenario '{key}' (known: {})", MFG_KEYS.join(", "))));
            }
            let eps = cfg.eps.clone().unwrap_or_else(|| DEFAULT_MFG_EPS.to_vec());
            let demo = cfg.mfg.clone().unwrap_or_default();
            demo.problem(&key, eps[0]).map_err(as_config)?;
            if eps.len() == 2 {
                return Err(Error::Config("give one eps for a single solve or at least three for a sweep".into()));
            }
            Plan::Mfg { key, eps }
        }
        other => return Err(Error::Config(format!("unknown command '{other}' (known: {})", COMMANDS.join(", ")))),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CflCheck {
    pub dt: Option<f64>,
    pub bound: f64,
    pub binding: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub command: String,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    pub cfl: Option<CflCheck>,
    pub memory_estimate_bytes: Option<u64>,
    pub suggested_stride: Option<usize>,
}

/// CFL bound at `t = 0` from the scheme dissipation at the datum.
fn initial_cfl(pb: &CauchyProblem, grid: &Arc<Grid>) -> CflCheck {
    let ham = pb.scaled(grid);
    let u0: Vec<f64> = (0..grid.len())
        .map(|i| {
            let c = grid.coords(i);
            (pb.u0)(&c[..grid.n_slow()], &c[grid.n_slow()..grid.dims()])
        })
        .collect();
    let mut rate = vec![0.0; grid.len()];
    let alpha = llf_rate(grid, &ham, pb.sigma, 0.0, &u0, &mut rate);
    let (bound, binding) = grid.cfl_bound(&alpha[..grid.dims()], pb.sigma);
    CflCheck {
        dt: grid.dt(),
        bound,
        binding: binding.to_string(),
    }
}

/// Dry run: parses every reference, pre-checks the CFL condition at the
/// initial datum and estimates stored-slice memory. Never solves.
pub fn validate(command: &str, cfg: &ExperimentConfig) -> ValidationReport {
    let mut r = ValidationReport {
        ok: true,
        command: command.to_string(),
        errors: Vec::new(),
        warnings: Vec::new(),
        cfl: None,
        memory_estimate_bytes: None,
        suggested_stride: None,
    };
    let p = match plan(command, cfg) {
        Ok(p) => p,
        Err(e) => {
            r.ok = false;
            r.errors.push(e.to_string());
            return r;
        }
    };
    let setup: Option<(CauchyProblem, Arc<Grid>)> = match &p {
        Plan::Solve => solve_setup(cfg).ok().map(|(pb, g, _)| (pb, g)),
        Plan::Rate { key, .. } => scenario_with(key, &cfg.overrides()).ok().map(|s| {
            let e = *s.sweep.eps_list.last().unwrap();
            (s.sweep.problem.with_eps(e), s.sweep.grid)
        }),
        Plan::Isaacs => scenario_with("isaacs-upper", &cfg.overrides()).ok().map(|s| {
            let e = *s.sweep.eps_list.last().unwrap();
            (s.sweep.problem.with_eps(e), s.sweep.grid)
        }),
        _ => None,
    };
    if let Some((pb, grid)) = setup {
        let mut check = initial_cfl(&pb, &grid);
        let grid = match cfg.grid.dt {
            Some(dt) if !matches!(p, Plan::Solve) => {
                check.dt = Some(dt);
                grid.as_ref().clone().with_time_step(dt).map(Arc::new).unwrap_or(grid)
            }
            _ => grid,
        };
        if let Some(dt) = check.dt {
            if dt > check.bound * (1.0 + 1e-12) {
                r.ok = false;
                r.errors.push(
                    Error::Cfl {
                        binding: check.binding.clone(),
                        dt,
                        bound: check.bound,
                    }
                    .to_string(),
                );
            }
        }
        let step = check.dt.unwrap_or(check.bound).max(1e-300);
        let steps = (grid.t_final() / step).ceil().max(1.0);
        let bytes = steps * grid.len() as f64 * 8.0;
        r.memory_estimate_bytes = Some(bytes.min(u64::MAX as f64) as u64);
        if bytes > SLICE_MEMORY_CAP as f64 {
            let stride = (bytes / SLICE_MEMORY_CAP as f64).ceil() as usize;
            r.suggested_stride = Some(stride);
            r.warnings.push(format!(
                "storing every step needs about {:.0} MiB, above the {} MiB cap; use slice stride {stride} or rely on automatic thinning",
                bytes / (1 << 20) as f64,
                SLICE_MEMORY_CAP >> 20
            ));
        }
        r.cfl = Some(check);
    }
    r
}

/// Executes `command` and writes its artifacts under `out`. Inputs are fully
/// validated before the directory is created.
pub fn run(command: &str, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    if command == "validate" {
        let target = cfg.command.clone().unwrap_or_else(|| "solve".into());
        let report = validate(&target, cfg);
        let mut a = Artifacts::create(out)?;
        a.json("validation.json", &report)?;
        let files = a.files().to_vec();
        a.finish(cfg, command)?;
        if !report.ok {
            return Err(Error::Config(report.errors.join("; ")));
        }
        return Ok(files);
    }
    let p = plan(command, cfg)?;
    let mut a = Artifacts::create(out)?;
    let result = match &p {
        Plan::Solve => run_solve(cfg, &mut a),
        Plan::Duality => run_duality(cfg, &mut a),
        Plan::Cell => run_cell(cfg, &mut a),
        Plan::Rate { key, kind } => run_rate(cfg, key, kind, &mut a),
        Plan::Isaacs => run_isaacs(cfg, &mut a),
        Plan::Mfg { key, eps } => run_mfg(cfg, key, eps, &mut a),
    };
    let files = a.files().to_vec();
    a.finish(cfg, command)?;
    result.map(|_| files)
}

fn run_solve(cfg: &ExperimentConfig, a: &mut Artifacts) -> Result<()> {
    let (pb, grid, times) = solve_setup(cfg)?;
    let u = solve(&pb, &grid, &SolveOptions::record_only(&times))?;
    let mut slices = Vec::new();
    for &t in &times {
        let f = u.slice_at(t)?;
        let stem = format!("u_t{t}");
        a.write(&format!("{stem}.csv"), field_csv(f))?;
        write_field_bin(&a.path(&format!("{stem}.bin")), f)?;
        a.record(&format!("{stem}.bin"));
        slices.push(json!({"t": f.t, "max": f.max(), "min": f.min()}));
    }
    let d = &u.diagnostics;
    a.json(
        "summary.json",
        &json!({
            "model": pb.model.name,
            "eps": pb.eps,
            "sigma": pb.sigma,
            "shape": grid.shape(),
            "t_final": grid.t_final(),
            "steps": d.steps,
            "dt_min": d.dt_min,
            "dt_max": d.dt_max,
            "advective_bound_steps": d.advective_bound_steps,
            "viscous_bound_steps": d.viscous_bound_steps,
            "slices": slices,
            "supnorm_certificate": supnorm_certificate(&u),
        }),
    )
}

/// Residual refinement, certificate and σ-uniformity of the γ-moment on the quadratic demo.
fn run_duality(cfg: &ExperimentConfig, a: &mut Artifacts) -> Result<()> {
    let model = Arc::new(catalog("quadratic")?);
    let eps = cfg.eps.as_ref().and_then(|e| e.first().copied()).unwrap_or(0.2);
    let sigmas = cfg.sigma.clone().unwrap_or_else(|| vec![1e-2, 5e-3, 2.5e-3]);
    let n0 = cfg.grid.nx.unwrap_or(81);
    let mut levels = Vec::new();
    let mut rows = Vec::new();
    for k in 0..3 {
        let n = (n0 - 1) * (1 << k) + 1;
        let grid = Arc::new(build_grid(vec![Axis::new(-PI, PI, n)?], vec![Axis::new(-PI, PI, n)?], 1.0, 0.5)?);
        let pb = CauchyProblem::new(model.clone(), eps, demo_datum(), sigmas[0])?;
        let u = solve(&pb, &grid, &SolveOptions::default())?;
        let rho = DensityField::gaussian_bump(grid.clone(), 1.0, &[0.5, 0.5], 0.4)?;
        let d = solve_fokker_planck_dual(&u, &rho, sigmas[0], 0.0)?;
        let t = duality_terms(&u, &d, 0.0, 1.0)?;
        let h = grid.spacing(0);
        rows.push(vec![n as f64, h, t.lhs, t.rhs, t.residual, d.mass_drift()]);
        levels.push(json!({"n": n, "h": h, "terms": t, "mass_drift": d.mass_drift(), "certificate": supnorm_certificate(&u)}));
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r[1], r[4])).collect();
    let order = fit_order(&pts).ok();
    let grid = Arc::new(build_grid(vec![Axis::new(-PI, PI, 41)?], vec![Axis::new(-PI, PI, 81)?], 1.0, 0.5)?);
    let mut moments = Vec::new();
    for &s in &sigmas {
        let pb = CauchyProblem::new(model.clone(), eps, demo_datum(), s)?;
        let u = solve(&pb, &grid, &SolveOptions::every(1))?;
        let rho = DensityField::gaussian_bump(grid.clone(), 1.0, &[0.5, 0.5], 0.4)?;
        let d = solve_fokker_planck_dual(&u, &rho, s, 0.0)?;
        moments.push(gamma_moment(&u, &d)?);
    }
    let spread = moments.iter().copied().fold(f64::NEG_INFINITY, f64::max) / moments.iter().copied().fold(f64::INFINITY, f64::min);
    a.write("residuals.csv", table_csv(&["n", "h", "lhs", "rhs", "residual", "mass_drift"], &rows))?;
    let mut plot = LogLogPlot::new("duality residual", "h", "residual");
    plot.push(Series::new("residual", pts.clone(), Style::Both));
    a.write("residuals.svg", plot.to_svg())?;
    a.json(
        "summary.json",
        &json!({
            "eps": eps,
            "sigmas": sigmas,
            "levels": levels,
            "residual_order": order,
            "gamma_moments": moments,
            "gamma_moment_spread": spread,
        }),
    )
}

fn run_cell(cfg: &ExperimentConfig, a: &mut Artifacts) -> Result<()> {
    let model = Arc::new(catalog(&model_key(cfg)?)?);
    let yh = cfg.grid.y_half.unwrap_or(PI);
    let xh = cfg.grid.x_half.unwrap_or(PI);
    let fast = vec![Axis::new(-yh, yh, cfg.grid.ny.unwrap_or(101))?];
    let deltas = cfg.deltas.clone().unwrap_or_else(|| DEFAULT_DELTAS.to_vec());
    let tpl = CellTemplate::new(model.clone(), fast, deltas).map_err(as_config)?;
    let x_axis = Axis::new(-xh, xh, cfg.grid.nx.unwrap_or(9))?;
    let table = tabulate_hbar(x_axis, default_p_axis(), &tpl)?;
    table.write(&a.path("hbar.bin"))?;
    a.record("hbar.bin");
    a.record("hbar.bin.json");
    let rows: Vec<Vec<f64>> = table
        .diagnostics
        .iter()
        .zip(&table.values)
        .map(|(d, v)| vec![d.x, d.p, *v, d.flat as u8 as f64, d.extrapolated_spread, d.richardson_correction, d.max_residual])
        .collect();
    a.write("hbar.csv", table_csv(&["x", "p", "hbar", "flat", "spread", "richardson", "residual"], &rows))?;
    let max_res = table.diagnostics.iter().map(|d| d.max_residual).fold(0.0, f64::max);
    a.json(
        "summary.json",
        &json!({
            "model": model.name,
            "entries": table.values.len(),
            "flagged": table.flagged(),
            "max_residual": max_res,
        }),
    )
}

fn rate_plot(title: &str, r: &RateReport) -> String {
    let mut p = LogLogPlot::new(title, "eps", "error");
    for (t, col) in r.times.iter().zip(&r.errors) {
        p.push(Series::new(format!("t={t}"), r.abscissa.iter().copied().zip(col.iter().copied()).collect(), Style::Both));
    }
    if let (Some(a0), Some(e0)) = (r.abscissa.first(), r.errors.first().and_then(|c| c.first())) {
        let lo = r.abscissa.iter().copied().fold(f64::INFINITY, f64::min);
        p.reference_slope(format!("slope {:.3}", r.predicted), r.predicted, (*a0, *e0), (lo, *a0));
    }
    p.to_svg()
}

fn mean_slope(r: &RateReport) -> Option<f64> {
    let s: Vec<f64> = r.slopes().into_iter().flatten().collect();
    if s.is_empty() {
        None
    } else {
        Some(s.iter().sum::<f64>() / s.len() as f64)
    }
}

fn run_rate(cfg: &ExperimentConfig, key: &str, kind: &str, a: &mut Artifacts) -> Result<()> {
    let sc = scenario_with(key, &cfg.overrides())?;
    let model = sc.sweep.problem.model.clone();
    let cloud = sample_cloud(cfg.seed, 1000, model.slow_dim, model.fast_dim, 3.0);
    let assumptions = check_assumptions(&model, &cloud)?;
    let (report, extra) = match kind {
        "stability" => (stability_sweep(&sc.sweep)?, Value::Null),
        "gradient" => {
            let g = gradient_decay_fit(&sc.sweep)?;
            let t = json!({"t_slopes": g.t_slopes()});
            (g.eps_report, t)
        }
        _ => {
            let table = sc.limit_table(default_p_axis())?;
            (limit_gap(&sc.sweep, &table)?, json!({"flagged_table_entries": table.flagged()}))
        }
    };
    a.write("errors.csv", report.csv())?;
    a.write("plot.svg", rate_plot(&format!("{key} {kind}"), &report))?;
    a.json(
        "report.json",
        &json!({
            "scenario": key,
            "kind": kind,
            "band": sc.band,
            "slope": mean_slope(&report),
            "slopes": report.slopes(),
            "report": report,
            "extra": extra,
            "assumptions": assumptions,
        }),
    )
}

fn run_isaacs(cfg: &ExperimentConfig, a: &mut Artifacts) -> Result<()> {
    let o = cfg.overrides();
    let mut sides = Vec::new();
    for key in ["isaacs-upper", "isaacs-lower"] {
        let sc = scenario_with(key, &o)?;
        let r = stability_sweep(&sc.sweep)?;
        a.write(&format!("{key}.csv"), r.csv())?;
        a.write(&format!("{key}.svg"), rate_plot(key, &r))?;
        sides.push(json!({"scenario": key, "slopes": r.slopes(), "finite": r.all_finite(), "report": r}));
    }
    let singleton = isaacs_comparison(&o, true)?;
    let general = isaacs_comparison(&o, false)?;
    a.json(
        "report.json",
        &json!({
            "sweeps": sides,
            "singleton_comparison": singleton,
            "general_comparison": general,
        }),
    )
}

fn run_mfg(cfg: &ExperimentConfig, key: &str, eps: &[f64], a: &mut Artifacts) -> Result<()> {
    let demo = cfg.mfg.clone().unwrap_or_default();
    let iters = cfg.iters.unwrap_or(DEFAULT_MAX_ITERS);
    let tol = cfg.tol.unwrap_or(DEFAULT_TOL);
    if eps.len() == 1 {
        let pb = demo.problem(key, eps[0])?;
        let s = solve_mfg_acc(&pb, iters, tol)?;
        a.write("diagnostics.csv", s.diagnostics_csv())?;
        let u0 = s.state.u.first();
        a.write("u_t0.csv", field_csv(u0))?;
        write_field_bin(&a.path("u_t0.bin"), u0)?;
        a.record("u_t0.bin");
        let mu_t = s.state.mu.last().expect("nonempty");
        let mu_field = crate::grid::ScalarField::new(mu_t.grid.clone(), mu_t.t, mu_t.values.clone())?;
        a.write("mu_T.csv", field_csv(&mu_field))?;
        a.json(
            "summary.json",
            &json!({
                "scenario": key,
                "eps": eps[0],
                "converged": s.converged,
                "iterations": s.iterations(),
                "last": s.diagnostics.last(),
                "mass_drift": s.state.mu.iter().map(|m| (m.mass() - 1.0).abs()).fold(0.0, f64::max),
                "clips": s.transport.clips.len(),
            }),
        )?;
        s.require_converged()?;
        return Ok(());
    }
    let pb = demo.problem(key, eps[0])?;
    let probes = cfg.times.clone().unwrap_or_else(|| DEFAULT_PROBES.to_vec());
    let mut st = MfgRateStudy::new(pb, eps.to_vec(), probes).map_err(as_config)?;
    st.max_iters = iters;
    st.tol = tol;
    if let Some(w) = cfg.window {
        st.window = crate::grid::Window::new(w).map_err(as_config)?;
    }
    let r = mfg_rate_study(&st)?;
    a.write("errors.csv", r.report.csv())?;
    let mut w1_rows = Vec::new();
    for (i, pair) in r.w1_exploratory.iter().enumerate() {
        for (t, w) in pair {
            w1_rows.push(vec![r.report.eps[i], r.report.eps[i + 1], *t, *w]);
        }
    }
    a.write("w1_exploratory.csv", table_csv(&["eps_a", "eps_b", "t", "w1_marginal_proxy"], &w1_rows))?;
    let mut plot = LogLogPlot::new(format!("MFG {key}"), "eps", "error");
    plot.push(Series::new("max over probes", r.report.abscissa.iter().copied().zip(r.max_errors.iter().copied()).collect(), Style::Both));
    if let (Some(a0), Some(e0)) = (r.report.abscissa.first(), r.max_errors.first()) {
        let lo = r.report.abscissa.iter().copied().fold(f64::INFINITY, f64::min);
        plot.reference_slope("slope 0.5", 0.5, (*a0, *e0), (lo, *a0));
    }
    a.write("plot.svg", plot.to_svg())?;
    a.json("report.json", &json!({"scenario": key, "slope": r.slope(), "rate": r}))
}
