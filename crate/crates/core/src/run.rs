//! Solver orchestration behind the command line: dispatch by method, CSV
//! and manifest emission, cross-method comparison and contour dumps.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::config::{Method, RunConfig};
use crate::contour::{build_contour, validate_contour, write_contour_csv, ContourPair, ContourSpec, Half, ContourDiagnostics};
use crate::error::{Error, Result};
use crate::fd::{fd_solve, FdGrid};
use crate::series::{series_initial_data, series_laser_flash_accelerated};
use crate::solver::{evaluate_fastpath_grid, evaluate_solution_grid, EvalDiagnostics, Scenario, StateField};
use crate::transforms::{SpaceProfile, TimeSignal};

/// Process exit status for an error: 2 config, 3 precondition, 4 numerical.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Data(_) | Error::Domain(_) => 2,
        Error::Precondition(_) => 3,
        Error::Numerical(_)
        | Error::Conditioning { .. }
        | Error::Degenerate { .. }
        | Error::SingularAtOrigin
        | Error::Unstable(_) => 4,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub scenario: String,
    pub method: String,
    pub output: Option<String>,
    pub x_count: usize,
    pub t_count: usize,
    pub t_first: f64,
    pub t_last: f64,
    pub overrides: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contour: Option<ContourSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<EvalDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series_modes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series_tail: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd_grid: Option<FdGrid>,
}

impl Manifest {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            scenario: cfg.scenario_path.display().to_string(),
            method: cfg.method.label().to_string(),
            output: cfg.output.as_ref().map(|p| p.display().to_string()),
            x_count: cfg.x_grid.len(),
            t_count: cfg.t_grid.len(),
            t_first: cfg.t_grid[0],
            t_last: *cfg.t_grid.last().unwrap(),
            overrides: cfg.overrides.clone(),
            contour: None,
            diagnostics: None,
            series_modes: None,
            series_tail: None,
            fd_grid: None,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Data(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub field: StateField,
    pub manifest: Manifest,
}

/// Automatic contour for the run's output grid with the configured overrides applied.
pub fn contour_spec(cfg: &RunConfig) -> Result<ContourSpec> {
    let xs = &cfg.x_grid;
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let t_max = cfg.t_grid.iter().cloned().fold(0.0, f64::max);
    let mut spec = cfg.scenario.auto_contour(lo.max(0.0), hi.min(cfg.scenario.params.l), t_max);
    let o = &cfg.contour;
    if let Some(k) = o.k_max {
        spec.k_max = k;
    }
    if let Some(n) = o.n_nodes {
        spec.n_nodes = n;
    }
    if let Some(r) = o.r0 {
        spec.origin_radius = r;
    }
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(spec)
}

fn without_flux(scn: &Scenario) -> Scenario {
    Scenario { g: TimeSignal::Zero, ..scn.clone() }
}

fn series_field(cfg: &RunConfig) -> Result<(StateField, f64)> {
    let scn = &cfg.scenario;
    let n = cfg.series_modes;
    let mut field = StateField::zeros(cfg.x_grid.clone(), cfg.t_grid.clone());
    let mut tail = 0.0_f64;
    let flux = if scn.g.is_zero() { None } else { Some(Scenario { phi: SpaceProfile::Zero, psi: SpaceProfile::Zero, ..scn.clone() }) };
    let init = if scn.has_initial_data() { Some(without_flux(scn)) } else { None };
    for (i, &x) in cfg.x_grid.iter().enumerate() {
        for (j, &t) in cfg.t_grid.iter().enumerate() {
            let (mut e, mut q) = (0.0, 0.0);
            if let Some(s) = &flux {
                let v = series_laser_flash_accelerated(s, x, t, n)?;
                e += v.e;
                q += v.q;
                tail = tail.max(v.tail);
            }
            if let Some(s) = &init {
                let v = series_initial_data(s, x, t, n)?;
                e += v.e;
                q += v.q;
                tail = tail.max(v.tail);
            }
            if flux.is_none() && init.is_none() {
                // Validates the insulated preconditions for the zero scenario.
                series_initial_data(scn, x, t, 1)?;
            }
            field.e[i][j] = e;
            field.q[i][j] = q;
        }
    }
    Ok((field, tail))
}

pub fn run_scenario(cfg: &RunConfig) -> Result<RunOutput> {
    let mut manifest = Manifest::new("solve", cfg);
    let scn = &cfg.scenario;
    let field = match cfg.method {
        Method::Utm | Method::Fastpath => {
            if cfg.method == Method::Fastpath && !scn.is_fastpath() {
                return Err(Error::Precondition("fastpath needs gamma0 = 0, h = 0, f = 0 and zero initial data".into()));
            }
            let spec = contour_spec(cfg)?;
            let pair = ContourPair::build(&scn.params, &spec)?;
            let (field, d) = if cfg.method == Method::Fastpath {
                evaluate_fastpath_grid(scn, &pair, &cfg.x_grid, &cfg.t_grid)?
            } else {
                evaluate_solution_grid(scn, &pair, &cfg.x_grid, &cfg.t_grid)?
            };
            manifest.contour = Some(spec);
            manifest.diagnostics = Some(d);
            field
        }
        Method::Series => {
            let (field, tail) = series_field(cfg)?;
            manifest.series_modes = Some(cfg.series_modes);
            manifest.series_tail = Some(tail);
            field
        }
        Method::Fd => {
            let t_max = cfg.t_grid.iter().cloned().fold(0.0, f64::max);
            let t_end = if t_max > 0.0 { t_max } else { scn.params.tau };
            let grid = match cfg.fd_nt {
                Some(nt) => FdGrid::with_steps(&scn.params, cfg.fd_nx, nt, t_end)?,
                None => FdGrid::new(&scn.params, cfg.fd_nx, t_end)?,
            };
            let run = fd_solve(scn, &grid, &cfg.x_grid, &cfg.t_grid)?;
            manifest.fd_grid = Some(run.grid);
            run.field
        }
    };
    field.validate()?;
    Ok(RunOutput { field, manifest })
}

/// CSV with header `x,t,e,q`, 17 significant digits, x-major row order.
pub fn write_field_csv<W: Write>(out: W, field: &StateField) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(["x", "t", "e", "q"]).map_err(io)?;
    for (i, &x) in field.x_grid.iter().enumerate() {
        for (j, &t) in field.t_grid.iter().enumerate() {
            w.write_record([x, t, field.e[i][j], field.q[i][j]].map(|v| format!("{:.16e}", v + 0.0)))
                .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldDiff {
    pub max_abs: f64,
    /// max_abs over the largest |value| of the second run.
    pub rel_linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub a: Manifest,
    pub b: Manifest,
    pub e: FieldDiff,
    pub q: FieldDiff,
}

impl CompareReport {
    pub fn summary(&self) -> String {
        format!(
            "{} ({}) vs {} ({}) on {}x{} points\ne: max_abs {:.6e} rel_linf {:.6e}\nq: max_abs {:.6e} rel_linf {:.6e}\n",
            self.a.scenario,
            self.a.method,
            self.b.scenario,
            self.b.method,
            self.a.x_count,
            self.a.t_count,
            self.e.max_abs,
            self.e.rel_linf,
            self.q.max_abs,
            self.q.rel_linf
        )
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Data(e.to_string()))
    }
}

pub fn compare_fields(a: &StateField, b: &StateField) -> Result<(FieldDiff, FieldDiff)> {
    if a.x_grid != b.x_grid || a.t_grid != b.t_grid {
        return Err(Error::Config("the two runs use different output grids".into()));
    }
    let (de, dq) = a.max_abs_diff(b)?;
    let peak = |v: &Vec<Vec<f64>>| v.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs()));
    let rel = |d: f64, p: f64| if p > 0.0 { d / p } else { d };
    Ok((
        FieldDiff { max_abs: de, rel_linf: rel(de, peak(&b.e)) },
        FieldDiff { max_abs: dq, rel_linf: rel(dq, peak(&b.q)) },
    ))
}

pub fn compare(cfg_a: &RunConfig, cfg_b: &RunConfig) -> Result<CompareReport> {
    if cfg_a.x_grid != cfg_b.x_grid || cfg_a.t_grid != cfg_b.t_grid {
        return Err(Error::Config("the two configs use different output grids".into()));
    }
    let a = run_scenario(cfg_a)?;
    let b = run_scenario(cfg_b)?;
    let (e, q) = compare_fields(&a.field, &b.field)?;
    Ok(CompareReport { a: a.manifest, b: b.manifest, e, q })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourDump {
    pub spec: ContourSpec,
    pub upper: ContourDiagnostics,
    pub lower: ContourDiagnostics,
}

/// Both half-paths as CSV (upper first), with level-set diagnostics.
pub fn dump_contour<W: Write>(cfg: &RunConfig, out: W) -> Result<ContourDump> {
    let p = &cfg.scenario.params;
    let spec = contour_spec(cfg)?;
    let upper = build_contour(p, &spec, Half::Upper)?;
    let lower = build_contour(p, &spec, Half::Lower)?;
    let nodes: Vec<_> = upper.iter().chain(&lower).cloned().collect();
    write_contour_csv(out, &nodes)?;
    Ok(ContourDump { spec, upper: validate_contour(p, &upper), lower: validate_contour(p, &lower) })
}
