//! Scenario files and run configuration.
//!
//! A scenario is a TOML document with sections `[params]`, `[boundary]`,
//! `[initial]`, `[source]` and `[output]`, plus optional `[contour]`,
//! `[series]` and `[fd]` tuning sections. Tabulated data is referenced by a
//! CSV path relative to the scenario file.
//!
//! ```toml
//! [params]
//! alpha = 1.0
//! tau = 0.02
//! mu2 = 0.02
//! l = 1.0
//!
//! [boundary]
//! gammal = 0.2
//! g = { kind = "laser_flash", tau_delta = 0.04 }
//!
//! [output]
//! method = "utm"
//! x = "right-boundary"
//! t_end = 1.0
//! t_step = 0.02
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gk::PhysicalParams;
use crate::series::DEFAULT_MODES;
use crate::solver::Scenario;
use crate::transforms::{Samples, SourceTerm, SpaceProfile, TimeSignal};

pub const DEFAULT_FD_CELLS: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Zero,
    Constant { value: f64 },
    LaserFlash { tau_delta: f64 },
    /// Two-column CSV (t, value).
    Csv { path: PathBuf },
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec::Zero
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Zero,
    Constant { value: f64 },
    Cosine { amplitude: f64, mode: u32 },
    /// Two-column CSV (x, value).
    Csv { path: PathBuf },
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec::Zero
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    #[default]
    Zero,
    Separable { profile: ProfileSpec, signal: SignalSpec },
    /// Long-format CSV (x, t, value) covering a full grid.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    #[serde(default)]
    pub gamma0: f64,
    #[serde(default)]
    pub gammal: f64,
    #[serde(default)]
    pub g: SignalSpec,
    #[serde(default)]
    pub h: SignalSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub phi: ProfileSpec,
    #[serde(default)]
    pub psi: ProfileSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Full contour representation.
    Utm,
    /// Single combined contour integrand; flux-driven scenarios only.
    Fastpath,
    /// Residue series; insulated scenarios only.
    Series,
    /// Staggered finite-difference reference.
    Fd,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Utm => "utm",
            Method::Fastpath => "fastpath",
            Method::Series => "series",
            Method::Fd => "fd",
        }
    }
}

/// Output abscissae: an explicit list or the right boundary x = l.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum XSpec {
    Named(String),
    List(Vec<f64>),
}

impl XSpec {
    pub fn parse_arg(s: &str) -> Result<Self> {
        if s.trim() == "right-boundary" {
            return Ok(XSpec::Named("right-boundary".into()));
        }
        let v: std::result::Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
        v.map(XSpec::List).map_err(|_| Error::Config(format!("bad x list '{s}'")))
    }

    pub fn resolve(&self, l: f64) -> Result<Vec<f64>> {
        let xs = match self {
            XSpec::Named(n) if n == "right-boundary" => vec![l],
            XSpec::Named(n) => return Err(Error::Config(format!("unknown x grid '{n}'"))),
            XSpec::List(v) => v.clone(),
        };
        if xs.is_empty() {
            return Err(Error::Config("output x grid is empty".into()));
        }
        Ok(xs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub method: Option<Method>,
    pub x: Option<XSpec>,
    #[serde(default)]
    pub t_start: f64,
    pub t_end: Option<f64>,
    pub t_step: Option<f64>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourOverrides {
    pub k_max: Option<f64>,
    pub n_nodes: Option<usize>,
    pub r0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSection {
    pub modes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdSection {
    pub nx: Option<usize>,
    pub nt: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub params: PhysicalParams,
    #[serde(default)]
    pub boundary: BoundarySection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub source: SourceSpec,
    pub output: OutputSection,
    #[serde(default)]
    pub contour: ContourOverrides,
    #[serde(default)]
    pub series: SeriesSection,
    #[serde(default)]
    pub fd: FdSection,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Build the solver scenario, reading CSV tables relative to `base`.
    pub fn scenario(&self, base: &Path) -> Result<Scenario> {
        let b = &self.boundary;
        let scn = Scenario {
            params: self.params,
            gamma0: b.gamma0,
            gammal: b.gammal,
            g: signal(&b.g, base)?,
            h: signal(&b.h, base)?,
            phi: profile(&self.initial.phi, base)?,
            psi: profile(&self.initial.psi, base)?,
            source: match &self.source {
                SourceSpec::Zero => SourceTerm::Zero,
                SourceSpec::Separable { profile: pr, signal: sg } => {
                    SourceTerm::Separable { profile: profile(pr, base)?, signal: signal(sg, base)? }
                }
                SourceSpec::Csv { path } => SourceTerm::from_csv(&base.join(path))?,
            },
        };
        scn.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(scn)
    }
}

fn signal(s: &SignalSpec, base: &Path) -> Result<TimeSignal> {
    Ok(match s {
        SignalSpec::Zero => TimeSignal::Zero,
        SignalSpec::Constant { value } => TimeSignal::Constant(*value),
        SignalSpec::LaserFlash { tau_delta } => TimeSignal::LaserFlash { tau_delta: *tau_delta },
        SignalSpec::Csv { path } => TimeSignal::Tabulated(Samples::from_csv(&base.join(path))?),
    })
}

fn profile(s: &ProfileSpec, base: &Path) -> Result<SpaceProfile> {
    Ok(match s {
        ProfileSpec::Zero => SpaceProfile::Zero,
        ProfileSpec::Constant { value } => SpaceProfile::Constant(*value),
        ProfileSpec::Cosine { amplitude, mode } => SpaceProfile::Cosine { amplitude: *amplitude, mode: *mode },
        ProfileSpec::Csv { path } => SpaceProfile::Tabulated(Samples::from_csv(&base.join(path))?),
    })
}

/// Command-line values that take precedence over the scenario file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Overrides {
    pub method: Option<Method>,
    pub x: Option<XSpec>,
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
    pub t_step: Option<f64>,
    pub k_max: Option<f64>,
    pub n_nodes: Option<usize>,
    pub r0: Option<f64>,
    pub modes: Option<usize>,
    pub nx: Option<usize>,
    pub nt: Option<usize>,
    pub output: Option<PathBuf>,
}

impl Overrides {
    /// Every override that was given, as flag name and value text.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("method", self.method.map(|v| v.label().to_string()));
        put(
            "x",
            self.x.as_ref().map(|v| match v {
                XSpec::Named(n) => n.clone(),
                XSpec::List(l) => l.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            }),
        );
        put("t-start", self.t_start.map(|v| v.to_string()));
        put("t-end", self.t_end.map(|v| v.to_string()));
        put("t-step", self.t_step.map(|v| v.to_string()));
        put("k-max", self.k_max.map(|v| v.to_string()));
        put("n-nodes", self.n_nodes.map(|v| v.to_string()));
        put("r0", self.r0.map(|v| v.to_string()));
        put("modes", self.modes.map(|v| v.to_string()));
        put("nx", self.nx.map(|v| v.to_string()));
        put("nt", self.nt.map(|v| v.to_string()));
        put("output", self.output.as_ref().map(|v| v.display().to_string()));
        m
    }
}

/// Fully resolved run: scenario, method, output grid and method tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario_path: PathBuf,
    pub scenario: Scenario,
    pub method: Method,
    pub x_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub contour: ContourOverrides,
    pub series_modes: usize,
    pub fd_nx: usize,
    pub fd_nt: Option<usize>,
    pub output: Option<PathBuf>,
    pub overrides: BTreeMap<String, String>,
}

/// t_start, t_start + dt, ..., t_end; the span must be a whole number of steps.
pub fn time_grid(t_start: f64, t_end: f64, t_step: f64) -> Result<Vec<f64>> {
    if !(t_start >= 0.0 && t_end >= t_start && t_start.is_finite() && t_end.is_finite()) {
        return Err(Error::Config(format!("bad time range [{t_start}, {t_end}]")));
    }
    if t_end == t_start {
        return Ok(vec![t_start]);
    }
    if !(t_step > 0.0 && t_step.is_finite()) {
        return Err(Error::Config(format!("t_step must be positive, got {t_step}")));
    }
    let span = t_end - t_start;
    let n = (span / t_step).round();
    if n < 1.0 || (n * t_step - span).abs() > 1e-9 * span.max(t_step) {
        return Err(Error::Config(format!("t_step {t_step} does not divide [{t_start}, {t_end}]")));
    }
    let n = n as usize;
    Ok((0..=n).map(|j| if j == n { t_end } else { t_start + span * j as f64 / n as f64 }).collect())
}

impl RunConfig {
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self> {
        let file = ScenarioFile::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_file(path, &file, base, ov)
    }

    pub fn from_file(path: &Path, file: &ScenarioFile, base: &Path, ov: &Overrides) -> Result<Self> {
        let scenario = file.scenario(base)?;
        let out = &file.output;
        let method = ov.method.or(out.method).ok_or_else(|| Error::Config("no method given".into()))?;
        let x = ov.x.clone().or_else(|| out.x.clone()).unwrap_or(XSpec::Named("right-boundary".into()));
        let x_grid = x.resolve(scenario.params.l)?;
        let t_start = ov.t_start.unwrap_or(out.t_start);
        let t_end = ov.t_end.or(out.t_end).ok_or_else(|| Error::Config("no t_end given".into()))?;
        let t_step = ov.t_step.or(out.t_step).unwrap_or(t_end - t_start);
        let t_grid = time_grid(t_start, t_end, t_step)?;
        let contour = ContourOverrides {
            k_max: ov.k_max.or(file.contour.k_max),
            n_nodes: ov.n_nodes.or(file.contour.n_nodes),
            r0: ov.r0.or(file.contour.r0),
        };
        Ok(Self {
            scenario_path: path.to_path_buf(),
            scenario,
            method,
            x_grid,
            t_grid,
            contour,
            series_modes: ov.modes.or(file.series.modes).unwrap_or(DEFAULT_MODES),
            fd_nx: ov.nx.or(file.fd.nx).unwrap_or(DEFAULT_FD_CELLS),
            fd_nt: ov.nt.or(file.fd.nt),
            output: ov.output.clone().or_else(|| out.path.as_ref().map(|p| base.join(p))),
            overrides: ov.echo(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLASH: &str = r#"
[params]
alpha = 1.0
tau = 0.02
mu2 = 0.02
l = 1.0

[boundary]
g = { kind = "laser_flash", tau_delta = 0.04 }

[output]
method = "fastpath"
t_end = 1.0
t_step = 0.02
"#;

    #[test]
    fn parses_minimal_scenario() {
        let f = ScenarioFile::parse(FLASH).unwrap();
        let cfg = RunConfig::from_file(Path::new("flash.toml"), &f, Path::new("."), &Overrides::default()).unwrap();
        assert_eq!(cfg.x_grid, vec![1.0]);
        assert_eq!(cfg.t_grid.len(), 51);
        assert_eq!(cfg.t_grid[50], 1.0);
        assert!(cfg.scenario.is_fastpath());
        assert_eq!(cfg.series_modes, DEFAULT_MODES);
    }

    #[test]
    fn overrides_win_and_are_echoed() {
        let f = ScenarioFile::parse(FLASH).unwrap();
        let ov = Overrides { method: Some(Method::Series), modes: Some(50), x: Some(XSpec::parse_arg("0,0.5").unwrap()), ..Default::default() };
        let cfg = RunConfig::from_file(Path::new("a.toml"), &f, Path::new("."), &ov).unwrap();
        assert_eq!(cfg.method, Method::Series);
        assert_eq!(cfg.series_modes, 50);
        assert_eq!(cfg.x_grid, vec![0.0, 0.5]);
        assert_eq!(cfg.overrides.get("method").map(String::as_str), Some("series"));
        assert_eq!(cfg.overrides.get("x").map(String::as_str), Some("0,0.5"));
        assert_eq!(cfg.overrides.len(), 3);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ScenarioFile::parse("[params]\nalpha = 1.0\n").is_err());
        let bad_key = FLASH.replace("[output]", "[output]\nbogus = 1");
        assert!(ScenarioFile::parse(&bad_key).is_err());
        let bad_step = FLASH.replace("t_step = 0.02", "t_step = 0.03");
        let f = ScenarioFile::parse(&bad_step).unwrap();
        let r = RunConfig::from_file(Path::new("a"), &f, Path::new("."), &Overrides::default());
        assert!(matches!(r, Err(Error::Config(_))));
        let neg = FLASH.replace("tau = 0.02", "tau = -0.02");
        let f = ScenarioFile::parse(&neg).unwrap();
        assert!(matches!(f.scenario(Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn tabulated_paths_are_relative_to_the_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("pulse.csv"), "t,g\n0,0\n0.02,50\n0.04,0\n").unwrap();
        let text = FLASH.replace(r#"{ kind = "laser_flash", tau_delta = 0.04 }"#, r#"{ kind = "csv", path = "pulse.csv" }"#);
        let f = ScenarioFile::parse(&text).unwrap();
        let scn = f.scenario(dir.path()).unwrap();
        assert_eq!(scn.g.value(0.01), 25.0);
    }

    #[test]
    fn time_grid_endpoints() {
        assert_eq!(time_grid(0.5, 0.5, 0.1).unwrap(), vec![0.5]);
        let g = time_grid(0.0, 0.3, 0.1).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g[3], 0.3);
    }
}
