use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gk_utm::config::{Method, Overrides, RunConfig, XSpec};
use gk_utm::run::{compare, dump_contour, exit_code, run_scenario, write_field_csv};
use gk_utm::{Error, Result};

/// Guyer-Krumhansl heat conduction on a finite interval by the unified
/// transform method, with residue-series and finite-difference references.
///
/// Exit status: 0 success, 2 config or grid error, 3 method precondition
/// violated, 4 numerical failure.
#[derive(Parser)]
#[command(name = "gk-utm", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write x,t,e,q as CSV plus a run manifest.
    Solve {
        scenario: PathBuf,
        #[command(flatten)]
        grid: GridFlags,
        #[arg(long, value_enum)]
        method: Option<Method>,
        /// Output CSV; "-" or absent with no [output] path writes to stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Manifest path; defaults to <output>.manifest.toml, or stderr for stdout output.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run two scenarios on the same output grid and report their differences.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        grid: GridFlags,
        #[arg(long, value_enum)]
        method_a: Option<Method>,
        #[arg(long, value_enum)]
        method_b: Option<Method>,
        /// Where the TOML difference report is stored.
        #[arg(long, default_value = "compare-report.toml")]
        report: PathBuf,
    },
    /// Write the contour nodes (k_re,k_im,w_re,w_im,half) used for a scenario.
    Contour {
        scenario: PathBuf,
        #[command(flatten)]
        grid: GridFlags,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// Flags that override the scenario file.
#[derive(Args, Clone)]
struct GridFlags {
    /// Output abscissae: comma list or "right-boundary".
    #[arg(long)]
    x: Option<String>,
    #[arg(long)]
    t_start: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    t_step: Option<f64>,
    /// Contour truncation |Re k| <= k_max.
    #[arg(long)]
    k_max: Option<f64>,
    /// Contour nodes per half-path.
    #[arg(long)]
    n_nodes: Option<usize>,
    /// Origin indentation radius.
    #[arg(long)]
    r0: Option<f64>,
    /// Series mode cutoff N.
    #[arg(long)]
    modes: Option<usize>,
    /// Finite-difference cells.
    #[arg(long)]
    nx: Option<usize>,
    /// Finite-difference time steps.
    #[arg(long)]
    nt: Option<usize>,
}

impl GridFlags {
    fn overrides(&self, method: Option<Method>, output: Option<PathBuf>) -> Result<Overrides> {
        Ok(Overrides {
            method,
            x: self.x.as_deref().map(XSpec::parse_arg).transpose()?,
            t_start: self.t_start,
            t_end: self.t_end,
            t_step: self.t_step,
            k_max: self.k_max,
            n_nodes: self.n_nodes,
            r0: self.r0,
            modes: self.modes,
            nx: self.nx,
            nt: self.nt,
            output,
        })
    }
}

fn io_err(p: &Path) -> impl Fn(io::Error) -> Error + '_ {
    move |e| Error::Config(format!("{}: {e}", p.display()))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) if p != Path::new("-") => Ok(Box::new(BufWriter::new(File::create(p).map_err(io_err(p))?))),
        _ => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

fn is_file(p: &Option<PathBuf>) -> bool {
    p.as_deref().is_some_and(|p| p != Path::new("-"))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Solve { scenario, grid, method, output, manifest } => {
            let cfg = RunConfig::load(&scenario, &grid.overrides(method, output)?)?;
            let out = run_scenario(&cfg)?;
            write_field_csv(sink(cfg.output.as_deref())?, &out.field)?;
            let text = out.manifest.to_toml()?;
            let target = manifest.or_else(|| {
                is_file(&cfg.output).then(|| {
                    let mut p = cfg.output.clone().unwrap().into_os_string();
                    p.push(".manifest.toml");
                    PathBuf::from(p)
                })
            });
            match target {
                Some(p) => std::fs::write(&p, text).map_err(io_err(&p))?,
                None => eprint!("{text}"),
            }
        }
        Command::Compare { a, b, grid, method_a, method_b, report } => {
            let cfg_a = RunConfig::load(&a, &grid.overrides(method_a, None)?)?;
            let cfg_b = RunConfig::load(&b, &grid.overrides(method_b, None)?)?;
            let r = compare(&cfg_a, &cfg_b)?;
            print!("{}", r.summary());
            std::fs::write(&report, r.to_toml()?).map_err(io_err(&report))?;
        }
        Command::Contour { scenario, grid, output } => {
            let cfg = RunConfig::load(&scenario, &grid.overrides(Some(Method::Utm), None)?)?;
            let d = dump_contour(&cfg, sink(output.as_deref())?)?;
            eprintln!(
                "k_max {} n_nodes {} r0 {}; level-set violation upper {:.3e} lower {:.3e} (tolerance {:.3e})",
                d.spec.k_max,
                d.spec.n_nodes,
                d.spec.origin_radius,
                d.upper.max_violation,
                d.lower.max_violation,
                d.upper.tolerance
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
