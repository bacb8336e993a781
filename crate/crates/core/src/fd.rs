//! Finite-difference reference solver on a staggered grid.
//!
//! e lives at cell centres and half time levels, q at faces and whole time
//! levels. Each step solves the q equation by Crank-Nicolson in the
//! (1 - mu^2 d_xx) operator with e frozen at the half level, then advances e
//! explicitly in conservative flux form. Boundary fluxes entering the e
//! update are window averages of the prescribed data, so the discrete energy
//! telescopes exactly against the time integral of the inflow.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gk::PhysicalParams;
use crate::solver::{Scenario, StateField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CflReport {
    pub dt: f64,
    pub h: f64,
    /// Largest stable step: the scheme needs dt * sqrt(alpha/tau) < h.
    pub dt_stable: f64,
    /// dt / tau; the default keeps this at or below 0.1.
    pub dt_over_tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdGrid {
    pub nx: usize,
    pub nt: usize,
    pub t_end: f64,
    pub cfl_report: CflReport,
}

impl FdGrid {
    pub const MIN_CELLS: usize = 16;

    fn report(p: &PhysicalParams, nx: usize, nt: usize, t_end: f64) -> CflReport {
        let h = p.l / nx as f64;
        let dt = t_end / nt as f64;
        CflReport { dt, h, dt_stable: h / (p.alpha / p.tau).sqrt(), dt_over_tau: dt / p.tau }
    }

    /// Default step count: dt <= tau/10 and 90% of the stability limit.
    pub fn new(p: &PhysicalParams, nx: usize, t_end: f64) -> Result<Self> {
        let h = p.l / nx.max(1) as f64;
        let dt_max = (0.1 * p.tau).min(0.9 * h / (p.alpha / p.tau).sqrt());
        let nt = ((t_end / dt_max).ceil() as usize).max(1);
        Self::with_steps(p, nx, nt, t_end)
    }

    pub fn with_steps(p: &PhysicalParams, nx: usize, nt: usize, t_end: f64) -> Result<Self> {
        let g = Self { nx, nt, t_end, cfl_report: Self::report(p, nx.max(1), nt.max(1), t_end) };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < Self::MIN_CELLS {
            return Err(Error::Domain(format!("fd grid needs at least {} cells", Self::MIN_CELLS)));
        }
        if self.nt == 0 || !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Domain("fd grid needs nt >= 1 and t_end > 0".into()));
        }
        let r = &self.cfl_report;
        if r.dt >= r.dt_stable {
            return Err(Error::Unstable(format!("dt = {:e} exceeds the stability limit {:e}", r.dt, r.dt_stable)));
        }
        Ok(())
    }
}

/// Energy bookkeeping at the half time levels where e lives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub t: f64,
    /// h * sum e.
    pub energy: f64,
    /// Accumulated q(0) and q(l) flux integrals.
    pub inflow: f64,
    pub outflow: f64,
    pub source: f64,
    /// (E_new - E_old)/dt - [q(0) - q(l)] - int f over the last step.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdRun {
    pub field: StateField,
    pub grid: FdGrid,
    pub audit: Vec<AuditRow>,
}

/// Extra forcing r(x, t) added to the right-hand side of the q equation,
/// tau q_t + q - mu^2 q_xx + alpha e_x = r. Used for manufactured solutions.
pub type QForcing<'a> = &'a (dyn Fn(f64, f64) -> f64 + Sync);

pub fn fd_solve(scn: &Scenario, grid: &FdGrid, xs: &[f64], times: &[f64]) -> Result<FdRun> {
    fd_solve_forced(scn, grid, xs, times, None)
}

struct Tridiag {
    // Constant-coefficient system factored once by the Thomas algorithm.
    lower: f64,
    cp: Vec<f64>,
    denom: Vec<f64>,
}

impl Tridiag {
    fn new(n: usize, lower: f64, diag: f64, upper: f64) -> Self {
        let mut cp = vec![0.0; n];
        let mut denom = vec![0.0; n];
        for i in 0..n {
            let d = if i == 0 { diag } else { diag - lower * cp[i - 1] };
            denom[i] = d;
            cp[i] = upper / d;
        }
        Self { lower, cp, denom }
    }

    fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] /= self.denom[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower * rhs[i - 1]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.cp[i] * rhs[i + 1];
        }
    }
}

/// Linear interpolation of cell-centre values, extrapolated over the end half cells.
fn sample_centres(v: &[f64], h: f64, x: f64) -> f64 {
    let s = x / h - 0.5;
    let i = (s.floor().max(0.0) as usize).min(v.len() - 2);
    let w = s - i as f64;
    v[i] * (1.0 - w) + v[i + 1] * w
}

fn sample_faces(v: &[f64], h: f64, x: f64) -> f64 {
    let n = v.len() - 1;
    let s = (x / h).clamp(0.0, n as f64);
    let i = (s.floor() as usize).min(n - 1);
    let w = s - i as f64;
    v[i] * (1.0 - w) + v[i + 1] * w
}

pub fn fd_solve_forced(
    scn: &Scenario,
    grid: &FdGrid,
    xs: &[f64],
    times: &[f64],
    q_forcing: Option<QForcing>,
) -> Result<FdRun> {
    scn.validate()?;
    grid.validate()?;
    let p = &scn.params;
    let l = p.l;
    if xs.is_empty() || times.is_empty() {
        return Err(Error::Domain("fd output grid is empty".into()));
    }
    if xs.iter().any(|&x| !(0.0..=l).contains(&x)) {
        return Err(Error::Domain("fd output x outside [0, l]".into()));
    }
    if times.iter().any(|&t| !(0.0..=grid.t_end * (1.0 + 1e-12)).contains(&t)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("fd output times must be ascending within [0, t_end]".into()));
    }
    let (nx, nt) = (grid.nx, grid.nt);
    let h = l / nx as f64;
    let dt = grid.t_end / nt as f64;
    let (tau, mu2, alpha) = (p.tau, p.mu2, p.alpha);
    let centres: Vec<f64> = (0..nx).map(|i| (i as f64 + 0.5) * h).collect();

    // Interior faces 1..nx-1: (tau/dt + 1/2 + mu^2/h^2) q_j - mu^2/(2h^2)(q_{j-1} + q_{j+1}) = rhs.
    let a = tau / dt;
    let m = 0.5 * mu2 / (h * h);
    let sys = Tridiag::new(nx - 1, -m, a + 0.5 + 2.0 * m, -m);

    let src = |x: f64, t: f64| scn.source.value(x, t, l);
    let forcing = |x: f64, t: f64| q_forcing.map_or(0.0, |f| f(x, t));
    let avg = |s: &crate::transforms::TimeSignal, t0: f64, t1: f64| {
        s.window(num_complex::Complex64::new(0.0, 0.0), t0.max(0.0), t1).re / (t1 - t0)
    };
    let edge = |v: &[f64]| (1.5 * v[0] - 0.5 * v[1], 1.5 * v[nx - 1] - 0.5 * v[nx - 2]);

    let mut q: Vec<f64> = (0..=nx).map(|j| scn.psi.value(j as f64 * h, l)).collect();
    let phi: Vec<f64> = centres.iter().map(|&x| scn.phi.value(x, l)).collect();
    let (p0, pl) = edge(&phi);
    q[0] = scn.g.value(0.0) - scn.gamma0 * p0;
    q[nx] = scn.gammal * pl - scn.h.value(0.0);

    // e at t = dt/2 from a half step with window-averaged boundary fluxes.
    let half = 0.5 * dt;
    let f0 = avg(&scn.g, 0.0, half) - scn.gamma0 * p0;
    let fl = scn.gammal * pl - avg(&scn.h, 0.0, half);
    let mut e_prev = phi.clone();
    let mut e: Vec<f64> = (0..nx)
        .map(|i| {
            let ql = if i == 0 { f0 } else { q[i] };
            let qr = if i == nx - 1 { fl } else { q[i + 1] };
            phi[i] - half / h * (qr - ql) + half * src(centres[i], 0.25 * dt)
        })
        .collect();

    let energy = |v: &[f64]| h * v.iter().sum::<f64>();
    let mut audit = Vec::with_capacity(nt + 1);
    let (mut inflow, mut outflow, mut source) = (half * f0, half * fl, 0.0);
    source += h * centres.iter().map(|&x| half * src(x, 0.25 * dt)).sum::<f64>();
    let e_init = energy(&phi);
    audit.push(AuditRow {
        t: half,
        energy: energy(&e),
        inflow,
        outflow,
        source,
        residual: (energy(&e) - e_init) / half - (f0 - fl) - (source / half),
    });

    // Stored states at whole time levels: e averaged over neighbouring half levels.
    let mut out = StateField::zeros(xs.to_vec(), times.to_vec());
    let mut next_out = 0;
    let mut emit = |tn: f64, ew: &[f64], qw: &[f64], prev: &mut Option<(f64, Vec<f64>, Vec<f64>)>, next_out: &mut usize| {
        let cur_e: Vec<f64> = xs.iter().map(|&x| sample_centres(ew, h, x)).collect();
        let cur_q: Vec<f64> = xs.iter().map(|&x| sample_faces(qw, h, x)).collect();
        while *next_out < times.len() && times[*next_out] <= tn + 1e-12 * grid.t_end.max(1.0) {
            let t = times[*next_out];
            let (w, pe, pq) = match prev {
                Some((tp, pe, pq)) if tn > *tp => ((t - *tp) / (tn - *tp), pe.clone(), pq.clone()),
                _ => (1.0, cur_e.clone(), cur_q.clone()),
            };
            for i in 0..xs.len() {
                out.e[i][*next_out] = pe[i] + w.clamp(0.0, 1.0) * (cur_e[i] - pe[i]);
                out.q[i][*next_out] = pq[i] + w.clamp(0.0, 1.0) * (cur_q[i] - pq[i]);
            }
            *next_out += 1;
        }
        *prev = Some((tn, cur_e, cur_q));
    };
    let mut prev_state = None;
    emit(0.0, &phi, &q, &mut prev_state, &mut next_out);

    let scale0 = phi.iter().chain(&q).fold(1.0_f64, |s, v| s.max(v.abs())) + 1.0;
    let mut rhs = vec![0.0; nx - 1];
    let mut e_new = vec![0.0; nx];
    for n in 0..nt {
        let t_next = (n + 1) as f64 * dt;
        let t_half = (n as f64 + 0.5) * dt;
        // Boundary e at t_{n+1}: linear in space and in time from the last two half levels.
        let (b0, bl) = edge(&e);
        let (b0p, blp) = if n == 0 { (b0, bl) } else { edge(&e_prev) };
        let (e0x, elx) = if n == 0 { (b0, bl) } else { (1.5 * b0 - 0.5 * b0p, 1.5 * bl - 0.5 * blp) };
        let q0_new = scn.g.value(t_next) - scn.gamma0 * e0x;
        let ql_new = scn.gammal * elx - scn.h.value(t_next);

        for j in 1..nx {
            let lap = q[j - 1] - 2.0 * q[j] + q[j + 1];
            let de = (e[j] - e[j - 1]) / h;
            let x = j as f64 * h;
            rhs[j - 1] = (a - 0.5) * q[j] + m * lap - alpha * de + 0.5 * (forcing(x, t_next) + forcing(x, t_next - dt));
        }
        rhs[0] += m * q0_new;
        rhs[nx - 2] += m * ql_new;
        sys.solve(&mut rhs);
        q[0] = q0_new;
        q[nx] = ql_new;
        q[1..nx].copy_from_slice(&rhs);

        // Window [t_{n+1/2}, t_{n+3/2}] fluxes; the last window is clipped at t_end.
        let (w0, w1) = (t_half, t_half + dt);
        let f0 = avg(&scn.g, w0, w1) - scn.gamma0 * e0x;
        let fl = scn.gammal * elx - avg(&scn.h, w0, w1);
        let mut s_step = 0.0;
        for i in 0..nx {
            let ql = if i == 0 { f0 } else { q[i] };
            let qr = if i == nx - 1 { fl } else { q[i + 1] };
            let f = src(centres[i], t_next);
            s_step += h * dt * f;
            e_new[i] = e[i] - dt / h * (qr - ql) + dt * f;
        }
        let (old_energy, new_energy) = (energy(&e), energy(&e_new));
        inflow += dt * f0;
        outflow += dt * fl;
        source += s_step;
        audit.push(AuditRow {
            t: t_half + dt,
            energy: new_energy,
            inflow,
            outflow,
            source,
            residual: (new_energy - old_energy) / dt - (f0 - fl) - s_step / dt,
        });

        let e_whole: Vec<f64> = e.iter().zip(&e_new).map(|(u, v)| 0.5 * (u + v)).collect();
        std::mem::swap(&mut e_prev, &mut e);
        std::mem::swap(&mut e, &mut e_new);
        let peak = e.iter().chain(&q).fold(0.0_f64, |s, v| s.max(v.abs()));
        if !peak.is_finite() || peak > 1e8 * scale0 {
            return Err(Error::Unstable(format!(
                "fd solution blew up at t = {t_next:e} (max |u| = {peak:e}, dt = {dt:e}, h = {h:e})"
            )));
        }
        emit(t_next, &e_whole, &q, &mut prev_state, &mut next_out);
    }
    out.validate()?;
    Ok(FdRun { field: out, grid: *grid, audit })
}

/// Energy balance series of a run.
pub fn fd_energy_audit(run: &FdRun) -> &[AuditRow] {
    &run.audit
}
