//! Residue-series solutions for the insulated special cases: a flux pulse at
//! x = 0 with an insulated right end, and free relaxation of initial data
//! between insulated ends.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::gk::{dispersion, PhysicalParams, SpectralPoint};
use crate::solver::{divided_difference, exp_divided_difference, Scenario};
use crate::transforms::SpaceProfile;

pub const DEFAULT_MODES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesMode {
    pub n: usize,
    pub k_n: f64,
    pub omega1n: C64,
    pub omega2n: C64,
}

impl SeriesMode {
    fn point(&self) -> SpectralPoint {
        SpectralPoint { k: C64::new(self.k_n, 0.0), omega1: self.omega1n, omega2: self.omega2n }
    }
}

pub fn mode_frequencies(p: &PhysicalParams, n: usize) -> SeriesMode {
    let k_n = PI * n as f64 / p.l;
    if n == 0 {
        return SeriesMode { n, k_n, omega1n: C64::new(1.0 / p.tau, 0.0), omega2n: C64::new(0.0, 0.0) };
    }
    let sp = dispersion(p, C64::new(k_n, 0.0));
    SeriesMode { n, k_n, omega1n: sp.omega1, omega2n: sp.omega2 }
}

/// Cosine coefficients of phi (phi[0] is the mean) and sine coefficients of psi.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoeffs {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl FourierCoeffs {
    pub fn new(phi: &SpaceProfile, psi: &SpaceProfile, l: f64, n_max: usize) -> Self {
        let mut out = Self { phi: Vec::with_capacity(n_max + 1), psi: Vec::with_capacity(n_max + 1) };
        for n in 0..=n_max {
            let k = C64::new(PI * n as f64 / l, 0.0);
            if n == 0 {
                out.phi.push(phi.fourier(k, 0.0, l).re / l);
                out.psi.push(0.0);
                continue;
            }
            let (pp, pm) = (phi.fourier(k, 0.0, l), phi.fourier(-k, 0.0, l));
            let (sp, sm) = (psi.fourier(k, 0.0, l), psi.fourier(-k, 0.0, l));
            out.phi.push(((pp + pm) / l).re);
            out.psi.push((C64::i() * (sp - sm) / l).re);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub e: f64,
    pub q: f64,
    /// Size estimate of the omitted modes.
    pub tail: f64,
}

fn check_insulated(scn: &Scenario) -> Result<()> {
    scn.validate()?;
    if scn.gamma0 != 0.0 || scn.gammal != 0.0 || !scn.h.is_zero() || scn.has_source() {
        return Err(Error::Precondition("series needs gamma0 = gammal = 0, h = 0 and f = 0".into()));
    }
    Ok(())
}

/// Modal weights of the flux solution at mode n: the e and q brackets
/// divided by (w1 - w2), before the 2/l cos and 2/l sin factors.
fn flux_weights(scn: &Scenario, m: &SeriesMode, t: f64) -> (f64, f64) {
    let p = &scn.params;
    let (beta, theta) = (p.beta(), p.theta());
    let sp = m.point();
    let th = theta * m.k_n * m.k_n;
    // [(w1 - th) g(w2) - (w2 - th) g(w1)] / (w1 - w2) = g(w2) - (w2 - th) [g(w1) - g(w2)] / (w1 - w2),
    // and the same with beta - theta w in place of w - th.
    let (mean, dd) = divided_difference(&sp, |w| vec![scn.g.transform(w, t)]);
    let g2 = mean[0] - 0.5 * (sp.omega1 - sp.omega2) * dd[0];
    let we = g2 - (sp.omega2 - th) * dd[0];
    let wq = m.k_n * (theta * g2 - (beta - theta * sp.omega1) * dd[0]);
    (we.re, wq.re)
}

/// Partial sum of the flux-driven cosine series through mode `n_modes`.
pub fn series_laser_flash(scn: &Scenario, x: f64, t: f64, n_modes: usize) -> Result<SeriesValue> {
    flux_series(scn, x, t, n_modes, false)
}

/// Same partial sum with the k^-2 tail of the e coefficients added back in
/// closed form, leaving an O(N^-3) truncation error. The e coefficients
/// behave like A(t)/k_n^2 with A = (c0 g~(beta/theta) + g(t))/theta and
/// c0 = 1/tau - beta/theta, and sum_n cos(nz)/n^2 = pi^2/6 - pi z/2 + z^2/4
/// on [0, 2 pi].
pub fn series_laser_flash_accelerated(scn: &Scenario, x: f64, t: f64, n_modes: usize) -> Result<SeriesValue> {
    flux_series(scn, x, t, n_modes, true)
}

fn flux_series(scn: &Scenario, x: f64, t: f64, n_modes: usize, accelerate: bool) -> Result<SeriesValue> {
    check_insulated(scn)?;
    if scn.has_initial_data() {
        return Err(Error::Precondition("flux series needs zero initial data".into()));
    }
    if n_modes == 0 {
        return Err(Error::Precondition("mode cutoff must be at least 1".into()));
    }
    let p = &scn.params;
    let l = p.l;
    let mut e = scn.g.transform(C64::new(0.0, 0.0), t).re / l;
    let mut q = 0.0;
    let mut last = 0.0_f64;
    let mut partial = 0.0;
    for n in 1..=n_modes {
        let m = mode_frequencies(p, n);
        let (we, wq) = flux_weights(scn, &m, t);
        let (c, s) = ((m.k_n * x).cos(), (m.k_n * x).sin());
        e += 2.0 / l * we * c;
        q += 2.0 / l * wq * s;
        last = (2.0 / l * we).abs();
        partial += c / (n * n) as f64;
    }
    let mut tail = last * n_modes as f64;
    let theta = p.theta();
    if accelerate && t > 0.0 {
        let slow = p.beta() / theta;
        let c0 = 1.0 / p.tau - slow;
        let a = (c0 * scn.g.transform(C64::new(slow, 0.0), t).re + scn.g.value(t)) / theta;
        let z = PI * x.clamp(0.0, l) / l;
        let full = PI * PI / 6.0 - PI * z / 2.0 + z * z / 4.0;
        let amp = 2.0 / l * a * (l / PI).powi(2);
        e += amp * (full - partial);
        tail = (amp / (n_modes * n_modes) as f64).abs();
    }
    Ok(SeriesValue { e, q, tail })
}

pub fn series_initial_data(scn: &Scenario, x: f64, t: f64, n_modes: usize) -> Result<SeriesValue> {
    check_insulated(scn)?;
    if !scn.g.is_zero() {
        return Err(Error::Precondition("initial-data series needs g = 0".into()));
    }
    let p = &scn.params;
    let fc = FourierCoeffs::new(&scn.phi, &scn.psi, p.l, n_modes);
    Ok(series_from_coeffs(p, &fc, x, t))
}

pub fn series_from_coeffs(p: &PhysicalParams, fc: &FourierCoeffs, x: f64, t: f64) -> SeriesValue {
    let beta = p.beta();
    let mut e = fc.phi[0];
    let mut q = 0.0;
    let mut last = 0.0_f64;
    for n in 1..fc.phi.len() {
        let m = mode_frequencies(p, n);
        let sp = m.point();
        let (e1, e2) = ((-m.omega1n * t).exp(), (-m.omega2n * t).exp());
        let d = exp_divided_difference(&sp, t);
        // (w1 e2 - w2 e1)/(w1 - w2), (e1 - e2)/(w1 - w2), (w1 e1 - w2 e2)/(w1 - w2).
        let a = e2 - m.omega2n * d;
        let b = e1 + m.omega2n * d;
        let (pn, sn) = (fc.phi[n], fc.psi[n]);
        let we = (a * pn + m.k_n * d * sn).re;
        let wq = (-m.k_n * beta * d * pn + b * sn).re;
        e += we * (m.k_n * x).cos();
        q += wq * (m.k_n * x).sin();
        last = we.abs().max(wq.abs());
    }
    SeriesValue { e, q, tail: last }
}

/// int_0^l e dx of the flux series: every cosine mode integrates to zero.
pub fn series_energy_flux(scn: &Scenario, t: f64) -> f64 {
    scn.g.transform(C64::new(0.0, 0.0), t).re
}

/// int_0^l e dx of the initial-data series.
pub fn series_energy_initial(fc: &FourierCoeffs, l: f64) -> f64 {
    l * fc.phi[0]
}
