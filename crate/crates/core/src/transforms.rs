//! Time transforms `T(w, t) = int_0^t e^{-w(t-s)} g(s) ds`, finite Fourier
//! transforms on [0, l] and the data types they act on.
//!
//! Finite Fourier transforms carry a shift `a`,
//! `int_0^l e^{-ik(x-a)} phi(x) dx`, so callers can fold the boundary
//! exponentials e^{ika} into the integral and keep every factor bounded.

use std::path::Path;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::gk::{PhysicalParams, SpectralPoint, I};

const SERIES_RADIUS: f64 = 0.5;
const SERIES_TERMS: usize = 24;

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// 1 - e^{-z} without cancellation for small Re z.
fn one_minus_exp_neg(z: C64) -> C64 {
    let (x, y) = (z.re, z.im);
    let s = (0.5 * y).sin();
    C64::new(-(-x).exp_m1() * y.cos() + 2.0 * s * s, (-x).exp() * y.sin())
}

/// Sum of (-z)^n / (n + shift)! style series with the given denominators.
fn series(z: C64, denom: impl Fn(usize) -> f64) -> C64 {
    let mut term = C64::new(1.0, 0.0);
    let mut sum = zero();
    for n in 0..SERIES_TERMS {
        sum += term / denom(n);
        term *= -z;
    }
    sum
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// (1 - e^{-z}) / z, equal to int_0^1 e^{-zu} du.
pub fn phi1(z: C64) -> C64 {
    if z.norm() < SERIES_RADIUS {
        series(z, |n| factorial(n + 1))
    } else {
        one_minus_exp_neg(z) / z
    }
}

/// (z - 1 + e^{-z}) / z^2, equal to int_0^1 (1 - u) e^{-zu} du.
pub fn psi2(z: C64) -> C64 {
    if z.norm() < SERIES_RADIUS {
        series(z, |n| factorial(n + 2))
    } else {
        (z - one_minus_exp_neg(z)) / (z * z)
    }
}

/// int_0^1 u e^{-zu} du.
pub fn chi(z: C64) -> C64 {
    if z.norm() < SERIES_RADIUS {
        series(z, |n| factorial(n) * (n + 2) as f64)
    } else {
        phi1(z) - psi2(z)
    }
}

/// Sorted samples of a piecewise-linear function.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub coords: Vec<f64>,
    pub values: Vec<f64>,
}

impl Samples {
    pub fn new(coords: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let s = Self { coords, values };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.len() != self.values.len() || self.coords.len() < 2 {
            return Err(Error::Data("need at least two (coordinate, value) samples".into()));
        }
        if self.coords.iter().chain(&self.values).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite sample".into()));
        }
        if self.coords.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data("sample coordinates must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Linear interpolation, constant beyond the ends.
    pub fn value(&self, x: f64) -> f64 {
        interp(&self.coords, &self.values, x)
    }

    /// Two-column CSV (coordinate, value); a non-numeric first row is a header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let (mut xs, mut vs) = (Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            if rec.len() != 2 {
                return Err(Error::Data(format!("{}: row {} needs two columns", path.display(), i + 1)));
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(x), Ok(v)) => {
                    xs.push(x);
                    vs.push(v);
                }
                _ if i == 0 => continue,
                _ => return Err(Error::Data(format!("{}: row {} is not numeric", path.display(), i + 1))),
            }
        }
        Self::new(xs, vs).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

fn interp<T>(coords: &[f64], values: &[T], x: f64) -> T
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let n = coords.len();
    if x <= coords[0] {
        return values[0];
    }
    if x >= coords[n - 1] {
        return values[n - 1];
    }
    let j = coords.partition_point(|&c| c <= x) - 1;
    let r = (x - coords[j]) / (coords[j + 1] - coords[j]);
    values[j] + (values[j + 1] - values[j]) * r
}

/// int_{t0}^{t1} e^{-w(t1-s)} v(s) ds for the linear interpolant of the
/// samples, held constant after the last one and zero before the first.
fn pwl_window<T>(coords: &[f64], values: &[T], omega: C64, t0: f64, t1: f64) -> C64
where
    T: Copy + Into<C64>,
{
    if t1 <= t0 {
        return zero();
    }
    let n = coords.len();
    let val = |x: f64| -> C64 {
        if x <= coords[0] {
            return values[0].into();
        }
        if x >= coords[n - 1] {
            return values[n - 1].into();
        }
        let j = coords.partition_point(|&c| c <= x) - 1;
        let r = (x - coords[j]) / (coords[j + 1] - coords[j]);
        let (a, b): (C64, C64) = (values[j].into(), values[j + 1].into());
        a + (b - a) * r
    };
    let mut total = zero();
    let mut add_piece = |a: f64, b: f64, va: C64, vb: C64| {
        if b > a {
            let h = b - a;
            let z = omega * h;
            total += (-omega * (t1 - b)).exp() * h * (va * phi1(z) + (vb - va) * psi2(z));
        }
    };
    let lo = t0.max(coords[0]);
    let start = coords.partition_point(|&c| c <= lo).max(1) - 1;
    let mut a = lo;
    for j in start..n - 1 {
        if a >= t1 {
            break;
        }
        let b = coords[j + 1].min(t1);
        if b > a {
            add_piece(a, b, val(a), val(b));
        }
        a = a.max(b);
    }
    if t1 > coords[n - 1] {
        let a = lo.max(coords[n - 1]);
        let v: C64 = values[n - 1].into();
        add_piece(a, t1, v, v);
    }
    total
}

/// Boundary flux signal.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeSignal {
    Zero,
    Constant(f64),
    LaserFlash { tau_delta: f64 },
    /// Samples over [0, t_end], held at the last value afterwards.
    Tabulated(Samples),
}

/// (2/tau_delta) sin^2(pi t / tau_delta) on (0, tau_delta), else 0.
pub fn laser_flash(t: f64, tau_delta: f64) -> f64 {
    if t > 0.0 && t < tau_delta {
        let s = (std::f64::consts::PI * t / tau_delta).sin();
        2.0 / tau_delta * s * s
    } else {
        0.0
    }
}

impl TimeSignal {
    pub fn validate(&self) -> Result<()> {
        match self {
            TimeSignal::LaserFlash { tau_delta } if !(*tau_delta > 0.0 && tau_delta.is_finite()) => {
                Err(Error::Data(format!("tau_delta must be positive, got {tau_delta}")))
            }
            TimeSignal::Constant(c) if !c.is_finite() => Err(Error::Data("non-finite constant signal".into())),
            TimeSignal::Tabulated(s) => {
                s.validate()?;
                if s.coords[0].abs() > 1e-12 {
                    return Err(Error::Data("tabulated time signal must start at t = 0".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            TimeSignal::Zero => true,
            TimeSignal::Constant(c) => *c == 0.0,
            TimeSignal::Tabulated(s) => s.values.iter().all(|&v| v == 0.0),
            TimeSignal::LaserFlash { .. } => false,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            TimeSignal::Zero => 0.0,
            TimeSignal::Constant(c) => *c,
            TimeSignal::LaserFlash { tau_delta } => laser_flash(t, *tau_delta),
            TimeSignal::Tabulated(s) => s.value(t),
        }
    }

    /// int_{t0}^{t1} e^{-w(t1-s)} g(s) ds for 0 <= t0 <= t1.
    pub fn window(&self, omega: C64, t0: f64, t1: f64) -> C64 {
        let t0 = t0.max(0.0);
        if t1 <= t0 || self.is_zero() {
            return zero();
        }
        match self {
            TimeSignal::Zero => zero(),
            TimeSignal::Constant(c) => *c * (t1 - t0) * phi1(omega * (t1 - t0)),
            TimeSignal::LaserFlash { tau_delta } => {
                let td = *tau_delta;
                let (u0, u1) = (t0.min(td), t1.min(td));
                if u1 <= u0 {
                    return zero();
                }
                let h = u1 - u0;
                let nu = 2.0 * std::f64::consts::PI / td;
                let osc = C64::new(0.0, nu);
                let inner = 0.5 * phi1(omega * h)
                    - 0.25 * (osc * u1).exp() * phi1((omega + osc) * h)
                    - 0.25 * (-osc * u1).exp() * phi1((omega - osc) * h);
                (-omega * (t1 - u1)).exp() * (2.0 / td) * h * inner
            }
            TimeSignal::Tabulated(s) => pwl_window(&s.coords, &s.values, omega, t0, t1),
        }
    }

    pub fn transform(&self, omega: C64, t: f64) -> C64 {
        self.window(omega, 0.0, t)
    }

    /// Transforms at ascending times via T(t') = e^{-w(t'-t)} T(t) + window(t, t').
    pub fn transform_grid(&self, omega: C64, times: &[f64]) -> Vec<C64> {
        recurrence(omega, times, |a, b| self.window(omega, a, b))
    }
}

fn recurrence(omega: C64, times: &[f64], window: impl Fn(f64, f64) -> C64) -> Vec<C64> {
    let mut out = Vec::with_capacity(times.len());
    let mut prev_t = 0.0;
    let mut acc = zero();
    for &t in times {
        let t = t.max(0.0);
        if t >= prev_t {
            acc = (-omega * (t - prev_t)).exp() * acc + window(prev_t, t);
        } else {
            acc = window(0.0, t);
        }
        out.push(acc);
        prev_t = t;
    }
    out
}

/// Spatial profile on [0, l].
#[derive(Debug, Clone, PartialEq)]
pub enum SpaceProfile {
    Zero,
    Constant(f64),
    /// amplitude * cos(n pi x / l)
    Cosine { amplitude: f64, mode: u32 },
    Tabulated(Samples),
}

/// int_0^l e^{-ik(x-a)} v(x) dx for a linear interpolant. The panel
/// exponential is referenced at the end where it is smallest.
fn pwl_fourier(coords: &[f64], values: &[f64], k: C64, a: f64) -> C64 {
    let mut total = zero();
    for j in 0..coords.len() - 1 {
        let h = coords[j + 1] - coords[j];
        let (v0, v1) = (values[j], values[j + 1]);
        if k.im >= 0.0 {
            let z = -I * k * h;
            total += (-I * k * (coords[j + 1] - a)).exp() * h * (v1 * phi1(z) - (v1 - v0) * chi(z));
        } else {
            let z = I * k * h;
            total += (-I * k * (coords[j] - a)).exp() * h * (v0 * phi1(z) + (v1 - v0) * chi(z));
        }
    }
    total
}

impl SpaceProfile {
    pub fn validate(&self, l: f64) -> Result<()> {
        match self {
            SpaceProfile::Tabulated(s) => {
                s.validate()?;
                let (x0, x1) = (s.coords[0], *s.coords.last().unwrap());
                if x0.abs() > 1e-9 * l || (x1 - l).abs() > 1e-9 * l {
                    return Err(Error::Data(format!("tabulated profile must span [0, {l}], got [{x0}, {x1}]")));
                }
                Ok(())
            }
            SpaceProfile::Constant(c) if !c.is_finite() => Err(Error::Data("non-finite constant profile".into())),
            SpaceProfile::Cosine { amplitude, .. } if !amplitude.is_finite() => {
                Err(Error::Data("non-finite cosine amplitude".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            SpaceProfile::Zero => true,
            SpaceProfile::Constant(c) => *c == 0.0,
            SpaceProfile::Cosine { amplitude, .. } => *amplitude == 0.0,
            SpaceProfile::Tabulated(s) => s.values.iter().all(|&v| v == 0.0),
        }
    }

    pub fn value(&self, x: f64, l: f64) -> f64 {
        match self {
            SpaceProfile::Zero => 0.0,
            SpaceProfile::Constant(c) => *c,
            SpaceProfile::Cosine { amplitude, mode } => {
                amplitude * (*mode as f64 * std::f64::consts::PI * x / l).cos()
            }
            SpaceProfile::Tabulated(s) => s.value(x),
        }
    }

    /// int_0^l e^{-ik(x-a)} phi(x) dx.
    pub fn fourier(&self, k: C64, a: f64, l: f64) -> C64 {
        match self {
            SpaceProfile::Zero => zero(),
            SpaceProfile::Constant(c) => pwl_fourier(&[0.0, l], &[*c, *c], k, a),
            SpaceProfile::Cosine { amplitude, mode } => {
                let kn = *mode as f64 * std::f64::consts::PI / l;
                let one = |q: C64| pwl_fourier(&[0.0, l], &[1.0, 1.0], q, a);
                let ph = C64::from_polar(1.0, kn * a);
                0.5 * amplitude * (ph * one(k - kn) + ph.conj() * one(k + kn))
            }
            SpaceProfile::Tabulated(s) => pwl_fourier(&s.coords, &s.values, k, a),
        }
    }
}

/// int_0^l e^{-ikx} phi(x) dx.
pub fn finite_fourier(profile: &SpaceProfile, k: C64, l: f64) -> C64 {
    profile.fourier(k, 0.0, l)
}

/// Heat source f(x, t).
#[derive(Debug, Clone, PartialEq)]
pub enum SourceTerm {
    Zero,
    Separable { profile: SpaceProfile, signal: TimeSignal },
    /// values[j][i] = f(xs[i], ts[j]).
    Tabulated { xs: Vec<f64>, ts: Vec<f64>, values: Vec<Vec<f64>> },
}

impl SourceTerm {
    pub fn validate(&self, l: f64) -> Result<()> {
        match self {
            SourceTerm::Zero => Ok(()),
            SourceTerm::Separable { profile, signal } => {
                profile.validate(l)?;
                signal.validate()
            }
            SourceTerm::Tabulated { xs, ts, values } => {
                Samples::new(xs.clone(), vec![0.0; xs.len()])?;
                Samples::new(ts.clone(), vec![0.0; ts.len()])?;
                if values.len() != ts.len() || values.iter().any(|r| r.len() != xs.len()) {
                    return Err(Error::Data("source grid shape does not match its axes".into()));
                }
                if values.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Data("non-finite source value".into()));
                }
                if xs[0].abs() > 1e-9 * l || (xs[xs.len() - 1] - l).abs() > 1e-9 * l || ts[0].abs() > 1e-12 {
                    return Err(Error::Data("source grid must cover [0, l] x [0, t_end]".into()));
                }
                Ok(())
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            SourceTerm::Zero => true,
            SourceTerm::Separable { profile, signal } => profile.is_zero() || signal.is_zero(),
            SourceTerm::Tabulated { values, .. } => values.iter().flatten().all(|&v| v == 0.0),
        }
    }

    pub fn value(&self, x: f64, t: f64, l: f64) -> f64 {
        match self {
            SourceTerm::Zero => 0.0,
            SourceTerm::Separable { profile, signal } => profile.value(x, l) * signal.value(t),
            SourceTerm::Tabulated { xs, ts, values } => {
                if t < 0.0 {
                    return 0.0;
                }
                let row: Vec<f64> = values.iter().map(|r| interp(xs, r, x)).collect();
                interp(ts, &row, t)
            }
        }
    }

    /// int_0^t e^{-w(t-s)} f(x, s) ds at each of the ascending `times`.
    pub fn point_transform_grid(&self, x: f64, l: f64, omega: C64, times: &[f64]) -> Vec<C64> {
        match self {
            SourceTerm::Zero => vec![zero(); times.len()],
            SourceTerm::Separable { profile, signal } => {
                let v = profile.value(x, l);
                signal.transform_grid(omega, times).into_iter().map(|g| g * v).collect()
            }
            SourceTerm::Tabulated { xs, ts, values } => {
                let row: Vec<f64> = values.iter().map(|r| interp(xs, r, x)).collect();
                recurrence(omega, times, |a, b| pwl_window(ts, &row, omega, a, b))
            }
        }
    }

    /// int_0^t e^{-w(t-s)} fhat(k, a; s) ds with the shifted transform
    /// fhat(k, a; s) = int_0^l e^{-ik(x-a)} f(x, s) dx.
    pub fn spectral_transform_grid(&self, k: C64, a: f64, l: f64, omega: C64, times: &[f64]) -> Vec<C64> {
        match self {
            SourceTerm::Zero => vec![zero(); times.len()],
            SourceTerm::Separable { profile, signal } => {
                let xh = profile.fourier(k, a, l);
                signal.transform_grid(omega, times).into_iter().map(|g| g * xh).collect()
            }
            SourceTerm::Tabulated { xs, ts, values } => {
                let hats: Vec<C64> = values.iter().map(|r| pwl_fourier(xs, r, k, a)).collect();
                recurrence(omega, times, |t0, t1| pwl_window(ts, &hats, omega, t0, t1))
            }
        }
    }

    /// Long-format CSV with columns x, t, value covering a full grid.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let err = |e: String| Error::Data(format!("{}: {e}", path.display()));
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| err(e.to_string()))?;
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            if rec.len() != 3 {
                return Err(err(format!("row {} needs columns x,t,value", i + 1)));
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>(), rec[2].parse::<f64>()) {
                (Ok(x), Ok(t), Ok(v)) => rows.push((x, t, v)),
                _ if i == 0 => continue,
                _ => return Err(err(format!("row {} is not numeric", i + 1))),
            }
        }
        let mut xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut ts: Vec<f64> = rows.iter().map(|r| r.1).collect();
        for v in [&mut xs, &mut ts] {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup();
        }
        if xs.len() * ts.len() != rows.len() {
            return Err(err("rows do not form a full x-t grid".into()));
        }
        let mut values = vec![vec![f64::NAN; xs.len()]; ts.len()];
        for (x, t, v) in rows {
            let i = xs.partition_point(|&c| c < x);
            let j = ts.partition_point(|&c| c < t);
            values[j][i] = v;
        }
        if values.iter().flatten().any(|v| v.is_nan()) {
            return Err(err("duplicate or missing grid points".into()));
        }
        Ok(SourceTerm::Tabulated { xs, ts, values })
    }
}

/// Phi(k, t) = e^{-Omega t} S^{-1} (phihat, psihat).
pub fn initial_spectral_phi(sp: &SpectralPoint, phi_hat: C64, psi_hat: C64, t: f64) -> [C64; 2] {
    let ik = I * sp.k;
    [
        (-sp.omega2 * phi_hat + ik * psi_hat) * (-sp.omega1 * t).exp(),
        (sp.omega1 * phi_hat - ik * psi_hat) * (-sp.omega2 * t).exp(),
    ]
}

/// (F1, F2) = (int -w2 e^{-w1(t-s)} fhat ds, int w1 e^{-w2(t-s)} fhat ds).
pub fn source_spectral_f(p: &PhysicalParams, sp: &SpectralPoint, f: &SourceTerm, t: f64) -> [C64; 2] {
    let g1 = f.spectral_transform_grid(sp.k, 0.0, p.l, sp.omega1, &[t])[0];
    let g2 = f.spectral_transform_grid(sp.k, 0.0, p.l, sp.omega2, &[t])[0];
    [-sp.omega2 * g1, sp.omega1 * g2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gk::dispersion;

    fn simpson(f: &dyn Fn(f64) -> C64, a: f64, b: f64, tol: f64) -> C64 {
        fn rec(f: &dyn Fn(f64) -> C64, a: f64, b: f64, fa: C64, fm: C64, fb: C64, whole: C64, tol: f64, depth: u32) -> C64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth > 50 || (left + right - whole).norm() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth + 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth + 1)
        }
        // Pre-split so the recursion starts from a resolved mesh.
        let n = 64;
        let h = (b - a) / n as f64;
        (0..n)
            .map(|j| {
                let (x0, x1) = (a + h * j as f64, a + h * (j + 1) as f64);
                let (fa, fm, fb) = (f(x0), f(0.5 * (x0 + x1)), f(x1));
                let whole = h / 6.0 * (fa + 4.0 * fm + fb);
                rec(f, x0, x1, fa, fm, fb, whole, tol / n as f64, 0)
            })
            .sum()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn phi_family_continuity() {
        for z in [c(0.49, 0.0), c(0.0, 0.499), c(-0.3, 0.39)] {
            let z2 = z * 1.03;
            for (f, name) in [(phi1 as fn(C64) -> C64, "phi1"), (psi2, "psi2"), (chi, "chi")] {
                let exact = match name {
                    "phi1" => (1.0 - (-z2).exp()) / z2,
                    "psi2" => (z2 - 1.0 + (-z2).exp()) / (z2 * z2),
                    _ => (1.0 - (-z2).exp() * (1.0 + z2)) / (z2 * z2),
                };
                assert!((f(z2) - exact).norm() < 1e-14, "{name} {z2}");
                let q = simpson(&|u| match name {
                    "phi1" => (-z * u).exp(),
                    "psi2" => (1.0 - u) * (-z * u).exp(),
                    _ => u * (-z * u).exp(),
                }, 0.0, 1.0, 1e-14);
                assert!((f(z) - q).norm() < 1e-13, "{name} {z}");
            }
        }
        assert!((phi1(c(1e-300, 0.0)) - 1.0).norm() < 1e-15);
        assert!((phi1(c(0.0, 1e-9)) - c(1.0, -0.5e-9)).norm() < 1e-16);
    }

    #[test]
    fn laser_flash_pulse() {
        let td = 0.04;
        assert!((laser_flash(td / 2.0, td) - 2.0 / td).abs() < 1e-12);
        assert_eq!(laser_flash(td, td), 0.0);
        assert_eq!(laser_flash(0.3, td), 0.0);
        let n = 200_000;
        let h = td / n as f64;
        let mut sum = 0.0;
        for j in 0..=n {
            let w = if j == 0 || j == n { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * laser_flash(j as f64 * h, td);
        }
        assert!((sum * h / 3.0 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn laser_flash_transform_matches_quadrature() {
        let td = 0.04;
        let sig = TimeSignal::LaserFlash { tau_delta: td };
        for w in [c(1.0, 0.0), c(50.0, 0.0), c(1.0, 100.0)] {
            for t in [0.01f64, 0.04, 1.0] {
                let top = t.min(td);
                let q = simpson(&|s| (-w * (t - s)).exp() * laser_flash(s, td), 0.0, top, 1e-15);
                let v = sig.transform(w, t);
                assert!((v - q).norm() < 1e-10, "w={w} t={t}: {v} vs {q}");
            }
        }
        // Zero rate gives the running integral.
        for t in [0.01f64, 0.03, 0.5] {
            let u = t.min(td);
            let want = u / td - (2.0 * std::f64::consts::PI * u / td).sin() / (2.0 * std::f64::consts::PI);
            assert!((sig.transform(c(0.0, 0.0), t) - want).norm() < 1e-14);
        }
    }

    #[test]
    fn constant_transform() {
        let sig = TimeSignal::Constant(2.5);
        let w = c(3.0, -1.0);
        let want = 2.5 * (1.0 - (-w * 0.7).exp()) / w;
        assert!((sig.transform(w, 0.7) - want).norm() < 1e-14);
        assert!((sig.transform(c(1e-12, 0.0), 0.7) - 2.5 * 0.7).norm() < 1e-11);
        assert_eq!(TimeSignal::Zero.transform(w, 1.0), c(0.0, 0.0));
    }

    #[test]
    fn semigroup_recurrence() {
        let tab = TimeSignal::Tabulated(Samples::new(vec![0.0, 0.1, 0.25, 0.3, 0.6], vec![0.0, 3.0, -1.0, 2.0, 0.5]).unwrap());
        let sigs = [TimeSignal::LaserFlash { tau_delta: 0.04 }, tab, TimeSignal::Constant(1.5)];
        let times: Vec<f64> = (0..=100).map(|j| 0.01 * j as f64).collect();
        for sig in &sigs {
            for w in [c(20.0, 0.0), c(0.5, 40.0), c(-0.2, 3.0)] {
                let grid = sig.transform_grid(w, &times);
                for (t, g) in times.iter().zip(&grid) {
                    let d = sig.transform(w, *t);
                    assert!((g - d).norm() <= 1e-12 * (1.0 + d.norm()), "{sig:?} w={w} t={t}");
                }
            }
        }
    }

    #[test]
    fn tabulated_transform_matches_quadrature() {
        let s = Samples::new(vec![0.0, 0.1, 0.25, 0.3, 0.6], vec![0.0, 3.0, -1.0, 2.0, 0.5]).unwrap();
        let sig = TimeSignal::Tabulated(s.clone());
        for w in [c(1.0, 0.0), c(30.0, 5.0), c(0.0, 60.0)] {
            for t in [0.05, 0.27, 0.9] {
                let q: C64 = {
                    let mut cuts = vec![0.0];
                    cuts.extend(s.coords.iter().copied().filter(|&x| x > 0.0 && x < t));
                    cuts.push(t);
                    cuts.windows(2).map(|p| simpson(&|u| (-w * (t - u)).exp() * s.value(u), p[0], p[1], 1e-15)).sum()
                };
                assert!((sig.transform(w, t) - q).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn fourier_examples() {
        let l = 1.0;
        assert_eq!(finite_fourier(&SpaceProfile::Zero, c(2.0, 1.0), l), c(0.0, 0.0));
        let one = SpaceProfile::Constant(1.0);
        for k in [c(2.0, 1.0), c(-3.0, -4.0), c(0.3, 0.0)] {
            let want = (1.0 - (-I * k * l).exp()) / (I * k);
            assert!((finite_fourier(&one, k, l) - want).norm() < 1e-14);
        }
        assert!((finite_fourier(&one, c(1e-10, 0.0), l) - l).norm() < 1e-9);

        let ramp = SpaceProfile::Tabulated(Samples::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.5, 1.0]).unwrap());
        let k = c(std::f64::consts::PI, 0.0);
        let q = simpson(&|x| (-I * k * x).exp() * x, 0.0, 1.0, 1e-15);
        assert!((finite_fourier(&ramp, k, l) - q).norm() < 1e-10);

        let cosine = SpaceProfile::Cosine { amplitude: 2.0, mode: 3 };
        for (k, a) in [(c(1.0, 2.0), 1.0), (c(-4.0, -1.5), 0.0), (c(3.0 * std::f64::consts::PI, 0.0), 0.3)] {
            let q = simpson(&|x| (-I * k * (x - a)).exp() * cosine.value(x, l), 0.0, l, 1e-15);
            assert!((cosine.fourier(k, a, l) - q).norm() < 1e-12, "{k}");
        }
    }

    #[test]
    fn fourier_shift_linearity_and_derivative() {
        let l = 2.0;
        let p1 = SpaceProfile::Tabulated(Samples::new(vec![0.0, 0.7, 1.2, 2.0], vec![1.0, -2.0, 0.5, 3.0]).unwrap());
        let p2 = SpaceProfile::Constant(0.7);
        let sum = SpaceProfile::Tabulated(Samples::new(vec![0.0, 0.7, 1.2, 2.0], vec![1.7, -1.3, 1.2, 3.7]).unwrap());
        for k in [c(1.3, 0.4), c(-2.0, -3.0), c(7.0, 0.0)] {
            let lhs = finite_fourier(&sum, k, l);
            let rhs = finite_fourier(&p1, k, l) + finite_fourier(&p2, k, l);
            assert!((lhs - rhs).norm() < 1e-13 * (1.0 + lhs.norm()));
            let shifted = p1.fourier(k, l, l);
            assert!((shifted - (I * k * l).exp() * finite_fourier(&p1, k, l)).norm() < 1e-12 * (1.0 + shifted.norm()));

            let h = 1e-5;
            let fd = (finite_fourier(&p1, k + h, l) - finite_fourier(&p1, k - h, l)) / (2.0 * h);
            let deriv = simpson(&|x| -I * x * (-I * k * x).exp() * p1.clone().value(x, l), 0.0, 0.7, 1e-14)
                + simpson(&|x| -I * x * (-I * k * x).exp() * p1.value(x, l), 0.7, 1.2, 1e-14)
                + simpson(&|x| -I * x * (-I * k * x).exp() * p1.value(x, l), 1.2, 2.0, 1e-14);
            assert!((fd - deriv).norm() < 1e-6 * (1.0 + deriv.norm()));
        }
    }

    #[test]
    fn phi_spot_values() {
        let p = PhysicalParams::new(1.0, 0.02, 0.02, 1.0).unwrap();
        let sp = dispersion(&p, c(1.0, 0.0));
        let [a, b] = initial_spectral_phi(&sp, c(1.0, 0.0), c(0.0, 0.0), 0.1);
        assert!((a - c(-(-5.0f64).exp(), 0.0)).norm() < 1e-14);
        assert!((b - c(50.0 * (-0.1f64).exp(), 0.0)).norm() < 1e-12);
        let [a, b] = initial_spectral_phi(&sp, c(0.0, 0.0), c(0.0, 0.0), 0.3);
        assert_eq!((a, b), (c(0.0, 0.0), c(0.0, 0.0)));
    }

    #[test]
    fn source_transforms() {
        let p = PhysicalParams::new(1.0, 0.05, 0.1, 1.0).unwrap();
        assert_eq!(source_spectral_f(&p, &dispersion(&p, c(1.0, 1.0)), &SourceTerm::Zero, 0.5), [c(0.0, 0.0); 2]);

        // Narrow pulse in time: the convolution collapses to X^(k) times the kernel.
        let width = 1e-4;
        let s0 = 0.2;
        let pulse = Samples::new(vec![0.0, s0 - width, s0, s0 + width, 1.0], vec![0.0, 0.0, 1.0 / width, 0.0, 0.0]).unwrap();
        let profile = SpaceProfile::Tabulated(Samples::new(vec![0.0, 0.4, 1.0], vec![1.0, 2.0, 0.0]).unwrap());
        let f = SourceTerm::Separable { profile: profile.clone(), signal: TimeSignal::Tabulated(pulse) };
        let sp = dispersion(&p, c(2.0, 0.5));
        let t = 0.6;
        let [f1, f2] = source_spectral_f(&p, &sp, &f, t);
        let xh = finite_fourier(&profile, sp.k, p.l);
        let w1 = -sp.omega2 * (-sp.omega1 * (t - s0)).exp() * xh;
        let w2 = sp.omega1 * (-sp.omega2 * (t - s0)).exp() * xh;
        assert!((f1 - w1).norm() < 1e-3 * w1.norm());
        assert!((f2 - w2).norm() < 1e-3 * w2.norm());

        // A profile symmetric about l/2 gives an even shifted transform.
        let xs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let ts = vec![0.0, 0.3, 1.0];
        let values: Vec<Vec<f64>> = ts
            .iter()
            .map(|&t| xs.iter().map(|&x| (1.0 + t) * (x * (1.0 - x) + 0.1)).collect())
            .collect();
        let g = SourceTerm::Tabulated { xs, ts, values };
        g.validate(1.0).unwrap();
        let sp = dispersion(&p, c(3.0, 2.0));
        let times = [0.2, 0.7];
        for w in [sp.omega1, sp.omega2] {
            let a = g.spectral_transform_grid(sp.k, 0.5, 1.0, w, &times);
            let b = g.spectral_transform_grid(-sp.k, 0.5, 1.0, w, &times);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).norm() < 1e-12 * u.norm());
            }
        }
        // Pointwise transform agrees with quadrature.
        let x = 0.35;
        let w = c(4.0, 1.0);
        let pt = g.point_transform_grid(x, 1.0, w, &[0.8])[0];
        let q = simpson(&|s| (-w * (0.8 - s)).exp() * g.value(x, s, 1.0), 0.0, 0.3, 1e-15)
            + simpson(&|s| (-w * (0.8 - s)).exp() * g.value(x, s, 1.0), 0.3, 0.8, 1e-15);
        assert!((pt - q).norm() < 1e-11);
    }

    #[test]
    fn csv_loading() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        std::fs::write(&path, "t,value\n0,0\n0.5,2\n1.0,1\n").unwrap();
        let s = Samples::from_csv(&path).unwrap();
        assert_eq!(s.coords, vec![0.0, 0.5, 1.0]);
        assert!((s.value(0.25) - 1.0).abs() < 1e-15);
        std::fs::write(&path, "0,0\n0.5,2\n0.4,1\n").unwrap();
        assert!(Samples::from_csv(&path).is_err());
        std::fs::write(&path, "0,0\n0.5,x\n").unwrap();
        assert!(Samples::from_csv(&path).is_err());

        let src = dir.path().join("f.csv");
        std::fs::write(&src, "x,t,value\n0,0,1\n1,0,2\n0,1,3\n1,1,4\n").unwrap();
        let f = SourceTerm::from_csv(&src).unwrap();
        f.validate(1.0).unwrap();
        assert!((f.value(0.5, 0.5, 1.0) - 2.5).abs() < 1e-15);
        std::fs::write(&src, "x,t,value\n0,0,1\n1,0,2\n0,1,3\n").unwrap();
        assert!(SourceTerm::from_csv(&src).is_err());
    }
}
