//! Deformed integration paths and their quadrature nodes.
//!
//! The boundary of `Re w_m(k) < 0` is written in rescaled units z = mu k,
//! z = x + iy, where y^2 = s solves the cubic
//! `s^3 + a s^2 + b s + c = 0` with coefficients depending on x and C.
//! Near the origin the path is replaced by an arc of radius r0.

use std::io::Write;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gk::{dispersion, PhysicalParams, I};

/// Points per Gauss-Legendre panel.
pub const PANEL_ORDER: usize = 16;
const ARC_PANELS: usize = 4;
/// Hard cap on the automatic truncation bound.
pub const K_MAX_CAP: f64 = 400.0;
/// Decay exponent required at the truncation bound (e^-36 ~ 2e-16).
const DECAY_TARGET: f64 = 36.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CardanoWork {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub p: f64,
    pub q: f64,
    pub d: f64,
    pub root_alpha: C64,
    pub root_beta: C64,
    pub big_a: f64,
    pub big_b: C64,
    /// Selected root before Newton refinement.
    pub s_raw: f64,
    pub s: f64,
}

pub fn cubic_coeffs(big_c: f64, x: f64) -> (f64, f64, f64) {
    let x2 = x * x;
    let x4 = x2 * x2;
    (x2 - 2.0, -(x4 - 4.0 * big_c * x2 - 1.0), -(x4 * x2 + 2.0 * x4 + x2))
}

fn cubic(a: f64, b: f64, c: f64, s: f64) -> f64 {
    ((s + a) * s + b) * s + c
}

fn cubic_slope(a: f64, b: f64, s: f64) -> f64 {
    (3.0 * s + 2.0 * a) * s + b
}

/// Cardano solve of s^3 + a s^2 + b s + c = 0 returning the smallest
/// nonnegative real root.
///
/// The three branch choices of the cube root alpha are tried with
/// beta = -P/(3 alpha); a branch counts as real when Im(alpha + beta) is at
/// rounding level. Two Newton steps polish the result.
pub fn cardano_root(a: f64, b: f64, c: f64) -> Result<CardanoWork> {
    let a3 = a / 3.0;
    let p = b - a * a3;
    let q = 2.0 * a3 * a3 * a3 - a3 * b + c;
    let d = (p / 3.0).powi(3) + (q / 2.0).powi(2);

    let sd = C64::new(d, 0.0).sqrt();
    let mut w = C64::new(-q / 2.0, 0.0) + sd;
    let w2 = C64::new(-q / 2.0, 0.0) - sd;
    if w2.norm() > w.norm() {
        w = w2;
    }
    let base = w.cbrt();
    let rot = C64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
    let scale = 1.0 + a.abs() + b.abs().sqrt() + c.abs().cbrt();

    let mut best: Option<(f64, C64, C64)> = None;
    let mut r = base;
    for _ in 0..3 {
        let beta = if r.norm() > 0.0 { -p / (3.0 * r) } else { C64::new(0.0, 0.0) };
        let u = r + beta;
        if u.im.abs() <= 1e-7 * scale {
            let s = u.re - a3;
            if s >= -1e-9 * scale && best.map_or(true, |(bs, _, _)| s < bs) {
                best = Some((s, r, beta));
            }
        }
        r *= rot;
    }
    let (s_raw, alpha, beta) = best.ok_or_else(|| {
        Error::Numerical(format!("no real nonnegative cubic root for a={a}, b={b}, c={c}"))
    })?;

    let mut s = s_raw.max(0.0);
    for _ in 0..2 {
        let f = cubic(a, b, c, s);
        let fp = cubic_slope(a, b, s);
        if fp == 0.0 || f == 0.0 {
            break;
        }
        let next = (s - f / fp).max(0.0);
        if cubic(a, b, c, next).abs() <= f.abs() {
            s = next;
        }
    }

    let u = alpha + beta;
    Ok(CardanoWork {
        a,
        b,
        c,
        p,
        q,
        d,
        root_alpha: alpha,
        root_beta: beta,
        big_a: u.re / 2.0,
        big_b: 3f64.sqrt() * (alpha - beta) / 2.0,
        s_raw,
        s,
    })
}

/// Rescaled height y(x) >= 0 of the upper boundary curve. Inside a fold
/// window (see [`fold_window`]) this is the lowest of the three branches.
pub fn contour_height(big_c: f64, x: f64) -> f64 {
    contour_height_with_slope(big_c, x).0
}

/// Height y(x) and slope dy/dx from implicit differentiation of the cubic.
pub fn contour_height_with_slope(big_c: f64, x: f64) -> (f64, f64) {
    if x == 0.0 {
        return (0.0, 1.0);
    }
    let (a, b, c) = cubic_coeffs(big_c, x);
    match cardano_root(a, b, c) {
        Ok(w) => (w.s.sqrt(), height_slope(big_c, x, w.s)),
        Err(_) => (f64::NAN, f64::NAN),
    }
}

/// Height on the lowest or highest branch, used on either side of a fold.
fn branch_height_with_slope(big_c: f64, x: f64, top: bool) -> (f64, f64) {
    let (a, b, c) = cubic_coeffs(big_c, x);
    let roots = cubic_nonneg_roots(a, b, c);
    let s = if top { roots.last() } else { roots.first() }.copied().unwrap_or(f64::NAN);
    (s.sqrt(), height_slope(big_c, x, s))
}

/// dy/dx at a point (x, y = sqrt(s)) of the curve.
fn height_slope(big_c: f64, x: f64, s: f64) -> f64 {
    let (a, b, _) = cubic_coeffs(big_c, x);
    let y = s.sqrt();
    let ax = x.abs();
    let (x3, x5) = (ax * ax * ax, ax.powi(5));
    let f_x = 2.0 * ax * s * s - (4.0 * x3 - 8.0 * big_c * ax) * s - (6.0 * x5 + 8.0 * x3 + 2.0 * ax);
    let f_s = cubic_slope(a, b, s);
    let slope = if f_s != 0.0 && y > 0.0 { -f_x / f_s / (2.0 * y) } else { 1.0 };
    slope * x.signum()
}

/// Residual of the implicit form y = |x| sqrt(((x^2+y^2-1)^2 + 4x^2) / ((x^2+y^2-1)^2 + 4Cx^2)).
pub fn implicit_residual(big_c: f64, x: f64, y: f64) -> f64 {
    let m = x * x + y * y - 1.0;
    let rhs = x.abs() * ((m * m + 4.0 * x * x) / (m * m + 4.0 * big_c * x * x)).sqrt();
    (y - rhs).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Half {
    Upper,
    Lower,
}

impl Half {
    pub fn label(&self) -> &'static str {
        match self {
            Half::Upper => "upper",
            Half::Lower => "lower",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourNode {
    pub k: C64,
    pub weight: C64,
    pub half: Half,
    pub on_arc: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourSpec {
    /// Truncation bound on |Re k|.
    pub k_max: f64,
    /// Requested nodes per half-path, rounded up to whole panels.
    pub n_nodes: usize,
    pub origin_radius: f64,
    /// Quadratic density coefficient g: panel edges are uniform in
    /// |k_R| + g k_R^2, so density grows like 1 + 2g|k_R|.
    pub grading: f64,
}

impl ContourSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.origin_radius > 0.0 && self.k_max > self.origin_radius) {
            return Err(Error::Precondition(format!(
                "contour needs k_max > r0 > 0, got k_max={} r0={}",
                self.k_max, self.origin_radius
            )));
        }
        if self.n_nodes < PANEL_ORDER {
            return Err(Error::Precondition(format!("n_nodes must be >= {PANEL_ORDER}")));
        }
        if !(self.grading >= 0.0 && self.grading.is_finite()) {
            return Err(Error::Precondition("grading must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// min(0.5, pi/(4l)), further halved against the start of a fold so the
    /// arc joins the path below it.
    pub fn default_radius(p: &PhysicalParams) -> f64 {
        let r = 0.5f64.min(std::f64::consts::PI / (4.0 * p.l));
        match fold_window(p.big_c()) {
            Some((x1, _)) => r.min(0.5 * x1 / p.mu()),
            None => r,
        }
    }

    /// Automatic spec for integrands decaying like e^{-k_I d} and times up
    /// to `t_max`. With `d = 0` the bound falls back to the cap.
    pub fn auto(p: &PhysicalParams, decay_distance: f64, t_max: f64) -> Self {
        let mut k_max = K_MAX_CAP;
        if decay_distance > 0.0 {
            let mut k = (DECAY_TARGET / decay_distance).max(1.0);
            while k < K_MAX_CAP && upper_height(p, k) * decay_distance < DECAY_TARGET {
                k *= 1.1;
            }
            k_max = k.min(K_MAX_CAP);
        }
        let grading = (p.alpha + p.theta()) * t_max.max(0.0) / 8.0;
        let dpsi = 3.0;
        let arm = ((k_max + grading * k_max * k_max) / dpsi).ceil() as usize;
        Self {
            k_max,
            n_nodes: PANEL_ORDER * (ARC_PANELS + 2 * arm.max(1)),
            origin_radius: Self::default_radius(p),
            grading,
        }
    }

    pub fn refined(&self) -> Self {
        Self { k_max: 2.0 * self.k_max, n_nodes: 2 * self.n_nodes, ..*self }
    }
}

/// k_I on the upper path at real part k_R.
pub fn upper_height(p: &PhysicalParams, k_r: f64) -> f64 {
    let mu = p.mu();
    contour_height(p.big_c(), mu * k_r) / mu
}

/// Real part where the path crosses |k| = r0.
fn junction(p: &PhysicalParams, r0: f64) -> f64 {
    let f = |x: f64| x * x + upper_height(p, x).powi(2) - r0 * r0;
    let (mut lo, mut hi) = (0.0, r0);
    if f(hi) <= 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-16 * r0 {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub(crate) fn gl_rule() -> Vec<(f64, f64)> {
    GaussLegendre::new(NonZeroUsize::new(PANEL_ORDER).unwrap()).as_node_weight_pairs().to_vec()
}

pub fn build_contour(p: &PhysicalParams, spec: &ContourSpec, half: Half) -> Result<Vec<ContourNode>> {
    spec.validate()?;
    p.validate()?;
    let upper = build_upper(p, spec)?;
    Ok(match half {
        Half::Upper => upper,
        Half::Lower => upper
            .iter()
            .rev()
            .map(|n| ContourNode { k: n.k.conj(), weight: -n.weight.conj(), half: Half::Lower, on_arc: n.on_arc })
            .collect(),
    })
}

/// Range of rescaled x where the boundary curve folds back on itself. The
/// returned ends lie just outside the window, where the root is simple.
///
/// For small C the cubic has three nonnegative roots on a short window
/// (x1, x2) and the curve is S-shaped there: a lower branch coming from the
/// origin ends in a fold at x2, a middle branch runs back to a fold at x1 and
/// an upper branch continues to infinity. Along the S the height increases
/// monotonically, so the window is traversed with y as the parameter.
pub fn fold_window(big_c: f64) -> Option<(f64, f64)> {
    let folded = |x: f64| {
        let (a, b, c) = cubic_coeffs(big_c, x);
        cubic_nonneg_roots(a, b, c).len() >= 2
    };
    let n = 20_000;
    let x_scan = 2.0;
    let mut first = None;
    let mut last = None;
    for i in 1..=n {
        let x = x_scan * i as f64 / n as f64;
        if folded(x) {
            first.get_or_insert(i);
            last = Some(i);
        }
    }
    let (i0, i1) = (first?, last?);
    let h = x_scan / n as f64;
    let refine = |mut out: f64, mut inn: f64| {
        for _ in 0..100 {
            let m = 0.5 * (out + inn);
            if folded(m) {
                inn = m;
            } else {
                out = m;
            }
        }
        out
    };
    Some((refine(h * (i0 - 1) as f64, h * i0 as f64), refine(h * (i1 + 1) as f64, h * i1 as f64)))
}

/// All real nonnegative roots of the monic cubic, ascending, Newton-polished.
pub fn cubic_nonneg_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let a3 = a / 3.0;
    let p = b - a * a3;
    let q = 2.0 * a3 * a3 * a3 - a3 * b + c;
    let d = (p / 3.0).powi(3) + (q / 2.0).powi(2);
    let scale = 1.0 + a.abs() + b.abs().sqrt() + c.abs().cbrt();
    let mut roots = Vec::with_capacity(3);
    if d > 0.0 {
        let sd = d.sqrt();
        let w = if q > 0.0 { -q / 2.0 - sd } else { -q / 2.0 + sd };
        let al = w.cbrt();
        let be = if al != 0.0 { -p / (3.0 * al) } else { 0.0 };
        roots.push(al + be - a3);
    } else {
        let r = (-p / 3.0).max(0.0).sqrt();
        let arg = if r > 0.0 { (-q / (2.0 * r * r * r)).clamp(-1.0, 1.0) } else { 0.0 };
        let phi = arg.acos();
        for j in 0..3 {
            let u = 2.0 * r * ((phi - 2.0 * std::f64::consts::PI * j as f64) / 3.0).cos();
            roots.push(u - a3);
        }
    }
    for s in roots.iter_mut() {
        for _ in 0..3 {
            let fp = cubic_slope(a, b, *s);
            let f = cubic(a, b, c, *s);
            if fp != 0.0 && f != 0.0 {
                let next = *s - f / fp;
                if cubic(a, b, c, next).abs() < f.abs() {
                    *s = next;
                }
            }
        }
    }
    roots.retain(|&s| s >= -1e-12 * scale);
    roots.iter_mut().for_each(|s| *s = s.max(0.0));
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots
}

/// Rescaled x on the folded part of the curve at height y, restricted to the
/// window [x1, x2]. With X = x^2 the relation is the cubic
/// X^3 + (s+2)X^2 - (s^2 + 4Cs - 1)X - (s^3 - 2s^2 + s) = 0, s = y^2.
fn fold_x_of_y(big_c: f64, y: f64, x1: f64, x2: f64) -> (f64, f64) {
    let s = y * y;
    let roots = cubic_nonneg_roots(s + 2.0, -(s * s + 4.0 * big_c * s - 1.0), -(s * s * s - 2.0 * s * s + s));
    let (lo, hi) = (x1 * x1, x2 * x2);
    let dist = |v: f64| if v < lo { lo - v } else if v > hi { v - hi } else { 0.0 };
    let xx = roots.iter().copied().min_by(|u, v| dist(*u).partial_cmp(&dist(*v)).unwrap()).unwrap_or(lo);
    let x = xx.sqrt();
    let (a, b, _) = cubic_coeffs(big_c, x);
    let (x3, x5) = (x * x * x, x.powi(5));
    let f_x = 2.0 * x * s * s - (4.0 * x3 - 8.0 * big_c * x) * s - (6.0 * x5 + 8.0 * x3 + 2.0 * x);
    let f_s = cubic_slope(a, b, s);
    (x, -f_s * 2.0 * y / f_x)
}

/// A parametrized piece of the upper path: k(t) and dk/dt.
type Piece<'a> = dyn Fn(f64) -> (C64, C64) + 'a;

/// Appends Gauss-Legendre nodes on [a, b], splitting a panel while it fails
/// to integrate 1, k and k^2 along the curve to rounding accuracy.
fn adaptive_panel(f: &Piece, rule: &[(f64, f64)], a: f64, b: f64, depth: u32, out: &mut Vec<(C64, C64)>) {
    let half_w = 0.5 * (b - a);
    let pts: Vec<(C64, C64)> = rule
        .iter()
        .map(|&(u, w)| {
            let (k, dk) = f(a + half_w * (u + 1.0));
            (k, dk * (w * half_w))
        })
        .collect();
    if depth < 48 && b - a > 1e-9 * (1.0 + a.abs()) {
        let ka = f(a).0;
        let kb = f(b).0;
        let mut sums = [C64::new(0.0, 0.0); 3];
        let mut mag = [0.0; 3];
        for &(k, w) in &pts {
            sums[0] += w;
            sums[1] += w * k;
            sums[2] += w * k * k;
            let r = 1.0 + k.norm();
            mag[0] += w.norm();
            mag[1] += w.norm() * r;
            mag[2] += w.norm() * r * r;
        }
        let exact = [kb - ka, (kb * kb - ka * ka) / 2.0, (kb * kb * kb - ka * ka * ka) / 3.0];
        let ends = 1.0 + ka.norm().max(kb.norm());
        let bad = (0..3).any(|m| {
            let tol = 1e-13 * mag[m] + 1e-14 * ends.powi(m as i32 + 1);
            (sums[m] - exact[m]).norm() > tol
        });
        if bad {
            let mid = 0.5 * (a + b);
            adaptive_panel(f, rule, a, mid, depth + 1, out);
            adaptive_panel(f, rule, mid, b, depth + 1, out);
            return;
        }
    }
    out.extend(pts);
}

fn build_upper(p: &PhysicalParams, spec: &ContourSpec) -> Result<Vec<ContourNode>> {
    let rule = gl_rule();
    let mu = p.mu();
    let big_c = p.big_c();
    let r0 = spec.origin_radius;
    let xa = junction(p, r0);
    let phi_a = upper_height(p, xa).atan2(xa);
    let fold = fold_window(big_c).map(|(x1, x2)| (x1 / mu, x2 / mu));
    if let Some((f1, _)) = fold {
        if f1 <= xa {
            return Err(Error::Precondition(format!(
                "indentation radius {r0} reaches the fold of the path at k_R = {f1}"
            )));
        }
    }
    if spec.k_max <= fold.map_or(xa, |f| f.1) {
        return Err(Error::Precondition(format!("k_max = {} does not clear the path's near field", spec.k_max)));
    }

    let arm_panels = (spec.n_nodes.div_ceil(PANEL_ORDER).saturating_sub(ARC_PANELS)).div_ceil(2).max(1);
    let g = spec.grading;
    let psi = |x: f64| x + g * x * x;
    let psi_inv = |v: f64| if g > 0.0 { 2.0 * v / (1.0 + (1.0 + 4.0 * g * v).sqrt()) } else { v };
    let (p0, p1) = (psi(xa), psi(spec.k_max));
    let edges: Vec<f64> = (0..=arm_panels)
        .map(|j| psi_inv(p0 + (p1 - p0) * j as f64 / arm_panels as f64))
        .collect();

    let branch = |top: bool| {
        move |x: f64| {
            let (y, dy) = branch_height_with_slope(big_c, mu * x, top);
            (C64::new(x, y / mu), C64::new(1.0, dy))
        }
    };
    let segments: Vec<(f64, f64)> = match fold {
        None => vec![(xa, spec.k_max)],
        Some((f1, f2)) => vec![(xa, f1), (f2, spec.k_max)],
    };
    let mut right = Vec::with_capacity(arm_panels * PANEL_ORDER + 256);
    for (si, &(lo, hi)) in segments.iter().enumerate() {
        let mut cuts = vec![lo];
        let gap = 1e-6 * (hi - lo);
        cuts.extend(edges.iter().copied().filter(|&e| e > lo + gap && e < hi - gap));
        cuts.push(hi);
        let graph = branch(si == 1);
        for w in cuts.windows(2) {
            adaptive_panel(&graph, &rule, w[0], w[1], 0, &mut right);
        }
        if si == 0 && segments.len() == 2 {
            let (x1, x2) = (fold.unwrap().0 * mu, fold.unwrap().1 * mu);
            let (a1, b1, c1) = cubic_coeffs(big_c, x1);
            let (a2, b2, c2) = cubic_coeffs(big_c, x2);
            let ya = cubic_nonneg_roots(a1, b1, c1)[0].sqrt();
            let yb = cubic_nonneg_roots(a2, b2, c2).last().copied().unwrap_or(0.0).sqrt();
            let s_curve = |y: f64| {
                let (x, dxdy) = fold_x_of_y(big_c, y, x1, x2);
                (C64::new(x, y) / mu, C64::new(dxdy, 1.0) / mu)
            };
            let n_fold = 8;
            for j in 0..n_fold {
                let t0 = ya + (yb - ya) * j as f64 / n_fold as f64;
                let t1 = ya + (yb - ya) * (j + 1) as f64 / n_fold as f64;
                adaptive_panel(&s_curve, &rule, t0, t1, 0, &mut right);
            }
        }
    }

    let mut nodes = Vec::with_capacity(2 * right.len() + ARC_PANELS * PANEL_ORDER);
    for &(k, w) in right.iter().rev() {
        nodes.push(ContourNode { k: -k.conj(), weight: w.conj(), half: Half::Upper, on_arc: false });
    }
    let (start, end) = (std::f64::consts::PI - phi_a, phi_a);
    let span = (end - start) / ARC_PANELS as f64;
    for j in 0..ARC_PANELS {
        let a = start + span * j as f64;
        for &(u, w) in &rule {
            let phi = a + 0.5 * span * (u + 1.0);
            let k = C64::from_polar(r0, phi);
            nodes.push(ContourNode { k, weight: I * k * (0.5 * span * w), half: Half::Upper, on_arc: true });
        }
    }
    for &(k, w) in &right {
        nodes.push(ContourNode { k, weight: w, half: Half::Upper, on_arc: false });
    }
    Ok(nodes)
}

#[derive(Debug, Clone)]
pub struct ContourPair {
    pub spec: ContourSpec,
    pub upper: Vec<ContourNode>,
    pub lower: Vec<ContourNode>,
}

impl ContourPair {
    pub fn build(p: &PhysicalParams, spec: &ContourSpec) -> Result<Self> {
        Ok(Self {
            spec: *spec,
            upper: build_contour(p, spec, Half::Upper)?,
            lower: build_contour(p, spec, Half::Lower)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourDiagnostics {
    pub checked: usize,
    pub max_violation: f64,
    pub worst: Option<usize>,
    pub tolerance: f64,
    pub ok: bool,
}

/// Checks that every off-arc node lies on the level set min(Re w1, Re w2) = 0.
pub fn validate_contour(p: &PhysicalParams, nodes: &[ContourNode]) -> ContourDiagnostics {
    let tolerance = 1e-8 / p.tau;
    let mut max_violation = 0.0;
    let mut worst = None;
    let mut checked = 0;
    for (i, n) in nodes.iter().enumerate().filter(|(_, n)| !n.on_arc) {
        let sp = dispersion(p, n.k);
        let v = sp.omega1.re.min(sp.omega2.re).abs();
        checked += 1;
        if v > max_violation || !v.is_finite() {
            max_violation = v;
            worst = Some(i);
        }
    }
    ContourDiagnostics { checked, max_violation, worst, tolerance, ok: max_violation <= tolerance }
}

pub fn write_contour_csv<W: Write>(out: W, nodes: &[ContourNode]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(["k_re", "k_im", "w_re", "w_im", "half"]).map_err(io)?;
    for n in nodes {
        w.write_record([
            format!("{:.16e}", n.k.re),
            format!("{:.16e}", n.k.im),
            format!("{:.16e}", n.weight.re),
            format!("{:.16e}", n.weight.im),
            n.half.label().to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect_cubic(big_c: f64, x: f64) -> f64 {
        let (a, b, c) = cubic_coeffs(big_c, x);
        let (mut lo, mut hi) = (0.0, 4.0 + 2.0 * x * x);
        assert!(cubic(a, b, c, lo) <= 0.0 && cubic(a, b, c, hi) > 0.0);
        for _ in 0..300 {
            let m = 0.5 * (lo + hi);
            if cubic(a, b, c, m) > 0.0 {
                hi = m;
            } else {
                lo = m;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn spot_heights() {
        assert!((contour_height(1.0, 1.0) - 1.0).abs() < 1e-14);
        assert_eq!(contour_height(0.3, 0.0), 0.0);
        let s = bisect_cubic(0.1, 1.0);
        assert!((s - 1.8997).abs() < 1e-3, "{s}");
        let w = cardano_root(-1.0, 0.4, -4.0).unwrap();
        assert!((w.s - s).abs() < 1e-12);
        assert!((contour_height(0.1, 1.0) - s.sqrt()).abs() < 1e-12);
        assert!((contour_height(0.1, 1.0) - 1.3783).abs() < 1e-3);
        let w = cardano_root(-1.0, 4.0, -4.0).unwrap();
        assert!((w.s - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cardano_invariants() {
        for &big_c in &[0.1, 0.5, 1.0, 2.0, 10.0] {
            for i in 0..=200 {
                let x = 50.0 * i as f64 / 200.0;
                let (a, b, c) = cubic_coeffs(big_c, x);
                if x == 0.0 {
                    continue;
                }
                let w = cardano_root(a, b, c).unwrap();
                let ab = w.root_alpha * w.root_beta;
                assert!((ab + w.p / 3.0).norm() <= 1e-12 * (w.p / 3.0).abs().max(1e-300) + 1e-14);
                assert!(w.s >= 0.0);
                assert!(cubic(a, b, c, w.s).abs() <= 1e-10 * c.abs().max(1.0));
                let s_bis = bisect_cubic(big_c, x);
                assert!((w.s.sqrt() - s_bis.sqrt()).abs() <= 1e-9, "C={big_c} x={x}");
            }
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        for &big_c in &[0.1, 1.0, 3.0] {
            for &x in &[0.05, 0.4, 1.3, 7.0] {
                let h = 1e-6 * x;
                let fd = (contour_height(big_c, x + h) - contour_height(big_c, x - h)) / (2.0 * h);
                let (_, dy) = contour_height_with_slope(big_c, x);
                assert!((fd - dy).abs() < 1e-6 * (1.0 + dy.abs()), "C={big_c} x={x}: {fd} vs {dy}");
                let (_, dm) = contour_height_with_slope(big_c, -x);
                assert_eq!(dm, -dy);
            }
        }
    }

    fn flash_slab() -> PhysicalParams {
        PhysicalParams::new(1.0, 0.02, 0.02, 1.0).unwrap()
    }

    #[test]
    fn c_one_path_is_diagonal() {
        let p = flash_slab();
        let spec = ContourSpec::auto(&p, 1.0, 1.0);
        for half in [Half::Upper, Half::Lower] {
            let nodes = build_contour(&p, &spec, half).unwrap();
            for n in nodes.iter().filter(|n| !n.on_arc) {
                assert!((n.k.im.abs() - n.k.re.abs()).abs() <= 1e-12 * n.k.re.abs().max(1.0));
                assert!(n.k.re.abs() >= spec.origin_radius / 2f64.sqrt() * (1.0 - 1e-12));
            }
            let d = validate_contour(&p, &nodes);
            assert!(d.ok, "{d:?}");
        }
    }

    #[test]
    fn steep_path_lies_above_diagonal() {
        let p = PhysicalParams::new(1.0, 0.02, 0.2, 1.0).unwrap();
        let spec = ContourSpec::auto(&p, 1.0, 1.0);
        let nodes = build_contour(&p, &spec, Half::Upper).unwrap();
        for n in nodes.iter().filter(|n| !n.on_arc) {
            assert!(n.k.im > n.k.re.abs());
        }
        let far = nodes.last().unwrap().k;
        assert!((far.im / far.re - 1.0).abs() < 0.05);
        assert!(validate_contour(&p, &nodes).ok);
    }

    #[test]
    fn shifted_node_is_flagged() {
        let p = flash_slab();
        let spec = ContourSpec::auto(&p, 1.0, 1.0);
        let mut nodes = build_contour(&p, &spec, Half::Upper).unwrap();
        let j = nodes.iter().position(|n| !n.on_arc && n.k.re > 2.0).unwrap();
        nodes[j].k.im *= 2.0;
        let d = validate_contour(&p, &nodes);
        assert!(!d.ok && d.worst == Some(j));
    }

    #[test]
    fn weights_integrate_polynomials() {
        let p = PhysicalParams::new(1.0, 0.05, 0.3, 1.0).unwrap();
        let spec = ContourSpec { k_max: 20.0, n_nodes: 800, origin_radius: 0.5, grading: 0.3 };
        for half in [Half::Upper, Half::Lower] {
            let nodes = build_contour(&p, &spec, half).unwrap();
            let h = upper_height(&p, spec.k_max);
            let (mut a, mut b) = (C64::new(-spec.k_max, h), C64::new(spec.k_max, h));
            if half == Half::Lower {
                (a, b) = (b.conj(), a.conj());
            }
            let len: C64 = nodes.iter().map(|n| n.weight).sum();
            assert!((len - (b - a)).norm() < 1e-10, "{half:?}");
            let sq: C64 = nodes.iter().map(|n| n.weight * n.k * n.k).sum();
            let want = (b * b * b - a * a * a) / 3.0;
            assert!((sq - want).norm() < 1e-10 * want.norm(), "{sq} {want}");
        }
        let up = build_contour(&p, &spec, Half::Upper).unwrap();
        let lo = build_contour(&p, &spec, Half::Lower).unwrap();
        assert!(up.last().unwrap().k.re > 0.0 && lo[0].k.re > 0.0);
        assert_eq!(lo[0].k, up.last().unwrap().k.conj());
    }

    #[test]
    fn folded_path_is_traced() {
        for (mu2, tau) in [(0.2, 0.02), (1.0, 0.01)] {
            let p = PhysicalParams::new(1.0, tau, mu2, 1.0).unwrap();
            let (x1, x2) = fold_window(p.big_c()).unwrap();
            assert!(x1 < x2);
            let r0 = ContourSpec::default_radius(&p);
            let spec = ContourSpec { k_max: 20.0, n_nodes: 800, origin_radius: r0, grading: 0.3 };
            let nodes = build_contour(&p, &spec, Half::Upper).unwrap();
            let d = validate_contour(&p, &nodes);
            assert!(d.ok, "{d:?}");
            let h = upper_height(&p, 20.0);
            let (a, b) = (C64::new(-20.0, h), C64::new(20.0, h));
            let z = C64::new(0.0, 0.3);
            let sum: C64 = nodes.iter().map(|n| n.weight * (z * n.k).exp()).sum();
            let want = ((z * b).exp() - (z * a).exp()) / z;
            assert!((sum - want).norm() < 1e-12 * want.norm().max(1.0));
            // Heights increase monotonically through the fold.
            let right: Vec<_> = nodes.iter().filter(|n| !n.on_arc && n.k.re > 0.0).collect();
            assert!(right.windows(2).all(|w| w[1].k.im > w[0].k.im));
        }
        assert!(fold_window(1.0).is_none() && fold_window(0.5).is_none());
    }

    #[test]
    fn csv_header() {
        let p = flash_slab();
        let spec = ContourSpec { k_max: 5.0, n_nodes: 96, origin_radius: 0.5, grading: 0.0 };
        let nodes = build_contour(&p, &spec, Half::Upper).unwrap();
        let mut buf = Vec::new();
        write_contour_csv(&mut buf, &nodes).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k_re,k_im,w_re,w_im,half\n"));
        assert_eq!(text.lines().count(), nodes.len() + 1);
    }
}
