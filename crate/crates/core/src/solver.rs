//! Assembly and evaluation of the contour-integral representation.
//!
//! Two code paths exist. The direct path (`spectral_knowns`,
//! `boundary_unknowns`, `assemble_boundary_vectors`) follows the displayed
//! formulas literally and is meant for inspection at moderate |k|. The
//! production path works with the reduced coefficients
//! `s_m(+-k) = +-ik + gamma k^2/w_m` and with every exponential of k l
//! pulled into a bounded factor, so it is safe on the whole contour.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::contour::{gl_rule, upper_height, ContourNode, ContourPair, ContourSpec, Half};
use crate::error::{Error, Result};
use crate::gk::{
    delta_dets, dispersion, lambda_matrix, s_matrix, sigma_coeffs, DeltaPair, Mat2, PhysicalParams,
    SigmaPair, SpectralPoint, I,
};
use crate::transforms::{phi1, SourceTerm, SpaceProfile, TimeSignal};

/// Nodes with |Delta| below this fraction of its larger product are nudged.
pub const CONDITIONING_FLOOR: f64 = 1e-8;

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: PhysicalParams,
    pub gamma0: f64,
    pub gammal: f64,
    /// Prescribed `gamma0 e + q` at x = 0.
    pub g: TimeSignal,
    /// Prescribed `gammal e - q` at x = l.
    pub h: TimeSignal,
    pub phi: SpaceProfile,
    pub psi: SpaceProfile,
    pub source: SourceTerm,
}

impl Scenario {
    pub fn zero(params: PhysicalParams) -> Self {
        Self {
            params,
            gamma0: 0.0,
            gammal: 0.0,
            g: TimeSignal::Zero,
            h: TimeSignal::Zero,
            phi: SpaceProfile::Zero,
            psi: SpaceProfile::Zero,
            source: SourceTerm::Zero,
        }
    }

    /// Flux pulse at x = 0, Newton cooling with coefficient `gammal` at x = l.
    pub fn laser_flash(params: PhysicalParams, gammal: f64, tau_delta: f64) -> Self {
        Self { gammal, g: TimeSignal::LaserFlash { tau_delta }, ..Self::zero(params) }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        for (name, v) in [("gamma0", self.gamma0), ("gammal", self.gammal)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Domain(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        self.g.validate()?;
        self.h.validate()?;
        let l = self.params.l;
        self.phi.validate(l)?;
        self.psi.validate(l)?;
        self.source.validate(l)
    }

    pub fn has_initial_data(&self) -> bool {
        !(self.phi.is_zero() && self.psi.is_zero())
    }

    pub fn has_source(&self) -> bool {
        !self.source.is_zero()
    }

    pub fn is_zero(&self) -> bool {
        self.g.is_zero() && self.h.is_zero() && !self.has_initial_data() && !self.has_source()
    }

    /// Flux-driven left end, homogeneous Newton or insulated right end, no
    /// initial data or sources.
    pub fn is_fastpath(&self) -> bool {
        self.gamma0 == 0.0 && self.h.is_zero() && !self.has_initial_data() && !self.has_source()
    }

    /// Exponential decay distances of the upper and lower contour integrands
    /// for output points in [x_lo, x_hi].
    pub fn decay_distances(&self, x_lo: f64, x_hi: f64) -> (f64, f64) {
        let l = self.params.l;
        let interior = self.has_initial_data() || self.has_source();
        let up = x_lo + if self.g.is_zero() && !interior { l } else { 0.0 };
        let lo = (l - x_hi) + if self.h.is_zero() && !interior { l } else { 0.0 };
        (up, lo)
    }

    /// Contour sized for output points in [x_lo, x_hi] up to time t_max.
    pub fn auto_contour(&self, x_lo: f64, x_hi: f64, t_max: f64) -> ContourSpec {
        let (up, lo) = self.decay_distances(x_lo, x_hi);
        ContourSpec::auto(&self.params, up.min(lo), t_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownPair {
    pub plus: [C64; 2],
    pub minus: [C64; 2],
}

/// Known right-hand-side pieces at +k and -k; index 0 is m = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knowns {
    pub v: KnownPair,
    pub w: KnownPair,
    pub phi: KnownPair,
    pub f: KnownPair,
    pub g_tilde: [C64; 2],
    pub h_tilde: [C64; 2],
    pub l_terms: [C64; 2],
    pub r_terms: [C64; 2],
}

/// Time-transformed boundary energies; index 0 is m = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryUnknowns {
    pub e_left: [C64; 2],
    pub e_right: [C64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEval {
    pub sp: SpectralPoint,
    pub sigma0: [SigmaPair; 2],
    pub sigmal: [SigmaPair; 2],
    pub deltas: DeltaPair,
    pub knowns: Knowns,
    pub unknowns: BoundaryUnknowns,
    pub a: [C64; 2],
    pub b: [C64; 2],
}

fn theta_k2(p: &PhysicalParams, k: C64) -> C64 {
    p.theta() * k * k
}

/// (w_m, w_other, sign) for m = 1, 2 where sign is the system sign s_m.
fn modes(sp: &SpectralPoint) -> [(C64, C64, f64); 2] {
    [(sp.omega1, sp.omega2, -1.0), (sp.omega2, sp.omega1, 1.0)]
}

pub fn spectral_knowns(scn: &Scenario, sp: &SpectralPoint, t: f64) -> Knowns {
    let p = &scn.params;
    let (l, theta) = (p.l, p.theta());
    let k = sp.k;
    let th = theta_k2(p, k);
    let mut out = Knowns {
        v: KnownPair { plus: [zero(); 2], minus: [zero(); 2] },
        w: KnownPair { plus: [zero(); 2], minus: [zero(); 2] },
        phi: KnownPair { plus: [zero(); 2], minus: [zero(); 2] },
        f: KnownPair { plus: [zero(); 2], minus: [zero(); 2] },
        g_tilde: [zero(); 2],
        h_tilde: [zero(); 2],
        l_terms: [zero(); 2],
        r_terms: [zero(); 2],
    };
    let (phi0, phil) = (scn.phi.value(0.0, l), scn.phi.value(l, l));
    for (m, (w, wo, s)) in modes(sp).into_iter().enumerate() {
        let ex = (-w * t).exp();
        let gt = scn.g.transform(w, t);
        let ht = scn.h.transform(w, t);
        let lt = phi0 * ex + scn.source.point_transform_grid(0.0, l, w, &[t])[0];
        let rt = phil * ex + scn.source.point_transform_grid(l, l, w, &[t])[0];
        out.g_tilde[m] = gt;
        out.h_tilde[m] = ht;
        out.l_terms[m] = lt;
        out.r_terms[m] = rt;
        let c = wo - th;
        for (sign, kk) in [(1.0, k), (-1.0, -k)] {
            let ph = scn.phi.fourier(kk, 0.0, l);
            let ps = scn.psi.fourier(kk, 0.0, l);
            // nu_m = s_m w_other and the psi coefficient is -s_m i k.
            let phi_m = ex * (s * wo * ph - s * I * kk * ps);
            let f_m = s * wo * scn.source.spectral_transform_grid(kk, 0.0, l, w, &[t])[0];
            let e = (-I * kk * l).exp();
            let v = phi_m + f_m + s * c * (gt + e * ht);
            let wv = s * I * kk * theta * (lt - e * rt);
            let slot = if sign > 0.0 { 0 } else { 1 };
            let set = |pair: &mut KnownPair, val: C64| {
                if slot == 0 {
                    pair.plus[m] = val
                } else {
                    pair.minus[m] = val
                }
            };
            set(&mut out.v, v);
            set(&mut out.w, wv);
            set(&mut out.phi, phi_m);
            set(&mut out.f, f_m);
        }
    }
    out
}

/// Direct solve of the two 2x2 systems with unreduced sigma coefficients.
pub fn boundary_unknowns(scn: &Scenario, sp: &SpectralPoint, kn: &Knowns) -> Result<BoundaryUnknowns> {
    let p = &scn.params;
    let k = sp.k;
    let l = p.l;
    let m = sp.mirrored();
    let s0 = sigma_coeffs(p, sp, scn.gamma0);
    let sl = sigma_coeffs(p, sp, scn.gammal);
    let s0m = sigma_coeffs(p, &m, scn.gamma0);
    let slm = sigma_coeffs(p, &m, scn.gammal);
    let d = delta_dets(p, sp, scn.gamma0, scn.gammal);
    let ep = (I * k * l).exp();
    let em = (-I * k * l).exp();
    let mut out = BoundaryUnknowns { e_left: [zero(); 2], e_right: [zero(); 2] };
    let sel = |sp: &SigmaPair, i: usize| if i == 0 { sp.sigma1 } else { sp.sigma2 };
    for i in 0..2 {
        let (a, b, c, dd) = (sel(&s0, i), em * sel(&slm, i), sel(&s0m, i), ep * sel(&sl, i));
        let delta = if i == 0 { d.delta1 } else { d.delta2 };
        let scale = (a * dd).norm().max((b * c).norm());
        if !(delta.norm() > CONDITIONING_FLOOR * scale) {
            return Err(Error::Conditioning { k, ratio: delta.norm() / scale });
        }
        let s = if i == 0 { -1.0 } else { 1.0 };
        let r0 = s * (kn.v.plus[i] + kn.w.plus[i]);
        let r1 = s * (kn.v.minus[i] + kn.w.minus[i]);
        out.e_left[i] = (dd * r0 - b * r1) / delta;
        out.e_right[i] = (-c * r0 + a * r1) / delta;
    }
    Ok(out)
}

pub fn assemble_boundary_vectors(
    scn: &Scenario,
    sp: &SpectralPoint,
    kn: &Knowns,
    un: &BoundaryUnknowns,
) -> ([C64; 2], [C64; 2]) {
    let p = &scn.params;
    let k = sp.k;
    let th = theta_k2(p, k);
    let ikt = I * k * p.theta();
    let m = sp.mirrored();
    let s0 = sigma_coeffs(p, sp, scn.gamma0);
    let slm = sigma_coeffs(p, &m, scn.gammal);
    let c1 = sp.omega2 - th;
    let c2 = sp.omega1 - th;
    let a = [
        -s0.sigma1 * un.e_left[0] + c1 * kn.g_tilde[0] + ikt * kn.l_terms[0],
        s0.sigma2 * un.e_left[1] - c2 * kn.g_tilde[1] - ikt * kn.l_terms[1],
    ];
    let b = [
        slm.sigma1 * un.e_right[0] - c1 * kn.h_tilde[0] + ikt * kn.r_terms[0],
        -slm.sigma2 * un.e_right[1] + c2 * kn.h_tilde[1] - ikt * kn.r_terms[1],
    ];
    (a, b)
}

pub fn spectral_eval(scn: &Scenario, k: C64, t: f64) -> Result<SpectralEval> {
    let p = &scn.params;
    let sp = dispersion(p, k);
    let m = sp.mirrored();
    let knowns = spectral_knowns(scn, &sp, t);
    let unknowns = boundary_unknowns(scn, &sp, &knowns)?;
    let (a, b) = assemble_boundary_vectors(scn, &sp, &knowns, &unknowns);
    Ok(SpectralEval {
        sp,
        sigma0: [sigma_coeffs(p, &sp, scn.gamma0), sigma_coeffs(p, &m, scn.gamma0)],
        sigmal: [sigma_coeffs(p, &sp, scn.gammal), sigma_coeffs(p, &m, scn.gammal)],
        deltas: delta_dets(p, &sp, scn.gamma0, scn.gammal),
        knowns,
        unknowns,
        a,
        b,
    })
}

/// Which boundary vector a node carries: a' on the upper path, b' on the lower.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Upper,
    Lower,
}

impl Side {
    pub fn of(k: C64) -> Self {
        if k.im >= 0.0 {
            Side::Upper
        } else {
            Side::Lower
        }
    }

    /// Phase origin a in e^{ik(x-a)}.
    fn shift(self, l: f64) -> f64 {
        match self {
            Side::Upper => 0.0,
            Side::Lower => l,
        }
    }
}

/// Per-mode time grids shared by the production formulas.
struct ModeGrids {
    w: C64,
    wo: C64,
    sign: f64,
    g: Vec<C64>,
    h: Vec<C64>,
    lt: Vec<C64>,
    rt: Vec<C64>,
    ex: Vec<C64>,
}

fn mode_grids(scn: &Scenario, w: C64, wo: C64, sign: f64, times: &[f64]) -> ModeGrids {
    let l = scn.params.l;
    let n = times.len();
    let ex: Vec<C64> = times.iter().map(|&t| (-w * t).exp()).collect();
    let grid = |s: &TimeSignal| if s.is_zero() { vec![zero(); n] } else { s.transform_grid(w, times) };
    let point = |x: f64| {
        let phx = scn.phi.value(x, l);
        let mut v: Vec<C64> = ex.iter().map(|e| phx * e).collect();
        if scn.has_source() {
            for (a, b) in v.iter_mut().zip(scn.source.point_transform_grid(x, l, w, times)) {
                *a += b;
            }
        }
        v
    };
    ModeGrids { w, wo, sign, g: grid(&scn.g), h: grid(&scn.h), lt: point(0.0), rt: point(l), ex }
}

/// `e^{-w t}(w_o phi_a(kk) - i kk psi_a(kk)) + w_o f_a(kk, t)` on the time grid.
fn data_grid(scn: &Scenario, mg: &ModeGrids, kk: C64, a: f64, times: &[f64]) -> Option<Vec<C64>> {
    if !scn.has_initial_data() && !scn.has_source() {
        return None;
    }
    let l = scn.params.l;
    let amp = mg.wo * scn.phi.fourier(kk, a, l) - I * kk * scn.psi.fourier(kk, a, l);
    let mut out: Vec<C64> = mg.ex.iter().map(|e| e * amp).collect();
    if scn.has_source() {
        for (o, f) in out.iter_mut().zip(scn.source.spectral_transform_grid(kk, a, l, mg.w, times)) {
            *o += mg.wo * f;
        }
    }
    Some(out)
}

/// Reduced boundary coefficient `+-ik + gamma k^2 / w_m`, with k^2/w_m = w_o/beta.
fn varsigma(kk: C64, wo: C64, gamma: f64, beta: f64) -> C64 {
    if gamma == 0.0 {
        I * kk
    } else {
        I * kk + gamma * wo / beta
    }
}

/// a' (upper side) or b' (lower side) at one node for every time in `times`.
/// Returns the Delta conditioning ratio alongside.
pub fn boundary_vector_grid(
    scn: &Scenario,
    sp: &SpectralPoint,
    side: Side,
    times: &[f64],
) -> Result<(Vec<[C64; 2]>, f64)> {
    let p = &scn.params;
    let (l, beta, theta) = (p.l, p.beta(), p.theta());
    let k = sp.k;
    let ikt = I * k * theta;
    let th = theta_k2(p, k);
    let mut out = vec![[zero(); 2]; times.len()];
    let mut worst = f64::INFINITY;
    for (m, (w, wo, sign)) in modes(sp).into_iter().enumerate() {
        let mg = mode_grids(scn, w, wo, sign, times);
        let c = mg.wo - th;
        let s0 = varsigma(k, wo, scn.gamma0, beta);
        let s0m = varsigma(-k, wo, scn.gamma0, beta);
        let sl = varsigma(k, wo, scn.gammal, beta);
        let slm = varsigma(-k, wo, scn.gammal, beta);
        match side {
            Side::Upper => {
                let e = (I * k * l).exp();
                let (pa, pb) = (e * e * s0 * sl, s0m * slm);
                let mant = pa - pb;
                let ratio = mant.norm() / pa.norm().max(pb.norm());
                worst = worst.min(ratio);
                if !(ratio > CONDITIONING_FLOOR) {
                    return Err(Error::Conditioning { k, ratio });
                }
                let dp = data_grid(scn, &mg, k, l, times);
                let dm = data_grid(scn, &mg, -k, 0.0, times);
                for j in 0..times.len() {
                    let (g, h, lt, rt) = (mg.g[j], mg.h[j], mg.lt[j], mg.rt[j]);
                    let mut pp = (c * h - ikt * rt) + e * (c * g + ikt * lt);
                    let mut mm = (c * g - ikt * lt) + e * (c * h + ikt * rt);
                    if let (Some(dp), Some(dm)) = (&dp, &dm) {
                        pp += dp[j];
                        mm += dm[j];
                    }
                    let y0 = (e * sl * pp - slm * mm) / mant;
                    out[j][m] = mg.sign * (s0 * y0 - c * g - ikt * lt);
                }
            }
            Side::Lower => {
                let f = (-I * k * l).exp();
                let (pa, pb) = (s0 * sl, f * f * s0m * slm);
                let mant = pa - pb;
                let ratio = mant.norm() / pa.norm().max(pb.norm());
                worst = worst.min(ratio);
                if !(ratio > CONDITIONING_FLOOR) {
                    return Err(Error::Conditioning { k, ratio });
                }
                let dp = data_grid(scn, &mg, k, 0.0, times);
                let dm = data_grid(scn, &mg, -k, l, times);
                for j in 0..times.len() {
                    let (g, h, lt, rt) = (mg.g[j], mg.h[j], mg.lt[j], mg.rt[j]);
                    let mut pp = (c * g + ikt * lt) + f * (c * h - ikt * rt);
                    let mut mm = (c * h + ikt * rt) + f * (c * g - ikt * lt);
                    if let (Some(dp), Some(dm)) = (&dp, &dm) {
                        pp += dp[j];
                        mm += dm[j];
                    }
                    let yl = (-f * s0m * pp + s0 * mm) / mant;
                    out[j][m] = mg.sign * (-slm * yl + c * h - ikt * rt);
                }
            }
        }
    }
    Ok((out, worst))
}

/// Contour integrand without the phase e^{ik(x-a)}: S a' or S b'.
pub fn contour_integrand_grid(
    scn: &Scenario,
    sp: &SpectralPoint,
    side: Side,
    times: &[f64],
) -> Result<(Vec<[C64; 2]>, f64)> {
    contour_integrand_masked(scn, sp, side, times, [true; 2])
}

fn contour_integrand_masked(
    scn: &Scenario,
    sp: &SpectralPoint,
    side: Side,
    times: &[f64],
    keep: [bool; 2],
) -> Result<(Vec<[C64; 2]>, f64)> {
    let (v, ratio) = boundary_vector_grid(scn, sp, side, times)?;
    let s = s_matrix(sp)?;
    let mask = |mut x: [C64; 2]| {
        for m in 0..2 {
            if !keep[m] {
                x[m] = zero();
            }
        }
        x
    };
    Ok((v.into_iter().map(|x| s.apply(mask(x))).collect(), ratio))
}

/// Combined integrand `S a' = e^{-ikl} S b'` for flux-driven scenarios.
pub fn fastpath_integrand_grid(scn: &Scenario, sp: &SpectralPoint, times: &[f64]) -> Result<(Vec<[C64; 2]>, f64)> {
    fastpath_integrand_masked(scn, sp, times, [true; 2])
}

fn fastpath_integrand_masked(scn: &Scenario, sp: &SpectralPoint, times: &[f64], keep: [bool; 2]) -> Result<(Vec<[C64; 2]>, f64)> {
    let p = &scn.params;
    let (l, beta) = (p.l, p.beta());
    let k = sp.k;
    let th = theta_k2(p, k);
    let mut parts = [vec![zero(); times.len()], vec![zero(); times.len()]];
    let mut worst = f64::INFINITY;
    for (m, (w, wo, _)) in modes(sp).into_iter().enumerate() {
        let sl = varsigma(k, wo, scn.gammal, beta);
        let slm = varsigma(-k, wo, scn.gammal, beta);
        // r_m = e^{-ikl} s(-k) / (e^{ikl} s(k) + e^{-ikl} s(-k)), scaled by the bounded exponential.
        let (num, den, ratio) = if k.im >= 0.0 {
            let e2 = (2.0 * I * k * l).exp();
            let a = e2 * sl;
            (slm, a + slm, (a + slm).norm() / a.norm().max(slm.norm()))
        } else {
            let e2 = (-2.0 * I * k * l).exp();
            let b = e2 * slm;
            (b, sl + b, (sl + b).norm() / sl.norm().max(b.norm()))
        };
        worst = worst.min(ratio);
        if !(ratio > CONDITIONING_FLOOR) {
            return Err(Error::Conditioning { k, ratio });
        }
        let r = num / den;
        let c = wo - th;
        if keep[m] && !scn.g.is_zero() {
            for (o, g) in parts[m].iter_mut().zip(scn.g.transform_grid(w, times)) {
                *o = r * c * g;
            }
        }
    }
    let gap = sp.omega1 - sp.omega2;
    if sp.is_degenerate() {
        return Err(Error::Degenerate { k, gap: sp.gap() });
    }
    let ik = I * k;
    let out = parts[0]
        .iter()
        .zip(&parts[1])
        .map(|(a, b)| [2.0 * (a - b) / gap, 2.0 * (sp.omega1 * a - sp.omega2 * b) / (ik * gap)])
        .collect();
    Ok((out, worst))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateField {
    pub x_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// e[i][j] at (x_grid[i], t_grid[j]).
    pub e: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

impl StateField {
    pub fn zeros(x_grid: Vec<f64>, t_grid: Vec<f64>) -> Self {
        let (nx, nt) = (x_grid.len(), t_grid.len());
        Self { x_grid, t_grid, e: vec![vec![0.0; nt]; nx], q: vec![vec![0.0; nt]; nx] }
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, nt) = (self.x_grid.len(), self.t_grid.len());
        let shape_ok = self.e.len() == nx
            && self.q.len() == nx
            && self.e.iter().chain(&self.q).all(|r| r.len() == nt);
        if !shape_ok {
            return Err(Error::Data("state field shape does not match its grids".into()));
        }
        if self.e.iter().chain(&self.q).flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("state field contains non-finite values".into()));
        }
        Ok(())
    }

    /// Largest pointwise difference in e and in q.
    pub fn max_abs_diff(&self, o: &StateField) -> Result<(f64, f64)> {
        if self.x_grid != o.x_grid || self.t_grid != o.t_grid {
            return Err(Error::Config("state fields live on different grids".into()));
        }
        let d = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        Ok((d(&self.e, &o.e), d(&self.q, &o.q)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalDiagnostics {
    pub nodes: usize,
    pub nudged: usize,
    /// Smallest |Delta| relative to its larger product over all nodes.
    pub min_delta_ratio: f64,
    /// Largest |Im| of the assembled e and q.
    pub max_imag: f64,
    pub k_max: f64,
    /// Zeros of Delta inside D+ and D- corrected by residues.
    pub poles: usize,
}

struct Accum {
    e: Vec<C64>,
    q: Vec<C64>,
    nudged: usize,
    worst: f64,
}

impl Accum {
    fn new(n: usize) -> Self {
        Self { e: vec![zero(); n], q: vec![zero(); n], nudged: 0, worst: f64::INFINITY }
    }

    fn merge(mut self, o: Accum) -> Accum {
        for (a, b) in self.e.iter_mut().zip(&o.e) {
            *a += b;
        }
        for (a, b) in self.q.iter_mut().zip(&o.q) {
            *a += b;
        }
        self.nudged += o.nudged;
        self.worst = self.worst.min(o.worst);
        self
    }
}

/// Output functional applied to each node: the x-dependent factor multiplying
/// the integrand, one per output column.
#[derive(Debug, Clone, Copy)]
enum Functional {
    Point(f64),
    /// Integral over [0, l].
    Energy,
}

fn functional_weight(func: Functional, k: C64, shift: f64, l: f64) -> C64 {
    match func {
        Functional::Point(x) => (I * k * (x - shift)).exp(),
        // (e^{ikl} - 1)/(ik) for a = 0 and (1 - e^{-ikl})/(ik) for a = l.
        Functional::Energy => {
            if shift == 0.0 {
                l * phi1(-I * k * l)
            } else {
                l * phi1(I * k * l)
            }
        }
    }
}

/// Sum over nodes of w f(k) G(k, t) with f from `funcs`; layout [func][time].
fn accumulate<F>(
    nodes: &[ContourNode],
    funcs: &[Functional],
    nt: usize,
    shift: f64,
    l: f64,
    integrand: F,
) -> Result<Accum>
where
    F: Fn(C64) -> Result<(Vec<[C64; 2]>, f64)> + Sync,
{
    let n = funcs.len() * nt;
    let step = |i: usize| -> Result<(Vec<[C64; 2]>, f64, bool)> {
        let node = &nodes[i];
        match integrand(node.k) {
            Ok((g, r)) => Ok((g, r, false)),
            Err(Error::Conditioning { .. }) | Err(Error::Degenerate { .. }) => {
                let (g, r) = integrand(node.k + 0.5 * node.weight)?;
                Ok((g, r, true))
            }
            Err(e) => Err(e),
        }
    };
    // Fixed chunks merged in order keep the summation order, and hence the
    // output bits, independent of thread scheduling.
    let chunks: Vec<Accum> = nodes
        .par_chunks(ACCUM_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut acc = Accum::new(n);
            for (o, node) in chunk.iter().enumerate() {
                let (g, ratio, nudged) = step(c * ACCUM_CHUNK + o)?;
                acc.worst = acc.worst.min(ratio);
                acc.nudged += nudged as usize;
                for (fi, &func) in funcs.iter().enumerate() {
                    let wf = node.weight * functional_weight(func, node.k, shift, l);
                    for (j, gv) in g.iter().enumerate() {
                        acc.e[fi * nt + j] += wf * gv[0];
                        acc.q[fi * nt + j] += wf * gv[1];
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().fold(Accum::new(n), Accum::merge))
}

const ACCUM_CHUNK: usize = 64;

/// Number of inverse powers of k kept in the large-|k| tail model.
const TAIL_TERMS: usize = 4;

/// `int_1^inf e^{izu} u^{-n} du` for n = 1..=TAIL_TERMS and Im z > 0, by
/// geometric panels in v = 1/u.
fn ray_factors(z: C64) -> [C64; TAIL_TERMS] {
    let rule = gl_rule();
    let mut out = [zero(); TAIL_TERMS];
    let mut hi = 1.0_f64;
    for _ in 0..4000 {
        let lo = 0.8 * hi;
        let (mid, half) = (0.5 * (hi + lo), 0.5 * (hi - lo));
        for &(xg, wg) in &rule {
            let v = mid + half * xg;
            let mut f = half * wg * (I * z / v).exp() / v;
            for o in out.iter_mut() {
                *o += f;
                f *= v;
            }
        }
        if z.im / lo > 50.0 {
            break;
        }
        hi = lo;
    }
    out
}

/// Algebraic large-|k| behaviour `G ~ sum_n c_n / k^{n+1}` of an integrand
/// past a path end, read off along a ray between the path and the real axis
/// where the factors e^{-w1 t} and e^{+-ikl} are negligible.
#[derive(Debug, Clone, Copy)]
struct TailModel {
    c: [[C64; TAIL_TERMS]; 2],
}

fn sector_ray(k_end: C64) -> C64 {
    let ang = k_end.arg();
    let phi = if ang.abs() <= 0.5 * PI { 0.5 * ang } else { ang.signum() * (PI - 0.5 * (PI - ang.abs())) };
    C64::from_polar(1.0, phi)
}

/// Solves the Vandermonde system sum_n d_n v_j^n = f_j (real nodes).
fn vandermonde_solve(v: &[f64; TAIL_TERMS], f: [C64; TAIL_TERMS]) -> [C64; TAIL_TERMS] {
    let mut a = [[0.0; TAIL_TERMS]; TAIL_TERMS];
    for (j, row) in a.iter_mut().enumerate() {
        for (n, x) in row.iter_mut().enumerate() {
            *x = v[j].powi(n as i32);
        }
    }
    let mut b = f;
    for col in 0..TAIL_TERMS {
        let piv = (col..TAIL_TERMS).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..TAIL_TERMS {
            let m = a[r][col] / a[col][col];
            for cc in col..TAIL_TERMS {
                a[r][cc] -= m * a[col][cc];
            }
            b[r] = b[r] - b[col] * m;
        }
    }
    let mut x = [zero(); TAIL_TERMS];
    for r in (0..TAIL_TERMS).rev() {
        let mut acc = b[r];
        for cc in r + 1..TAIL_TERMS {
            acc -= x[cc] * a[r][cc];
        }
        x[r] = acc / a[r][r];
    }
    x
}

fn tail_models<F>(integrand: &F, k_end: C64, times: &[f64], p: &PhysicalParams) -> Result<Vec<TailModel>>
where
    F: Fn(C64) -> Result<(Vec<[C64; 2]>, f64)>,
{
    let t_min = times.iter().copied().filter(|&t| t > 0.0).fold(f64::INFINITY, f64::min);
    let mut r0 = (4.0 * k_end.norm()).max(150.0 / p.l);
    if t_min.is_finite() {
        r0 = r0.max((80.0 / (p.theta() * t_min)).sqrt());
    }
    let base = sector_ray(k_end) * r0.min(1e5);
    // Sample points k_j = base / v_j.
    let v = [1.0, 0.5, 0.25, 0.125];
    let vals: Vec<Vec<[C64; 2]>> = v.iter().map(|&vj| integrand(base / vj).map(|r| r.0)).collect::<Result<_>>()?;
    Ok((0..times.len())
        .map(|n| {
            let mut m = TailModel { c: [[zero(); TAIL_TERMS]; 2] };
            for comp in 0..2 {
                let mut f = [zero(); TAIL_TERMS];
                for j in 0..TAIL_TERMS {
                    f[j] = base / v[j] * vals[j][n][comp];
                }
                let d = vandermonde_solve(&v, f);
                let mut scale = C64::new(1.0, 0.0);
                for (o, dn) in m.c[comp].iter_mut().zip(d) {
                    *o = dn * scale;
                    scale *= base;
                }
            }
            m
        })
        .collect())
}

/// Integral of `sum_n c_n k^{-(n+1)} f(k)` from k_end to infinity along the
/// ray through k_end, for one output functional. At x equal to the phase
/// origin the logarithmic part is taken in the limit from inside the interval.
fn tail_term(func: Functional, c: &[C64; TAIL_TERMS], k_end: C64, shift: f64) -> C64 {
    match func {
        Functional::Point(x) => {
            let z = k_end * (x - shift);
            if z.norm() == 0.0 {
                let mut acc = -c[0] * k_end.ln();
                let mut kp = k_end;
                for (n, cn) in c.iter().enumerate().skip(1) {
                    acc += cn / (n as f64 * kp);
                    kp *= k_end;
                }
                return acc;
            }
            if (-z.im).exp() < 1e-30 {
                return zero();
            }
            let t = ray_factors(z);
            let mut acc = zero();
            let mut kp = C64::new(1.0, 0.0);
            for (cn, tn) in c.iter().zip(t) {
                acc += cn * tn / kp;
                kp *= k_end;
            }
            acc
        }
        // Only the algebraically decaying part of the energy weight survives.
        Functional::Energy => {
            let sgn = if shift == 0.0 { 1.0 } else { -1.0 };
            let mut acc = zero();
            let mut kp = k_end;
            for (n, cn) in c.iter().enumerate() {
                acc += cn / ((n + 1) as f64 * kp);
                kp *= k_end;
            }
            sgn * I * acc
        }
    }
}

fn path_tails<F>(
    p: &PhysicalParams,
    ends: (C64, C64),
    funcs: &[Functional],
    times: &[f64],
    shift: f64,
    integrand: &F,
    acc: &mut Accum,
) -> Result<()>
where
    F: Fn(C64) -> Result<(Vec<[C64; 2]>, f64)>,
{
    let nt = times.len();
    for (k_end, sign) in [(ends.0, -1.0), (ends.1, 1.0)] {
        let models = tail_models(integrand, k_end, times, p)?;
        for (fi, &func) in funcs.iter().enumerate() {
            for (j, m) in models.iter().enumerate() {
                acc.e[fi * nt + j] += sign * tail_term(func, &m.c[0], k_end, shift);
                acc.q[fi * nt + j] += sign * tail_term(func, &m.c[1], k_end, shift);
            }
        }
    }
    Ok(())
}

/// Start and end points of the truncated upper and lower paths.
fn path_ends(p: &PhysicalParams, spec: &ContourSpec) -> [(C64, C64); 2] {
    let h = upper_height(p, spec.k_max);
    let right = C64::new(spec.k_max, h);
    let left = C64::new(-spec.k_max, h);
    [(left, right), (right.conj(), left.conj())]
}

fn check_grid(scn: &Scenario, xs: &[f64], times: &[f64]) -> Result<()> {
    let l = scn.params.l;
    if xs.is_empty() || times.is_empty() {
        return Err(Error::Domain("output grid is empty".into()));
    }
    if let Some(x) = xs.iter().find(|x| !(**x >= 0.0 && **x <= l)) {
        return Err(Error::Domain(format!("x = {x} outside [0, {l}]")));
    }
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::Domain(format!("t = {t} must be finite and nonnegative")));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("times must be nondecreasing".into()));
    }
    Ok(())
}

/// Sorted positive real wavenumbers where w1 = w2.
fn real_branch_points(p: &PhysicalParams) -> Vec<f64> {
    let (at, m2) = (p.alpha * p.tau, p.mu2);
    if m2 == 0.0 || at < m2 {
        return vec![];
    }
    let r = (at - m2).sqrt();
    let mut v = vec![(at.sqrt() - r) / m2, (at.sqrt() + r) / m2];
    v.dedup();
    v
}

/// Gauss-Legendre nodes on [-K, K] with edges uniform in |k| + g k^2 and at
/// real branch points.
pub fn real_axis_nodes(p: &PhysicalParams, spec: &ContourSpec) -> Vec<(f64, f64)> {
    let (k_max, g) = (spec.k_max, spec.grading);
    let psi_max = k_max + g * k_max * k_max;
    let n = (psi_max / 0.5).ceil().max(1.0) as usize;
    let inv = |psi: f64| if g == 0.0 { psi } else { (-1.0 + (1.0 + 4.0 * g * psi).sqrt()) / (2.0 * g) };
    let mut edges: Vec<f64> = (0..=n).map(|i| inv(psi_max * i as f64 / n as f64)).collect();
    edges.extend(real_branch_points(p).into_iter().filter(|&b| b < k_max));
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * (1.0 + b.abs()));
    let rule = gl_rule();
    let mut half = Vec::with_capacity(edges.len() * rule.len());
    for w in edges.windows(2) {
        let (mid, h) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
        for &(xg, wg) in &rule {
            half.push((mid + h * xg, h * wg));
        }
    }
    let mut out: Vec<(f64, f64)> = half.iter().rev().map(|&(k, w)| (-k, w)).collect();
    out.extend(half);
    out
}

/// `(f(w1) - f(w2)) / (w1 - w2)` with a symmetric-difference fallback near coalescence.
pub(crate) fn divided_difference(sp: &SpectralPoint, f: impl Fn(C64) -> Vec<C64>) -> (Vec<C64>, Vec<C64>) {
    let (w1, w2) = (sp.omega1, sp.omega2);
    let f1 = f(w1);
    let f2 = f(w2);
    let mean: Vec<C64> = f1.iter().zip(&f2).map(|(a, b)| 0.5 * (a + b)).collect();
    let gap = w1 - w2;
    let m = 0.5 * (w1 + w2);
    let dd = if gap.norm() > 1e-6 * (w1.norm() + w2.norm()).max(1.0) {
        f1.iter().zip(&f2).map(|(a, b)| (a - b) / gap).collect()
    } else {
        let eta = 1e-3 * m.norm().max(1.0);
        let fp = f(m + eta);
        let fm = f(m - eta);
        fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * eta)).collect()
    };
    (mean, dd)
}

/// `(e^{-w1 t} - e^{-w2 t}) / (w1 - w2)` without cancellation.
pub(crate) fn exp_divided_difference(sp: &SpectralPoint, t: f64) -> C64 {
    let m = 0.5 * (sp.omega1 + sp.omega2);
    let d = 0.5 * (sp.omega1 - sp.omega2);
    let z = d * t;
    if z.norm() > 1.0 {
        ((-sp.omega1 * t).exp() - (-sp.omega2 * t).exp()) / (2.0 * d)
    } else {
        // sinh(z)/z by its Taylor series.
        let z2 = z * z;
        let mut term = C64::new(1.0, 0.0);
        let mut sum = term;
        for n in 1..20 {
            term *= z2 / ((2 * n) as f64 * (2 * n + 1) as f64);
            sum += term;
        }
        -t * (-m * t).exp() * sum
    }
}

/// Real-axis integrand: `e^{-Lambda t} u0^(k) + int e^{-Lambda(t-s)} F^(k,s) ds`
/// with the large-|k| slow-mode parts of the initial data removed: e^{-rt} phi^
/// from e, and from q its flux counterpart
/// -r (phi(0) - e^{-ikl} phi(l)) (e^{-rt} - e^{-(c + theta(k^2+kappa^2))t}) / (k^2 + kappa^2),
/// see [`SlowFlux`].
fn real_axis_integrand(scn: &Scenario, k: f64, times: &[f64], slow: Option<f64>) -> Vec<[C64; 2]> {
    let p = &scn.params;
    let l = p.l;
    let kc = C64::new(k, 0.0);
    let sp = dispersion(p, kc);
    let lam = lambda_matrix(p, kc);
    let m = 0.5 * (sp.omega1 + sp.omega2);
    let shifted = lam.sub(&Mat2::identity().scale(m));
    let mut out = vec![[zero(); 2]; times.len()];
    if scn.has_initial_data() {
        let u0 = [scn.phi.fourier(kc, 0.0, l), scn.psi.fourier(kc, 0.0, l)];
        let su0 = shifted.apply(u0);
        let sf = SlowFlux::new(p);
        let ends = scn.phi.value(0.0, l) - (-I * kc * l).exp() * scn.phi.value(l, l);
        let shape = ends / (k * k + sf.kappa * sf.kappa);
        for (o, &t) in out.iter_mut().zip(times) {
            let mean = 0.5 * ((-sp.omega1 * t).exp() + (-sp.omega2 * t).exp());
            let dd = exp_divided_difference(&sp, t);
            o[0] += mean * u0[0] + dd * su0[0];
            o[1] += mean * u0[1] + dd * su0[1];
            if let Some(rate) = slow {
                o[0] -= (-rate * t).exp() * u0[0];
                o[1] += rate * sf.time_factor(k, t) * shape;
            }
        }
    }
    if scn.has_source() {
        let (mean, dd) =
            divided_difference(&sp, |w| scn.source.spectral_transform_grid(kc, 0.0, l, w, times));
        // Lambda - mI applied to (1, 0).
        let col = [shifted.0[0][0], shifted.0[1][0]];
        for j in 0..times.len() {
            out[j][0] += mean[j] + dd[j] * col[0];
            out[j][1] += dd[j] * col[1];
        }
        if let Some(rate) = slow {
            let r = C64::new(rate, 0.0);
            for (o, f) in out.iter_mut().zip(scn.source.spectral_transform_grid(kc, 0.0, l, r, times)) {
                o[0] -= f;
            }
            // Same flux surrogate as for phi, with f(0, s) and f(l, s) fed in over time.
            let sf = SlowFlux::new(p);
            let kap2 = k * k + sf.kappa * sf.kappa;
            let fast = C64::new(sf.c + sf.theta * kap2, 0.0);
            let end = |x: f64| {
                let (a, b) = (scn.source.point_transform_grid(x, l, r, times), scn.source.point_transform_grid(x, l, fast, times));
                a.into_iter().zip(b).map(|(a, b)| a - b).collect::<Vec<_>>()
            };
            let (f0, fl) = (end(0.0), end(l));
            let phase = (-I * kc * l).exp();
            for (j, o) in out.iter_mut().enumerate() {
                o[1] += rate * (f0[j] - phase * fl[j]) / kap2;
            }
        }
    }
    out
}

/// Nodes on each residue circle.
const POLE_NODES: usize = 64;

/// Zeros of Delta inside D+ (Upper) or D- (Lower) that the deformed
/// representation would miss, as k_I on the imaginary axis.
///
/// Away from the real axis one product of Delta dominates, and its factor
/// sigma(-k) (upper) or sigma(k) (lower) vanishes where w = -+ i gamma k. With
/// k = iy that is gamma theta y^2 - (beta - gamma^2) y - gamma / tau = 0, one
/// root per positive Robin coefficient. The estimate is refined on the
/// (real) normalized determinant.
pub fn interior_poles(p: &PhysicalParams, gamma0: f64, gammal: f64, side: Side) -> Vec<(f64, usize)> {
    let (beta, theta) = (p.beta(), p.theta());
    let sgn = match side {
        Side::Upper => 1.0,
        Side::Lower => -1.0,
    };
    let mut out: Vec<(f64, usize)> = Vec::new();
    for g in [gamma0, gammal] {
        if !(g > 0.0) {
            continue;
        }
        let a = beta - g * g;
        let y0 = (a + (a * a + 4.0 * g * g * theta / p.tau).sqrt()) / (2.0 * g * theta);
        if !(y0.is_finite() && y0 * p.l < 600.0) {
            continue;
        }
        let y = refine_pole(p, gamma0, gammal, sgn * y0);
        // The vanishing factor belongs to the mode with w = g |y|.
        let sp = dispersion(p, C64::new(0.0, y));
        let target = g * y.abs();
        let m = if (sp.omega1 - target).norm() <= (sp.omega2 - target).norm() { 0 } else { 1 };
        if !out.iter().any(|&(o, om)| om == m && (o - y).abs() <= 1e-9 * y.abs()) {
            out.push((y, m));
        }
    }
    out
}

fn refine_pole(p: &PhysicalParams, gamma0: f64, gammal: f64, y0: f64) -> f64 {
    let f = |y: f64| -> f64 {
        let sp = dispersion(p, C64::new(0.0, y));
        let d = crate::gk::delta_dets_factored(p, &sp, gamma0, gammal);
        // Pick the mode whose dominant factor vanishes near y.
        let m = if d[0].mantissa.norm() < d[1].mantissa.norm() { 0 } else { 1 };
        d[m].mantissa.re
    };
    let (mut a, mut b) = (y0 * (1.0 - 1e-3), y0 * (1.0 + 1e-3));
    let mut fa = f(a);
    if !(fa * f(b) < 0.0) {
        return y0;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 || (b - a).abs() <= 1e-15 * m.abs() {
            return m;
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

/// Circles around the interior poles with weights -dk, so that summing the
/// integrand over them subtracts 2 pi i times its residues.
fn pole_circles(scn: &Scenario, side: Side, path: &[ContourNode], r0: f64) -> Vec<(usize, Vec<ContourNode>)> {
    let p = &scn.params;
    let poles = interior_poles(p, scn.gamma0, scn.gammal, side);
    let branch = branch_points(p);
    let mut out = Vec::new();
    for (i, &(y, m)) in poles.iter().enumerate() {
        if y.abs() <= r0 {
            continue;
        }
        let c = C64::new(0.0, y);
        let nearest = |it: &mut dyn Iterator<Item = C64>| it.map(|k| (k - c).norm()).fold(f64::INFINITY, f64::min);
        let to_path = nearest(&mut path.iter().map(|n| n.k));
        let to_branch = nearest(&mut branch.iter().copied());
        let to_other = nearest(&mut poles.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &(o, _))| C64::new(0.0, o)));
        let rho = [0.5 * to_path, 0.5 * to_branch, 0.5 * to_other, 0.5 * (y.abs() - r0), 0.25 * y.abs(), 1.0]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let half = path.first().map(|n| n.half).unwrap_or(Half::Upper);
        let nodes = (0..POLE_NODES)
            .map(|j| {
                let z = C64::from_polar(rho, 2.0 * PI * j as f64 / POLE_NODES as f64);
                ContourNode { k: c + z, weight: -I * z * (2.0 * PI / POLE_NODES as f64), half, on_arc: false }
            })
            .collect();
        out.push((m, nodes));
    }
    out
}

/// Points where the two roots coincide: mu2 k^2 -+ 2 tau sqrt(beta) k + 1 = 0.
fn branch_points(p: &PhysicalParams) -> Vec<C64> {
    let b = p.tau * p.beta().sqrt();
    let d = C64::new(b * b - p.mu2, 0.0).sqrt();
    [b, -b].into_iter().flat_map(|c| [(c + d) / p.mu2, (c - d) / p.mu2]).collect()
}

/// Surrogate for the slow part of the initial-data flux. At large |k| the
/// fast rate is w1 = theta k^2 + 1/tau - r + O(k^-2); the surrogate uses
/// theta k^2 + max(1/tau - r, 0) so it stays bounded at small |k|, where it is
/// removed and restored exactly anyway.
#[derive(Debug, Clone, Copy)]
struct SlowFlux {
    rate: f64,
    theta: f64,
    kappa: f64,
    c: f64,
}

impl SlowFlux {
    fn new(p: &PhysicalParams) -> Self {
        let (rate, theta) = (p.alpha / p.mu2, p.theta());
        let kappa = PI / p.l;
        Self { rate, theta, kappa, c: (1.0 / p.tau - rate).max(0.0) - theta * kappa * kappa }
    }

    fn time_factor(&self, k: f64, t: f64) -> f64 {
        (-self.rate * t).exp() - (-(self.c + self.theta * (k * k + self.kappa * self.kappa)) * t).exp()
    }

    /// `int_0^t f(s) inverse(x, t - s) ds`, with t - s = t u^2 so the square-root
    /// onset of the heat-kernel part is integrated smoothly.
    fn convolve(&self, f: impl Fn(f64) -> f64, x: f64, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        const PANELS: usize = 16;
        let rule = gl_rule();
        let mut acc = 0.0;
        for i in 0..PANELS {
            let (a, b) = (i as f64 / PANELS as f64, (i + 1) as f64 / PANELS as f64);
            for &(z, w) in &rule {
                let u = 0.5 * (a + b) + 0.5 * (b - a) * z;
                let lag = t * u * u;
                acc += 0.5 * (b - a) * w * 2.0 * t * u * f(t - lag) * self.inverse(x, lag);
            }
        }
        acc
    }

    /// Inverse transform of `time_factor / (k^2 + kappa^2)` at distance |x|.
    fn inverse(&self, x: f64, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let (kp, x) = (self.kappa, x.abs());
        let slow = (-self.rate * t).exp() * (-kp * x).exp() / (2.0 * kp);
        // Heat kernel of variance 2 theta t convolved with e^{-kappa|x|}/(2 kappa).
        let s = (self.theta * t).sqrt();
        let (a, b) = (kp * s + x / (2.0 * s), kp * s - x / (2.0 * s));
        let ea = libm::erfc(a);
        let grow = if ea == 0.0 { 0.0 } else { (kp * x).exp() * ea };
        let fast = grow + (-kp * x).exp() * libm::erfc(b);
        slow - (-self.c * t).exp() * fast / (4.0 * kp)
    }
}

/// Rate of the slow mode as |k| grows, or zero when it does not saturate.
fn slow_rate(p: &PhysicalParams) -> Option<f64> {
    (p.mu2 > 0.0).then(|| p.alpha / p.mu2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Full,
    FastPath,
}

fn evaluate(
    scn: &Scenario,
    pair: &ContourPair,
    funcs: &[Functional],
    times: &[f64],
    mode: Mode,
) -> Result<(Vec<C64>, Vec<C64>, EvalDiagnostics)> {
    let p = &scn.params;
    let l = p.l;
    let nt = times.len();
    let n = funcs.len() * nt;
    let mut total = Accum::new(n);
    let mut nodes = 0;
    let mut poles = 0;
    if !scn.is_zero() {
        let ends = path_ends(p, &pair.spec);
        for (path, side, end) in [(&pair.upper, Side::Upper, ends[0]), (&pair.lower, Side::Lower, ends[1])] {
            let shift = match mode {
                Mode::Full => side.shift(l),
                Mode::FastPath => 0.0,
            };
            let integrand = |k: C64| -> Result<(Vec<[C64; 2]>, f64)> {
                let sp = dispersion(p, k);
                match mode {
                    Mode::Full => contour_integrand_grid(scn, &sp, Side::of(k), times),
                    Mode::FastPath => fastpath_integrand_grid(scn, &sp, times),
                }
            };
            let mut acc = accumulate(path, funcs, nt, shift, l, integrand)?;
            // Only the mode that owns the pole is integrated: the other one
            // is analytic there but can be exponentially large inside D.
            for (m, circle) in pole_circles(scn, side, path, pair.spec.origin_radius) {
                let keep = [m == 0, m == 1];
                let masked = |k: C64| -> Result<(Vec<[C64; 2]>, f64)> {
                    let sp = dispersion(p, k);
                    match mode {
                        Mode::Full => contour_integrand_masked(scn, &sp, side, times, keep),
                        Mode::FastPath => fastpath_integrand_masked(scn, &sp, times, keep),
                    }
                };
                let mut extra = accumulate(&circle, funcs, nt, shift, l, masked)?;
                extra.worst = f64::INFINITY;
                acc = acc.merge(extra);
                poles += 1;
            }
            // The fast-path lower integrand carries e^{-2ikl}; its tails are exponentially small.
            if mode == Mode::Full || side == Side::Upper {
                path_tails(p, end, funcs, times, shift, &integrand, &mut acc)?;
            }
            nodes += path.len();
            total = total.merge(acc);
        }
        for v in total.e.iter_mut().chain(total.q.iter_mut()) {
            *v *= -1.0 / (2.0 * PI);
        }
    }
    if matches!(mode, Mode::Full) && (scn.has_initial_data() || scn.has_source()) {
        let slow = slow_rate(p);
        let real = real_axis_nodes(p, &pair.spec);
        nodes += real.len();
        let acc = real
            .par_chunks(ACCUM_CHUNK)
            .map(|chunk| {
                let mut acc = Accum::new(n);
                for &(k, w) in chunk {
                    let g = real_axis_integrand(scn, k, times, slow);
                    let kc = C64::new(k, 0.0);
                    for (fi, &func) in funcs.iter().enumerate() {
                        let wf = w * functional_weight(func, kc, 0.0, l) / (2.0 * PI);
                        for (j, gv) in g.iter().enumerate() {
                            acc.e[fi * nt + j] += wf * gv[0];
                            acc.q[fi * nt + j] += wf * gv[1];
                        }
                    }
                }
                acc
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(Accum::new(n), Accum::merge);
        total = total.merge(acc);
        // Add back the exact inverse transform of the removed slow-mode part.
        if let Some(rate) = slow {
            let mass = profile_integral(&scn.phi, l);
            let (f0, fl) = (scn.phi.value(0.0, l), scn.phi.value(l, l));
            let sf = SlowFlux::new(p);
            for (fi, &func) in funcs.iter().enumerate() {
                for (j, &t) in times.iter().enumerate() {
                    let decay = (-rate * t).exp();
                    match func {
                        // Limit from inside the interval, matching the contour tails.
                        Functional::Point(x) => {
                            let x = x.clamp(0.0, l);
                            total.e[fi * nt + j] += scn.phi.value(x, l) * decay;
                            let flux = f0 * sf.inverse(x, t) - fl * sf.inverse(x - l, t);
                            total.q[fi * nt + j] -= rate * flux;
                        }
                        // Only the energy of e is reported for this functional.
                        Functional::Energy => total.e[fi * nt + j] += mass * decay,
                    }
                }
                if scn.has_source() {
                    let r = C64::new(rate, 0.0);
                    let back = match func {
                        Functional::Point(x) => scn.source.point_transform_grid(x.clamp(0.0, l), l, r, times),
                        Functional::Energy => scn.source.spectral_transform_grid(zero(), 0.0, l, r, times),
                    };
                    for (j, b) in back.into_iter().enumerate() {
                        total.e[fi * nt + j] += b;
                    }
                    if let Functional::Point(x) = func {
                        let x = x.clamp(0.0, l);
                        for (j, &t) in times.iter().enumerate() {
                            let flux = sf.convolve(|s| scn.source.value(0.0, s, l), x, t)
                                - sf.convolve(|s| scn.source.value(l, s, l), x - l, t);
                            total.q[fi * nt + j] -= rate * flux;
                        }
                    }
                }
            }
        }
    }
    let max_imag = total.e.iter().chain(&total.q).map(|v| v.im.abs()).fold(0.0, f64::max);
    let diag = EvalDiagnostics {
        nodes,
        nudged: total.nudged,
        min_delta_ratio: total.worst,
        max_imag,
        k_max: pair.spec.k_max,
        poles,
    };
    Ok((total.e, total.q, diag))
}

fn profile_integral(profile: &SpaceProfile, l: f64) -> f64 {
    profile.fourier(zero(), 0.0, l).re
}

fn to_field(xs: &[f64], times: &[f64], e: Vec<C64>, q: Vec<C64>) -> StateField {
    let nt = times.len();
    let rows = |v: &Vec<C64>| xs.iter().enumerate().map(|(i, _)| v[i * nt..(i + 1) * nt].iter().map(|c| c.re).collect()).collect();
    StateField { x_grid: xs.to_vec(), t_grid: times.to_vec(), e: rows(&e), q: rows(&q) }
}

/// Full representation on an output grid.
pub fn evaluate_solution_grid(
    scn: &Scenario,
    pair: &ContourPair,
    xs: &[f64],
    times: &[f64],
) -> Result<(StateField, EvalDiagnostics)> {
    scn.validate()?;
    check_grid(scn, xs, times)?;
    let funcs: Vec<Functional> = xs.iter().map(|&x| Functional::Point(x)).collect();
    let (e, q, d) = evaluate(scn, pair, &funcs, times, Mode::Full)?;
    Ok((to_field(xs, times, e, q), d))
}

pub fn evaluate_solution(scn: &Scenario, pair: &ContourPair, x: f64, t: f64) -> Result<(f64, f64)> {
    let (f, _) = evaluate_solution_grid(scn, pair, &[x], &[t])?;
    Ok((f.e[0][0], f.q[0][0]))
}

fn require_fastpath(scn: &Scenario) -> Result<()> {
    if !scn.is_fastpath() {
        return Err(Error::Precondition(
            "fast path needs gamma0 = 0, h = 0, f = 0 and zero initial data".into(),
        ));
    }
    Ok(())
}

/// Single combined integrand on both paths; flux-driven scenarios only.
pub fn evaluate_fastpath_grid(
    scn: &Scenario,
    pair: &ContourPair,
    xs: &[f64],
    times: &[f64],
) -> Result<(StateField, EvalDiagnostics)> {
    scn.validate()?;
    require_fastpath(scn)?;
    check_grid(scn, xs, times)?;
    let funcs: Vec<Functional> = xs.iter().map(|&x| Functional::Point(x)).collect();
    let (e, q, d) = evaluate(scn, pair, &funcs, times, Mode::FastPath)?;
    Ok((to_field(xs, times, e, q), d))
}

pub fn evaluate_fastpath_laserflash(scn: &Scenario, pair: &ContourPair, x: f64, t: f64) -> Result<(f64, f64)> {
    if !matches!(scn.g, TimeSignal::LaserFlash { .. } | TimeSignal::Zero) {
        return Err(Error::Precondition("boundary signal g is not a laser-flash pulse".into()));
    }
    let (f, _) = evaluate_fastpath_grid(scn, pair, &[x], &[t])?;
    Ok((f.e[0][0], f.q[0][0]))
}

/// `int_0^l e(x, t) dx` for every t, integrated in spectral space.
pub fn energy_integral(scn: &Scenario, pair: &ContourPair, times: &[f64]) -> Result<Vec<f64>> {
    scn.validate()?;
    check_grid(scn, &[0.0], times)?;
    let mode = if scn.is_fastpath() { Mode::FastPath } else { Mode::Full };
    let (e, _, _) = evaluate(scn, pair, &[Functional::Energy], times, mode)?;
    Ok(e.iter().map(|v| v.re).collect())
}

/// Evaluate on `spec` and on its refinement; fail if they differ by more than `tol`.
pub fn evaluate_checked(
    scn: &Scenario,
    spec: &ContourSpec,
    xs: &[f64],
    times: &[f64],
    fastpath: bool,
    tol: f64,
) -> Result<(StateField, EvalDiagnostics)> {
    let run = |s: &ContourSpec| {
        let pair = ContourPair::build(&scn.params, s)?;
        if fastpath {
            evaluate_fastpath_grid(scn, &pair, xs, times)
        } else {
            evaluate_solution_grid(scn, &pair, xs, times)
        }
    };
    let (coarse, d) = run(spec)?;
    let (fine, _) = run(&spec.refined())?;
    let (de, dq) = coarse.max_abs_diff(&fine)?;
    let scale = 1.0 + fine.e.iter().flatten().fold(0.0_f64, |a, v| a.max(v.abs()));
    if de > tol * scale {
        return Err(Error::Numerical(format!(
            "contour refinement changed e by {de:.3e} (q by {dq:.3e}); raise k_max or n_nodes"
        )));
    }
    Ok((fine, d))
}

/// Field samples at one time on a uniform grid over [0, l].
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub x: Vec<f64>,
    pub e: Vec<f64>,
    pub q: Vec<f64>,
}

/// Boundary values of e and q on a uniform time grid starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTraces {
    pub times: Vec<f64>,
    pub e0: Vec<f64>,
    pub el: Vec<f64>,
    pub q0: Vec<f64>,
    pub ql: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub value: [C64; 2],
    /// Largest component of any single term of the relation.
    pub scale: f64,
}

impl Residual {
    pub fn relative(&self) -> f64 {
        let r = self.value[0].norm().max(self.value[1].norm());
        if self.scale > 0.0 {
            r / self.scale
        } else {
            r
        }
    }
}

impl BoundaryTraces {
    /// Traces taken from the first and last rows of a field sampled at x = 0 and x = l.
    pub fn from_field(field: &StateField) -> Result<Self> {
        field.validate()?;
        let n = field.x_grid.len();
        if n < 2 {
            return Err(Error::Data("boundary traces need both end points".into()));
        }
        Ok(Self {
            times: field.t_grid.clone(),
            e0: field.e[0].clone(),
            el: field.e[n - 1].clone(),
            q0: field.q[0].clone(),
            ql: field.q[n - 1].clone(),
        })
    }
}

impl Snapshot {
    /// Column j of a field.
    pub fn from_field(field: &StateField, j: usize) -> Result<Self> {
        field.validate()?;
        let t = *field.t_grid.get(j).ok_or_else(|| Error::Data("snapshot time index out of range".into()))?;
        Ok(Self {
            t,
            x: field.x_grid.clone(),
            e: field.e.iter().map(|r| r[j]).collect(),
            q: field.q.iter().map(|r| r[j]).collect(),
        })
    }
}

/// Composite Simpson weights on a uniform grid with an odd number of points.
fn simpson_weights(grid: &[f64], lo: f64, hi: f64, what: &str) -> Result<Vec<f64>> {
    let n = grid.len();
    if n < 3 || n % 2 == 0 {
        return Err(Error::Data(format!("{what} grid needs an odd number (>= 3) of points")));
    }
    let h = (hi - lo) / (n - 1) as f64;
    let tol = 1e-9 * (hi - lo).abs().max(1e-300);
    if grid.iter().enumerate().any(|(i, &x)| (x - (lo + i as f64 * h)).abs() > tol) {
        return Err(Error::Data(format!("{what} grid must be uniform on [{lo}, {hi}]")));
    }
    Ok((0..n)
        .map(|i| {
            let c = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect())
}

/// Residual of the diagonalized global relation
/// `S^{-1} u^ - e^{-Omega t} S^{-1} u0^ + a - e^{-ikl} b - F~` at spectral point k,
/// with a and b rebuilt from the sampled boundary traces. The traces must
/// end at the snapshot time.
pub fn global_relation_residual(scn: &Scenario, snap: &Snapshot, traces: &BoundaryTraces, k: C64) -> Result<Residual> {
    scn.validate()?;
    let p = &scn.params;
    let l = p.l;
    let t = snap.t;
    if snap.e.len() != snap.x.len() || snap.q.len() != snap.x.len() {
        return Err(Error::Data("snapshot arrays differ in length".into()));
    }
    let nt = traces.times.len();
    if [&traces.e0, &traces.el, &traces.q0, &traces.ql].iter().any(|v| v.len() != nt) {
        return Err(Error::Data("trace arrays differ in length".into()));
    }
    let wx = simpson_weights(&snap.x, 0.0, l, "space")?;
    let wt = simpson_weights(&traces.times, 0.0, t, "time")?;
    let sp = dispersion(p, k);
    let (w1, w2) = (sp.omega1, sp.omega2);
    let (ik, beta, theta) = (I * k, p.beta(), p.theta());
    let th = theta_k2(p, k);

    let (mut eh, mut qh) = (zero(), zero());
    for i in 0..snap.x.len() {
        let ph = (-ik * snap.x[i]).exp() * wx[i];
        eh += ph * snap.e[i];
        qh += ph * snap.q[i];
    }
    let su = [-w2 * eh + ik * qh, w1 * eh - ik * qh];
    let phi_hat = scn.phi.fourier(k, 0.0, l);
    let psi_hat = scn.psi.fourier(k, 0.0, l);
    let su0 = crate::transforms::initial_spectral_phi(&sp, phi_hat, psi_hat, t);
    let ft = crate::transforms::source_spectral_f(p, &sp, &scn.source, t);

    let tilde = |w: C64, v: &[f64]| -> C64 {
        traces.times.iter().zip(v).zip(&wt).map(|((&s, &y), &c)| (-w * (t - s)).exp() * (c * y)).sum()
    };
    // [ik beta e~0 - (w_other - theta k^2) q~0 - ik theta q~1] at one end for one mode.
    let bracket = |w: C64, wo: C64, x: f64, e: &[f64], q: &[f64], e_now: f64| -> C64 {
        let et = tilde(w, e);
        let qt = tilde(w, q);
        let ft = scn.source.point_transform_grid(x, l, w, &[t])[0];
        let q1 = w * et - e_now + scn.phi.value(x, l) * (-w * t).exp() + ft;
        ik * beta * et - (wo - th) * qt - ik * theta * q1
    };
    let (e0_now, el_now) = (traces.e0[nt - 1], traces.el[nt - 1]);
    let a = [
        -bracket(w1, w2, 0.0, &traces.e0, &traces.q0, e0_now),
        bracket(w2, w1, 0.0, &traces.e0, &traces.q0, e0_now),
    ];
    let b = [
        -bracket(w1, w2, l, &traces.el, &traces.ql, el_now),
        bracket(w2, w1, l, &traces.el, &traces.ql, el_now),
    ];
    let el = (-ik * l).exp();
    let mut value = [zero(); 2];
    let mut scale = 0.0_f64;
    for c in 0..2 {
        let terms = [su[c], -su0[c], a[c], -el * b[c], -ft[c]];
        value[c] = terms.iter().sum();
        scale = terms.iter().fold(scale, |m, v| m.max(v.norm()));
    }
    Ok(Residual { value, scale })
}

/// Residual using a field sampled on uniform grids over [0, l] x [0, t_end],
/// evaluated at its final time.
pub fn field_global_relation_residual(scn: &Scenario, field: &StateField, k: C64) -> Result<Residual> {
    let snap = Snapshot::from_field(field, field.t_grid.len().saturating_sub(1))?;
    let traces = BoundaryTraces::from_field(field)?;
    global_relation_residual(scn, &snap, &traces, k)
}
