//! Dispersion relation, eigen-decomposition of the symbol matrix and the
//! boundary coefficients of the Guyer-Krumhansl system
//!
//! ```text
//! e_t + q_x = f,    tau q_t + q - mu2 q_xx + alpha e_x = 0
//! ```

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Relative gap below which the root pair counts as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub alpha: f64,
    pub tau: f64,
    pub mu2: f64,
    pub l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    pub beta: f64,
    pub theta: f64,
    pub big_c: f64,
}

impl PhysicalParams {
    pub fn new(alpha: f64, tau: f64, mu2: f64, l: f64) -> Result<Self> {
        let p = Self { alpha, tau, mu2, l };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("tau", self.tau), ("mu2", self.mu2), ("l", self.l)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        self.alpha / self.tau
    }

    pub fn theta(&self) -> f64 {
        self.mu2 / self.tau
    }

    pub fn big_c(&self) -> f64 {
        self.alpha * self.tau / self.mu2
    }

    pub fn mu(&self) -> f64 {
        self.mu2.sqrt()
    }
}

pub fn derive_params(p: &PhysicalParams) -> Result<DerivedParams> {
    p.validate()?;
    Ok(DerivedParams { beta: p.beta(), theta: p.theta(), big_c: p.big_c() })
}

/// A wavenumber together with its two dispersion rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralPoint {
    pub k: C64,
    pub omega1: C64,
    pub omega2: C64,
}

impl SpectralPoint {
    /// Same rates with the labels exchanged.
    pub fn swapped(&self) -> Self {
        Self { k: self.k, omega1: self.omega2, omega2: self.omega1 }
    }

    /// The point -k; the rates depend on k only through k^2.
    pub fn mirrored(&self) -> Self {
        Self { k: -self.k, ..*self }
    }

    pub fn gap(&self) -> f64 {
        (self.omega1 - self.omega2).norm()
    }

    pub fn is_degenerate(&self) -> bool {
        self.gap() < DEGENERACY_TOL * self.omega1.norm().max(self.omega2.norm())
    }
}

/// Roots of w^2 - ((1 + mu2 k^2)/tau) w + (alpha/tau) k^2 = 0.
///
/// `omega1` is the root of larger modulus. The square root is taken with the
/// sign that avoids cancellation and the small root comes from the product,
/// so both Vieta identities hold to rounding.
pub fn dispersion(p: &PhysicalParams, k: C64) -> SpectralPoint {
    let k2 = k * k;
    let b = 1.0 + p.mu2 * k2;
    let disc = b * b - 4.0 * p.alpha * p.tau * k2;
    let mut d = disc.sqrt();
    if (b.conj() * d).re < 0.0 {
        d = -d;
    }
    let omega1 = (b + d) / (2.0 * p.tau);
    let omega2 = if omega1.norm() > 0.0 { p.beta() * k2 / omega1 } else { C64::new(0.0, 0.0) };
    SpectralPoint { k, omega1, omega2 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[C64; 2]; 2]);

impl Mat2 {
    pub fn identity() -> Self {
        let o = C64::new(1.0, 0.0);
        let z = C64::new(0.0, 0.0);
        Mat2([[o, z], [z, o]])
    }

    pub fn diag(a: C64, b: C64) -> Self {
        let z = C64::new(0.0, 0.0);
        Mat2([[a, z], [z, b]])
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        let a = &self.0;
        let b = &o.0;
        let mut r = [[C64::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Mat2(r)
    }

    pub fn apply(&self, v: [C64; 2]) -> [C64; 2] {
        let a = &self.0;
        [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
    }

    pub fn sub(&self, o: &Mat2) -> Mat2 {
        let mut r = self.0;
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] -= o.0[i][j];
            }
        }
        Mat2(r)
    }

    pub fn scale(&self, s: C64) -> Mat2 {
        let mut r = self.0;
        for row in r.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        Mat2(r)
    }

    pub fn det(&self) -> C64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    /// Largest entry modulus.
    pub fn max_norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenMatrices {
    pub lambda: Mat2,
    pub s: Mat2,
    pub sinv: Mat2,
    pub omega: Mat2,
}

/// Symbol matrix of the first-order system, written as u_t + Lambda u = 0
/// in Fourier space.
pub fn lambda_matrix(p: &PhysicalParams, k: C64) -> Mat2 {
    let z = C64::new(0.0, 0.0);
    Mat2([[z, I * k], [I * k * p.beta(), p.theta() * k * k + 1.0 / p.tau]])
}

/// S^{-1} as an unnormalised matrix; it is defined for every k.
pub fn sinv_matrix(sp: &SpectralPoint) -> Mat2 {
    let ik = I * sp.k;
    Mat2([[-sp.omega2, ik], [sp.omega1, -ik]])
}

/// S with columns the eigenvectors (1, w_m/(ik)), scaled by 1/(w1 - w2).
pub fn s_matrix(sp: &SpectralPoint) -> Result<Mat2> {
    if sp.k.norm() == 0.0 {
        return Err(Error::SingularAtOrigin);
    }
    if sp.is_degenerate() {
        return Err(Error::Degenerate { k: sp.k, gap: sp.gap() });
    }
    let ik = I * sp.k;
    let c = 1.0 / (sp.omega1 - sp.omega2);
    Ok(Mat2([[c, c], [c * sp.omega1 / ik, c * sp.omega2 / ik]]))
}

pub fn eigen_matrices(p: &PhysicalParams, sp: &SpectralPoint) -> Result<EigenMatrices> {
    Ok(EigenMatrices {
        lambda: lambda_matrix(p, sp.k),
        s: s_matrix(sp)?,
        sinv: sinv_matrix(sp),
        omega: Mat2::diag(sp.omega1, sp.omega2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaPair {
    pub sigma1: C64,
    pub sigma2: C64,
    pub gamma: f64,
}

/// Boundary coefficients multiplying the unknown energy transforms.
pub fn sigma_coeffs(p: &PhysicalParams, sp: &SpectralPoint, gamma: f64) -> SigmaPair {
    let (beta, theta) = (p.beta(), p.theta());
    let k = sp.k;
    let k2 = k * k;
    SigmaPair {
        sigma1: I * k * (beta - theta * sp.omega1) + gamma * (sp.omega2 - theta * k2),
        sigma2: I * k * (beta - theta * sp.omega2) + gamma * (sp.omega1 - theta * k2),
        gamma,
    }
}

/// The factor `beta - theta w_m` shared by sigma_m(k) and sigma_m(-k).
///
/// Because w_other - theta k^2 = k^2 (beta - theta w_m) / w_m, every sigma
/// factors as rho_m (ik + gamma k^2 / w_m). When rho_m vanishes the direct
/// formulas give 0/0 while the reduced ones stay regular.
pub fn rho(p: &PhysicalParams, omega: C64) -> C64 {
    p.beta() - p.theta() * omega
}

/// Reduced coefficient ik + gamma k^2 / w, so that sigma_m = rho_m * reduced.
pub fn sigma_reduced(k: C64, omega: C64, gamma: f64) -> C64 {
    if gamma == 0.0 {
        I * k
    } else {
        I * k + gamma * k * k / omega
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaPair {
    pub delta1: C64,
    pub delta2: C64,
}

/// Determinant with the exponential e^{i sign k l} kept apart from the
/// bounded mantissa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactoredDelta {
    /// +1 for e^{ikl}, -1 for e^{-ikl}.
    pub sign: i8,
    pub mantissa: C64,
    /// Largest modulus among the two products forming the mantissa.
    pub scale: f64,
}

impl FactoredDelta {
    pub fn value(&self, k: C64, l: f64) -> C64 {
        (I * k * l * self.sign as f64).exp() * self.mantissa
    }

    pub fn relative_size(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            self.mantissa.norm() / self.scale
        }
    }
}

/// Delta_m = e^{ikl} s0(k) sl(k) - e^{-ikl} s0(-k) sl(-k), where s0, sl are
/// the sigma_m coefficients at the two ends.
pub fn factored_delta(k: C64, l: f64, s0: C64, sl: C64, s0m: C64, slm: C64) -> FactoredDelta {
    let plus = s0 * sl;
    let minus = s0m * slm;
    if k.im >= 0.0 {
        // e^{2ikl} is bounded in the upper half plane.
        let e2 = (2.0 * I * k * l).exp();
        let a = e2 * plus;
        FactoredDelta { sign: -1, mantissa: a - minus, scale: a.norm().max(minus.norm()) }
    } else {
        let e2 = (-2.0 * I * k * l).exp();
        let b = e2 * minus;
        FactoredDelta { sign: 1, mantissa: plus - b, scale: plus.norm().max(b.norm()) }
    }
}

pub fn delta_dets_factored(
    p: &PhysicalParams,
    sp: &SpectralPoint,
    gamma0: f64,
    gammal: f64,
) -> [FactoredDelta; 2] {
    let m = sp.mirrored();
    let s0 = sigma_coeffs(p, sp, gamma0);
    let sl = sigma_coeffs(p, sp, gammal);
    let s0m = sigma_coeffs(p, &m, gamma0);
    let slm = sigma_coeffs(p, &m, gammal);
    [
        factored_delta(sp.k, p.l, s0.sigma1, sl.sigma1, s0m.sigma1, slm.sigma1),
        factored_delta(sp.k, p.l, s0.sigma2, sl.sigma2, s0m.sigma2, slm.sigma2),
    ]
}

pub fn delta_dets(p: &PhysicalParams, sp: &SpectralPoint, gamma0: f64, gammal: f64) -> DeltaPair {
    let [d1, d2] = delta_dets_factored(p, sp, gamma0, gammal);
    DeltaPair { delta1: d1.value(sp.k, p.l), delta2: d2.value(sp.k, p.l) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flash_slab() -> PhysicalParams {
        PhysicalParams::new(1.0, 0.02, 0.02, 1.0).unwrap()
    }

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol * (1.0 + b.norm())
    }

    #[test]
    fn derived_ratios() {
        let d = derive_params(&flash_slab()).unwrap();
        assert!((d.beta - 50.0).abs() < 1e-12 && (d.theta - 1.0).abs() < 1e-12);
        assert!((d.big_c - 1.0).abs() < 1e-12);
        let d = derive_params(&PhysicalParams { alpha: 1.0, tau: 0.02, mu2: 0.2, l: 1.0 }).unwrap();
        assert!((d.theta - 10.0).abs() < 1e-12 && (d.big_c - 0.1).abs() < 1e-12);
        assert!(PhysicalParams::new(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(PhysicalParams::new(1.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn dispersion_examples() {
        let p = flash_slab();
        let sp = dispersion(&p, C64::new(0.0, 0.0));
        assert!(close(sp.omega1, C64::new(50.0, 0.0), 1e-14));
        assert_eq!(sp.omega2, C64::new(0.0, 0.0));
        let sp = dispersion(&p, C64::new(1.0, 0.0));
        assert!(close(sp.omega1, C64::new(50.0, 0.0), 1e-13));
        assert!(close(sp.omega2, C64::new(1.0, 0.0), 1e-13));
    }

    #[test]
    fn sinv_at_one() {
        let p = flash_slab();
        let sp = dispersion(&p, C64::new(1.0, 0.0));
        let m = eigen_matrices(&p, &sp).unwrap();
        let want = [[C64::new(-1.0, 0.0), I], [C64::new(50.0, 0.0), -I]];
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(m.sinv.0[i][j], want[i][j], 1e-12));
            }
        }
    }

    #[test]
    fn diagonalization() {
        let p = flash_slab();
        let sp = dispersion(&p, C64::new(3.7, -1.2));
        let m = eigen_matrices(&p, &sp).unwrap();
        let id = m.s.mul(&m.sinv);
        assert!(id.sub(&Mat2::identity()).max_norm() < 1e-12);
        let rec = m.s.mul(&m.omega).mul(&m.sinv);
        assert!(rec.sub(&m.lambda).max_norm() < 1e-12 * m.lambda.max_norm());
        for w in [sp.omega1, sp.omega2] {
            let det = m.lambda.sub(&Mat2::diag(w, w)).det();
            assert!(det.norm() < 1e-10 * (1.0 + w.norm() * w.norm()));
        }
        assert_eq!(s_matrix(&dispersion(&p, C64::new(0.0, 0.0))), Err(Error::SingularAtOrigin));
    }

    #[test]
    fn sigma_examples() {
        let p = flash_slab();
        let sp = dispersion(&p, C64::new(1.0, 0.0));
        let s = sigma_coeffs(&p, &sp, 0.2);
        assert!(s.sigma1.norm() < 1e-12);
        assert!(close(s.sigma2, C64::new(9.8, 49.0), 1e-12));

        let sp0 = dispersion(&p, C64::new(0.0, 0.0));
        let s = sigma_coeffs(&p, &sp0, 0.3);
        assert!(s.sigma1.norm() < 1e-12);
        assert!(close(s.sigma2, C64::new(0.3 / p.tau, 0.0), 1e-12));
    }

    #[test]
    fn sigma_factorization() {
        let p = PhysicalParams::new(1.3, 0.05, 0.11, 1.0).unwrap();
        for k in [C64::new(0.7, 0.4), C64::new(-2.0, 1.1), C64::new(5.0, -3.0)] {
            let sp = dispersion(&p, k);
            let g = 0.37;
            let s = sigma_coeffs(&p, &sp, g);
            let r1 = rho(&p, sp.omega1) * sigma_reduced(k, sp.omega1, g);
            let r2 = rho(&p, sp.omega2) * sigma_reduced(k, sp.omega2, g);
            assert!(close(r1, s.sigma1, 1e-12), "{r1} {}", s.sigma1);
            assert!(close(r2, s.sigma2, 1e-12), "{r2} {}", s.sigma2);
        }
    }

    #[test]
    fn delta_insulated_zeros_on_real_axis() {
        let p = flash_slab();
        for n in 1..6 {
            let k = C64::new(std::f64::consts::PI * n as f64, 0.0);
            let sp = dispersion(&p, k);
            let d = delta_dets(&p, &sp, 0.0, 0.0);
            let s1 = sigma_coeffs(&p, &sp, 0.0).sigma1;
            assert!(d.delta1.norm() < 1e-12 * (1.0 + s1.norm_sqr()));
            // Closed form -k^2 rho^2 (e^{ikl} - e^{-ikl}) just off the axis.
            let k = k + C64::new(0.1, 0.05);
            let sp = dispersion(&p, k);
            let d = delta_dets(&p, &sp, 0.0, 0.0);
            let r = rho(&p, sp.omega2);
            let want = -k * k * r * r * ((I * k).exp() - (-I * k).exp());
            assert!(close(d.delta2, want, 1e-12));
        }
    }
}
