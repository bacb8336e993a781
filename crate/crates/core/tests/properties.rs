use num_complex::Complex64 as C64;
use proptest::prelude::*;

use gk_utm::contour::{build_contour, contour_height, cubic_coeffs, cubic_nonneg_roots, implicit_residual, ContourSpec, Half};
use gk_utm::fd::{fd_energy_audit, fd_solve, FdGrid};
use gk_utm::gk::{delta_dets, dispersion, eigen_matrices, sigma_coeffs, PhysicalParams};
use gk_utm::series::{series_energy_initial, series_from_coeffs, FourierCoeffs};
use gk_utm::solver::{contour_integrand_grid, spectral_knowns, Scenario, Side};
use gk_utm::transforms::{finite_fourier, Samples, SourceTerm, SpaceProfile, TimeSignal};

fn params() -> impl Strategy<Value = PhysicalParams> {
    (0.1f64..5.0, 0.005f64..2.0, 0.001f64..2.0, 0.2f64..3.0)
        .prop_map(|(alpha, tau, mu2, l)| PhysicalParams::new(alpha, tau, mu2, l).unwrap())
}

fn wavenumber(max: f64) -> impl Strategy<Value = C64> {
    (1e-3f64..max, -std::f64::consts::PI..std::f64::consts::PI).prop_map(|(r, a)| C64::from_polar(r, a))
}

fn rate() -> impl Strategy<Value = C64> {
    (-5.0f64..80.0, -60.0f64..60.0).prop_map(|(re, im)| C64::new(re, im))
}

fn signal() -> impl Strategy<Value = TimeSignal> {
    prop_oneof![
        (-2.0f64..2.0).prop_map(TimeSignal::Constant),
        (0.01f64..0.5).prop_map(|tau_delta| TimeSignal::LaserFlash { tau_delta }),
        prop::collection::vec(-1.0f64..1.0, 3..8).prop_map(|v| {
            let n = v.len();
            TimeSignal::Tabulated(Samples::new((0..n).map(|i| 0.13 * i as f64).collect(), v).unwrap())
        }),
    ]
}

fn close(a: C64, b: C64, tol: f64, scale: f64) -> bool {
    (a - b).norm() <= tol * scale.max(f64::MIN_POSITIVE)
}

proptest! {
    #[test]
    fn vieta_identities(p in params(), k in wavenumber(1e3)) {
        let sp = dispersion(&p, k);
        let scale_sum = sp.omega1.norm() + sp.omega2.norm();
        prop_assert!(close(sp.omega1 + sp.omega2, (1.0 + p.mu2 * k * k) / p.tau, 1e-12, scale_sum));
        prop_assert!(close(sp.omega1 * sp.omega2, p.beta() * k * k, 1e-12, sp.omega1.norm() * sp.omega2.norm()));
        prop_assert!(sp.omega1.norm() >= sp.omega2.norm());
    }

    #[test]
    fn root_set_is_branch_independent(p in params(), k in wavenumber(1e3)) {
        let sp = dispersion(&p, k);
        let b = (1.0 + p.mu2 * k * k) / p.tau;
        let d = (b * b - 4.0 * p.beta() * k * k).sqrt();
        let scale = sp.omega1.norm() + sp.omega2.norm();
        for root in [d, -d] {
            let (a, c) = ((b + root) / 2.0, (b - root) / 2.0);
            let same = close(a, sp.omega1, 1e-9, scale) && close(c, sp.omega2, 1e-9, scale);
            let crossed = close(a, sp.omega2, 1e-9, scale) && close(c, sp.omega1, 1e-9, scale);
            prop_assert!(same || crossed, "{root} gives {a}, {c} vs {:?}", sp);
        }
    }

    #[test]
    fn eigen_reconstruction(p in params(), k in wavenumber(50.0)) {
        let sp = dispersion(&p, k);
        prop_assume!(!sp.is_degenerate());
        let m = eigen_matrices(&p, &sp).unwrap();
        let rebuilt = m.s.mul(&m.omega).mul(&m.sinv);
        let ident = m.s.mul(&m.sinv);
        let scale = m.lambda.max_norm();
        prop_assert!(rebuilt.sub(&m.lambda).max_norm() <= 1e-9 * scale);
        prop_assert!(ident.sub(&gk_utm::gk::Mat2::identity()).max_norm() <= 1e-9);
    }

    #[test]
    fn sigma_odd_and_delta_antisymmetric(p in params(), k in wavenumber(30.0), g0 in 0.0f64..2.0, gl in 0.0f64..2.0) {
        let sp = dispersion(&p, k);
        let (a, b) = (sigma_coeffs(&p, &sp, 0.0), sigma_coeffs(&p, &sp.mirrored(), 0.0));
        prop_assert!(close(a.sigma1, -b.sigma1, 1e-12, a.sigma1.norm()));
        prop_assert!(close(a.sigma2, -b.sigma2, 1e-12, a.sigma2.norm()));
        let (d, dm) = (delta_dets(&p, &sp, g0, gl), delta_dets(&p, &sp.mirrored(), g0, gl));
        let s0 = sigma_coeffs(&p, &sp, g0);
        let sl = sigma_coeffs(&p, &sp, gl);
        let scale = (s0.sigma1 * sl.sigma1).norm().max((s0.sigma2 * sl.sigma2).norm()) * (k.im.abs() * p.l).exp();
        prop_assert!(close(d.delta1, -dm.delta1, 1e-10, scale));
        prop_assert!(close(d.delta2, -dm.delta2, 1e-10, scale));
    }

    #[test]
    fn contour_height_even_and_on_level_set(c in 0.05f64..20.0, x in 0.0f64..50.0) {
        let y = contour_height(c, x);
        prop_assert!(y >= 0.0);
        prop_assert_eq!(y, contour_height(c, -x));
        prop_assert!(implicit_residual(c, x, y) <= 1e-10);
        let (a, b, cc) = cubic_coeffs(c, x);
        let roots = cubic_nonneg_roots(a, b, cc);
        prop_assert!(roots.iter().any(|s| (s.sqrt() - y).abs() <= 1e-9 * (1.0 + y)));
    }

    #[test]
    fn time_transform_semigroup(sig in signal(), w in rate(), t in 0.0f64..1.0, dt in 0.0f64..0.5) {
        let lhs = sig.transform(w, t + dt);
        let rhs = (-w * dt).exp() * sig.transform(w, t) + sig.window(w, t, t + dt);
        prop_assert!(close(lhs, rhs, 1e-12, 1.0 + lhs.norm()));
    }

    #[test]
    fn finite_fourier_is_linear(a in prop::collection::vec(-2.0f64..2.0, 4), b in prop::collection::vec(-2.0f64..2.0, 4), s in -3.0f64..3.0, k in wavenumber(40.0)) {
        let xs = vec![0.0, 0.3, 0.7, 1.0];
        let pa = SpaceProfile::Tabulated(Samples::new(xs.clone(), a.clone()).unwrap());
        let pb = SpaceProfile::Tabulated(Samples::new(xs.clone(), b.clone()).unwrap());
        let mix: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u + s * v).collect();
        let pm = SpaceProfile::Tabulated(Samples::new(xs, mix).unwrap());
        let (fa, fb, fm) = (finite_fourier(&pa, k, 1.0), finite_fourier(&pb, k, 1.0), finite_fourier(&pm, k, 1.0));
        let scale = (1.0 + fa.norm() + s.abs() * fb.norm()) * (k.im.abs()).exp();
        prop_assert!(close(fm, fa + s * fb, 1e-12, scale));
    }

    #[test]
    fn transformed_data_ignore_the_sign_of_k(p in params(), k in wavenumber(30.0), g in signal(), h in signal(), t in 0.01f64..1.0) {
        let scn = Scenario { gamma0: 0.3, gammal: 0.5, g, h, ..Scenario::zero(p) };
        let sp = dispersion(&p, k);
        // With Re w < 0 the kernels grow like e^{|Re w| t}; the contour stays clear of that region.
        prop_assume!(sp.omega1.re >= 0.0 && sp.omega2.re >= 0.0);
        let (a, b) = (spectral_knowns(&scn, &sp, t), spectral_knowns(&scn, &sp.mirrored(), t));
        prop_assert_eq!(a.g_tilde, b.g_tilde);
        prop_assert_eq!(a.h_tilde, b.h_tilde);
    }

    #[test]
    fn series_energy_is_the_mean(v in prop::collection::vec(-2.0f64..2.0, 5), t in 0.0f64..2.0) {
        let p = PhysicalParams::new(1.0, 0.02, 0.05, 1.0).unwrap();
        let xs: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
        let phi = SpaceProfile::Tabulated(Samples::new(xs, v).unwrap());
        let fc = FourierCoeffs::new(&phi, &SpaceProfile::Zero, 1.0, 40);
        let mass = finite_fourier(&phi, C64::new(0.0, 0.0), 1.0).re;
        prop_assert!((series_energy_initial(&fc, 1.0) - mass).abs() <= 1e-13 * (1.0 + mass.abs()));
        // Trapezoid with 2N+2 points integrates every mode below N exactly.
        let n = 82;
        let integral: f64 = (0..=n)
            .map(|i| {
                let x = i as f64 / n as f64;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * series_from_coeffs(&p, &fc, x, t).e / n as f64
            })
            .sum();
        prop_assert!((integral - mass).abs() <= 1e-12 * (1.0 + mass.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn contour_halves_are_conjugate(p in params()) {
        let spec = ContourSpec { k_max: 20.0, n_nodes: 320, origin_radius: ContourSpec::default_radius(&p), grading: 0.1 };
        let up = build_contour(&p, &spec, Half::Upper).unwrap();
        let lo = build_contour(&p, &spec, Half::Lower).unwrap();
        prop_assert_eq!(up.len(), lo.len());
        // Lower runs right to left; reversing it lines up with the upper path.
        for (u, l) in up.iter().zip(lo.iter().rev()) {
            prop_assert!((u.k.conj() - l.k).norm() <= 1e-12 * (1.0 + u.k.norm()));
            prop_assert!(u.k.im >= 0.0 && l.k.im <= 0.0);
        }
    }

    #[test]
    fn integrand_swap_invariance(p in params(), k in wavenumber(40.0), g in signal(), t in 0.01f64..1.0) {
        let scn = Scenario {
            gamma0: 0.4,
            gammal: 0.1,
            g,
            h: TimeSignal::Constant(0.2),
            phi: SpaceProfile::Cosine { amplitude: 1.0, mode: 1 },
            source: SourceTerm::Separable { profile: SpaceProfile::Constant(1.0), signal: TimeSignal::Constant(0.5) },
            ..Scenario::zero(p)
        };
        let sp = dispersion(&p, k);
        prop_assume!(!sp.is_degenerate());
        prop_assume!(sp.omega1.re >= 0.0 && sp.omega2.re >= 0.0);
        let side = Side::of(k);
        let a = contour_integrand_grid(&scn, &sp, side, &[t]);
        let b = contour_integrand_grid(&scn, &sp.swapped(), side, &[t]);
        if let (Ok((a, _)), Ok((b, _))) = (a, b) {
            for i in 0..2 {
                prop_assert!(close(a[0][i], b[0][i], 1e-12, a[0][i].norm()));
            }
        }
    }

    #[test]
    fn fd_conserves_insulated_energy(v in prop::collection::vec(-1.0f64..1.0, 4), mu2 in 0.005f64..0.5) {
        let p = PhysicalParams::new(1.0, 0.05, mu2, 1.0).unwrap();
        let xs = vec![0.0, 0.2, 0.6, 1.0];
        let scn = Scenario { phi: SpaceProfile::Tabulated(Samples::new(xs, v).unwrap()), ..Scenario::zero(p) };
        let run = fd_solve(&scn, &FdGrid::new(&p, 32, 0.3).unwrap(), &[0.5], &[0.3]).unwrap();
        let audit = fd_energy_audit(&run);
        let e0 = audit[0].energy;
        for row in audit {
            prop_assert!((row.energy - e0).abs() <= 1e-12 * (1.0 + e0.abs()));
        }
    }
}
