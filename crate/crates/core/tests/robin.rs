use num_complex::Complex64 as C64;

use gk_utm::contour::ContourPair;
use gk_utm::fd::{fd_solve, FdGrid};
use gk_utm::gk::{delta_dets_factored, dispersion, PhysicalParams};
use gk_utm::solver::{evaluate_solution_grid, interior_poles, Scenario, Side, StateField};
use gk_utm::transforms::{SourceTerm, SpaceProfile, TimeSignal};

fn slab() -> PhysicalParams {
    PhysicalParams::new(1.0, 0.02, 0.05, 1.0).unwrap()
}

fn cooled_cosine(gammal: f64) -> Scenario {
    let mut scn = Scenario::zero(slab());
    scn.gammal = gammal;
    scn.phi = SpaceProfile::Cosine { amplitude: 1.0, mode: 1 };
    scn
}

fn utm(scn: &Scenario, xs: &[f64], times: &[f64]) -> (StateField, usize) {
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let pair = ContourPair::build(&scn.params, &scn.auto_contour(0.0, scn.params.l, t_max)).unwrap();
    let (f, d) = evaluate_solution_grid(scn, &pair, xs, times).unwrap();
    (f, d.poles)
}

#[test]
fn poles_sit_on_zeros_of_delta() {
    let p = slab();
    for side in [Side::Upper, Side::Lower] {
        let poles = interior_poles(&p, 0.0, 0.5, side);
        assert_eq!(poles.len(), 1, "{side:?}");
        let (y, m) = poles[0];
        assert_eq!(y.signum(), if side == Side::Upper { 1.0 } else { -1.0 });
        assert!((y.abs() - 40.2963).abs() < 1e-3, "y = {y}");
        let size = |k: C64| delta_dets_factored(&p, &dispersion(&p, k), 0.0, 0.5)[m].mantissa.norm();
        let at = size(C64::new(0.0, y));
        let near = [0.1, -0.1].map(|d| size(C64::new(d, y))).into_iter().fold(f64::INFINITY, f64::min);
        assert!(at < 1e-8 * near, "{at:e} vs {near:e}");
        let sp = dispersion(&p, C64::new(0.0, y));
        let w = if m == 0 { sp.omega1 } else { sp.omega2 };
        assert!((w.re - 0.5 * y.abs()).abs() < 1e-8 * y.abs() && w.im.abs() < 1e-8 * y.abs());
    }
    assert!(interior_poles(&p, 0.0, 0.0, Side::Upper).is_empty());
}

#[test]
fn robin_relaxation_matches_fd() {
    let scn = cooled_cosine(2.0);
    let xs = [0.0, 0.25, 0.5, 0.75, 1.0];
    let times = [0.05, 0.1, 0.2];
    let (u, poles) = utm(&scn, &xs, &times);
    assert_eq!(poles, 2);
    let fd = fd_solve(&scn, &FdGrid::with_steps(&scn.params, 1600, 20000, 0.2).unwrap(), &xs, &times).unwrap();
    let (de, dq) = u.max_abs_diff(&fd.field).unwrap();
    assert!(de < 1e-4 && dq < 1e-4, "e {de:e} q {dq:e}");
}

#[test]
fn initial_profile_is_recovered_with_cooling() {
    let scn = cooled_cosine(0.5);
    let xs = [0.1, 0.5, 0.9, 1.0];
    let (u, _) = utm(&scn, &xs, &[0.0]);
    for (i, &x) in xs.iter().enumerate() {
        let want = (std::f64::consts::PI * x).cos();
        assert!((u.e[i][0] - want).abs() < 1e-6, "x {x}: {} vs {want}", u.e[i][0]);
    }
}

#[test]
fn uniform_source_heats_linearly() {
    let mut scn = Scenario::zero(slab());
    scn.source = SourceTerm::Separable { profile: SpaceProfile::Constant(0.5), signal: TimeSignal::Constant(1.0) };
    let xs = [0.0, 0.3, 1.0];
    let times = [0.05, 0.2, 0.5];
    let (u, _) = utm(&scn, &xs, &times);
    for i in 0..xs.len() {
        for (j, &t) in times.iter().enumerate() {
            assert!((u.e[i][j] - 0.5 * t).abs() < 1e-8, "e({}, {t}) = {}", xs[i], u.e[i][j]);
            assert!(u.q[i][j].abs() < 1e-6, "q({}, {t}) = {}", xs[i], u.q[i][j]);
        }
    }
}
