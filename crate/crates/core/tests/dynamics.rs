use faer::Mat;
use qdlaser::dynamics::{
    emission_spectrum, fit_lorentzian, steady_state_with, two_time_correlation, CorrelationOptions, SolverMethod,
    SpectrumOptions,
};
use qdlaser::invariants::{probe_state, reference_bath, reference_params};
use qdlaser::liouvillian::{build, MasterEquation, SystemParams};
use qdlaser::superop::lindblad_dissipator;
use qdlaser::{evolve, photon_stats, steady_state, Mode, SparseOperator, Space, SpaceSpec, SteadyStateOptions, C64};

fn params(g: f64, delta: f64, kappa: f64, eta: f64) -> SystemParams {
    SystemParams {
        g: [g, g],
        delta: [delta, delta + 2.0],
        kappa: [kappa; 2],
        gamma: [0.1; 2],
        eta: [eta; 2],
        gamma_dephasing: [0.05; 2],
        bath: None,
    }
}

fn diff(a: &Mat<C64>, b: &Mat<C64>) -> f64 {
    let mut d = 0.0_f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            d = d.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    d
}

fn pure(space: &Space, i: usize) -> Mat<C64> {
    let mut m = Mat::<C64>::zeros(space.dim(), space.dim());
    m[(i, i)] = C64::new(1.0, 0.0);
    m
}

#[test]
fn unpumped_system_relaxes_to_vacuum() {
    let s = Space::new(SpaceSpec::new(2, 3, 3).unwrap()).unwrap();
    let l = build(MasterEquation::Full, &params(1.0, 2.0, 0.5, 0.0), &s, None).unwrap();
    let ss = steady_state(l.total(), &s).unwrap();
    let vac = s.index([0, 0], [0, 0]);
    assert!(diff(&ss.rho, &pure(&s, vac)) < 1e-10);
}

#[test]
fn iterative_and_direct_solvers_agree() {
    let s = Space::new(SpaceSpec::new(2, 4, 4).unwrap()).unwrap();
    let l = build(MasterEquation::Full, &reference_params(Some(reference_bath())), &s, None).unwrap();
    let direct = steady_state(l.total(), &s).unwrap();
    assert_eq!(direct.method, SolverMethod::BlockLu);
    let opts = SteadyStateOptions { force_iterative: true, ..Default::default() };
    let iter = steady_state_with(l.total(), &s, &opts).unwrap();
    assert!(matches!(iter.method, SolverMethod::Gmres { .. }));
    assert!(diff(&direct.rho, &iter.rho) < 1e-8);
    assert!(iter.residual < 1e-8 && direct.hermiticity_error < 1e-12);
}

#[test]
fn frozen_generator_keeps_state() {
    let s = Space::new(SpaceSpec::new(1, 2, 1).unwrap()).unwrap();
    let l = qdlaser::SuperOperator::zero(s.dim());
    let rho = probe_state(s.dim());
    let out = evolve(&l, &s, rho.as_ref(), &[0.0, 1.0, 5.0]).unwrap();
    for r in &out {
        assert!(diff(r, &rho) < 1e-14);
    }
}

#[test]
fn photon_decays_exponentially() {
    let s = Space::new(SpaceSpec::new(1, 1, 1).unwrap()).unwrap();
    let kappa = 0.8;
    let l = lindblad_dissipator(&SparseOperator::annihilator(&s, Mode::One), kappa).unwrap();
    let one = s.index([0, 0], [1, 0]);
    let grid: Vec<f64> = (0..=10).map(|k| k as f64 * 0.5).collect();
    let out = evolve(&l, &s, pure(&s, one).as_ref(), &grid).unwrap();
    for (t, r) in grid.iter().zip(&out) {
        assert!((r[(one, one)].re - (-kappa * t).exp()).abs() < 1e-6, "t = {t}");
    }
}

#[test]
fn evolution_reaches_steady_state_from_any_start() {
    let s = Space::new(SpaceSpec::new(1, 2, 1).unwrap()).unwrap();
    let mut p = params(1.0, 1.0, 1.0, 0.5);
    p.g[1] = 0.0;
    let l = build(MasterEquation::Full, &p, &s, None).unwrap();
    let ss = steady_state(l.total(), &s).unwrap();
    let starts = [
        pure(&s, s.index([0, 0], [0, 0])),
        pure(&s, s.index([1, 0], [0, 0])),
        pure(&s, s.index([0, 0], [2, 0])),
        pure(&s, s.index([1, 0], [1, 1])),
        probe_state(s.dim()),
    ];
    for (k, rho0) in starts.iter().enumerate() {
        let out = evolve(l.total(), &s, rho0.as_ref(), &[0.0, 300.0]).unwrap();
        assert!(diff(&out[1], &ss.rho) < 1e-6, "start {k}");
    }
}

#[test]
fn correlation_regressions() {
    let s = Space::new(SpaceSpec::new(2, 3, 3).unwrap()).unwrap();
    let l = build(MasterEquation::Full, &params(1.0, 1.0, 0.5, 1.0), &s, None).unwrap();
    let rho = steady_state(l.total(), &s).unwrap().rho;
    let a = SparseOperator::annihilator(&s, Mode::One);
    let grid = [0.0, 0.5, 2.0];
    let c = two_time_correlation(l.total(), &s, rho.as_ref(), &a.adjoint(), &a, &grid, &CorrelationOptions::default())
        .unwrap();
    let n = photon_stats(rho.as_ref(), &s).n[0];
    assert!((c[0] - C64::new(n, 0.0)).norm() < 1e-12);
    assert!(c[2].norm() < c[0].norm());
    let id = SparseOperator::identity(&s);
    let c = two_time_correlation(l.total(), &s, rho.as_ref(), &id, &id, &grid, &CorrelationOptions::default()).unwrap();
    for v in c {
        assert!((v - C64::new(1.0, 0.0)).norm() < 1e-10);
    }

    let dark = build(MasterEquation::Full, &params(1.0, 1.0, 0.5, 0.0), &s, None).unwrap();
    let vac = steady_state(dark.total(), &s).unwrap().rho;
    let c = two_time_correlation(dark.total(), &s, vac.as_ref(), &a.adjoint(), &a, &grid, &CorrelationOptions::default())
        .unwrap();
    assert!(c.iter().all(|v| v.norm() < 1e-12));
}

#[test]
fn decaying_photon_has_cavity_linewidth() {
    let s = Space::new(SpaceSpec::new(1, 1, 1).unwrap()).unwrap();
    let kappa = 0.6;
    let p = SystemParams { g: [0.0, 0.0], kappa: [kappa; 2], gamma: [0.0; 2], eta: [0.0; 2], gamma_dephasing: [0.0; 2], ..params(0.0, 3.0, kappa, 0.0) };
    let l = build(MasterEquation::Full, &p, &s, None).unwrap();
    let rho = pure(&s, s.index([0, 0], [1, 0]));
    let opts = SpectrumOptions { span_fwhm: 300.0, n_omega: 6001, ..Default::default() };
    let sp = emission_spectrum(l.total(), &s, rho.as_ref(), Mode::One, &opts).unwrap();
    assert!((sp.fit.fwhm - kappa).abs() < 1e-3 * kappa, "fwhm {}", sp.fit.fwhm);
    assert!((sp.fit.center + 3.0).abs() < 1e-3, "centre {}", sp.fit.center);
    assert!(sp.fit.lorentzian);
    // Area under Re of the one-sided transform is pi C(0).
    let dw = sp.omega[1] - sp.omega[0];
    let area: f64 = sp.intensity.iter().sum::<f64>() * dw;
    assert!((area / std::f64::consts::PI - 1.0).abs() < 0.02, "area {area}");
    assert!(sp.intensity.iter().all(|&v| v > -1e-9));
}

#[test]
fn lasing_spectrum_is_positive_and_narrow() {
    let s = Space::new(SpaceSpec::new(2, 5, 5).unwrap()).unwrap();
    let l = build(MasterEquation::Full, &params(1.0, 0.0, 0.5, 2.0), &s, None).unwrap();
    let rho = steady_state(l.total(), &s).unwrap().rho;
    let sp = emission_spectrum(l.total(), &s, rho.as_ref(), Mode::One, &SpectrumOptions::default()).unwrap();
    let peak = sp.intensity.iter().cloned().fold(0.0, f64::max);
    assert!(sp.intensity.iter().all(|&v| v > -1e-6 * peak));
    assert!(sp.fit.fwhm > 0.0 && sp.fit.fwhm.is_finite());
}

#[test]
fn lorentzian_fit_recovers_parameters() {
    let omega: Vec<f64> = (0..201).map(|k| -5.0 + 0.05 * k as f64).collect();
    let (c, w, a, o): (f64, f64, f64, f64) = (0.7, 0.4, 3.0, 0.01);
    let y: Vec<f64> = omega.iter().map(|&x| o + a * (0.5 * w).powi(2) / ((x - c).powi(2) + (0.5 * w).powi(2))).collect();
    let fit = fit_lorentzian(&omega, &y).unwrap();
    assert!((fit.center - c).abs() < 1e-8 && (fit.fwhm - w).abs() < 1e-8);
    assert!((fit.amplitude - a).abs() < 1e-7 && (fit.offset - o).abs() < 1e-8);
    assert!(fit.lorentzian);
    assert!(fit_lorentzian(&omega[..3], &y[..3]).is_err());
}
