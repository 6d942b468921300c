use faer::Mat;
use proptest::prelude::*;
use qdlaser::invariants::reference_bath;
use qdlaser::liouvillian::{build, MasterEquation, SystemParams};
use qdlaser::observables::{flux_balance_check, radiance_witness, RadianceWitness};
use qdlaser::{photon_stats, rate_decomposition, steady_state, Space, SpaceSpec, C64};

fn space(e: usize, n1: usize, n2: usize) -> Space {
    Space::new(SpaceSpec::new(e, n1, n2).unwrap()).unwrap()
}

fn poisson_amp(alpha: f64, n: usize) -> f64 {
    let mut v = (-0.5 * alpha * alpha).exp();
    for k in 1..=n {
        v *= alpha / (k as f64).sqrt();
    }
    v
}

fn fig3_params(g2: f64) -> SystemParams {
    SystemParams {
        g: [1.0, g2],
        delta: [10.0, 10.0],
        kappa: [0.5; 2],
        gamma: [0.01; 2],
        eta: [25.0; 2],
        gamma_dephasing: [0.01; 2],
        bath: Some(reference_bath()),
    }
}

#[test]
fn vacuum_has_no_photons() {
    let s = space(2, 3, 3);
    let mut rho = Mat::<C64>::zeros(s.dim(), s.dim());
    rho[(s.index([1, 1], [0, 0]), s.index([1, 1], [0, 0]))] = C64::new(1.0, 0.0);
    let st = photon_stats(rho.as_ref(), &s);
    assert_eq!(st.n, [0.0, 0.0]);
    assert_eq!(st.g2, [None, None]);
    assert_eq!(st.g12, None);
    assert_eq!(st.populations.ee, 1.0);
    assert_eq!(st.trace, 1.0);
}

#[test]
fn coherent_product_state() {
    let s = space(1, 14, 14);
    let (a1, a2) = (0.8, 0.5);
    let psi: Vec<f64> = (0..s.dim())
        .map(|i| {
            let st = s.state(i);
            if st.qd[0] == 1 {
                0.0
            } else {
                poisson_amp(a1, st.photons[0]) * poisson_amp(a2, st.photons[1])
            }
        })
        .collect();
    let rho = Mat::<C64>::from_fn(s.dim(), s.dim(), |i, j| C64::new(psi[i] * psi[j], 0.0));
    let st = photon_stats(rho.as_ref(), &s);
    assert!((st.n[0] - a1 * a1).abs() < 1e-9 && (st.n[1] - a2 * a2).abs() < 1e-9);
    assert!((st.g2[0].unwrap() - 1.0).abs() < 1e-8);
    assert!((st.g2[1].unwrap() - 1.0).abs() < 1e-8);
    assert!((st.g12.unwrap() - 1.0).abs() < 1e-8);
    assert!((st.cross - C64::new(a1 * a2, 0.0)).norm() < 1e-8);
}

#[test]
fn thermal_product_state() {
    let s = space(1, 20, 20);
    let nbar: [f64; 2] = [0.5, 0.3];
    let rho = Mat::<C64>::from_fn(s.dim(), s.dim(), |i, j| {
        if i != j {
            return C64::new(0.0, 0.0);
        }
        let st = s.state(i);
        if st.qd != [0, 0] {
            return C64::new(0.0, 0.0);
        }
        let p = |k: usize| (nbar[k] / (1.0 + nbar[k])).powi(st.photons[k] as i32) / (1.0 + nbar[k]);
        C64::new(p(0) * p(1), 0.0)
    });
    let st = photon_stats(rho.as_ref(), &s);
    assert!((st.g2[0].unwrap() - 2.0).abs() < 1e-6);
    assert!((st.g2[1].unwrap() - 2.0).abs() < 1e-6);
    assert!((st.g12.unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(st.cross, C64::new(0.0, 0.0));
}

#[test]
fn witness_reference_values() {
    let w = RadianceWitness::from_counts([2.0, 4.0], [1.0, 1.0]);
    assert_eq!(w.rw, [Some(0.0), Some(1.0)]);
    let w = RadianceWitness::from_counts([0.0, 0.3], [0.0, 0.3]);
    assert_eq!(w.rw, [None, Some(-0.5)]);
}

proptest! {
    #[test]
    fn witness_is_bounded_below(n2 in 0.0f64..100.0, n1 in 1e-9f64..100.0) {
        let w = RadianceWitness::from_counts([n2, n2], [n1, n1]);
        prop_assert!(w.rw[0].unwrap() >= -1.0);
    }
}

#[test]
fn equal_detunings_fill_both_modes_alike() {
    let mut p = fig3_params(1.0);
    p.eta = [5.0; 2];
    let w = radiance_witness(MasterEquation::Full, &p, SpaceSpec::new(2, 4, 4).unwrap(), None).unwrap();
    assert!((w.n_two[0] - w.n_two[1]).abs() < 1e-6);
    assert!((w.n_one[0] - w.n_one[1]).abs() < 1e-6);
    assert!((w.rw[0].unwrap() - w.rw[1].unwrap()).abs() < 1e-6);
}

#[test]
fn phonon_free_losses_match_cavity_output() {
    let s = space(2, 4, 4);
    let mut p = fig3_params(1.0);
    p.bath = None;
    p.delta = [1.0, 3.0];
    p.eta = [2.0; 2];
    let l = build(MasterEquation::Full, &p, &s, None).unwrap();
    let rho = steady_state(l.total(), &s).unwrap().rho;
    let st = photon_stats(rho.as_ref(), &s);
    let r = rate_decomposition(&l, &s, rho.as_ref()).unwrap();
    for (k, label) in ["cavity_loss_1", "cavity_loss_2"].iter().enumerate() {
        let f = r.channel_fluxes.iter().find(|(l, _)| l == label).unwrap().1;
        assert!((f[k] + p.kappa[k] * st.n[k]).abs() < 1e-12);
    }
    let fb = flux_balance_check(&r, &st, &p);
    assert!(fb[0] < 1e-8 && fb[1] < 1e-8, "{fb:?}");
    assert!(r.column_sum_error < 1e-10);
}

#[test]
fn simplified_rates_balance_cavity_output() {
    let s = space(2, 6, 6);
    let p = fig3_params(1.0);
    let l = build(MasterEquation::Simplified, &p, &s, None).unwrap();
    let rho = steady_state(l.total(), &s).unwrap().rho;
    let st = photon_stats(rho.as_ref(), &s);
    let r = rate_decomposition(&l, &s, rho.as_ref()).unwrap();
    let fb = flux_balance_check(&r, &st, &p);
    assert!(fb[0] < 0.05 && fb[1] < 0.05, "{fb:?}");
    assert!(r.net.n1m1 > 0.0);
    assert!((r.net.n1 - r.net.m1).abs() < 1e-6 * r.net.n1.abs());
    let total: f64 = r.per_state.iter().map(|s| s.population).sum();
    assert!((total - 1.0).abs() < 1e-10);
}
