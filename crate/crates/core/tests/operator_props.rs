use faer::Mat;
use proptest::prelude::*;
use qdlaser::operator::{Emitter, Mode, SparseOperator};
use qdlaser::sparse::Csr;
use qdlaser::superop::{commutator_superop, lindblad_dissipator, pair_dissipator};
use qdlaser::{Space, SpaceSpec, C64};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn space(e: usize, n1: usize, n2: usize) -> Space {
    Space::new(SpaceSpec::new(e, n1, n2).unwrap()).unwrap()
}

fn trace(m: &Mat<C64>) -> C64 {
    (0..m.nrows()).map(|i| m[(i, i)]).sum()
}

fn max_diff(a: &Mat<C64>, b: &Mat<C64>) -> f64 {
    let mut d = 0.0_f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            d = d.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    d
}

fn density(dim: usize, seed: &[f64]) -> Mat<C64> {
    let a = Mat::<C64>::from_fn(dim, dim, |i, j| {
        let k = (i * dim + j) % seed.len();
        c(seed[k] + 0.1 * i as f64, seed[(k + 1) % seed.len()] - 0.05 * j as f64)
    });
    let mut rho = &a * a.adjoint();
    let tr = trace(&rho);
    rho *= faer::Scale(c(1.0, 0.0) / tr);
    rho
}

fn projector(space: &Space, i: usize, j: usize) -> Mat<C64> {
    let mut m = Mat::<C64>::zeros(space.dim(), space.dim());
    m[(i, j)] = c(1.0, 0.0);
    m
}

#[test]
fn hilbert_dimensions() {
    assert_eq!(SpaceSpec::new(2, 1, 1).unwrap().dim(), 16);
    assert_eq!(SpaceSpec::new(1, 6, 6).unwrap().dim(), 98);
    assert_eq!(SpaceSpec::new(2, 6, 6).unwrap().dim(), 196);
    assert!(SpaceSpec::new(3, 1, 1).is_err());
    assert!(SpaceSpec::new(2, 0, 1).is_err());
}

#[test]
fn ladder_matrix_elements() {
    let s = space(2, 4, 2);
    let a = SparseOperator::annihilator(&s, Mode::One).to_dense();
    let one = s.index([0, 0], [1, 0]);
    let vac = s.index([0, 0], [0, 0]);
    assert_eq!(a[(vac, one)], c(1.0, 0.0));
    let three = s.index([1, 0], [3, 1]);
    let two = s.index([1, 0], [2, 1]);
    assert!((a[(two, three)].re - 3f64.sqrt()).abs() < 1e-15);
    let n = SparseOperator::number(&s, Mode::One).to_dense();
    let four = s.index([0, 1], [4, 0]);
    assert_eq!(n[(four, four)], c(4.0, 0.0));
}

#[test]
fn emitter_operators() {
    let s = space(2, 1, 1);
    let sm = SparseOperator::qd_lowering(&s, Emitter::One).unwrap();
    let d = sm.to_dense();
    let eg = s.index([1, 0], [0, 0]);
    let gg = s.index([0, 0], [0, 0]);
    assert_eq!(d[(gg, eg)], c(1.0, 0.0));
    let sp = SparseOperator::qd_raising(&s, Emitter::One).unwrap();
    let ee = (&sp * &sm).to_dense();
    assert_eq!(ee[(gg, gg)], c(0.0, 0.0));
    assert!((&sm * &sm).is_zero());
    let single = space(1, 1, 1);
    assert!(SparseOperator::qd_lowering(&single, Emitter::Two).is_err());
}

#[test]
fn canonical_commutator_below_cutoff() {
    let s = space(1, 5, 3);
    for mode in Mode::ALL {
        let a = SparseOperator::annihilator(&s, mode);
        let ad = a.adjoint();
        let comm = (&a * &ad).plus(&(&ad * &a).scale_re(-1.0)).to_dense();
        for i in 0..s.dim() {
            let n = s.state(i).photons[mode.index()];
            let expect = if n == s.n_max()[mode.index()] { -(n as f64) } else { 1.0 };
            assert!((comm[(i, i)].re - expect).abs() < 1e-13);
        }
    }
}

#[test]
fn excitation_shifts() {
    let s = space(2, 3, 3);
    assert_eq!(SparseOperator::annihilator(&s, Mode::Two).excitation_shift(), Some(-1));
    assert_eq!(SparseOperator::qd_raising(&s, Emitter::Two).unwrap().excitation_shift(), Some(1));
    let x = &SparseOperator::qd_raising(&s, Emitter::One).unwrap() * &SparseOperator::annihilator(&s, Mode::One);
    assert_eq!(x.excitation_shift(), Some(0));
    let mixed = SparseOperator::annihilator(&s, Mode::One).plus(&SparseOperator::creator(&s, Mode::One));
    assert_eq!(mixed.excitation_shift(), None);
}

#[test]
fn dissipator_examples() {
    let s = space(1, 2, 1);
    let a = SparseOperator::annihilator(&s, Mode::One);
    let n = SparseOperator::number(&s, Mode::One).to_dense();
    let one = s.index([0, 0], [1, 0]);
    let d = lindblad_dissipator(&a, 0.7).unwrap().apply(projector(&s, one, one).as_ref());
    let dn = trace(&(&n * &d));
    assert!((dn.re + 0.7).abs() < 1e-14 && dn.im.abs() < 1e-14);
    assert!(lindblad_dissipator(&a, 0.0).unwrap().is_empty());
    assert!(lindblad_dissipator(&a, -1.0).is_err());

    let sp = SparseOperator::qd_raising(&s, Emitter::One).unwrap();
    let pe = (&sp * &sp.adjoint()).to_dense();
    let g = s.index([0, 0], [0, 0]);
    let d = lindblad_dissipator(&sp, 2.5).unwrap().apply(projector(&s, g, g).as_ref());
    assert!((trace(&(&pe * &d)).re - 2.5).abs() < 1e-14);
}

#[test]
fn commutator_examples() {
    let s = space(1, 1, 1);
    let n = SparseOperator::number(&s, Mode::One);
    let i1 = s.index([0, 0], [1, 0]);
    let i0 = s.index([0, 0], [0, 0]);
    let out = commutator_superop(&n).unwrap().apply(projector(&s, i1, i0).as_ref());
    assert!((out[(i1, i0)] - c(0.0, -1.0)).norm() < 1e-15);
    assert!(commutator_superop(&SparseOperator::zero(&s)).unwrap().is_empty());
    let a = SparseOperator::annihilator(&s, Mode::One);
    assert!(commutator_superop(&a).is_err());
}

#[test]
fn csr_from_triplets_sums_duplicates() {
    let m = Csr::from_triplets(
        3,
        3,
        vec![(0, 1, c(1.0, 0.0)), (2, 0, c(0.0, 2.0)), (0, 1, c(0.5, 0.5)), (1, 1, c(1.0, 0.0)), (1, 1, c(-1.0, 0.0))],
    );
    assert_eq!(m.nnz(), 2);
    assert_eq!(m.get(0, 1), c(1.5, 0.5));
    assert_eq!(m.get(1, 1), c(0.0, 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn adjoint_is_involution_and_antilinear(
        n1 in 1usize..4, n2 in 1usize..3, re in -2.0f64..2.0, im in -2.0f64..2.0
    ) {
        let s = space(2, n1, n2);
        let x = (&SparseOperator::qd_raising(&s, Emitter::Two).unwrap() * &SparseOperator::annihilator(&s, Mode::One))
            .scale(c(re, im));
        prop_assert!(x.adjoint().adjoint().csr().max_abs_diff(x.csr()) < 1e-15);
        let dense = x.to_dense();
        let adj = x.adjoint().to_dense();
        for i in 0..s.dim() {
            for j in 0..s.dim() {
                prop_assert!((adj[(i, j)] - dense[(j, i)].conj()).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn dissipators_preserve_trace_and_hermiticity(
        seed in prop::collection::vec(-1.0f64..1.0, 7),
        rate in 0.0f64..5.0,
        re in -1.0f64..1.0,
        im in -1.0f64..1.0,
    ) {
        let s = space(2, 2, 1);
        let rho = density(s.dim(), &seed);
        let x = (&SparseOperator::qd_raising(&s, Emitter::One).unwrap() * &SparseOperator::annihilator(&s, Mode::Two))
            .scale(c(re, im))
            .plus(&SparseOperator::annihilator(&s, Mode::One));
        let d = lindblad_dissipator(&x, rate).unwrap().apply(rho.as_ref());
        prop_assert!(trace(&d).norm() < 1e-12);
        let dh = d.adjoint().to_owned();
        prop_assert!(max_diff(&d, &dh) < 1e-12);
        // Any two-operator form keeps the trace.
        let y = SparseOperator::qd_lowering(&s, Emitter::Two).unwrap();
        let p = pair_dissipator(&x, &y, c(re, im)).apply(rho.as_ref());
        prop_assert!(trace(&p).norm() < 1e-12);
    }

    #[test]
    fn vectorized_superoperator_matches_action(
        seed in prop::collection::vec(-1.0f64..1.0, 5),
        rate in 0.1f64..3.0,
    ) {
        let s = space(1, 2, 1);
        let rho = density(s.dim(), &seed);
        let mut h = SparseOperator::number(&s, Mode::One).scale_re(0.3);
        let x = &SparseOperator::qd_raising(&s, Emitter::One).unwrap() * &SparseOperator::annihilator(&s, Mode::One);
        h = h.plus(&x).plus(&x.adjoint());
        let l = commutator_superop(&h).unwrap().plus(&lindblad_dissipator(&SparseOperator::annihilator(&s, Mode::One), rate).unwrap());
        let direct = l.apply(rho.as_ref());
        let d = s.dim();
        let v: Vec<C64> = (0..d * d).map(|k| rho[(k % d, k / d)]).collect();
        let w = l.to_csr().matvec(&v);
        for k in 0..d * d {
            prop_assert!((w[k] - direct[(k % d, k / d)]).norm() < 1e-12);
        }
        prop_assert!(trace(&direct).norm() < 1e-12);
    }
}
