use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use faer::Mat;
use qdlaser::invariants::{reference_bath, reference_params};
use qdlaser::liouvillian::{build, MasterEquation};
use qdlaser::par;
use qdlaser::sector::{Sector, SectorMatrix};
use qdlaser::sweep::{run_sweep, SweepConfig};
use qdlaser::{Space, SpaceSpec, C64};

fn zero_sector(n: usize) -> SectorMatrix {
    let space = Space::new(SpaceSpec::new(2, n, n).unwrap()).unwrap();
    let l = build(MasterEquation::Full, &reference_params(Some(reference_bath())), &space, None).unwrap();
    let sector = Sector::new(&space, 0).unwrap();
    SectorMatrix::assemble(l.total(), &sector).unwrap()
}

/// Block-tridiagonal LU against a dense LU of the same (deflated) matrix.
fn factorizations(c: &mut Criterion) {
    let mut g = c.benchmark_group("zero_sector_factor");
    g.sample_size(10);
    for n in [3, 5] {
        let m = zero_sector(n);
        let first = m.offsets()[1];
        let keep: Vec<bool> = (0..m.len()).map(|i| i >= first).collect();
        let rest = m.restrict(&keep);
        let rhs = vec![C64::new(1.0, 0.0); rest.len()];
        g.bench_with_input(BenchmarkId::new("block", n), &m, |b, m| {
            b.iter(|| {
                let lu = m.factor(C64::new(0.0, 0.0), C64::new(1.0, 0.0), 1).unwrap();
                let mut x = rhs.clone();
                lu.solve_in_place(&mut x);
                x
            })
        });
        let dense: Mat<C64> = rest.csr().to_dense();
        g.bench_with_input(BenchmarkId::new("dense", n), &dense, |b, d| {
            b.iter(|| {
                let lu = d.partial_piv_lu();
                let r = Mat::<C64>::from_fn(d.nrows(), 1, |i, _| rhs[i]);
                faer::linalg::solvers::Solve::solve(&lu, &r)
            })
        });
    }
    g.finish();
}

const SWEEP: &str = r#"
name = "bench"
sweep_axis = "eta"

[base]
delta1 = 10.0
delta2 = 8.0

[grid]
values = [1.0, 2.0, 4.0, 8.0]

[[scenarios]]
label = "warm"

[truncation]
start = 3
step = 1
max = 4
"#;

/// The same sweep on one worker and on the default pool.
fn sweeps(c: &mut Criterion) {
    let cfg = SweepConfig::from_toml_str(SWEEP).unwrap();
    let mut g = c.benchmark_group("sweep");
    g.sample_size(10);
    g.bench_function("one_worker", |b| b.iter(|| par::with_workers(Some(1), || run_sweep(&cfg).unwrap())));
    let label = if par::is_parallel() { "pool" } else { "sequential_build" };
    g.bench_function(label, |b| b.iter(|| par::with_workers(None, || run_sweep(&cfg).unwrap())));
    g.finish();
}

criterion_group!(benches, factorizations, sweeps);
criterion_main!(benches);
