//! Self-checks that need no reference data. Used by `qdlaser check` and the
//! test suite.

use faer::Mat;
use serde::Serialize;

use crate::dynamics::steady_state;
use crate::liouvillian::{build, build_system_hamiltonian, MasterEquation, SystemParams};
use crate::observables::{flux_balance_check, photon_stats, rate_decomposition};
use crate::phonon::{phi, BathParams, Correlation, KernelOptions, PhononKernel};
use crate::space::{Space, SpaceSpec};
use crate::{Result, C64};

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Worst measured deviation.
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self { name: name.to_string(), value, threshold, pass: value.is_finite() && value < threshold, detail: detail.into() }
    }

    fn failed(name: &str, threshold: f64, e: crate::Error) -> Self {
        Self { name: name.to_string(), value: f64::NAN, threshold, pass: false, detail: e.to_string() }
    }
}

pub const TRACE_TOL: f64 = 1e-10;
pub const RESIDUAL_TOL: f64 = 1e-8;
pub const POSITIVITY_FLOOR: f64 = -1e-8;
pub const SYMMETRY_TOL: f64 = 1e-8;
pub const FLUX_TOL: f64 = 0.05;
pub const RATE_REL_TOL: f64 = 1e-5;
pub const RABI_TOL: f64 = 1e-10;
pub const PUMP_TOL: f64 = 1e-8;

/// Calibrated 5 K bath with the default scale.
pub fn reference_bath() -> BathParams {
    BathParams::calibrated(0.9, 5.0, 1.0, 0.05).expect("default calibration")
}

/// Off-resonant two-mode operating point used by the checks.
pub fn reference_params(bath: Option<BathParams>) -> SystemParams {
    SystemParams {
        g: [1.0, 1.0],
        delta: [10.0, 8.0],
        kappa: [0.5, 0.7],
        gamma: [0.01; 2],
        eta: [5.0; 2],
        gamma_dephasing: [0.01; 2],
        bath,
    }
}

/// Deterministic full-rank density matrix with coherences everywhere.
pub fn probe_state(dim: usize) -> Mat<C64> {
    let a = Mat::<C64>::from_fn(dim, dim, |i, j| {
        let x = (i * 7 + j * 13 + 1) as f64;
        C64::new((0.37 * x).sin(), (0.91 * x).cos())
    });
    let mut rho = &a * a.adjoint();
    let tr: C64 = (0..dim).map(|i| rho[(i, i)]).sum();
    rho *= faer::Scale(C64::new(1.0, 0.0) / tr);
    rho
}

fn trace_check(kind: MasterEquation, bath: Option<BathParams>) -> CheckResult {
    let name = format!("trace preservation ({kind:?}, phonons {})", bath.is_some());
    let run = || -> Result<(f64, String)> {
        let space = Space::new(SpaceSpec::new(2, 3, 3)?)?;
        let l = build(kind, &reference_params(bath), &space, None)?;
        let rho = probe_state(space.dim());
        let mut worst = 0.0_f64;
        let mut at = String::new();
        for c in &l.channels {
            let out = c.superop.apply(rho.as_ref());
            let tr: C64 = (0..space.dim()).map(|i| out[(i, i)]).sum();
            if tr.norm() >= worst {
                worst = tr.norm();
                at = c.label.clone();
            }
        }
        let out = l.total().apply(rho.as_ref());
        let tr: C64 = (0..space.dim()).map(|i| out[(i, i)]).sum();
        worst = worst.max(tr.norm());
        Ok((worst, format!("{} channels, worst {at}", l.channels.len())))
    };
    match run() {
        Ok((v, d)) => CheckResult::new(&name, v, TRACE_TOL, d),
        Err(e) => CheckResult::failed(&name, TRACE_TOL, e),
    }
}

fn steady_checks(kind: MasterEquation) -> Vec<CheckResult> {
    let tag = format!("{kind:?}");
    let run = || -> Result<Vec<CheckResult>> {
        let space = Space::new(SpaceSpec::new(2, 4, 4)?)?;
        let p = reference_params(Some(reference_bath()));
        let l = build(kind, &p, &space, None)?;
        let ss = steady_state(l.total(), &space)?;
        let st = photon_stats(ss.rho.as_ref(), &space);
        let mut out = vec![
            CheckResult::new(&format!("steady-state residual ({tag})"), ss.residual, RESIDUAL_TOL, ""),
            CheckResult::new(
                &format!("steady-state positivity ({tag})"),
                -ss.min_eigenvalue,
                -POSITIVITY_FLOOR,
                format!("min eigenvalue {:.3e}", ss.min_eigenvalue),
            ),
            CheckResult::new(
                &format!("identical-emitter symmetry ({tag})"),
                (st.populations.eg - st.populations.ge).abs(),
                SYMMETRY_TOL,
                "|P(eg) - P(ge)| with unequal mode detunings",
            ),
        ];
        if kind == MasterEquation::Simplified {
            let report = rate_decomposition(&l, &space, ss.rho.as_ref())?;
            let fb = flux_balance_check(&report, &st, &p);
            out.push(CheckResult::new(
                "flux balance (Simplified)",
                fb[0].max(fb[1]),
                FLUX_TOL,
                format!("N1 {:.4} M1 {:.4} N1M1 {:.4}", report.net.n1, report.net.m1, report.net.n1m1),
            ));
        }
        Ok(out)
    };
    run().unwrap_or_else(|e| vec![CheckResult::failed(&format!("steady state ({tag})"), RESIDUAL_TOL, e)])
}

/// Simpson reference for `int_0^T G(tau) e^{i s tau}` with `G` rebuilt from
/// `phi` on a grid `refine` times finer than the kernel's.
pub struct RefinedTransform {
    h: f64,
    phi: Vec<C64>,
    mean_b: f64,
}

impl RefinedTransform {
    pub fn new(kernel: &PhononKernel, refine: usize) -> Self {
        let n = (kernel.len() - 1) * refine;
        let h = kernel.tau_max() / n as f64;
        let p = *kernel.params();
        let phi = crate::par::map_range(n + 1, |k| phi(k as f64 * h, &p));
        Self { h, phi, mean_b: kernel.mean_displacement() }
    }

    pub fn transform(&self, which: Correlation, s: f64) -> C64 {
        let n = self.phi.len() - 1;
        let mut acc = C64::new(0.0, 0.0);
        for (k, &f) in self.phi.iter().enumerate() {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * which.eval(self.mean_b, f) * C64::from_polar(1.0, s * k as f64 * self.h);
        }
        acc * (self.h / 3.0)
    }
}

fn rate_check() -> CheckResult {
    let name = "phonon rates vs 10x quadrature";
    let run = || -> Result<(f64, String)> {
        let kernel = PhononKernel::tabulate(&reference_bath(), KernelOptions::default())?;
        let fine = RefinedTransform::new(&kernel, 10);
        let mut worst = 0.0_f64;
        let mut at = String::new();
        for which in [Correlation::Plus, Correlation::Minus] {
            for s in [-10.0, -8.0, -1.0, 0.0, 1.0, 8.0, 10.0] {
                let a = kernel.transform(which, s);
                let r = fine.transform(which, s);
                let rel = (a - r).norm() / r.norm().max(1e-300);
                if rel >= worst {
                    worst = rel;
                    at = format!("{which:?} at s = {s}");
                }
            }
        }
        Ok((worst, at))
    };
    match run() {
        Ok((v, d)) => CheckResult::new(name, v, RATE_REL_TOL, d),
        Err(e) => CheckResult::failed(name, RATE_REL_TOL, e),
    }
}

fn rabi_check() -> CheckResult {
    let name = "vacuum Rabi doublet";
    let run = || -> Result<(f64, String)> {
        let space = Space::new(SpaceSpec::new(1, 2, 1)?)?;
        let p = SystemParams {
            g: [1.0, 0.0],
            delta: [0.0, 0.0],
            kappa: [0.0; 2],
            gamma: [0.0; 2],
            eta: [0.0; 2],
            gamma_dephasing: [0.0; 2],
            bath: None,
        };
        let h = build_system_hamiltonian(&p, &space)?.to_dense();
        // Mode 2 is decoupled; keep it in vacuum.
        let one: Vec<usize> =
            space.excitation_class(1).iter().copied().filter(|&i| space.state(i).photons[1] == 0).collect();
        let block = Mat::<C64>::from_fn(one.len(), one.len(), |i, j| h[(one[i], one[j])]);
        let mut ev: Vec<f64> = block
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|e| crate::Error::NonConvergence(format!("{e:?}")))?;
        ev.sort_by(f64::total_cmp);
        let expect = [-1.0, 1.0];
        let dev = ev.iter().zip(expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok((dev, format!("one-excitation eigenvalues {ev:?}")))
    };
    match run() {
        Ok((v, d)) => CheckResult::new(name, v, RABI_TOL, d),
        Err(e) => CheckResult::failed(name, RABI_TOL, e),
    }
}

fn pump_check() -> CheckResult {
    let name = "two-level pump balance";
    let (eta, gamma) = (3.0, 0.7);
    let run = || -> Result<(f64, String)> {
        let space = Space::new(SpaceSpec::new(1, 1, 1)?)?;
        let p = SystemParams {
            g: [0.0, 0.0],
            delta: [0.0, 0.0],
            kappa: [1.0; 2],
            gamma: [gamma; 2],
            eta: [eta; 2],
            gamma_dephasing: [0.2; 2],
            bath: None,
        };
        let l = build(MasterEquation::Full, &p, &space, None)?;
        let ss = steady_state(l.total(), &space)?;
        let pe = photon_stats(ss.rho.as_ref(), &space).populations.eg;
        Ok(((pe - eta / (eta + gamma)).abs(), format!("P(e) = {pe:.12}")))
    };
    match run() {
        Ok((v, d)) => CheckResult::new(name, v, PUMP_TOL, d),
        Err(e) => CheckResult::failed(name, PUMP_TOL, e),
    }
}

/// Runs every check. Takes a few seconds.
pub fn run_all() -> Vec<CheckResult> {
    let mut out = Vec::new();
    for kind in [MasterEquation::Full, MasterEquation::Simplified] {
        out.push(trace_check(kind, None));
        out.push(trace_check(kind, Some(reference_bath())));
    }
    out.extend(steady_checks(MasterEquation::Full));
    out.extend(steady_checks(MasterEquation::Simplified));
    out.push(rate_check());
    out.push(rabi_check());
    out.push(pump_check());
    out
}
