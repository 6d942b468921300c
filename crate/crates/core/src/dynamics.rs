//! Steady states, time evolution, two-time correlations and emission spectra.
//!
//! All solvers work sector by sector (see [`crate::sector`]). The steady state
//! lives entirely in the zero sector, where the vacuum population forms a
//! one-element block; fixing it to 1 removes the null space and leaves a
//! block-tridiagonal system that is solved directly.

use faer::{Mat, MatRef, Side};
use faer::linalg::solvers::PartialPivLu;
use faer::prelude::Solve;
use serde::Serialize;

use crate::operator::{Mode, SparseOperator};
use crate::sector::{BlockLu, Sector, SectorMatrix};
use crate::space::Space;
use crate::superop::SuperOperator;
use crate::{Error, Result, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Clone, Debug)]
pub struct SteadyStateOptions {
    /// Above this estimate for the block factors, switch to GMRES.
    pub memory_budget_bytes: usize,
    /// Bound on `||L rho||_2` for a trace-one `rho`.
    pub residual_tol: f64,
    /// Most negative eigenvalue tolerated before the state is rejected.
    pub positivity_tol: f64,
    pub force_iterative: bool,
    pub gmres_restart: usize,
    pub gmres_max_iter: usize,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            memory_budget_bytes: 2 << 30,
            residual_tol: 1e-8,
            positivity_tol: 1e-8,
            force_iterative: false,
            gmres_restart: 80,
            gmres_max_iter: 4000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum SolverMethod {
    BlockLu,
    Gmres { iterations: usize },
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub rho: Mat<C64>,
    pub residual: f64,
    pub min_eigenvalue: f64,
    pub hermiticity_error: f64,
    pub method: SolverMethod,
}

pub fn steady_state(l: &SuperOperator, space: &Space) -> Result<SteadyState> {
    steady_state_with(l, space, &SteadyStateOptions::default())
}

pub fn steady_state_with(l: &SuperOperator, space: &Space, opts: &SteadyStateOptions) -> Result<SteadyState> {
    let sector = Sector::new(space, 0).expect("zero sector always exists");
    let m = SectorMatrix::assemble(l, &sector)?;
    if sector.block_range(0).len() != 1 {
        return Err(Error::InvalidParameter("vacuum block must be a single element".into()));
    }
    let n = m.len();
    // Gauge: rho_vac,vac = 1; everything else from the remaining rows.
    let mut rhs = vec![ZERO; n];
    for (r, c, v) in m.csr().iter() {
        if c == 0 && r > 0 {
            rhs[r] -= v;
        }
    }
    let use_lu = !opts.force_iterative && m.lu_memory_bytes(1) <= opts.memory_budget_bytes;
    let (mut x, method) = if use_lu {
        let lu = m.factor(ZERO, ONE, 1)?;
        let mut x = rhs.clone();
        x[0] = ZERO;
        lu.solve_in_place(&mut x);
        x[0] = ONE;
        // One step of iterative refinement.
        let mut r = m.matvec(&x);
        for v in r.iter_mut() {
            *v = -*v;
        }
        r[0] = ZERO;
        lu.solve_in_place(&mut r);
        for i in 1..n {
            x[i] += r[i];
        }
        (x, SolverMethod::BlockLu)
    } else {
        log::info!("steady state: block factors exceed the memory budget, using GMRES");
        let (x, iterations) = gmres_gauged(&m, &rhs, opts)?;
        (x, SolverMethod::Gmres { iterations })
    };

    let trace: C64 = (0..n)
        .filter(|&s| {
            let (i, j) = sector.pair(s);
            i == j
        })
        .map(|s| x[s])
        .sum();
    let finite = x.iter().all(|v| v.re.is_finite() && v.im.is_finite()) && trace.norm() > 0.0;
    if finite {
        for v in x.iter_mut() {
            *v /= trace;
        }
    }
    let residual = if finite { norm2(&m.matvec(&x)) } else { f64::NAN };
    if !finite || !(residual <= opts.residual_tol) {
        return Err(diagnose_failure(&m, residual));
    }

    let d = space.dim();
    let mut rho = Mat::<C64>::zeros(d, d);
    sector.scatter(&x, &mut rho);
    let mut herm = 0.0_f64;
    for j in 0..d {
        for i in 0..j {
            herm = herm.max((rho[(i, j)] - rho[(j, i)].conj()).norm());
        }
    }
    let hermitized = Mat::<C64>::from_fn(d, d, |i, j| 0.5 * (rho[(i, j)] + rho[(j, i)].conj()));
    let min_eig = min_eigenvalue(hermitized.as_ref(), space)?;
    if min_eig < -opts.positivity_tol {
        return Err(Error::NonConvergence(format!(
            "steady state has eigenvalue {min_eig:.3e} below -{:.0e}",
            opts.positivity_tol
        )));
    }
    Ok(SteadyState { rho: hermitized, residual, min_eigenvalue: min_eig, hermiticity_error: herm, method })
}

fn diagnose_failure(m: &SectorMatrix, residual: f64) -> Error {
    if m.len() <= 2000 {
        let dense = m.csr().to_dense();
        if let Ok(sv) = dense.singular_values() {
            let smax = sv.first().copied().unwrap_or(0.0);
            let nullity = sv.iter().filter(|&&s| s <= 1e-10 * smax).count();
            if nullity != 1 {
                return Error::Singular {
                    nullity,
                    detail: format!("zero-sector generator, residual {residual:.3e}"),
                };
            }
        }
    }
    Error::NonConvergence(format!("steady-state residual {residual:.3e}"))
}

fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Smallest eigenvalue of a density matrix that is block diagonal in the
/// excitation number.
pub fn min_eigenvalue(rho: MatRef<'_, C64>, space: &Space) -> Result<f64> {
    let mut min = f64::INFINITY;
    for e in 0..=space.max_excitation() {
        let idx = space.excitation_class(e);
        if idx.is_empty() {
            continue;
        }
        let m = idx.len();
        let b = Mat::<C64>::from_fn(m, m, |r, c| rho[(idx[r], idx[c])]);
        let ev = b
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::NonConvergence(format!("eigenvalues failed: {e:?}")))?;
        min = min.min(ev[0]);
    }
    Ok(min)
}

/// Restarted GMRES on the gauge-fixed zero-sector system (unknowns with
/// index >= 1), right-preconditioned by LU factors of diagonal sub-blocks.
fn gmres_gauged(m: &SectorMatrix, rhs_full: &[C64], opts: &SteadyStateOptions) -> Result<(Vec<C64>, usize)> {
    let n = m.len() - 1;
    let apply = |x: &[C64]| -> Vec<C64> {
        let mut full = vec![ZERO; n + 1];
        full[1..].copy_from_slice(x);
        m.matvec(&full)[1..].to_vec()
    };
    let precond = BlockJacobi::new(m, 512);
    let b = rhs_full[1..].to_vec();
    let bnorm = norm2(&b).max(1e-300);
    let tol = 1e-12;
    let mut x = vec![ZERO; n];
    let restart = opts.gmres_restart.max(2);
    let mut total = 0;
    loop {
        let ax = apply(&x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm2(&r);
        if beta / bnorm < tol {
            break;
        }
        if total >= opts.gmres_max_iter {
            return Err(Error::NonConvergence(format!(
                "GMRES stalled at relative residual {:.3e} after {total} iterations",
                beta / bnorm
            )));
        }
        let mut v: Vec<Vec<C64>> = vec![r.iter().map(|z| z / beta).collect()];
        let mut z: Vec<Vec<C64>> = Vec::new();
        let mut h = vec![vec![ZERO; restart]; restart + 1];
        let mut cs = vec![ZERO; restart];
        let mut sn = vec![ZERO; restart];
        let mut g = vec![ZERO; restart + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k = 0;
        for j in 0..restart {
            let zj = precond.apply(&v[j]);
            let mut w = apply(&zj);
            z.push(zj);
            for i in 0..=j {
                let hij: C64 = v[i].iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(&v[i]) {
                    *wk -= hij * vk;
                }
            }
            let hn = norm2(&w);
            h[j + 1][j] = C64::new(hn, 0.0);
            for i in 0..j {
                let (a, b) = (h[i][j], h[i + 1][j]);
                h[i][j] = cs[i].conj() * a + sn[i].conj() * b;
                h[i + 1][j] = -sn[i] * a + cs[i] * b;
            }
            let (a, b) = (h[j][j], h[j + 1][j]);
            let rr = (a.norm_sqr() + b.norm_sqr()).sqrt();
            cs[j] = a / rr;
            sn[j] = b / rr;
            h[j][j] = C64::new(rr, 0.0);
            h[j + 1][j] = ZERO;
            let gj = g[j];
            g[j] = cs[j].conj() * gj;
            g[j + 1] = -sn[j] * gj;
            k = j + 1;
            total += 1;
            if hn > 0.0 {
                v.push(w.iter().map(|x| x / hn).collect());
            }
            if g[j + 1].norm() / bnorm < tol || hn == 0.0 || total >= opts.gmres_max_iter {
                break;
            }
        }
        let mut y = vec![ZERO; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for jj in i + 1..k {
                s -= h[i][jj] * y[jj];
            }
            y[i] = s / h[i][i];
        }
        for (yi, zi) in y.iter().zip(&z) {
            for (xk, zk) in x.iter_mut().zip(zi) {
                *xk += yi * zk;
            }
        }
    }
    let mut full = vec![ONE];
    full.extend(x);
    Ok((full, total))
}

struct BlockJacobi {
    ranges: Vec<std::ops::Range<usize>>,
    lus: Vec<PartialPivLu<C64>>,
}

impl BlockJacobi {
    /// Preconditioner for the system without the first unknown.
    fn new(m: &SectorMatrix, chunk: usize) -> Self {
        let mut ranges = Vec::new();
        for b in 1..m.n_blocks() {
            let (s, e) = (m.offsets()[b] - 1, m.offsets()[b + 1] - 1);
            let mut a = s;
            while a < e {
                let z = (a + chunk).min(e);
                ranges.push(a..z);
                a = z;
            }
        }
        let lus = ranges
            .iter()
            .map(|r| {
                let len = r.len();
                let mut d = Mat::<C64>::zeros(len, len);
                for (lr, row) in r.clone().enumerate() {
                    for (c, v) in m.csr().row(row + 1) {
                        if c >= r.start + 1 && c < r.end + 1 {
                            d[(lr, c - r.start - 1)] = v;
                        }
                    }
                    if d[(lr, lr)] == ZERO {
                        d[(lr, lr)] = ONE;
                    }
                }
                d.partial_piv_lu()
            })
            .collect();
        Self { ranges, lus }
    }

    fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out = v.to_vec();
        for (r, lu) in self.ranges.iter().zip(&self.lus) {
            let mut seg = Mat::<C64>::from_fn(r.len(), 1, |i, _| v[r.start + i]);
            lu.solve_in_place(seg.as_mut());
            for i in 0..r.len() {
                out[r.start + i] = seg[(i, 0)];
            }
        }
        out
    }
}

// Alexander's three-stage, third-order, L-stable SDIRK.
const SDIRK_GAMMA: f64 = 0.435_866_521_508_459;

fn sdirk_coeffs() -> ([[f64; 3]; 3], [f64; 3]) {
    let g = SDIRK_GAMMA;
    let b1 = -(6.0 * g * g - 16.0 * g + 1.0) / 4.0;
    let b2 = (6.0 * g * g - 20.0 * g + 5.0) / 4.0;
    let a = [[g, 0.0, 0.0], [(1.0 - g) / 2.0, g, 0.0], [b1, b2, g]];
    (a, [b1, b2, g])
}

/// Fixed-step SDIRK propagator for one sector.
pub struct SectorPropagator {
    m: SectorMatrix,
    h: f64,
    lu: BlockLu,
}

impl SectorPropagator {
    pub fn new(m: SectorMatrix, h: f64) -> Result<Self> {
        let lu = m.factor(ONE, C64::new(-h * SDIRK_GAMMA, 0.0), 0)?;
        Ok(Self { m, h, lu })
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn set_step(&mut self, h: f64) -> Result<()> {
        if (h - self.h).abs() > 1e-12 * self.h {
            self.lu = self.m.factor(ONE, C64::new(-h * SDIRK_GAMMA, 0.0), 0)?;
            self.h = h;
        }
        Ok(())
    }

    pub fn step(&self, y: &mut [C64]) {
        let (a, b) = sdirk_coeffs();
        let h = self.h;
        let n = y.len();
        let mut ks: Vec<Vec<C64>> = Vec::with_capacity(3);
        for i in 0..3 {
            let mut arg = y.to_vec();
            for (j, k) in ks.iter().enumerate() {
                let c = h * a[i][j];
                for t in 0..n {
                    arg[t] += c * k[t];
                }
            }
            let mut k = self.m.matvec(&arg);
            self.lu.solve_in_place(&mut k);
            ks.push(k);
        }
        for (bi, k) in b.iter().zip(&ks) {
            let c = h * bi;
            for t in 0..n {
                y[t] += c * k[t];
            }
        }
    }

    /// Advances `y` by `dt` in steps no larger than `max_step`, refactoring
    /// only if the step size changes.
    pub fn advance(&mut self, y: &mut [C64], dt: f64, max_step: f64) -> Result<()> {
        if dt <= 0.0 {
            return Ok(());
        }
        let n = (dt / max_step - 1e-9).ceil().max(1.0) as usize;
        self.set_step(dt / n as f64)?;
        for _ in 0..n {
            self.step(y);
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EvolveOptions {
    pub max_step: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { max_step: 0.02 }
    }
}

/// `rho(t)` on `t_grid`, with `rho0` taken as the state at `t_grid[0]`.
pub fn evolve(l: &SuperOperator, space: &Space, rho0: MatRef<'_, C64>, t_grid: &[f64]) -> Result<Vec<Mat<C64>>> {
    evolve_with(l, space, rho0, t_grid, &EvolveOptions::default())
}

pub fn evolve_with(
    l: &SuperOperator,
    space: &Space,
    rho0: MatRef<'_, C64>,
    t_grid: &[f64],
    opts: &EvolveOptions,
) -> Result<Vec<Mat<C64>>> {
    check_grid(t_grid)?;
    let d = space.dim();
    let mut out = vec![Mat::<C64>::zeros(d, d); t_grid.len()];
    for sector in Sector::all(space) {
        if sector.weight(rho0) == 0.0 {
            continue;
        }
        let m = SectorMatrix::assemble(l, &sector)?;
        let mut y = sector.gather(rho0);
        let mut prop = SectorPropagator::new(m, opts.max_step)?;
        sector.scatter(&y, &mut out[0]);
        for w in 1..t_grid.len() {
            prop.advance(&mut y, t_grid[w] - t_grid[w - 1], opts.max_step)?;
            sector.scatter(&y, &mut out[w]);
        }
    }
    Ok(out)
}

fn check_grid(t: &[f64]) -> Result<()> {
    if t.is_empty() || t.windows(2).any(|w| !(w[1] >= w[0])) || !t.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("time grid must be finite and non-decreasing".into()));
    }
    Ok(())
}

/// Propagates `B rho` under `L - i w_f` and measures `tr(A .)`.
struct CorrelationRun {
    parts: Vec<(SectorPropagator, Vec<C64>, Vec<C64>)>,
    frame: f64,
}

impl CorrelationRun {
    fn new(
        l: &SuperOperator,
        space: &Space,
        rho: MatRef<'_, C64>,
        a: &SparseOperator,
        b: &SparseOperator,
        frame: f64,
        h: f64,
    ) -> Result<Self> {
        let x = b.csr().mul_dense(rho);
        let mut parts = Vec::new();
        for sector in Sector::all(space) {
            if sector.weight(x.as_ref()) == 0.0 {
                continue;
            }
            let m = SectorMatrix::assemble(l, &sector)?.with_diagonal_shift(C64::new(0.0, -frame));
            let y = sector.gather(x.as_ref());
            // tr(A Y) = sum_ij A_ji Y_ij
            let w = (0..sector.len())
                .map(|s| {
                    let (i, j) = sector.pair(s);
                    a.csr().get(j, i)
                })
                .collect();
            parts.push((SectorPropagator::new(m, h)?, y, w));
        }
        Ok(Self { parts, frame })
    }

    /// Correlation in the rotating frame, i.e. `C(t) exp(-i w_f t)`.
    fn value(&self) -> C64 {
        self.parts.iter().map(|(_, y, w)| y.iter().zip(w).map(|(a, b)| a * b).sum::<C64>()).sum()
    }

    fn advance(&mut self, dt: f64, max_step: f64) -> Result<()> {
        for (p, y, _) in &mut self.parts {
            p.advance(y, dt, max_step)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CorrelationOptions {
    pub max_step: f64,
    /// Frame frequency removed during propagation and restored afterwards.
    pub frame: f64,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        Self { max_step: 0.02, frame: 0.0 }
    }
}

/// `C(t) = tr[A exp(L t)(B rho)]` on a grid starting at 0.
pub fn two_time_correlation(
    l: &SuperOperator,
    space: &Space,
    rho: MatRef<'_, C64>,
    a: &SparseOperator,
    b: &SparseOperator,
    t_grid: &[f64],
    opts: &CorrelationOptions,
) -> Result<Vec<C64>> {
    check_grid(t_grid)?;
    let mut run = CorrelationRun::new(l, space, rho, a, b, opts.frame, opts.max_step)?;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut t_prev = 0.0;
    for &t in t_grid {
        run.advance(t - t_prev, opts.max_step)?;
        t_prev = t;
        out.push(run.value() * C64::from_polar(1.0, run.frame * t));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SpectrumOptions {
    /// Step used while the fast transients die out.
    pub fine_step: f64,
    pub fine_window: f64,
    /// Stop once `|C(t)| < decay_tol |C(0)|`.
    pub decay_tol: f64,
    pub t_limit: f64,
    /// Points of the output frequency grid.
    pub n_omega: usize,
    /// Half-width of the output grid in units of the fitted FWHM.
    pub span_fwhm: f64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self { fine_step: 0.01, fine_window: 20.0, decay_tol: 1e-4, t_limit: 20_000.0, n_omega: 401, span_fwhm: 10.0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LorentzFit {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// RMS misfit relative to the peak height.
    pub rms_rel: f64,
    pub lorentzian: bool,
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    pub omega: Vec<f64>,
    pub intensity: Vec<f64>,
    pub fit: LorentzFit,
    pub frame_frequency: f64,
    pub times: Vec<f64>,
    pub correlation: Vec<C64>,
}

/// Cavity emission spectrum of `mode` from `<a^dag(t) a(0)>` with the
/// linewidth from a Lorentzian fit. Units of `g1`.
pub fn emission_spectrum(
    l: &SuperOperator,
    space: &Space,
    rho_ss: MatRef<'_, C64>,
    mode: Mode,
    opts: &SpectrumOptions,
) -> Result<Spectrum> {
    let a = SparseOperator::annihilator(space, mode);
    let ad = a.adjoint();

    // Fine pass in the lab frame to find the slow frequency.
    let mut run = CorrelationRun::new(l, space, rho_ss, &ad, &a, 0.0, opts.fine_step)?;
    let c0 = run.value();
    if c0.norm() == 0.0 {
        return Err(Error::InvalidParameter("mode is empty; no emission spectrum".into()));
    }
    let sample = 0.02;
    let n_fine = (opts.fine_window / sample).round() as usize;
    let mut times = vec![0.0];
    let mut corr = vec![c0];
    for k in 1..=n_fine {
        run.advance(sample, opts.fine_step)?;
        times.push(k as f64 * sample);
        corr.push(run.value());
    }
    let tail = &corr[n_fine / 2..];
    let mut phase = 0.0;
    let mut decay = 0.0;
    for w in tail.windows(2) {
        let r = w[1] / w[0];
        phase += r.arg();
        decay -= r.norm().ln();
    }
    let steps = (tail.len() - 1) as f64 * sample;
    let frame = phase / steps;
    let decay_rate = (decay / steps).max(0.0);

    // Coarse pass in the rotating frame, continuing from the fine one.
    let coarse = if decay_rate > 0.0 { (0.02 / decay_rate).clamp(0.02, 1.0) } else { 1.0 };
    let t_fine = times[n_fine];
    let mut rot = CorrelationRun::new(l, space, rho_ss, &ad, &a, frame, coarse)?;
    rot.advance(t_fine, opts.fine_step)?;
    let mut t = t_fine;
    let threshold = opts.decay_tol * c0.norm();
    loop {
        let v = rot.value() * C64::from_polar(1.0, frame * t);
        if t > t_fine {
            times.push(t);
            corr.push(v);
        }
        if v.norm() < threshold && t > t_fine {
            break;
        }
        if t >= opts.t_limit {
            return Err(Error::CorrelationNotDecayed { t_end: t, ratio: v.norm() / c0.norm() });
        }
        rot.advance(coarse, coarse)?;
        t += coarse;
    }

    let fwhm_guess = (2.0 * decay_rate).max(1e-6);
    let span = opts.span_fwhm * fwhm_guess;
    let omega: Vec<f64> = (0..opts.n_omega)
        .map(|k| frame - span + 2.0 * span * k as f64 / (opts.n_omega - 1) as f64)
        .collect();
    let intensity: Vec<f64> = omega.iter().map(|&w| spectrum_at(&times, &corr, w, frame)).collect();
    let fit = fit_lorentzian(&omega, &intensity)?;
    Ok(Spectrum { omega, intensity, fit, frame_frequency: frame, times, correlation: corr })
}

/// `Re int_0^inf C(t) exp(-i w t) dt` from samples. The envelope
/// `C(t) exp(-i w_f t)` is treated as piecewise linear and integrated exactly
/// against the remaining phase; the part beyond the last sample is closed with
/// an exponential fitted to the final interval.
pub fn spectrum_at(times: &[f64], corr: &[C64], omega: f64, frame: f64) -> f64 {
    let env: Vec<C64> = times.iter().zip(corr).map(|(&t, &c)| c * C64::from_polar(1.0, -frame * t)).collect();
    let s = frame - omega;
    let mut acc = ZERO;
    for k in 1..times.len() {
        acc += linear_times_phase(env[k - 1], env[k], times[k - 1], times[k], s);
    }
    let n = times.len();
    if n >= 2 {
        let (ta, tb) = (times[n - 2], times[n - 1]);
        let (ca, cb) = (env[n - 2], env[n - 1]);
        if ca.norm() > 0.0 && cb.norm() > 0.0 && tb > ta {
            let rate = (cb / ca).ln() / (tb - ta) + C64::new(0.0, s);
            if rate.re < 0.0 {
                acc += -cb * C64::from_polar(1.0, s * tb) / rate;
            }
        }
    }
    acc.re
}

/// `int_t0^t1 f(t) exp(i s t) dt` for `f` linear between `f0` and `f1`.
pub(crate) fn linear_times_phase(f0: C64, f1: C64, t0: f64, t1: f64, s: f64) -> C64 {
    let h = t1 - t0;
    let th = s * h;
    let e0 = C64::from_polar(1.0, s * t0);
    if th.abs() < 1e-3 {
        // Series of the exact weights.
        let i = C64::new(0.0, 1.0);
        let w0 = h * (0.5 + i * th / 6.0 - th * th / 24.0);
        let w1 = h * (0.5 + i * th / 3.0 - th * th / 8.0);
        return e0 * (w0 * f0 + w1 * f1);
    }
    let i = C64::new(0.0, 1.0);
    let e = C64::from_polar(1.0, th);
    // int_0^1 (1-u) e^{i th u} du and int_0^1 u e^{i th u} du, times h.
    let j0 = (e - 1.0) / (i * th);
    let j1 = e / (i * th) + (e - 1.0) / (th * th);
    let w1 = h * j1;
    let w0 = h * (j0 - j1);
    e0 * (w0 * f0 + w1 * f1)
}

/// Least-squares Lorentzian plus offset by Levenberg-Marquardt.
pub fn fit_lorentzian(omega: &[f64], y: &[f64]) -> Result<LorentzFit> {
    if omega.len() < 5 || omega.len() != y.len() {
        return Err(Error::InvalidParameter("need at least 5 spectrum samples".into()));
    }
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let ymin = y.iter().copied().fold(f64::INFINITY, f64::min);
    let half = 0.5 * (ymax + ymin);
    let left = (0..imax).rev().find(|&k| y[k] < half).unwrap_or(0);
    let right = (imax..y.len()).find(|&k| y[k] < half).unwrap_or(y.len() - 1);
    let width = (omega[right] - omega[left]).abs().max(1e-9);
    let mut p = [omega[imax], width, ymax - ymin, ymin];
    let model = |p: &[f64; 4], w: f64| {
        let hw = 0.5 * p[1];
        p[2] * hw * hw / ((w - p[0]).powi(2) + hw * hw) + p[3]
    };
    let cost = |p: &[f64; 4]| omega.iter().zip(y).map(|(&w, &v)| (model(p, w) - v).powi(2)).sum::<f64>();
    let mut lambda = 1e-3;
    let mut c = cost(&p);
    for _ in 0..500 {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (&w, &v) in omega.iter().zip(y) {
            let hw = 0.5 * p[1];
            let den = (w - p[0]).powi(2) + hw * hw;
            let l = hw * hw / den;
            let j = [
                p[2] * hw * hw * 2.0 * (w - p[0]) / (den * den),
                p[2] * (hw / den - hw * hw * hw / (den * den)),
                l,
                1.0,
            ];
            let r = model(&p, w) - v;
            for a in 0..4 {
                jtr[a] += j[a] * r;
                for b in 0..4 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut sys = jtj;
            for a in 0..4 {
                sys[a][a] *= 1.0 + lambda;
                sys[a][a] += 1e-300;
            }
            let Some(dp) = solve4(sys, jtr) else { break };
            let trial = [p[0] - dp[0], (p[1] - dp[1]).abs(), p[2] - dp[2], p[3] - dp[3]];
            let ct = cost(&trial);
            if ct < c {
                let rel = (c - ct) / c.max(1e-300);
                p = trial;
                c = ct;
                lambda = (lambda * 0.3).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let peak = p[2] + p[3];
    let rms = (c / omega.len() as f64).sqrt();
    let rms_rel = rms / peak.abs().max(1e-300);
    Ok(LorentzFit { center: p[0], fwhm: p[1], amplitude: p[2], offset: p[3], rms_rel, lorentzian: rms_rel <= 0.1 })
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for k in 0..4 {
        let piv = (k..4).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[piv][k].abs() < 1e-300 {
            return None;
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..4 {
            let f = a[i][k] / a[k][k];
            for j in k..4 {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = [0.0; 4];
    for i in (0..4).rev() {
        let mut s = b[i];
        for j in i + 1..4 {
            s -= a[i][j] * x[j];
        }
        x[i] = s / a[i][i];
    }
    Some(x)
}
