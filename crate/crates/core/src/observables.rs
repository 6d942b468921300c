//! Steady-state observables: photon statistics, emitter populations, the
//! radiance witness and the photon-emission rate decomposition.

use faer::{Mat, MatRef};
use serde::Serialize;

use crate::liouvillian::{build, ChannelClass, Liouvillian, MasterEquation, SystemParams};
use crate::operator::{Mode, SparseOperator};
use crate::par;
use crate::phonon::PhononKernel;
use crate::sector::{Sector, SectorMatrix};
use crate::space::{BasisState, Space, SpaceSpec};
use crate::{dynamics, Error, Result, C64};

/// Mean photon numbers below this are treated as empty when normalising.
pub const EMPTY_MODE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Populations {
    /// Both emitters excited.
    pub ee: f64,
    /// Emitter 1 excited, emitter 2 ground. With one emitter, `P(e)`.
    pub eg: f64,
    pub ge: f64,
    /// Both ground. With one emitter, `P(g)`.
    pub gg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhotonStats {
    pub n: [f64; 2],
    /// Equal-time `g2` of each mode; `None` for an empty mode.
    pub g2: [Option<f64>; 2],
    pub g12: Option<f64>,
    /// `<a1^dag a2>`
    pub cross: C64,
    pub populations: Populations,
    pub trace: f64,
}

pub fn photon_stats(rho: MatRef<'_, C64>, space: &Space) -> PhotonStats {
    let mut n = [0.0; 2];
    let mut nn = [0.0; 2];
    let mut n12 = 0.0;
    let mut pops = Populations::default();
    let mut trace = 0.0;
    for i in 0..space.dim() {
        let p = rho[(i, i)].re;
        let BasisState { qd, photons } = space.state(i);
        let (a, b) = (photons[0] as f64, photons[1] as f64);
        trace += p;
        n[0] += p * a;
        n[1] += p * b;
        nn[0] += p * a * (a - 1.0);
        nn[1] += p * b * (b - 1.0);
        n12 += p * a * b;
        match qd {
            [1, 1] => pops.ee += p,
            [1, 0] => pops.eg += p,
            [0, 1] => pops.ge += p,
            _ => pops.gg += p,
        }
    }
    let g2 = [0, 1].map(|k| (n[k] >= EMPTY_MODE).then(|| nn[k] / (n[k] * n[k])));
    let g12 = (n[0] >= EMPTY_MODE && n[1] >= EMPTY_MODE).then(|| n12 / (n[0] * n[1]));
    let op = &SparseOperator::creator(space, Mode::One) * &SparseOperator::annihilator(space, Mode::Two);
    let cross = op.csr().iter().map(|(r, c, v)| v * rho[(c, r)]).sum();
    PhotonStats { n, g2, g12, cross, populations: pops, trace }
}

/// `(n_2QD - 2 n_1QD) / (2 n_1QD)` per mode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadianceWitness {
    pub rw: [Option<f64>; 2],
    pub n_two: [f64; 2],
    pub n_one: [f64; 2],
}

impl RadianceWitness {
    pub fn from_counts(n_two: [f64; 2], n_one: [f64; 2]) -> Self {
        let rw = [0, 1].map(|k| (n_one[k] >= EMPTY_MODE).then(|| (n_two[k] - 2.0 * n_one[k]) / (2.0 * n_one[k])));
        Self { rw, n_two, n_one }
    }
}

/// Solves the two-emitter system and its single-emitter reference (same
/// couplings, pump and cavity; emitter 1 only) and forms the witness.
pub fn radiance_witness(
    kind: MasterEquation,
    p: &SystemParams,
    spec: SpaceSpec,
    kernel: Option<&PhononKernel>,
) -> Result<RadianceWitness> {
    let two = Space::new(SpaceSpec::new(2, spec.n_max[0], spec.n_max[1])?)?;
    let one = Space::new(SpaceSpec::new(1, spec.n_max[0], spec.n_max[1])?)?;
    let n_two = mean_photons(kind, p, &two, kernel)?;
    let n_one = mean_photons(kind, p, &one, kernel)?;
    Ok(RadianceWitness::from_counts(n_two, n_one))
}

fn mean_photons(kind: MasterEquation, p: &SystemParams, space: &Space, kernel: Option<&PhononKernel>) -> Result<[f64; 2]> {
    let l = build(kind, p, space, kernel)?;
    let ss = dynamics::steady_state(l.total(), space)?;
    Ok(photon_stats(ss.rho.as_ref(), space).n)
}

/// Population-transfer pathways, by the photons a transition adds to
/// (mode 1, mode 2).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PathwayRates {
    /// One photon into mode 1.
    pub n1: f64,
    /// One photon into mode 2.
    pub m1: f64,
    /// One photon into each mode at once.
    pub n1m1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StateRates {
    pub qd: [u8; 2],
    pub photons: [usize; 2],
    pub population: f64,
    /// Emission rates per unit population out of this state.
    pub emission: PathwayRates,
    /// Reverse (photon-absorbing) rates per unit population.
    pub absorption: PathwayRates,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateReport {
    /// Net flux (emission minus absorption) per pathway.
    pub net: PathwayRates,
    pub emission: PathwayRates,
    pub absorption: PathwayRates,
    /// Net photon flux into each mode carried by transitions that move more
    /// than one elementary step (for example two photons into one mode).
    /// These are already split into the pathways above.
    pub multi_step: [f64; 2],
    /// Direct `tr(n_k L_c rho)` of every channel.
    pub channel_fluxes: Vec<(String, [f64; 2])>,
    /// Largest column sum of the reduced population generator, a check on
    /// trace preservation.
    pub column_sum_error: f64,
    pub per_state: Vec<StateRates>,
}

/// Splits the steady-state photon production into pathways.
///
/// Coherences of the zero sector are eliminated exactly, which leaves a rate
/// matrix `W` between product-basis populations. After removing the cavity
/// loss (which only ever removes photons), each remaining transition is
/// classified by how many photons it adds to each mode. Transitions that move
/// several photons are split into elementary events: as many two-mode pairs as
/// the common sign allows, then single-photon steps. Every photon is counted
/// exactly once, so the pathways balance the cavity output.
pub fn rate_decomposition(l: &Liouvillian, space: &Space, rho: MatRef<'_, C64>) -> Result<RateReport> {
    for c in &l.channels {
        if c.signature.is_none() {
            return Err(Error::MissingSignature(c.label.clone()));
        }
    }
    let sector = Sector::new(space, 0).expect("zero sector always exists");
    let m = SectorMatrix::assemble(l.total(), &sector)?;
    let n = m.len();
    let is_pop: Vec<bool> = (0..n).map(|s| sector.pair(s).0 == sector.pair(s).1).collect();
    let pops: Vec<usize> = (0..n).filter(|&s| is_pop[s]).collect();
    let cohs: Vec<usize> = (0..n).filter(|&s| !is_pop[s]).collect();
    let np = pops.len();

    let mut pop_map = vec![None; n];
    for (k, &s) in pops.iter().enumerate() {
        pop_map[s] = Some(k);
    }
    let mut coh_map = vec![None; n];
    for (k, &s) in cohs.iter().enumerate() {
        coh_map[s] = Some(k);
    }
    let m_pp = m.csr().select(&pops, &pop_map, np).to_dense();
    let m_pc = m.csr().select(&pops, &coh_map, cohs.len());
    let m_cp = m.csr().select(&cohs, &pop_map, np).transpose();

    let mut w = m_pp;
    if !cohs.is_empty() {
        let not_pop: Vec<bool> = is_pop.iter().map(|p| !p).collect();
        let m_cc = m.restrict(&not_pop);
        let lu = m_cc.factor(C64::new(0.0, 0.0), C64::new(1.0, 0.0), 0)?;
        let cols: Vec<Vec<C64>> = par::map_range(np, |j| {
            let mut z = vec![C64::new(0.0, 0.0); cohs.len()];
            for (c, v) in m_cp.row(j) {
                z[c] = v;
            }
            lu.solve_in_place(&mut z);
            m_pc.matvec(&z)
        });
        for (j, col) in cols.iter().enumerate() {
            for i in 0..np {
                w[(i, j)] -= col[i];
            }
        }
    }
    let column_sum_error = (0..np)
        .map(|j| (0..np).map(|i| w[(i, j)]).sum::<C64>().norm())
        .fold(0.0_f64, f64::max);

    // Cavity loss only acts on populations through its own sandwich term.
    let mut loss = crate::superop::SuperOperator::zero(space.dim());
    for c in l.channels.iter().filter(|c| c.class == ChannelClass::CavityLoss) {
        loss.extend(&c.superop);
    }
    let loss_m = SectorMatrix::assemble(&loss, &sector)?;
    let loss_pp = loss_m.csr().select(&pops, &pop_map, np);

    let basis: Vec<usize> = pops.iter().map(|&s| sector.pair(s).0).collect();
    let x: Vec<f64> = basis.iter().map(|&i| rho[(i, i)].re).collect();
    let mut emission = PathwayRates::default();
    let mut absorption = PathwayRates::default();
    let mut multi_step = [0.0; 2];
    let mut per_state: Vec<StateRates> = basis
        .iter()
        .zip(&x)
        .map(|(&i, &p)| {
            let s = space.state(i);
            StateRates {
                qd: s.qd,
                photons: s.photons,
                population: p,
                emission: PathwayRates::default(),
                absorption: PathwayRates::default(),
            }
        })
        .collect();
    for j in 0..np {
        let sj = space.state(basis[j]);
        for i in 0..np {
            if i == j {
                continue;
            }
            let rate = (w[(i, j)] - loss_pp.get(i, j)).re;
            if rate == 0.0 {
                continue;
            }
            let si = space.state(basis[i]);
            let d1 = si.photons[0] as i64 - sj.photons[0] as i64;
            let d2 = si.photons[1] as i64 - sj.photons[1] as i64;
            let flux = rate * x[j];
            let st = &mut per_state[j];
            let (events, multi) = elementary_events(d1, d2);
            for (path, count) in events {
                let (total, per) = if count > 0 {
                    (&mut emission, &mut st.emission)
                } else {
                    (&mut absorption, &mut st.absorption)
                };
                let c = count.unsigned_abs() as f64;
                *path.slot(total) += c * flux;
                *path.slot(per) += c * rate;
            }
            if multi {
                multi_step[0] += d1 as f64 * flux;
                multi_step[1] += d2 as f64 * flux;
            }
        }
    }
    let net = PathwayRates {
        n1: emission.n1 - absorption.n1,
        m1: emission.m1 - absorption.m1,
        n1m1: emission.n1m1 - absorption.n1m1,
    };

    let numbers = [SparseOperator::number(space, Mode::One), SparseOperator::number(space, Mode::Two)];
    let channel_fluxes = l
        .channels
        .iter()
        .map(|c| {
            let out = c.superop.apply(rho);
            let f = [0, 1].map(|k| diag_expectation(&numbers[k], &out));
            (c.label.clone(), f)
        })
        .collect();

    Ok(RateReport { net, emission, absorption, multi_step, channel_fluxes, column_sum_error, per_state })
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Pathway {
    N1,
    M1,
    N1M1,
}

impl Pathway {
    fn slot(self, r: &mut PathwayRates) -> &mut f64 {
        match self {
            Pathway::N1 => &mut r.n1,
            Pathway::M1 => &mut r.m1,
            Pathway::N1M1 => &mut r.n1m1,
        }
    }
}

/// Signed event counts per pathway for a transition adding `(d1, d2)`
/// photons, and whether it was more than one elementary event.
fn elementary_events(d1: i64, d2: i64) -> (Vec<(Pathway, i64)>, bool) {
    let pairs = if d1.signum() == d2.signum() { d1.abs().min(d2.abs()) * d1.signum() } else { 0 };
    let out: Vec<(Pathway, i64)> = [(Pathway::N1M1, pairs), (Pathway::N1, d1 - pairs), (Pathway::M1, d2 - pairs)]
        .into_iter()
        .filter(|&(_, c)| c != 0)
        .collect();
    let steps: i64 = out.iter().map(|(_, c)| c.abs()).sum();
    (out, steps > 1)
}

fn diag_expectation(op: &SparseOperator, m: &Mat<C64>) -> f64 {
    op.csr().iter().filter(|(r, c, _)| r == c).map(|(r, _, v)| (v * m[(r, r)]).re).sum()
}

/// Relative mismatch between cavity output `kappa_k <n_k>` and the net
/// pathway flux feeding mode `k`, per mode. Empty modes report 0.
pub fn flux_balance_check(report: &RateReport, stats: &PhotonStats, p: &SystemParams) -> [f64; 2] {
    let feed = [report.net.n1 + report.net.n1m1, report.net.m1 + report.net.n1m1];
    [0, 1].map(|k| {
        let out = p.kappa[k] * stats.n[k];
        if out < EMPTY_MODE {
            0.0
        } else {
            (out - feed[k]).abs() / out
        }
    })
}
