//! Assembly of the two master equations as labelled channels.
//!
//! Both builders share the same system Hamiltonian and Lindblad terms and
//! differ only in how the phonon bath enters: [`build_full_me`] keeps the
//! polaron-frame second-order term with operator-valued rates, while
//! [`build_sme`] replaces it with scalar phonon-assisted scattering rates.

use std::sync::Arc;

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::operator::{Emitter, Mode, SparseOperator};
use crate::phonon::{BathParams, Correlation, KernelOptions, PairRates, PhononKernel};
use crate::space::Space;
use crate::sparse::Csr;
use crate::superop::{
    commutator_superop, commutator_unchecked, identity_like, lindblad_dissipator, pair_dissipator,
    SuperOperator,
};
use crate::{Error, Result, C64};

/// Physical parameters in `g1` units. Index 0 is mode/emitter 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Cavity couplings. `g[0]` sets the unit and is normally 1.
    pub g: [f64; 2],
    /// Emitter-cavity detunings; the Hamiltonian carries `-delta_k a_k^dag a_k`.
    pub delta: [f64; 2],
    pub kappa: [f64; 2],
    /// Radiative decay of each emitter.
    pub gamma: [f64; 2],
    /// Incoherent pump of each emitter.
    pub eta: [f64; 2],
    /// Pure dephasing of each emitter.
    pub gamma_dephasing: [f64; 2],
    /// `None` switches phonons off entirely (`<B> = 1`, no phonon channels).
    pub bath: Option<BathParams>,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let finite = self
            .g
            .iter()
            .chain(&self.delta)
            .chain(&self.kappa)
            .chain(&self.gamma)
            .chain(&self.eta)
            .chain(&self.gamma_dephasing)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite system parameter".into()));
        }
        let rates = self.kappa.iter().chain(&self.gamma).chain(&self.eta).chain(&self.gamma_dephasing);
        if rates.clone().any(|&r| r < 0.0) {
            return Err(Error::InvalidParameter("rates must be non-negative".into()));
        }
        if let Some(b) = &self.bath {
            b.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MasterEquation {
    Full,
    Simplified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ChannelClass {
    Hamiltonian,
    CavityLoss,
    QdDecay,
    Pump,
    Dephasing,
    Phonon,
    PhononScattering,
}

/// Net photons a channel puts into (mode 1, mode 2).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct PhotonSignature(pub i8, pub i8);

#[derive(Clone, Debug)]
pub struct LiouvillianChannel {
    pub label: String,
    pub superop: SuperOperator,
    pub signature: Option<PhotonSignature>,
    pub class: ChannelClass,
}

/// Scattering rates of the simplified equation for every mode pair `(k, l)`.
pub type SmeRates = [[PairRates; 2]; 2];

#[derive(Clone, Debug)]
pub struct Liouvillian {
    pub kind: MasterEquation,
    pub channels: Vec<LiouvillianChannel>,
    pub mean_displacement: f64,
    pub warnings: Vec<String>,
    pub diagnostics: Vec<(String, f64)>,
    pub sme_rates: Option<SmeRates>,
    total: SuperOperator,
}

impl Liouvillian {
    fn new(
        kind: MasterEquation,
        dim: usize,
        channels: Vec<LiouvillianChannel>,
        mean_displacement: f64,
    ) -> Self {
        let mut total = SuperOperator::zero(dim);
        for c in &channels {
            total.extend(&c.superop);
        }
        Self {
            kind,
            channels,
            mean_displacement,
            warnings: Vec::new(),
            diagnostics: Vec::new(),
            sme_rates: None,
            total,
        }
    }

    pub fn total(&self) -> &SuperOperator {
        &self.total
    }

    pub fn dim(&self) -> usize {
        self.total.dim()
    }

    pub fn channel(&self, label: &str) -> Option<&LiouvillianChannel> {
        self.channels.iter().find(|c| c.label == label)
    }
}

fn channel(
    label: impl Into<String>,
    superop: SuperOperator,
    sig: (i8, i8),
    class: ChannelClass,
) -> LiouvillianChannel {
    LiouvillianChannel { label: label.into(), superop, signature: Some(PhotonSignature(sig.0, sig.1)), class }
}

fn unit_sig(mode: usize, sign: i8) -> (i8, i8) {
    if mode == 0 {
        (sign, 0)
    } else {
        (0, sign)
    }
}

/// Operators shared by both builders.
struct Ops {
    a: [SparseOperator; 2],
    sm: Vec<SparseOperator>,
    /// `sum_i sigma_i^+ a_k`, one per mode.
    absorb: [SparseOperator; 2],
}

impl Ops {
    fn new(space: &Space) -> Result<Self> {
        let a = Mode::ALL.map(|m| SparseOperator::annihilator(space, m));
        let sm = Emitter::present(space.n_emitters())
            .map(|e| SparseOperator::qd_lowering(space, e))
            .collect::<Result<Vec<_>>>()?;
        let mut sp_sum = SparseOperator::zero(space);
        for s in &sm {
            sp_sum = &sp_sum + &s.adjoint();
        }
        let absorb = [&sp_sum * &a[0], &sp_sum * &a[1]];
        Ok(Self { a, sm, absorb })
    }

    /// `E_ik = a_k^dag sigma_i^-`
    fn e(&self, i: usize, k: usize) -> SparseOperator {
        &self.a[k].adjoint() * &self.sm[i]
    }
}

/// `sum_k g_k sum_i sigma_i^+ a_k`, the absorbing half of the coupling.
fn coupling_half(p: &SystemParams, ops: &Ops) -> SparseOperator {
    &ops.absorb[0].scale_re(p.g[0]) + &ops.absorb[1].scale_re(p.g[1])
}

fn detuning_part(p: &SystemParams, space: &Space) -> SparseOperator {
    let n1 = SparseOperator::number(space, Mode::One).scale_re(-p.delta[0]);
    let n2 = SparseOperator::number(space, Mode::Two).scale_re(-p.delta[1]);
    &n1 + &n2
}

/// `H_s = -delta_1 n_1 - delta_2 n_2 + <B> X_g` with `<B>` from the bath (1 without one).
pub fn build_system_hamiltonian(p: &SystemParams, space: &Space) -> Result<SparseOperator> {
    p.validate()?;
    let b = p.bath.as_ref().map_or(1.0, crate::phonon::mean_displacement);
    hamiltonian_with(p, space, b)
}

fn hamiltonian_with(p: &SystemParams, space: &Space, mean_b: f64) -> Result<SparseOperator> {
    let ops = Ops::new(space)?;
    let half = coupling_half(p, &ops);
    let xg = &half + &half.adjoint();
    Ok(&detuning_part(p, space) + &xg.scale_re(mean_b))
}

/// Channels common to both equations: Hamiltonian pieces and the Lindblad terms.
fn common_channels(p: &SystemParams, space: &Space, ops: &Ops, mean_b: f64) -> Result<Vec<LiouvillianChannel>> {
    let mut out = Vec::new();
    out.push(channel(
        "detuning",
        commutator_superop(&detuning_part(p, space))?,
        (0, 0),
        ChannelClass::Hamiltonian,
    ));
    for k in 0..2 {
        let absorb = ops.absorb[k].scale_re(mean_b * p.g[k]);
        let emit = absorb.adjoint();
        out.push(channel(
            format!("coupling_emit_{}", k + 1),
            commutator_unchecked(&emit),
            unit_sig(k, 1),
            ChannelClass::Hamiltonian,
        ));
        out.push(channel(
            format!("coupling_absorb_{}", k + 1),
            commutator_unchecked(&absorb),
            unit_sig(k, -1),
            ChannelClass::Hamiltonian,
        ));
    }
    for k in 0..2 {
        out.push(channel(
            format!("cavity_loss_{}", k + 1),
            lindblad_dissipator(&ops.a[k], p.kappa[k])?,
            unit_sig(k, -1),
            ChannelClass::CavityLoss,
        ));
    }
    for (i, sm) in ops.sm.iter().enumerate() {
        let sp = sm.adjoint();
        out.push(channel(
            format!("qd_decay_{}", i + 1),
            lindblad_dissipator(sm, p.gamma[i])?,
            (0, 0),
            ChannelClass::QdDecay,
        ));
        out.push(channel(format!("pump_{}", i + 1), lindblad_dissipator(&sp, p.eta[i])?, (0, 0), ChannelClass::Pump));
        out.push(channel(
            format!("dephasing_{}", i + 1),
            lindblad_dissipator(&(&sp * sm), p.gamma_dephasing[i])?,
            (0, 0),
            ChannelClass::Dephasing,
        ));
    }
    Ok(out)
}

fn kernel_for(p: &SystemParams, kernel: Option<&PhononKernel>) -> Result<Option<Arc<PhononKernel>>> {
    match (&p.bath, kernel) {
        (None, _) => Ok(None),
        (Some(b), Some(k)) if k.params() == b => Ok(Some(Arc::new(k.clone()))),
        (Some(b), _) => Ok(Some(Arc::new(PhononKernel::tabulate(b, KernelOptions::default())?))),
    }
}

/// Polaron master equation with operator-valued phonon terms.
pub fn build_full_me(p: &SystemParams, space: &Space) -> Result<Liouvillian> {
    build_full_me_with(p, space, None)
}

/// As [`build_full_me`], reusing a tabulated kernel when its bath matches.
pub fn build_full_me_with(p: &SystemParams, space: &Space, kernel: Option<&PhononKernel>) -> Result<Liouvillian> {
    p.validate()?;
    let kernel = kernel_for(p, kernel)?;
    let mean_b = kernel.as_ref().map_or(1.0, |k| k.mean_displacement());
    let ops = Ops::new(space)?;
    let mut channels = common_channels(p, space, &ops, mean_b)?;
    let mut diagnostics = Vec::new();
    if let Some(kernel) = &kernel {
        let h = hamiltonian_with(p, space, mean_b)?;
        let eig = BlockEigen::new(&h, space)?;
        let half = coupling_half(p, &ops);
        let xg = &half + &half.adjoint();
        let xu = &half.scale(C64::new(0.0, 1.0)) + &half.adjoint().scale(C64::new(0.0, -1.0));
        let mut max_re = 0.0_f64;
        let mut max_im = 0.0_f64;
        for (label, x, which) in [("phonon_g", &xg, Correlation::G), ("phonon_u", &xu, Correlation::U)] {
            let y = eig.filtered(x, space, |w| {
                let k = kernel.transform(which, -w);
                max_re = max_re.max(k.re.abs());
                max_im = max_im.max(k.im.abs());
                Ok(k)
            })?;
            let (main, hc) = phonon_pair(x, &y);
            channels.push(channel(label, main, (0, 0), ChannelClass::Phonon));
            channels.push(channel(format!("{label}_hc"), hc, (0, 0), ChannelClass::Phonon));
        }
        diagnostics.push(("phonon_kernel_max_re".into(), max_re));
        diagnostics.push(("phonon_kernel_max_im".into(), max_im));
        diagnostics.push(("phonon_tau_max".into(), kernel.tau_max()));
    }
    let mut l = Liouvillian::new(MasterEquation::Full, space.dim(), channels, mean_b);
    l.diagnostics = diagnostics;
    Ok(l)
}

/// `-(X Y rho - Y rho X)` and its Hermitian partner `-(rho Y^dag X - X rho Y^dag)`.
fn phonon_pair(x: &SparseOperator, y: &SparseOperator) -> (SuperOperator, SuperOperator) {
    let id = identity_like(x);
    let xa = Arc::new(x.clone());
    let ya = Arc::new(y.clone());
    let yd = Arc::new(y.adjoint());
    let mut main = SuperOperator::zero(x.dim());
    main.push(C64::new(-1.0, 0.0), Arc::new(x * y), id.clone());
    main.push(C64::new(1.0, 0.0), ya, xa.clone());
    let mut hc = SuperOperator::zero(x.dim());
    hc.push(C64::new(-1.0, 0.0), id, Arc::new(&*yd * x));
    hc.push(C64::new(1.0, 0.0), xa, yd);
    (main, hc)
}

/// Eigendecomposition of an excitation-conserving Hermitian operator, one
/// excitation block at a time.
struct BlockEigen {
    blocks: Vec<(Vec<usize>, Vec<f64>, Mat<C64>)>,
}

impl BlockEigen {
    fn new(h: &SparseOperator, space: &Space) -> Result<Self> {
        if h.excitation_shift() != Some(0) {
            return Err(Error::InvalidParameter("system Hamiltonian must conserve excitations".into()));
        }
        let mut blocks = Vec::new();
        for e in 0..=space.max_excitation() {
            let idx = space.excitation_class(e).to_vec();
            if idx.is_empty() {
                continue;
            }
            let m = idx.len();
            let hb = Mat::<C64>::from_fn(m, m, |r, c| h.csr().get(idx[r], idx[c]));
            let evd = hb
                .self_adjoint_eigen(Side::Lower)
                .map_err(|e| Error::NonConvergence(format!("eigendecomposition failed: {e:?}")))?;
            let vals = (0..m).map(|i| evd.S()[i].re).collect();
            blocks.push((idx, vals, evd.U().to_owned()));
        }
        Ok(Self { blocks })
    }

    /// `sum_ab X_ab f(E_a - E_b) |a><b|` in the eigenbasis, returned in the
    /// product basis. `x` must conserve excitations.
    fn filtered(
        &self,
        x: &SparseOperator,
        space: &Space,
        mut f: impl FnMut(f64) -> Result<C64>,
    ) -> Result<SparseOperator> {
        let mut trips = Vec::new();
        for (idx, vals, u) in &self.blocks {
            let m = idx.len();
            let xb = Mat::<C64>::from_fn(m, m, |r, c| x.csr().get(idx[r], idx[c]));
            let mut xt = u.adjoint() * &xb * u;
            for b in 0..m {
                for a in 0..m {
                    xt[(a, b)] *= f(vals[a] - vals[b])?;
                }
            }
            let y = u * &xt * u.adjoint();
            for c in 0..m {
                for r in 0..m {
                    let v = y[(r, c)];
                    if v.norm() > 0.0 {
                        trips.push((idx[r], idx[c], v));
                    }
                }
            }
        }
        let mut op = SparseOperator::from_csr(Csr::from_triplets(space.dim(), space.dim(), trips));
        op.infer_excitation_shift(space);
        Ok(op)
    }
}

/// Simplified master equation: coherent polaron-dressed coupling plus scalar
/// phonon-assisted scattering between emitters and cavity modes.
pub fn build_sme(p: &SystemParams, space: &Space) -> Result<Liouvillian> {
    build_sme_with(p, space, None)
}

pub fn build_sme_with(p: &SystemParams, space: &Space, kernel: Option<&PhononKernel>) -> Result<Liouvillian> {
    p.validate()?;
    let kernel = kernel_for(p, kernel)?;
    let mean_b = kernel.as_ref().map_or(1.0, |k| k.mean_displacement());
    let ops = Ops::new(space)?;
    let mut channels = common_channels(p, space, &ops, mean_b)?;
    let mut warnings = Vec::new();
    for k in 0..2 {
        if p.g[k] != 0.0 && p.delta[k].abs() < 3.0 * p.g[k].abs() {
            warnings.push(format!(
                "|delta_{}| = {:.3} is below 3 g_{}; the simplified equation is outside its validity range",
                k + 1,
                p.delta[k].abs(),
                k + 1
            ));
        }
    }
    let mut sme_rates = None;
    let mut diagnostics = Vec::new();
    if let Some(kernel) = &kernel {
        let mut rates = SmeRates::default();
        for k in 0..2 {
            for l in 0..2 {
                rates[k][l] = kernel.scattering_rates(p.delta[k], p.delta[l], p.g[k], p.g[l]);
            }
        }
        let ne = ops.sm.len();
        let e: Vec<[SparseOperator; 2]> = (0..ne).map(|i| [ops.e(i, 0), ops.e(i, 1)]).collect();
        let ed: Vec<[SparseOperator; 2]> = e.iter().map(|pair| [pair[0].adjoint(), pair[1].adjoint()]).collect();

        // Effective Hamiltonian correction.
        let mut h_corr = SparseOperator::zero(space);
        let mut h_two = SparseOperator::zero(space);
        for i in 0..ne {
            for j in 0..ne {
                for k in 0..2 {
                    for l in 0..2 {
                        let r = &rates[k][l];
                        let t1 = (&e[j][l] * &ed[i][k]).scale(C64::new(0.0, -1.0) * r.omega_minus);
                        let t2 = (&ed[j][l] * &e[i][k]).scale(C64::new(0.0, -1.0) * r.omega_plus);
                        h_corr = &(&h_corr + &t1) + &t2;
                        if i != j {
                            let t3 = (&e[j][l] * &e[i][k]).scale(C64::new(0.0, 1.0) * r.omega_mm);
                            h_two = &h_two + &t3;
                        }
                    }
                }
            }
        }
        let h_eff = &(&h_corr + &h_two) + &h_two.adjoint();
        channels.push(channel(
            "phonon_shift",
            commutator_superop(&h_eff)?,
            (0, 0),
            ChannelClass::PhononScattering,
        ));

        for k in 0..2 {
            for l in 0..2 {
                let r = &rates[k][l];
                let mut emit = SuperOperator::zero(space.dim());
                let mut absorb = SuperOperator::zero(space.dim());
                let mut two_emit = SuperOperator::zero(space.dim());
                let mut two_absorb = SuperOperator::zero(space.dim());
                for i in 0..ne {
                    for j in 0..ne {
                        emit.extend(&pair_dissipator(&e[i][k], &ed[j][l], r.gamma_plus));
                        absorb.extend(&pair_dissipator(&ed[i][k], &e[j][l], r.gamma_minus));
                        if i != j {
                            two_emit.extend(&pair_dissipator(&e[i][k], &e[j][l], r.gamma_mm));
                            two_absorb.extend(&pair_dissipator(&ed[i][k], &ed[j][l], r.gamma_pp));
                        }
                    }
                }
                let one = if k == l { unit_sig(k, 1) } else { (1, 1) };
                let neg = (-one.0, -one.1);
                let mut two = unit_sig(k, 1);
                let extra = unit_sig(l, 1);
                two = (two.0 + extra.0, two.1 + extra.1);
                let two_neg = (-two.0, -two.1);
                let tag = format!("{}{}", k + 1, l + 1);
                channels.push(channel(format!("phonon_emit_{tag}"), emit, one, ChannelClass::PhononScattering));
                channels.push(channel(format!("phonon_absorb_{tag}"), absorb, neg, ChannelClass::PhononScattering));
                channels.push(channel(format!("phonon_two_emit_{tag}"), two_emit, two, ChannelClass::PhononScattering));
                channels.push(channel(
                    format!("phonon_two_absorb_{tag}"),
                    two_absorb,
                    two_neg,
                    ChannelClass::PhononScattering,
                ));
            }
        }

        for (name, pick) in [
            ("gamma_plus", (|r: &PairRates| r.gamma_plus) as fn(&PairRates) -> C64),
            ("gamma_minus", |r: &PairRates| r.gamma_minus),
        ] {
            let m = [[pick(&rates[0][0]), pick(&rates[0][1])], [pick(&rates[1][0]), pick(&rates[1][1])]];
            let min_eig = hermitian_2x2_min_eig(m);
            let scale = m.iter().flatten().fold(0.0_f64, |a, v| a.max(v.norm()));
            diagnostics.push((format!("{name}_min_eigenvalue"), min_eig));
            if min_eig < -1e-12 * scale.max(1e-300) {
                warnings.push(format!(
                    "{name} rate matrix has a negative eigenvalue ({min_eig:.3e}); the dissipator is not completely positive"
                ));
            }
        }
        sme_rates = Some(rates);
    }
    let mut l = Liouvillian::new(MasterEquation::Simplified, space.dim(), channels, mean_b);
    l.warnings = warnings;
    l.diagnostics = diagnostics;
    l.sme_rates = sme_rates;
    Ok(l)
}

fn hermitian_2x2_min_eig(m: [[C64; 2]; 2]) -> f64 {
    let a = m[0][0].re;
    let d = m[1][1].re;
    let b = 0.5 * (m[0][1] + m[1][0].conj());
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    mean - rad
}

/// Builds whichever equation `kind` names.
pub fn build(kind: MasterEquation, p: &SystemParams, space: &Space, kernel: Option<&PhononKernel>) -> Result<Liouvillian> {
    match kind {
        MasterEquation::Full => build_full_me_with(p, space, kernel),
        MasterEquation::Simplified => build_sme_with(p, space, kernel),
    }
}
