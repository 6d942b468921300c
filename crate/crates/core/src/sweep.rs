//! Parameter sweeps driven by a TOML config, with truncation escalation and
//! CSV/JSON persistence.
//!
//! A config names one sweep axis, a grid of values along it and a list of
//! scenarios. Every scenario is a set of overrides on the shared `base`
//! parameters. Each (scenario, value) pair is an independent job; jobs run on
//! the worker pool and results are written back in grid order.
//!
//! All frequencies are in units of `g1`. Temperatures are in kelvin and are
//! converted with `bath.energy_scale_mev`, which is echoed into every CSV.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{emission_spectrum, steady_state, SpectrumOptions, SteadyState};
use crate::liouvillian::{build, MasterEquation, SystemParams};
use crate::observables::{flux_balance_check, photon_stats, rate_decomposition, PathwayRates, PhotonStats, RadianceWitness};
use crate::operator::Mode;
use crate::par;
use crate::phonon::{BathParams, KernelOptions, PhononKernel};
use crate::space::{Space, SpaceSpec};
use crate::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Significant digits written for every float in the CSV output.
pub const CSV_DIGITS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Delta2,
    Kappa,
    Temperature,
    Eta,
}

impl SweepAxis {
    pub fn column(self) -> &'static str {
        match self {
            SweepAxis::Delta2 => "delta2 [g1]",
            SweepAxis::Kappa => "kappa [g1]",
            SweepAxis::Temperature => "temperature [K]",
            SweepAxis::Eta => "eta [g1]",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseParams {
    pub g1: f64,
    pub g2: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub gamma: f64,
    pub gamma_dephasing: f64,
    pub eta: f64,
    pub temperature_k: f64,
    pub phonons: bool,
}

impl Default for BaseParams {
    fn default() -> Self {
        Self {
            g1: 1.0,
            g2: 1.0,
            delta1: 10.0,
            delta2: 10.0,
            kappa1: 0.5,
            kappa2: 0.5,
            gamma: 0.01,
            gamma_dephasing: 0.01,
            eta: 25.0,
            temperature_k: 5.0,
            phonons: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BathConfig {
    /// `hbar g1` in meV.
    pub energy_scale_mev: f64,
    pub omega_b_mev: f64,
    /// `<B>` reached at `calibration_k` when `alpha_p` is not given.
    pub calibration_b: f64,
    pub calibration_k: f64,
    /// Coupling in `g1^-2`; skips the calibration.
    pub alpha_p: Option<f64>,
}

impl Default for BathConfig {
    fn default() -> Self {
        Self { energy_scale_mev: 0.05, omega_b_mev: 1.0, calibration_b: 0.9, calibration_k: 5.0, alpha_p: None }
    }
}

impl BathConfig {
    pub fn params(&self, temperature_k: f64) -> Result<BathParams> {
        let base = match self.alpha_p {
            Some(alpha_p) => BathParams {
                alpha_p,
                omega_b: self.omega_b_mev / self.energy_scale_mev,
                temperature_k,
                energy_scale_mev: self.energy_scale_mev,
            },
            None => BathParams::calibrated(
                self.calibration_b,
                self.calibration_k,
                self.omega_b_mev,
                self.energy_scale_mev,
            )?,
        };
        let p = base.at_temperature(temperature_k);
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum GridSpec {
    Values { values: Vec<f64> },
    Range { min: f64, max: f64, n_points: usize },
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            GridSpec::Values { values } => values.clone(),
            GridSpec::Range { min, max, n_points } => match n_points {
                0 => Vec::new(),
                1 if min == max => vec![*min],
                1 => return Err(Error::Config("a one-point range needs min == max".into())),
                &n => (0..n).map(|i| min + (max - min) * i as f64 / (n - 1) as f64).collect(),
            },
        };
        if v.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("sweep grid has non-finite values".into()));
        }
        let up = v.windows(2).all(|w| w[1] > w[0]);
        let down = v.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::Config("sweep grid must be strictly monotonic".into()));
        }
        Ok(v)
    }
}

/// Overrides on the base parameters. `delta` and `kappa` set both modes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub label: String,
    pub g2: Option<f64>,
    pub delta: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub kappa: Option<f64>,
    pub eta: Option<f64>,
    pub gamma: Option<f64>,
    pub gamma_dephasing: Option<f64>,
    pub temperature_k: Option<f64>,
    pub phonons: Option<bool>,
}

impl Scenario {
    fn sets_axis(&self, axis: SweepAxis) -> bool {
        match axis {
            SweepAxis::Delta2 => self.delta.is_some() || self.delta2.is_some(),
            SweepAxis::Kappa => self.kappa.is_some(),
            SweepAxis::Temperature => self.temperature_k.is_some(),
            SweepAxis::Eta => self.eta.is_some(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinewidthMode {
    #[default]
    None,
    /// Only at the grid point of largest `rw1` (or `n1` without the witness).
    Peak,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub radiance_witness: bool,
    pub rates: bool,
    /// Equation solved for the rate decomposition.
    pub rates_equation: MasterEquation,
    pub linewidth: LinewidthMode,
    /// Scenarios that get a linewidth; empty means all.
    pub linewidth_scenarios: Vec<String>,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            radiance_witness: true,
            rates: false,
            rates_equation: MasterEquation::Simplified,
            linewidth: LinewidthMode::None,
            linewidth_scenarios: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationPolicy {
    pub start: usize,
    pub step: usize,
    pub max: usize,
    /// Relative change of `n1`, `n2` and the witness that counts as converged.
    pub tolerance: f64,
    /// Absolute change always accepted.
    pub abs_floor: f64,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self { start: 4, step: 2, max: 8, tolerance: 0.01, abs_floor: 1e-6 }
    }
}

impl TruncationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.start < 1 || self.step < 1 || self.max < self.start {
            return Err(Error::Config(format!("bad truncation policy {self:?}")));
        }
        if !(self.tolerance > 0.0) || !(self.abs_floor >= 0.0) {
            return Err(Error::Config("truncation tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub name: String,
    #[serde(default)]
    pub equation: MasterEquation,
    pub sweep_axis: SweepAxis,
    #[serde(default)]
    pub base: BaseParams,
    #[serde(default)]
    pub bath: BathConfig,
    pub grid: GridSpec,
    pub scenarios: Vec<Scenario>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub truncation: TruncationPolicy,
}

impl Default for MasterEquation {
    fn default() -> Self {
        MasterEquation::Full
    }
}

const PRESETS: &[(&str, &[&str])] = &[
    ("fig2", &[include_str!("../presets/fig2.toml")]),
    ("fig3", &[include_str!("../presets/fig3.toml")]),
    ("fig4", &[include_str!("../presets/fig4a.toml"), include_str!("../presets/fig4bc.toml")]),
    ("fig5", &[include_str!("../presets/fig5.toml")]),
    ("fig6", &[include_str!("../presets/fig6.toml")]),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// The sweeps behind a named preset. `fig4` has two.
pub fn preset(name: &str) -> Result<Vec<SweepConfig>> {
    let (_, sources) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown preset `{name}` (have {:?})", preset_names())))?;
    sources.iter().map(|s| SweepConfig::from_toml_str(s)).collect()
}

impl SweepConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::Config(format!("name `{}` must be non-empty [A-Za-z0-9_-]", self.name)));
        }
        self.grid.values()?;
        self.truncation.validate()?;
        if self.scenarios.is_empty() {
            return Err(Error::Config("at least one scenario is required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.scenarios {
            if s.label.is_empty() || !s.label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Config(format!("scenario label `{}` must be non-empty [A-Za-z0-9_-]", s.label)));
            }
            if !seen.insert(s.label.as_str()) {
                return Err(Error::Config(format!("duplicate scenario label `{}`", s.label)));
            }
            if s.delta.is_some() && (s.delta1.is_some() || s.delta2.is_some()) {
                return Err(Error::Config(format!("scenario `{}` sets both delta and delta1/delta2", s.label)));
            }
            if s.sets_axis(self.sweep_axis) {
                return Err(Error::Config(format!(
                    "scenario `{}` overrides the sweep axis {:?}",
                    s.label, self.sweep_axis
                )));
            }
        }
        for l in &self.outputs.linewidth_scenarios {
            if !self.scenarios.iter().any(|s| &s.label == l) {
                return Err(Error::Config(format!("linewidth scenario `{l}` is not defined")));
            }
        }
        if self.base.g1 <= 0.0 {
            return Err(Error::Config("g1 must be positive".into()));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            for v in self.grid.values()? {
                self.point_params(i, v).map_err(|e| Error::Config(format!("scenario `{}`: {e}", s.label)))?;
            }
        }
        Ok(())
    }

    pub fn grid_values(&self) -> Vec<f64> {
        self.grid.values().expect("validated grid")
    }

    /// Model parameters for scenario `idx` at axis value `value`.
    pub fn point_params(&self, idx: usize, value: f64) -> Result<SystemParams> {
        let s = &self.scenarios[idx];
        let b = &self.base;
        let g2 = s.g2.unwrap_or(b.g2);
        let mut delta = [s.delta.or(s.delta1).unwrap_or(b.delta1), s.delta.or(s.delta2).unwrap_or(b.delta2)];
        let mut kappa = s.kappa.map_or([b.kappa1, b.kappa2], |k| [k, k]);
        let mut eta = s.eta.unwrap_or(b.eta);
        let mut temperature = s.temperature_k.unwrap_or(b.temperature_k);
        match self.sweep_axis {
            SweepAxis::Delta2 => delta[1] = value,
            SweepAxis::Kappa => kappa = [value, value],
            SweepAxis::Temperature => temperature = value,
            SweepAxis::Eta => eta = value,
        }
        let gamma = s.gamma.unwrap_or(b.gamma);
        let dephasing = s.gamma_dephasing.unwrap_or(b.gamma_dephasing);
        let bath = if s.phonons.unwrap_or(b.phonons) { Some(self.bath.params(temperature)?) } else { None };
        // Everything is expressed in units of g1.
        let u = b.g1;
        let p = SystemParams {
            g: [1.0, g2 / u],
            delta: delta.map(|d| d / u),
            kappa: kappa.map(|k| k / u),
            gamma: [gamma / u; 2],
            eta: [eta / u; 2],
            gamma_dephasing: [dephasing / u; 2],
            bath,
        };
        p.validate()?;
        Ok(p)
    }
}

/// One rung of the truncation ladder.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruncationStep {
    pub n_max: [usize; 2],
    pub n: [f64; 2],
    pub rw: [Option<f64>; 2],
    /// Largest relative change against the previous rung.
    pub max_rel_change: Option<f64>,
}

/// Solution at one truncation.
#[derive(Clone, Debug)]
pub struct Level {
    pub n_max: [usize; 2],
    pub steady: SteadyState,
    pub stats: PhotonStats,
    pub witness: Option<RadianceWitness>,
}

#[derive(Clone, Debug)]
pub struct Convergence {
    pub level: Level,
    pub converged: bool,
    pub steps: Vec<TruncationStep>,
}

fn truncation_for(p: &SystemParams, n: usize) -> [usize; 2] {
    // A decoupled second mode stays in vacuum.
    if p.g[1] == 0.0 {
        [n, 1]
    } else {
        [n, n]
    }
}

pub fn solve_level(
    kind: MasterEquation,
    p: &SystemParams,
    n_max: [usize; 2],
    kernel: Option<&PhononKernel>,
    witness: bool,
) -> Result<Level> {
    let space = Space::new(SpaceSpec::new(2, n_max[0], n_max[1])?)?;
    let l = build(kind, p, &space, kernel)?;
    let steady = steady_state(l.total(), &space)?;
    let stats = photon_stats(steady.rho.as_ref(), &space);
    let witness = if witness {
        let one = Space::new(SpaceSpec::new(1, n_max[0], n_max[1])?)?;
        let l1 = build(kind, p, &one, kernel)?;
        let ss1 = steady_state(l1.total(), &one)?;
        Some(RadianceWitness::from_counts(stats.n, photon_stats(ss1.rho.as_ref(), &one).n))
    } else {
        None
    };
    Ok(Level { n_max, steady, stats, witness })
}

fn step_record(level: &Level, prev: Option<&Level>, policy: &TruncationPolicy) -> (TruncationStep, bool) {
    let rw = level.witness.as_ref().map_or([None, None], |w| w.rw);
    let mut ok = true;
    let mut worst: Option<f64> = None;
    if let Some(prev) = prev {
        let prw = prev.witness.as_ref().map_or([None, None], |w| w.rw);
        let mut pairs = vec![(prev.stats.n[0], level.stats.n[0]), (prev.stats.n[1], level.stats.n[1])];
        for k in 0..2 {
            match (prw[k], rw[k]) {
                (Some(a), Some(b)) => pairs.push((a, b)),
                (None, None) => {}
                // Witness appearing or vanishing between rungs is a change.
                _ => ok = false,
            }
        }
        for (a, b) in pairs {
            let d = (a - b).abs();
            if d > policy.tolerance * b.abs() + policy.abs_floor {
                ok = false;
            }
            let rel = if b.abs() > 0.0 { d / b.abs() } else { d };
            worst = Some(worst.map_or(rel, |w: f64| w.max(rel)));
        }
    } else {
        ok = false;
    }
    (TruncationStep { n_max: level.n_max, n: level.stats.n, rw, max_rel_change: worst }, ok)
}

/// Raises `n_max` by `policy.step` until `n1`, `n2` and the witness stop
/// changing. The returned level is the smallest truncation that agreed with
/// the next one; if `policy.max` is reached first the top level is returned
/// and flagged.
pub fn convergence_check(
    kind: MasterEquation,
    p: &SystemParams,
    kernel: Option<&PhononKernel>,
    policy: &TruncationPolicy,
    witness: bool,
) -> Result<Convergence> {
    policy.validate()?;
    let mut prev = solve_level(kind, p, truncation_for(p, policy.start), kernel, witness)?;
    let mut steps = vec![step_record(&prev, None, policy).0];
    let mut n = policy.start;
    loop {
        n += policy.step;
        if n > policy.max {
            return Ok(Convergence { level: prev, converged: false, steps });
        }
        let next = solve_level(kind, p, truncation_for(p, n), kernel, witness)?;
        let (rec, ok) = step_record(&next, Some(&prev), policy);
        steps.push(rec);
        if ok {
            return Ok(Convergence { level: prev, converged: true, steps });
        }
        prev = next;
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PointRecord {
    pub scenario: String,
    pub index: usize,
    pub value: f64,
    pub n_max: Option<[usize; 2]>,
    pub converged: bool,
    pub stats: Option<PhotonStats>,
    pub witness: Option<RadianceWitness>,
    pub rates: Option<PathwayRates>,
    pub flux_residual: Option<f64>,
    /// Emission linewidth per mode.
    pub linewidth: [Option<f64>; 2],
    pub residual: Option<f64>,
    pub min_eigenvalue: Option<f64>,
    pub truncation_steps: Vec<TruncationStep>,
    pub wall_time_s: f64,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

impl PointRecord {
    fn failed(scenario: &str, index: usize, value: f64, error: String, wall: f64) -> Self {
        Self {
            scenario: scenario.to_string(),
            index,
            value,
            n_max: None,
            converged: false,
            stats: None,
            witness: None,
            rates: None,
            flux_residual: None,
            linewidth: [None, None],
            residual: None,
            min_eigenvalue: None,
            truncation_steps: Vec::new(),
            wall_time_s: wall,
            error: Some(error),
            warnings: Vec::new(),
        }
    }

    /// `rw` per mode as stored in the CSV: formed from the printed counts.
    pub fn stored_witness(&self) -> [Option<f64>; 2] {
        match &self.witness {
            Some(w) => RadianceWitness::from_counts(w.n_two.map(round_sig), w.n_one.map(round_sig)).rw.map(|r| r.map(round_sig)),
            None => [None, None],
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioResult {
    pub label: String,
    pub points: Vec<PointRecord>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepOutcome {
    pub version: String,
    pub config: SweepConfig,
    pub scenarios: Vec<ScenarioResult>,
}

impl SweepOutcome {
    pub fn unconverged(&self) -> usize {
        self.scenarios.iter().flat_map(|s| &s.points).filter(|p| !p.converged).count()
    }

    pub fn scenario(&self, label: &str) -> Option<&ScenarioResult> {
        self.scenarios.iter().find(|s| s.label == label)
    }
}

fn kernel_key(b: &BathParams) -> [u64; 4] {
    [b.alpha_p.to_bits(), b.omega_b.to_bits(), b.temperature_k.to_bits(), b.energy_scale_mev.to_bits()]
}

type KernelCache = HashMap<[u64; 4], Arc<PhononKernel>>;

fn tabulate_kernels(params: &[SystemParams]) -> Result<KernelCache> {
    let mut baths: Vec<BathParams> = Vec::new();
    for b in params.iter().filter_map(|p| p.bath) {
        if !baths.iter().any(|x| kernel_key(x) == kernel_key(&b)) {
            baths.push(b);
        }
    }
    let kernels = par::map_slice(&baths, |b| PhononKernel::tabulate(b, KernelOptions::default()));
    let mut cache = HashMap::new();
    for (b, k) in baths.iter().zip(kernels) {
        cache.insert(kernel_key(b), Arc::new(k?));
    }
    Ok(cache)
}

struct Job {
    scenario: usize,
    index: usize,
    value: f64,
    params: SystemParams,
}

fn wants_linewidth(cfg: &SweepConfig, label: &str) -> bool {
    cfg.outputs.linewidth != LinewidthMode::None
        && (cfg.outputs.linewidth_scenarios.is_empty() || cfg.outputs.linewidth_scenarios.iter().any(|l| l == label))
}

/// Fitted emission linewidth of each mode; an empty mode has none.
fn linewidths(
    kind: MasterEquation,
    p: &SystemParams,
    n_max: [usize; 2],
    kernel: Option<&PhononKernel>,
) -> Result<([Option<f64>; 2], Vec<String>)> {
    let space = Space::new(SpaceSpec::new(2, n_max[0], n_max[1])?)?;
    let l = build(kind, p, &space, kernel)?;
    let ss = steady_state(l.total(), &space)?;
    let stats = photon_stats(ss.rho.as_ref(), &space);
    let mut out = [None, None];
    let mut warnings = Vec::new();
    for (k, mode) in Mode::ALL.into_iter().enumerate() {
        if stats.n[k] < crate::observables::EMPTY_MODE {
            continue;
        }
        match emission_spectrum(l.total(), &space, ss.rho.as_ref(), mode, &SpectrumOptions::default()) {
            Ok(spec) => {
                if !spec.fit.lorentzian {
                    warnings.push(format!("mode {} spectrum is not Lorentzian (rms/peak {:.3})", k + 1, spec.fit.rms_rel));
                }
                out[k] = Some(spec.fit.fwhm);
            }
            Err(e) => warnings.push(format!("mode {} linewidth failed: {e}", k + 1)),
        }
    }
    Ok((out, warnings))
}

fn run_job(cfg: &SweepConfig, job: &Job, kernels: &KernelCache) -> PointRecord {
    let label = &cfg.scenarios[job.scenario].label;
    let t0 = Instant::now();
    let kernel = job.params.bath.as_ref().map(|b| kernels[&kernel_key(b)].as_ref());
    let conv = match convergence_check(cfg.equation, &job.params, kernel, &cfg.truncation, cfg.outputs.radiance_witness) {
        Ok(c) => c,
        Err(e) => {
            log::warn!("{label} point {} ({}): {e}", job.index, job.value);
            return PointRecord::failed(label, job.index, job.value, e.to_string(), t0.elapsed().as_secs_f64());
        }
    };
    let level = &conv.level;
    let mut warnings = Vec::new();
    if !conv.converged {
        warnings.push(format!("truncation not converged by n_max = {}", cfg.truncation.max));
    }
    let mut rates = None;
    let mut flux_residual = None;
    if cfg.outputs.rates {
        let res = (|| -> Result<(PathwayRates, f64)> {
            let space = Space::new(SpaceSpec::new(2, level.n_max[0], level.n_max[1])?)?;
            let l = build(cfg.outputs.rates_equation, &job.params, &space, kernel)?;
            warnings.extend(l.warnings.iter().cloned());
            let (rho, stats) = if cfg.outputs.rates_equation == cfg.equation {
                (level.steady.rho.clone(), level.stats.clone())
            } else {
                let ss = steady_state(l.total(), &space)?;
                let st = photon_stats(ss.rho.as_ref(), &space);
                (ss.rho, st)
            };
            let report = rate_decomposition(&l, &space, rho.as_ref())?;
            let fb = flux_balance_check(&report, &stats, &job.params);
            Ok((report.net, fb[0].max(fb[1])))
        })();
        match res {
            Ok((r, f)) => {
                rates = Some(r);
                flux_residual = Some(f);
            }
            Err(e) => warnings.push(format!("rate decomposition failed: {e}")),
        }
    }
    let mut width = [None, None];
    if cfg.outputs.linewidth == LinewidthMode::All && wants_linewidth(cfg, label) {
        match linewidths(cfg.equation, &job.params, level.n_max, kernel) {
            Ok((w, more)) => {
                width = w;
                warnings.extend(more);
            }
            Err(e) => warnings.push(format!("linewidth failed: {e}")),
        }
    }
    PointRecord {
        scenario: label.clone(),
        index: job.index,
        value: job.value,
        n_max: Some(level.n_max),
        converged: conv.converged,
        stats: Some(level.stats.clone()),
        witness: level.witness.clone(),
        rates,
        flux_residual,
        linewidth: width,
        residual: Some(level.steady.residual),
        min_eigenvalue: Some(level.steady.min_eigenvalue),
        truncation_steps: conv.steps,
        wall_time_s: t0.elapsed().as_secs_f64(),
        error: None,
        warnings,
    }
}

/// Runs every (scenario, grid value) job. Failed points are kept with their
/// error rather than dropped.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let values = cfg.grid_values();
    let mut jobs = Vec::new();
    for s in 0..cfg.scenarios.len() {
        for (index, &value) in values.iter().enumerate() {
            jobs.push(Job { scenario: s, index, value, params: cfg.point_params(s, value)? });
        }
    }
    let all_params: Vec<SystemParams> = jobs.iter().map(|j| j.params.clone()).collect();
    let kernels = tabulate_kernels(&all_params)?;
    log::info!("{}: {} points, {} phonon kernels", cfg.name, jobs.len(), kernels.len());

    let records = par::map_slice(&jobs, |job| run_job(cfg, job, &kernels));
    let mut scenarios: Vec<ScenarioResult> =
        cfg.scenarios.iter().map(|s| ScenarioResult { label: s.label.clone(), points: Vec::new() }).collect();
    for (job, rec) in jobs.iter().zip(records) {
        scenarios[job.scenario].points.push(rec);
    }

    if cfg.outputs.linewidth == LinewidthMode::Peak {
        let targets: Vec<(usize, usize)> = scenarios
            .iter()
            .enumerate()
            .filter(|(_, s)| wants_linewidth(cfg, &s.label))
            .filter_map(|(si, s)| peak_index(&s.points).map(|pi| (si, pi)))
            .collect();
        let widths = par::map_slice(&targets, |&(si, pi)| {
            let rec = &scenarios[si].points[pi];
            let p = cfg.point_params(si, rec.value)?;
            let kernel = p.bath.as_ref().map(|b| kernels[&kernel_key(b)].as_ref());
            linewidths(cfg.equation, &p, rec.n_max.expect("successful point"), kernel)
        });
        for (&(si, pi), w) in targets.iter().zip(widths) {
            let rec = &mut scenarios[si].points[pi];
            match w {
                Ok((w, more)) => {
                    rec.linewidth = w;
                    rec.warnings.extend(more);
                }
                Err(e) => rec.warnings.push(format!("linewidth failed: {e}")),
            }
        }
    }
    Ok(SweepOutcome { version: VERSION.to_string(), config: cfg.clone(), scenarios })
}

/// Grid index of the largest `rw1`, or of the largest `n1` when the witness
/// was not computed.
pub fn peak_index(points: &[PointRecord]) -> Option<usize> {
    let key = |p: &PointRecord| -> Option<f64> {
        match &p.witness {
            Some(w) => w.rw[0],
            None => p.stats.as_ref().map(|s| s.n[0]),
        }
    };
    points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| key(p).map(|k| (i, k)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// `x` rounded to the CSV precision.
pub fn round_sig(x: f64) -> f64 {
    fmt_f64(x).parse().unwrap_or(x)
}

pub fn fmt_f64(x: f64) -> String {
    format!("{:.*e}", CSV_DIGITS - 1, x)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), fmt_f64)
}

pub const CSV_COLUMNS: &[&str] = &[
    "n1 [-]",
    "n2 [-]",
    "pop_ee [-]",
    "pop_eg [-]",
    "pop_ge [-]",
    "pop_gg [-]",
    "g11 [-]",
    "g22 [-]",
    "g12 [-]",
    "cross_re [-]",
    "cross_im [-]",
    "rw1 [-]",
    "rw2 [-]",
    "n1_one [-]",
    "n2_one [-]",
    "N1 [g1]",
    "M1 [g1]",
    "N1M1 [g1]",
    "flux_residual [-]",
    "linewidth1 [g1]",
    "linewidth2 [g1]",
    "n_max1 [-]",
    "n_max2 [-]",
    "converged [-]",
    "residual [-]",
    "min_eig [-]",
    "error [-]",
];

pub fn csv_path(dir: &Path, cfg: &SweepConfig, label: &str) -> PathBuf {
    dir.join(format!("{}_{}.csv", cfg.name, label))
}

pub fn manifest_path(dir: &Path, cfg: &SweepConfig) -> PathBuf {
    dir.join(format!("{}_manifest.json", cfg.name))
}

fn csv_row(p: &PointRecord) -> Vec<String> {
    let st = p.stats.as_ref();
    let pops = st.map(|s| s.populations);
    let rw = p.stored_witness();
    let one = p.witness.as_ref().map(|w| w.n_one);
    let mut row = vec![fmt_f64(p.value)];
    row.extend(
        [
            st.map(|s| s.n[0]),
            st.map(|s| s.n[1]),
            pops.map(|q| q.ee),
            pops.map(|q| q.eg),
            pops.map(|q| q.ge),
            pops.map(|q| q.gg),
            st.and_then(|s| s.g2[0]),
            st.and_then(|s| s.g2[1]),
            st.and_then(|s| s.g12),
            st.map(|s| s.cross.re),
            st.map(|s| s.cross.im),
            rw[0],
            rw[1],
            one.map(|o| o[0]),
            one.map(|o| o[1]),
            p.rates.map(|r| r.n1),
            p.rates.map(|r| r.m1),
            p.rates.map(|r| r.n1m1),
            p.flux_residual,
            p.linewidth[0],
            p.linewidth[1],
        ]
        .into_iter()
        .map(fmt_opt),
    );
    row.push(p.n_max.map_or("NA".into(), |n| n[0].to_string()));
    row.push(p.n_max.map_or("NA".into(), |n| n[1].to_string()));
    row.push(p.converged.to_string());
    row.push(fmt_opt(p.residual));
    row.push(fmt_opt(p.min_eigenvalue));
    row.push(p.error.clone().unwrap_or_default());
    row
}

fn csv_preamble(cfg: &SweepConfig, label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# qdlaser {VERSION}");
    let _ = writeln!(s, "# sweep = {}", cfg.name);
    let _ = writeln!(s, "# scenario = {label}");
    let _ = writeln!(s, "# equation = {}", match cfg.equation {
        MasterEquation::Full => "full",
        MasterEquation::Simplified => "simplified",
    });
    let _ = writeln!(s, "# units: frequencies and rates in g1; hbar g1 = {} meV", cfg.bath.energy_scale_mev);
    s
}

/// Writes one CSV per scenario and the JSON manifest into `dir`.
pub fn write_outputs(outcome: &SweepOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let cfg = &outcome.config;
    let mut written = Vec::new();
    for sc in &outcome.scenarios {
        let path = csv_path(dir, cfg, &sc.label);
        let mut file = fs::File::create(&path)?;
        file.write_all(csv_preamble(cfg, &sc.label).as_bytes())?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec![cfg.sweep_axis.column()];
        header.extend_from_slice(CSV_COLUMNS);
        w.write_record(&header)?;
        for p in &sc.points {
            w.write_record(csv_row(p))?;
        }
        w.flush()?;
        written.push(path);
    }
    let manifest = Manifest::from_outcome(outcome);
    let path = manifest_path(dir, cfg);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestPoint {
    pub scenario: String,
    pub index: usize,
    pub value: f64,
    pub n_max: Option<[usize; 2]>,
    pub converged: bool,
    /// `(n_max, max relative change)` per rung of the truncation ladder.
    pub truncation_deltas: Vec<([usize; 2], Option<f64>)>,
    pub wall_time_s: f64,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: SweepConfig,
    pub unconverged: usize,
    pub points: Vec<ManifestPoint>,
}

impl Manifest {
    pub fn from_outcome(o: &SweepOutcome) -> Self {
        let points = o
            .scenarios
            .iter()
            .flat_map(|s| &s.points)
            .map(|p| ManifestPoint {
                scenario: p.scenario.clone(),
                index: p.index,
                value: p.value,
                n_max: p.n_max,
                converged: p.converged,
                truncation_deltas: p.truncation_steps.iter().map(|t| (t.n_max, t.max_rel_change)).collect(),
                wall_time_s: p.wall_time_s,
                error: p.error.clone(),
                warnings: p.warnings.clone(),
            })
            .collect();
        Self { version: o.version.clone(), config: o.config.clone(), unconverged: o.unconverged(), points }
    }
}

/// A scenario CSV read back: comment lines, header and raw cells.
#[derive(Clone, Debug)]
pub struct CsvTable {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let comments = text.lines().take_while(|l| l.starts_with('#')).map(str::to_string).collect();
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r.records().map(|rec| rec.map(|r| r.iter().map(str::to_string).collect())).collect::<std::result::Result<_, _>>()?;
        Ok(Self { comments, header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name || h.split(" [").next() == Some(name))
    }

    /// Numeric cell; `None` for `NA` or an unknown column.
    pub fn value(&self, row: usize, name: &str) -> Option<f64> {
        let c = self.column(name)?;
        self.rows.get(row)?.get(c)?.parse().ok()
    }
}
