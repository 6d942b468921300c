//! Acoustic-phonon bath in the polaron frame.
//!
//! The bath enters through the phase `phi(tau)` of a super-Ohmic spectral
//! density `J(w) = alpha_p w^3 exp(-w^2 / (2 w_b^2))`. From it come the mean
//! displacement `<B> = exp(-phi(0)/2)` and the polaron correlation functions
//! that feed both master equations. All quantities are in `g1` units.

use serde::{Deserialize, Serialize};

use crate::par;
use crate::{Error, Result, C64};

/// Boltzmann constant in meV/K.
pub const BOLTZMANN_MEV_PER_K: f64 = 8.617333262e-2;

/// Upper cutoff of frequency integrals in units of `omega_b`; the Gaussian
/// factor there is below 1e-17.
const CUTOFF_IN_OMEGA_B: f64 = 9.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathParams {
    /// Coupling strength in `g1^-2`.
    pub alpha_p: f64,
    /// Cutoff frequency in `g1`.
    pub omega_b: f64,
    pub temperature_k: f64,
    /// Value of `hbar g1` in meV, used only to convert the temperature.
    pub energy_scale_mev: f64,
}

impl BathParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha_p >= 0.0
            && self.omega_b > 0.0
            && self.temperature_k >= 0.0
            && self.energy_scale_mev > 0.0
            && [self.alpha_p, self.omega_b, self.temperature_k, self.energy_scale_mev]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bad bath parameters {self:?}")))
        }
    }

    /// Inverse temperature in `1/g1`, or `None` at zero temperature.
    pub fn beta(&self) -> Option<f64> {
        (self.temperature_k > 0.0)
            .then(|| self.energy_scale_mev / (BOLTZMANN_MEV_PER_K * self.temperature_k))
    }

    pub fn at_temperature(&self, temperature_k: f64) -> Self {
        Self { temperature_k, ..*self }
    }

    /// Picks `alpha_p` so that `<B>` equals `target` at `calibration_k`.
    /// `phi(0)` is linear in `alpha_p`, so this is closed form.
    pub fn calibrated(
        target_b: f64,
        calibration_k: f64,
        omega_b_mev: f64,
        energy_scale_mev: f64,
    ) -> Result<Self> {
        if !(target_b > 0.0 && target_b <= 1.0) {
            return Err(Error::InvalidParameter(format!("target <B> must be in (0, 1], got {target_b}")));
        }
        let unit = Self {
            alpha_p: 1.0,
            omega_b: omega_b_mev / energy_scale_mev,
            temperature_k: calibration_k,
            energy_scale_mev,
        };
        unit.validate()?;
        let alpha_p = -2.0 * target_b.ln() / phi_zero(&unit);
        Ok(Self { alpha_p, ..unit })
    }

    /// `alpha_p` converted to ps^2.
    pub fn alpha_p_ps2(&self) -> f64 {
        // hbar = 0.6582119569 meV ps
        let g1_per_ps = self.energy_scale_mev / 0.6582119569;
        self.alpha_p / (g1_per_ps * g1_per_ps)
    }
}

pub fn spectral_density(omega: f64, p: &BathParams) -> f64 {
    p.alpha_p * omega.powi(3) * (-omega * omega / (2.0 * p.omega_b * p.omega_b)).exp()
}

/// `coth(beta w / 2)`, which is 1 at zero temperature.
fn thermal_factor(omega: f64, beta: Option<f64>) -> f64 {
    match beta {
        Some(b) => 1.0 / (0.5 * b * omega).tanh(),
        None => 1.0,
    }
}

/// `J(w)/w^2 * coth(beta w/2)` and `J(w)/w^2`, with the `w -> 0` limits.
fn weights(omega: f64, p: &BathParams) -> (f64, f64) {
    let beta = p.beta();
    let g = p.alpha_p * (-omega * omega / (2.0 * p.omega_b * p.omega_b)).exp();
    if omega == 0.0 {
        let re = beta.map_or(0.0, |b| 2.0 * g / b);
        return (re, 0.0);
    }
    (g * omega * thermal_factor(omega, beta), g * omega)
}

fn simpson_weight(k: usize, n: usize, h: f64) -> f64 {
    if k == 0 || k == n {
        h / 3.0
    } else if k % 2 == 1 {
        4.0 * h / 3.0
    } else {
        2.0 * h / 3.0
    }
}

/// Frequency nodes and weights for `phi` at delays up to `tau_max`.
struct PhiRule {
    omega: Vec<f64>,
    w_re: Vec<f64>,
    w_im: Vec<f64>,
}

impl PhiRule {
    fn new(p: &BathParams, tau_max: f64) -> Self {
        let cut = CUTOFF_IN_OMEGA_B * p.omega_b;
        // Keep w*tau per step small so the oscillatory integrand is resolved.
        let by_tau = (cut * tau_max / 0.02).ceil() as usize;
        let mut n = by_tau.max(4000);
        n += n % 2;
        let h = cut / n as f64;
        let mut omega = Vec::with_capacity(n + 1);
        let mut w_re = Vec::with_capacity(n + 1);
        let mut w_im = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let w = k as f64 * h;
            let s = simpson_weight(k, n, h);
            let (a, b) = weights(w, p);
            omega.push(w);
            w_re.push(s * a);
            w_im.push(s * b);
        }
        Self { omega, w_re, w_im }
    }

    fn phi(&self, tau: f64) -> C64 {
        let mut re = 0.0;
        let mut im = 0.0;
        for ((w, a), b) in self.omega.iter().zip(&self.w_re).zip(&self.w_im) {
            let (s, c) = (w * tau).sin_cos();
            re += a * c;
            im -= b * s;
        }
        C64::new(re, im)
    }
}

fn phi_zero(p: &BathParams) -> f64 {
    PhiRule::new(p, 0.0).phi(0.0).re
}

/// Phonon phase `phi(tau)` by direct quadrature.
pub fn phi(tau: f64, p: &BathParams) -> C64 {
    PhiRule::new(p, tau.abs()).phi(tau)
}

pub fn mean_displacement(p: &BathParams) -> f64 {
    if p.alpha_p == 0.0 {
        return 1.0;
    }
    (-0.5 * phi_zero(p)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Correlation {
    /// `<B>^2 (cosh phi - 1)`
    G,
    /// `<B>^2 sinh phi`
    U,
    /// `<B>^2 (exp(phi) - 1)`
    Plus,
    /// `<B>^2 (exp(-phi) - 1)`
    Minus,
}

impl Correlation {
    pub fn eval(self, b: f64, phi: C64) -> C64 {
        let b2 = b * b;
        match self {
            Correlation::G => b2 * (phi.cosh() - 1.0),
            Correlation::U => b2 * phi.sinh(),
            Correlation::Plus => b2 * (phi.exp() - 1.0),
            Correlation::Minus => b2 * ((-phi).exp() - 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelOptions {
    /// Largest frequency (in `g1`) the one-sided transforms must resolve.
    pub max_frequency: f64,
    /// Tail criterion relative to `|G_g(0)|`.
    pub decay_tol: f64,
    /// Give up beyond this delay.
    pub tau_limit: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self { max_frequency: 200.0, decay_tol: 1e-6, tau_limit: 60.0 }
    }
}

/// Polaron correlation functions tabulated on a uniform delay grid.
#[derive(Clone, Debug)]
pub struct PhononKernel {
    params: BathParams,
    options: KernelOptions,
    mean_b: f64,
    dtau: f64,
    phi: Vec<C64>,
    g: Vec<C64>,
    u: Vec<C64>,
    plus: Vec<C64>,
    minus: Vec<C64>,
}

impl PhononKernel {
    pub fn tabulate(p: &BathParams, options: KernelOptions) -> Result<Self> {
        p.validate()?;
        let dtau = 1.0 / (16.0 * (4.0 * p.omega_b).max(options.max_frequency));
        let mean_b = mean_displacement(p);
        if p.alpha_p == 0.0 {
            let z = vec![C64::new(0.0, 0.0); 3];
            return Ok(Self {
                params: *p,
                options,
                mean_b,
                dtau,
                phi: z.clone(),
                g: z.clone(),
                u: z.clone(),
                plus: z.clone(),
                minus: z,
            });
        }
        let mut tau_max = 8.0 / p.omega_b;
        loop {
            let mut n = (tau_max / dtau).ceil() as usize;
            n += n % 2;
            let rule = PhiRule::new(p, n as f64 * dtau);
            let phi: Vec<C64> = par::map_range(n + 1, |k| rule.phi(k as f64 * dtau));
            let g: Vec<C64> = phi.iter().map(|&f| Correlation::G.eval(mean_b, f)).collect();
            let u: Vec<C64> = phi.iter().map(|&f| Correlation::U.eval(mean_b, f)).collect();
            let g0 = g[0].norm();
            let tail_start = (0.8 * n as f64) as usize;
            let tail = (tail_start..=n).fold(0.0_f64, |m, k| m.max(g[k].norm()).max(u[k].norm()));
            let ratio = tail / g0;
            if ratio < options.decay_tol {
                let plus = phi.iter().map(|&f| Correlation::Plus.eval(mean_b, f)).collect();
                let minus = phi.iter().map(|&f| Correlation::Minus.eval(mean_b, f)).collect();
                return Ok(Self { params: *p, options, mean_b, dtau, phi, g, u, plus, minus });
            }
            if 2.0 * tau_max > options.tau_limit {
                return Err(Error::KernelNotDecayed { tau_max, ratio });
            }
            tau_max *= 2.0;
        }
    }

    pub fn params(&self) -> &BathParams {
        &self.params
    }

    pub fn mean_displacement(&self) -> f64 {
        self.mean_b
    }

    pub fn dtau(&self) -> f64 {
        self.dtau
    }

    pub fn tau_max(&self) -> f64 {
        self.dtau * (self.len() - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn support(&self) -> f64 {
        self.options.max_frequency.max(4.0 * self.params.omega_b)
    }

    pub fn phi_values(&self) -> &[C64] {
        &self.phi
    }

    pub fn values(&self, which: Correlation) -> &[C64] {
        match which {
            Correlation::G => &self.g,
            Correlation::U => &self.u,
            Correlation::Plus => &self.plus,
            Correlation::Minus => &self.minus,
        }
    }

    /// `int_0^tau_max G(tau) exp(i s tau) dtau`. Composite Simpson inside the
    /// resolved band `|s| <= support`; beyond it the grid no longer samples
    /// the phase finely, so `G` is taken piecewise linear and integrated
    /// exactly against the phase instead.
    pub fn transform(&self, which: Correlation, s: f64) -> C64 {
        let vals = self.values(which);
        let n = vals.len() - 1;
        let h = self.dtau;
        if s.abs() > self.support() {
            return (1..=n)
                .map(|k| {
                    crate::dynamics::linear_times_phase(vals[k - 1], vals[k], (k - 1) as f64 * h, k as f64 * h, s)
                })
                .sum();
        }
        let step = C64::from_polar(1.0, s * h);
        let mut rot = C64::new(1.0, 0.0);
        let mut acc = C64::new(0.0, 0.0);
        for (k, v) in vals.iter().enumerate() {
            if k % 64 == 0 {
                rot = C64::from_polar(1.0, s * h * k as f64);
            }
            acc += simpson_weight(k, n, h) * *v * rot;
            rot *= step;
        }
        acc
    }

    /// Rates for the pair of cavity modes `(k, l)` with detunings `dk`, `dl`
    /// and couplings `gk`, `gl`.
    pub fn scattering_rates(&self, dk: f64, dl: f64, gk: f64, gl: f64) -> PairRates {
        use Correlation::{Minus, Plus};
        let f = |c, s| self.transform(c, s);
        let gg = gk * gl;
        let pk = f(Plus, dk);
        let pl = f(Plus, dl);
        let pk_m = f(Plus, -dk);
        let pl_m = f(Plus, -dl);
        let mk = f(Minus, dk);
        let mk_m = f(Minus, -dk);
        let ml = f(Minus, dl);
        let ml_m = f(Minus, -dl);
        PairRates {
            omega_plus: 0.5 * gg * (pk - pl.conj()),
            omega_minus: 0.5 * gg * (pk_m - pl_m.conj()),
            omega_mm: 0.5 * gg * (mk - ml_m.conj()),
            gamma_plus: gg * (pk + pl.conj()),
            gamma_minus: gg * (pk_m + pl_m.conj()),
            gamma_mm: gg * (mk + ml_m.conj()),
            gamma_pp: gg * (mk_m + ml.conj()),
        }
    }
}

/// Phonon-mediated rates of the simplified master equation for one pair of
/// cavity modes. `gamma_plus` drives emitter-to-cavity transfer, `gamma_minus`
/// the reverse; the double-index rates move two excitations together.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PairRates {
    pub omega_plus: C64,
    pub omega_minus: C64,
    pub omega_mm: C64,
    pub gamma_plus: C64,
    pub gamma_minus: C64,
    pub gamma_mm: C64,
    pub gamma_pp: C64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bath(t: f64) -> BathParams {
        BathParams::calibrated(0.9, 5.0, 1.0, 0.05).unwrap().at_temperature(t)
    }

    #[test]
    fn calibration_hits_target() {
        assert!((mean_displacement(&bath(5.0)) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn displacement_drops_with_temperature() {
        let b10 = mean_displacement(&bath(10.0));
        let b20 = mean_displacement(&bath(20.0));
        assert!(b10 < 0.9 && b20 < b10);
    }

    #[test]
    fn zero_coupling_gives_trivial_kernel() {
        let p = BathParams { alpha_p: 0.0, ..bath(5.0) };
        let k = PhononKernel::tabulate(&p, KernelOptions::default()).unwrap();
        assert_eq!(k.mean_displacement(), 1.0);
        assert_eq!(k.transform(Correlation::Plus, 3.0), C64::new(0.0, 0.0));
    }
}
