//! Truncated product basis: emitters first, then mode 1, then mode 2, with
//! the mode-2 photon number running fastest. Emitter states are 0 = ground,
//! 1 = excited.

use crate::{Error, Result};

/// Default ceiling on `dim^2`, roughly what fits a dense sector LU in a few GB.
pub const DEFAULT_LIOUVILLE_BUDGET: usize = 4_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct SpaceSpec {
    pub n_emitters: usize,
    pub n_max: [usize; 2],
}

impl SpaceSpec {
    pub fn new(n_emitters: usize, n_max1: usize, n_max2: usize) -> Result<Self> {
        if !(1..=2).contains(&n_emitters) {
            return Err(Error::InvalidParameter(format!(
                "n_emitters must be 1 or 2, got {n_emitters}"
            )));
        }
        if n_max1 < 1 || n_max2 < 1 {
            return Err(Error::InvalidParameter(format!(
                "photon truncations must be >= 1, got ({n_max1}, {n_max2})"
            )));
        }
        Ok(Self { n_emitters, n_max: [n_max1, n_max2] })
    }

    pub fn dim(&self) -> usize {
        (1 << self.n_emitters) * (self.n_max[0] + 1) * (self.n_max[1] + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BasisState {
    /// Excitation of each emitter; the second entry is always 0 with one emitter.
    pub qd: [u8; 2],
    pub photons: [usize; 2],
}

impl BasisState {
    pub fn excitation(&self) -> usize {
        self.qd[0] as usize + self.qd[1] as usize + self.photons[0] + self.photons[1]
    }
}

#[derive(Clone, Debug)]
pub struct Space {
    spec: SpaceSpec,
    states: Vec<BasisState>,
    excitation: Vec<usize>,
    /// Basis indices grouped by total excitation number, ascending.
    by_excitation: Vec<Vec<usize>>,
    /// Position of each basis index inside its excitation class.
    class_pos: Vec<usize>,
}

impl Space {
    pub fn new(spec: SpaceSpec) -> Result<Self> {
        Self::with_budget(spec, DEFAULT_LIOUVILLE_BUDGET)
    }

    pub fn with_budget(spec: SpaceSpec, liouville_budget: usize) -> Result<Self> {
        let spec = SpaceSpec::new(spec.n_emitters, spec.n_max[0], spec.n_max[1])?;
        let dim = spec.dim();
        if dim * dim > liouville_budget {
            return Err(Error::DimensionBudget { liouville_dim: dim * dim, budget: liouville_budget });
        }
        let mut states = Vec::with_capacity(dim);
        let q2_range = if spec.n_emitters == 2 { 0..2u8 } else { 0..1u8 };
        for q1 in 0..2u8 {
            for q2 in q2_range.clone() {
                for n1 in 0..=spec.n_max[0] {
                    for n2 in 0..=spec.n_max[1] {
                        states.push(BasisState { qd: [q1, q2], photons: [n1, n2] });
                    }
                }
            }
        }
        let excitation: Vec<usize> = states.iter().map(BasisState::excitation).collect();
        let max_exc = excitation.iter().copied().max().unwrap_or(0);
        let mut by_excitation = vec![Vec::new(); max_exc + 1];
        let mut class_pos = vec![0; dim];
        for (i, &e) in excitation.iter().enumerate() {
            class_pos[i] = by_excitation[e].len();
            by_excitation[e].push(i);
        }
        let space = Self { spec, states, excitation, by_excitation, class_pos };
        debug_assert!(space
            .states
            .iter()
            .enumerate()
            .all(|(i, s)| space.index(s.qd, s.photons) == i));
        Ok(space)
    }

    pub fn spec(&self) -> SpaceSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn n_emitters(&self) -> usize {
        self.spec.n_emitters
    }

    pub fn n_max(&self) -> [usize; 2] {
        self.spec.n_max
    }

    pub fn index(&self, qd: [u8; 2], photons: [usize; 2]) -> usize {
        let [m1, m2] = self.spec.n_max;
        let q = if self.spec.n_emitters == 2 {
            qd[0] as usize * 2 + qd[1] as usize
        } else {
            qd[0] as usize
        };
        (q * (m1 + 1) + photons[0]) * (m2 + 1) + photons[1]
    }

    pub fn state(&self, i: usize) -> BasisState {
        self.states[i]
    }

    pub fn excitation(&self, i: usize) -> usize {
        self.excitation[i]
    }

    pub fn max_excitation(&self) -> usize {
        self.by_excitation.len() - 1
    }

    pub fn excitation_class(&self, e: usize) -> &[usize] {
        self.by_excitation.get(e).map_or(&[], Vec::as_slice)
    }

    pub fn class_position(&self, i: usize) -> usize {
        self.class_pos[i]
    }

    /// Index of the state reached by changing the given emitter or photon
    /// number, or `None` if it leaves the truncated space.
    pub fn shifted(&self, i: usize, qd: Option<(usize, u8)>, photon: Option<(usize, isize)>) -> Option<usize> {
        let mut s = self.states[i];
        if let Some((k, q)) = qd {
            if k >= self.spec.n_emitters {
                return None;
            }
            s.qd[k] = q;
        }
        if let Some((m, d)) = photon {
            let n = s.photons[m] as isize + d;
            if n < 0 || n as usize > self.spec.n_max[m] {
                return None;
            }
            s.photons[m] = n as usize;
        }
        Some(self.index(s.qd, s.photons))
    }
}
