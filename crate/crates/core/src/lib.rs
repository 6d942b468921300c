//! Steady-state and spectral solver for two incoherently pumped quantum dots
//! coupled to a two-mode cavity, with phonon dressing treated in the polaron
//! frame.
//!
//! All energies and rates are in units of the first cavity coupling `g1`
//! (with hbar = 1), so times are in units of `1/g1`. The bath module converts
//! physical inputs (meV, kelvin) into these units.

pub mod dynamics;
pub mod invariants;
pub mod liouvillian;
pub mod observables;
pub mod operator;
pub mod par;
pub mod phonon;
pub mod sector;
pub mod space;
pub mod sparse;
pub mod superop;
pub mod sweep;

pub use num_complex::Complex64 as C64;

pub use dynamics::{evolve, steady_state, SteadyState, SteadyStateOptions};
pub use liouvillian::{
    build_full_me, build_sme, build_system_hamiltonian, ChannelClass, Liouvillian,
    LiouvillianChannel, MasterEquation, PhotonSignature, SystemParams,
};
pub use observables::{photon_stats, rate_decomposition, PhotonStats, RateReport};
pub use operator::{Emitter, Mode, SparseOperator};
pub use phonon::{BathParams, PhononKernel};
pub use space::{Space, SpaceSpec};
pub use superop::SuperOperator;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("Liouville dimension {liouville_dim} exceeds the budget of {budget}")]
    DimensionBudget { liouville_dim: usize, budget: usize },
    #[error("operator is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("channel `{0}` carries no photon signature")]
    MissingSignature(String),
    #[error(
        "phonon correlation has not decayed by tau = {tau_max:.3} (tail ratio {ratio:.3e}); \
         raise the tau limit"
    )]
    KernelNotDecayed { tau_max: f64, ratio: f64 },
    #[error("singular generator: null space of dimension {nullity} ({detail})")]
    Singular { nullity: usize, detail: String },
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("correlation did not decay: |C(t_end)|/|C(0)| = {ratio:.3e} at t_end = {t_end:.3}")]
    CorrelationNotDecayed { t_end: f64, ratio: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
