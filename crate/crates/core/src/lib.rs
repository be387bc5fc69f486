//! Spectral-space diffusion refinement for autoregressive PDE surrogates.
//!
//! The crate generates periodic PDE trajectories (Kuramoto–Sivashinsky and
//! 2D incompressible Navier–Stokes), trains a per-mode linear surrogate by
//! least squares, and refines each predicted state with a blurring diffusion
//! process run directly on Fourier coefficients.

pub mod error;
pub mod eval;
pub mod exec;
pub mod field;
pub mod io;
pub mod refiner;
pub mod schedule;
pub mod solvers;
pub mod spectral;
pub mod surrogate;
pub mod trajectory;

pub use error::{Error, Result};
pub use exec::{stream_rng, Exec};
pub use field::{Grid, Normalization, RealField, SpectralField};
pub use schedule::{BlurDirection, BlurExponent, RefinementSchedule, ScheduleConfig, StepCoefficients};
pub use spectral::{
    dft_forward, dft_inverse, power_spectrum, sample_spectral_noise, scaling_vector,
    FrequencyScaling, PowerSpectrum, SpectrumReduction,
};
pub use refiner::{OraclePredictor, Sampler, SpectralRefiner, TrainingPair};
pub use surrogate::{fit_least_squares, fit_trajectories, FeatureSet, PerModeLinearPredictor, Predictor};
pub use trajectory::{dataset_split, DatasetSplit, Trajectory};
pub use solvers::{simulate_ks, simulate_ks_from, simulate_ns, simulate_ns_from, KsParams, NsForcing, NsParams};
pub use eval::{evaluate, rollout, EvalOptions, MetricsReport};
