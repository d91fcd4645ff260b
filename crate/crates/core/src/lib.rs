//! Zero-shot image restoration in the noise space of a deterministic diffusion
//! sampler.
//!
//! A degraded image is inverted through the DDIM generator to its input
//! noise. Windows of that noise which fail a D'Agostino–Pearson normality test
//! are marked, the touched tiles are replaced by their nearest neighbours from
//! a bank of genuine Gaussian patches, and the rectified noise is pushed
//! through the generator again.

pub mod ddim;
pub mod degrade;
pub mod error;
pub mod inversion;
pub mod io;
pub mod metrics;
pub mod normality;
pub mod prior;
pub mod rectifier;
pub mod restore;
pub mod rng;
pub mod tensor;

pub use ddim::{generate, generate_adjoint, invert_ode, SamplerConfig};
pub use degrade::{Degradation, DegradationSpec, OperatorFamily, ParametricOperator};
pub use error::{Error, Result};
pub use inversion::{invert_blind, invert_partial, kernel_from_theta, InversionReport, InvertOptions};
pub use normality::{omnibus_test, scan_mask, DefectMask, OmnibusResult, ScanConfig};
pub use prior::{GmmPrior, MlpScore, NoiseSchedule, ScoreModel};
pub use rectifier::{build_bank, nearest_patch, PatchBank, RectifyReport};
pub use restore::{restore, Mode, RestoreOutput, RestoreParams};
pub use rng::{draw_standard_normal, Rng};
pub use tensor::{Shape, Tensor3};
