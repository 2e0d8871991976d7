pub mod cov;
pub mod cylinder;
pub mod dirichlet;
pub mod error;
pub mod field;
pub mod homeo;
pub mod ibp;
pub mod maps;
pub mod path;
pub mod quad;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod wasserstein;

pub use error::{Error, Result};
pub use scalar::Real;

// area-level names for the main modules
pub use cov as change_of_variable;
pub use dirichlet as dirichlet_process;
pub use homeo as homeo_flow_sde;
pub use ibp as ibp_drift;
pub use path as cadlag_core;
pub use wasserstein as wasserstein_diffusion;
