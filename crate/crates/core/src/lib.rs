//! Prediction under random-effects misspecification in independent-cluster
//! generalized linear mixed models.
//!
//! The random effect of cluster `i` is `uᵢ = L vᵢ`, where `vᵢ` follows a
//! standardized mixture of normals (`c = 1` gives the usual normal model).
//! The crate fits such models by marginal maximum likelihood, computes
//! (empirical) best predictors and estimates their unconditional and
//! conditional mean squared prediction errors.

pub mod error;
pub mod diagnostics;
pub mod fit;
pub mod intervals;
pub mod io;
pub mod lmm;
pub mod model;
pub mod msep;
pub mod normal;
pub mod optim;
pub mod predict;
pub mod quadrature;
pub mod rng;
pub mod simlab;

pub use error::{Error, Result};
pub use fit::{FitConfig, FittedModel};
pub use model::{ClusterData, Dataset, Family, FamilyKind, MixtureSpec, Theta};
pub use nalgebra::{DMatrix, DVector};
pub use predict::Prediction;
pub use simlab::{GeneratedData, Scenario};
