//! Relation-eigenspace regularization for contrastive embedding
//! pre-finetuning.
//!
//! Offline, [`fit::fit`] decomposes pooled anchor/positive relation vectors in
//! their covariance eigenbasis, scores each eigen-dimension by how far
//! per-source means disperse along it, and derives per-source soft-shrink
//! factors. Online, [`debias::debias`] maps reference relations through those
//! factors and [`debias::reze_loss`] pulls the current model's relations
//! toward the result, alongside the InfoNCE objective in [`objectives`].
//!
//! Numeric code is generic over [`Real`] (`f32`/`f64`); the aliases below fix
//! the common instantiations. File formats and the training demo are 64-bit.

pub mod cli;
pub mod debias;
pub mod eigenspace;
pub mod error;
pub mod fit;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod objectives;
pub mod relations;
pub mod robust;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{RezeError, Result};
pub use fit::{Aggregation, FitConfig, ShrinkMode};
pub use objectives::ObjectiveConfig;
pub use relations::EmbeddingDump;
pub use scalar::Real;

pub type DenseMatrixF64 = matrix::DenseMatrix<f64>;
pub type DenseMatrixF32 = matrix::DenseMatrix<f32>;
pub type EigenBasisF64 = eigenspace::EigenBasis<f64>;
pub type EigenBasisF32 = eigenspace::EigenBasis<f32>;
pub type RelationSetF64 = relations::RelationSet<f64>;
pub type RelationSetF32 = relations::RelationSet<f32>;
pub type RezeMatrixF64 = fit::RezeMatrix<f64>;
pub type RezeMatrixF32 = fit::RezeMatrix<f32>;
pub type LossReportF64 = objectives::LossReport<f64>;
pub type DispersionReportF64 = metrics::DispersionReport<f64>;
