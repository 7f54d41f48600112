//! Measure how far two independently trained embedding spaces are
//! isomorphic: fit a supervised orthogonal alignment from a bilingual (or
//! bimodal) dictionary and score cross-space retrieval with precision@k.
//!
//! The numeric core ([`align`], [`retrieval`], [`analysis::dispersion`]) is
//! generic over [`Scalar`]; spaces are stored as `f32` and alignment is
//! fitted in `f64`. The aliases below name the common instantiations.

pub mod align;
pub mod analysis;
pub mod dictionary;
pub mod error;
pub mod evaluate;
pub mod matrix;
pub mod retrieval;
pub mod rng;
pub mod scalar;
pub mod store;
pub mod synth;

pub use align::{
    apply_map, apply_pca, fit_alignment, fit_pca, fit_procrustes, prepare_target, AliasRows,
    AlignOptions, AlignmentModel, OrthogonalMap, PcaFit, PcaModel,
};
pub use dictionary::{BimodalDictionary, ConceptClass, SplitAssignment, SplitRatios};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use retrieval::{CslsParams, Exec, Metric, Neighbor, RankedRetrieval};
pub use scalar::Scalar;
pub use store::{load_space, preprocess, save_space, EmbeddingSpace, Preprocessing};
pub use synth::{Relation, SynthConfig, SyntheticPair};

/// Storage-precision matrix.
pub type Matrix32 = Matrix<f32>;
/// Fitting-precision matrix.
pub type Matrix64 = Matrix<f64>;
pub type PcaModel64 = PcaModel<f64>;
pub type OrthogonalMap64 = OrthogonalMap<f64>;
pub type OrthogonalMap32 = OrthogonalMap<f32>;

/// Toolkit version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
