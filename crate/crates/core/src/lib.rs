//! Dual-subspace orthogonal projection for prompt embeddings.
//!
//! A concatenated story prompt `[P0; P1; ...; PN]` is encoded once. To render
//! frame `j`, the embedding is projected onto the subspace of the express
//! prompts (`P0` and `Pj`) and onto the subspace of the other frames. The
//! suppress component is made orthogonal to the express component before it
//! is subtracted, so the frame loses the other frames' semantics without
//! losing its own.
//!
//! ```
//! use orthoprompt::{EmbeddingMatrix, ProjectionBasis, RefinementConfig, refine};
//!
//! let x = EmbeddingMatrix::from_rows(&[[1.0, 1.0]]).unwrap();
//! let express = ProjectionBasis::from_concept(&EmbeddingMatrix::from_rows(&[[1.0, 0.0]]).unwrap(), 1e-10).unwrap();
//! let suppress = ProjectionBasis::from_concept(&x, 1e-10).unwrap();
//! let out = refine(&x, &express, &suppress, &RefinementConfig::default(), None).unwrap();
//! assert_eq!(out.x_refined.as_slice(), &[1.0, 0.0]);
//! ```

pub mod encoder;
pub mod error;
pub mod fixtures;
pub mod linalg;
pub mod metrics;
pub mod prompt;
pub mod refine;

pub use encoder::{EncoderConfig, TokenSequence, ToyEncoder, DEFAULT_SEED};
pub use error::{Error, Result};
pub use linalg::{
    project, project_complement, projection_basis, svd, EmbeddingMatrix, ProjectionBasis,
    SvdResult, DEFAULT_RANK_TOL,
};
pub use metrics::{
    entanglement_report, pooled_cosine, refinement_report, EntanglementReport, ModeReport, Pooling,
    RefinementReport, ReportMode,
};
pub use prompt::{build_layout, partition, slice, FramePartition, PromptLayout, Segment, Span};
pub use refine::{
    decompose, purify, refine, ConceptBases, Granularity, Mode, RefinementConfig,
    RefinementDecomposition,
};
