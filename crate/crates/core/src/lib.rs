//! Multiple plane detection from two-view feature correspondences.
//!
//! The pipeline samples local homography hypotheses, clusters matches into
//! initial planar patches with an ordered-residual kernel, cuts patches
//! along a Delaunay mesh, estimates per-patch and per-match plane normals,
//! and relabels matches by minimizing a pairwise MRF energy with sequential
//! tree-reweighted message passing.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod metrics;
pub mod mrf;
pub mod multistructure;
pub mod pipeline;
pub mod refinement;
pub mod sampling;
pub mod scene;
pub mod solver;

pub use geometry::{
    compose_homography, decompose_homography, estimate_homography, transfer_residual, Correspondence, GeometryError,
    GroundTruth, Homography, Intrinsics, PlaneDecomposition, RelativeMotion, ResidualKind,
};
pub use metrics::{classification_error, evaluate, ps_ad_tables, EvalReport};
pub use mrf::{build_mrf, EnergyWeights, MrfConfig, MrfError, MrfProblem, TextureConfig};
pub use multistructure::PatchLabeling;
pub use pipeline::{run_pipeline, PipelineConfig, PipelineError, PipelineOutput, Stage};
pub use scene::{generate_scene, Scene, SceneSpec};
pub use solver::{brute_force_map, trws_solve, SolveReport, TrwsConfig};
