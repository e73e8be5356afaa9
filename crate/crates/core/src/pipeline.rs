//! End-to-end plane detection: sampling, initial patches, mesh cutting,
//! plane models and local normals, MRF relabeling.

use std::fmt;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Correspondence, GroundTruth, Intrinsics, RelativeMotion};
use crate::metrics::{evaluate, EvalReport};
use crate::mrf::{build_mrf, MrfConfig, MrfError, MrfInputs};
use crate::multistructure::{initial_patches, ClusterConfig, MultiStructureError, OrkConfig, PatchLabeling};
use crate::refinement::{
    cut_mesh_by_distance, delaunay_triangulate, estimate_motion, local_normal, local_patch, patch_plane_model,
    LocalNormal, LocalPatchConfig, PlanarPatch, RefinementError, MIN_PATCH_SIZE,
};
use crate::sampling::{sample_local_hypotheses, SamplingConfig, SamplingError};
use crate::solver::{merge_labels, trws_solve, SolveReport, SolverError, TrwsConfig};

/// Fewest matches the pipeline accepts.
pub const MIN_MATCHES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Sampling,
    InitialPatches,
    Triangulation,
    Cut,
    PlaneModels,
    Mrf,
    Solver,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Config,
        Stage::Sampling,
        Stage::InitialPatches,
        Stage::Triangulation,
        Stage::Cut,
        Stage::PlaneModels,
        Stage::Mrf,
        Stage::Solver,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Sampling => "sampling",
            Stage::InitialPatches => "initial_patches",
            Stage::Triangulation => "triangulation",
            Stage::Cut => "cut",
            Stage::PlaneModels => "plane_models",
            Stage::Mrf => "mrf",
            Stage::Solver => "solver",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StageError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    MultiStructure(#[from] MultiStructureError),
    #[error(transparent)]
    Refinement(#[from] RefinementError),
    #[error(transparent)]
    Mrf(#[from] MrfError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// A failure tagged with the stage it happened in.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("[{stage}] {source}")]
pub struct PipelineError {
    pub stage: Stage,
    pub source: StageError,
}

fn at<E: Into<StageError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        source: e.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    /// Fixed cut threshold in pixels; derived from the mesh when absent.
    pub cut_threshold: Option<f64>,
    /// Multiple of the median Delaunay edge length used as the cut threshold.
    pub cut_factor: f64,
    pub local: LocalPatchConfig,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            cut_threshold: None,
            cut_factor: 3.0,
            local: LocalPatchConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sampling: SamplingConfig,
    pub ork: OrkConfig,
    pub cluster: ClusterConfig,
    pub refinement: RefinementConfig,
    pub mrf: MrfConfig,
    pub solver: TrwsConfig,
    /// Run the MRF relabeling; when off the refined patches are final.
    pub use_mrf: bool,
    /// Final planes with fewer members become outliers.
    pub min_plane_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sampling: SamplingConfig::default(),
            ork: OrkConfig::default(),
            cluster: ClusterConfig::default(),
            refinement: RefinementConfig::default(),
            mrf: MrfConfig::default(),
            solver: TrwsConfig::default(),
            use_mrf: true,
            min_plane_size: MIN_PATCH_SIZE,
        }
    }
}

impl PipelineConfig {
    /// Seeds every randomized stage from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sampling.seed = seed;
        self.cluster.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |m: &str| PipelineError {
            stage: Stage::Config,
            source: StageError::Invalid(m.to_string()),
        };
        self.sampling.validate().map_err(at(Stage::Config))?;
        self.mrf.weights.validate().map_err(at(Stage::Config))?;
        self.mrf.texture.validate().map_err(at(Stage::Config))?;
        self.solver.validate().map_err(at(Stage::Config))?;
        if self.ork.step == Some(0) {
            return Err(invalid("ork.step must be >= 1"));
        }
        if self.cluster.max_planes < 1 {
            return Err(invalid("cluster.max_planes must be >= 1"));
        }
        if self.cluster.kmeans_restarts < 1 {
            return Err(invalid("cluster.kmeans_restarts must be >= 1"));
        }
        if !(self.cluster.outlier_scale > 0.0 && self.cluster.outlier_floor >= 0.0) {
            return Err(invalid("cluster outlier scale must be > 0 and floor >= 0"));
        }
        if self
            .cluster
            .epsilon_outlier
            .is_some_and(|e| !(e > 0.0 && e.is_finite()))
        {
            return Err(invalid("cluster.epsilon_outlier must be positive"));
        }
        if !(0.0..=1.0).contains(&self.cluster.single_structure_fraction) {
            return Err(invalid("cluster.single_structure_fraction must lie in [0, 1]"));
        }
        if self
            .refinement
            .cut_threshold
            .is_some_and(|t| !(t > 0.0 && t.is_finite()))
        {
            return Err(invalid("refinement.cut_threshold must be positive"));
        }
        if !(self.refinement.cut_factor > 0.0 && self.refinement.cut_factor.is_finite()) {
            return Err(invalid("refinement.cut_factor must be positive"));
        }
        if self.refinement.local.k < 4 {
            return Err(invalid("refinement.local.k must be >= 4"));
        }
        Ok(())
    }
}

/// Summary of one refined patch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PatchSummary {
    pub id: usize,
    pub size: usize,
    pub valid: bool,
    pub normal: Option<[f64; 3]>,
}

impl From<&PlanarPatch> for PatchSummary {
    fn from(p: &PlanarPatch) -> Self {
        Self {
            id: p.id,
            size: p.members.len(),
            valid: p.valid,
            normal: p.valid.then(|| p.normal.into()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub match_count: usize,
    pub hypotheses: usize,
    pub failed_draws: usize,
    pub noise_scale: f64,
    pub epsilon_outlier: f64,
    pub single_structure: bool,
    pub initial_patches: usize,
    pub cut_threshold: f64,
    pub refined_patches: usize,
    pub valid_patches: usize,
    pub reliable_local_normals: usize,
    pub consensus_motion: Option<MotionSummary>,
    pub mrf_nodes: usize,
    pub mrf_edges: usize,
    pub sigma_r: Option<f64>,
    pub initial_energy: Option<f64>,
    pub final_energy: Option<f64>,
    pub lower_bounds: Vec<f64>,
    pub solver_iterations: usize,
    pub solver_converged: bool,
    /// Whole-label merges applied after message passing.
    pub label_merges: usize,
    pub final_planes: usize,
    pub texture_disabled: bool,
    pub warnings: Vec<String>,
    /// Wall time per stage in seconds.
    pub timings: Vec<(Stage, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MotionSummary {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&RelativeMotion> for MotionSummary {
    fn from(m: &RelativeMotion) -> Self {
        Self {
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| m.r[(i, j)])),
            translation: m.t.into(),
        }
    }
}

/// Intermediate results, for inspection and dumping.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutputs {
    pub initial: PatchLabeling,
    pub refined: PatchLabeling,
    pub patches: Vec<PlanarPatch>,
    pub local_normals: Vec<LocalNormal>,
    pub solve: Option<SolveReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub labeling: PatchLabeling,
    /// Present when every match carries ground truth.
    pub eval: Option<EvalReport>,
    pub diagnostics: Diagnostics,
    pub stages: StageOutputs,
}

/// Ground-truth labels, when every match has one.
pub fn ground_truth_labels(matches: &[Correspondence]) -> Option<Vec<Option<usize>>> {
    matches
        .iter()
        .map(|c| {
            c.gt_plane.map(|g| match g {
                GroundTruth::Plane(p) => Some(p),
                GroundTruth::Outlier => None,
            })
        })
        .collect()
}

struct Timer {
    start: Instant,
}

impl Timer {
    fn new() -> Self {
        Self { start: Instant::now() }
    }

    fn lap(&mut self, d: &mut Diagnostics, stage: Stage) {
        let now = Instant::now();
        d.timings.push((stage, (now - self.start).as_secs_f64()));
        self.start = now;
    }
}

pub fn run_pipeline(
    matches: &[Correspondence],
    intrinsics: &Intrinsics,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    if matches.len() < MIN_MATCHES {
        return Err(PipelineError {
            stage: Stage::Config,
            source: StageError::Invalid(format!("need at least {MIN_MATCHES} matches, got {}", matches.len())),
        });
    }
    let mut diag = Diagnostics {
        match_count: matches.len(),
        ..Default::default()
    };
    let mut timer = Timer::new();

    let hyps = sample_local_hypotheses(matches, &cfg.sampling).map_err(at(Stage::Sampling))?;
    diag.hypotheses = hyps.hypotheses.len();
    diag.failed_draws = hyps.failed_draws;
    if hyps.shortfall > 0 {
        diag.warnings
            .push(format!("{} hypotheses could not be drawn", hyps.shortfall));
    }
    timer.lap(&mut diag, Stage::Sampling);

    let init = initial_patches(matches, &hyps.hypotheses, &cfg.ork, &cfg.cluster).map_err(at(Stage::InitialPatches))?;
    diag.noise_scale = init.noise_scale;
    diag.epsilon_outlier = init.epsilon_outlier;
    diag.single_structure = init.single_structure;
    diag.initial_patches = init.labeling.patch_count();
    info!("initial patches: {}", diag.initial_patches);
    timer.lap(&mut diag, Stage::InitialPatches);

    let graph = delaunay_triangulate(matches).map_err(at(Stage::Triangulation))?;
    timer.lap(&mut diag, Stage::Triangulation);

    let threshold = cfg
        .refinement
        .cut_threshold
        .unwrap_or_else(|| cfg.refinement.cut_factor * graph.median_edge_length());
    diag.cut_threshold = threshold;
    let refined = cut_mesh_by_distance(&graph, &init.labeling, threshold).map_err(at(Stage::Cut))?;
    diag.refined_patches = refined.patch_count();
    info!("refined patches: {}", diag.refined_patches);
    timer.lap(&mut diag, Stage::Cut);

    let members = refined.patches();
    let mut patches: Vec<PlanarPatch> = members
        .par_iter()
        .enumerate()
        .map(|(id, m)| patch_plane_model(id, m, matches, intrinsics, None))
        .collect::<Result<_, _>>()
        .map_err(at(Stage::PlaneModels))?;
    let motion = estimate_motion(&patches, matches, intrinsics, init.epsilon_outlier);
    for p in &mut patches {
        p.select_with(motion.as_ref());
        if let Some(m) = &motion {
            p.fit_given_motion(matches, intrinsics, m);
        }
    }
    diag.valid_patches = patches.iter().filter(|p| p.valid).count();
    diag.consensus_motion = motion.as_ref().map(MotionSummary::from);
    let k = cfg.refinement.local.k;
    let local_patches: Vec<Vec<usize>> = (0..matches.len())
        .into_par_iter()
        .map(|i| local_patch(i, &refined, matches, k))
        .collect();
    let local_normals: Vec<LocalNormal> = local_patches
        .par_iter()
        .map(|lp| {
            if lp.is_empty() {
                LocalNormal::Unreliable
            } else {
                local_normal(lp, matches, intrinsics, motion.as_ref())
            }
        })
        .collect();
    diag.reliable_local_normals = local_normals.iter().filter(|n| n.normal().is_some()).count();
    timer.lap(&mut diag, Stage::PlaneModels);

    let mut solve = None;
    let final_labels = if cfg.use_mrf && refined.patch_count() > 0 {
        let mut mrf_cfg = cfg.mrf.clone();
        if mrf_cfg.weights.lambda3 > 0.0 {
            let uncolored = (0..matches.len())
                .filter(|&i| refined.label(i).is_some() && matches[i].color_mean.is_none())
                .count();
            if uncolored > 0 {
                let msg = format!("{uncolored} matches lack color means; texture term disabled");
                warn!("{msg}");
                diag.warnings.push(msg);
                diag.texture_disabled = true;
                mrf_cfg.weights.lambda3 = 0.0;
            }
        }
        let build = build_mrf(
            &MrfInputs {
                matches,
                labeling: &refined,
                graph: &graph,
                local_normals: &local_normals,
                local_patches: &local_patches,
                patches: &patches,
            },
            &mrf_cfg,
        )
        .map_err(at(Stage::Mrf))?;
        diag.mrf_nodes = build.problem.node_count();
        diag.mrf_edges = build.problem.edges().len();
        diag.sigma_r = Some(build.sigma_r);
        timer.lap(&mut diag, Stage::Mrf);

        let mut report = trws_solve(&build.problem, &cfg.solver).map_err(at(Stage::Solver))?;
        diag.label_merges = merge_labels(&build.problem, &mut report.labels).map_err(at(Stage::Solver))?;
        report.energy = build.problem.total_energy(&report.labels).map_err(at(Stage::Solver))?;
        diag.initial_energy = report.energy_history.first().copied();
        diag.final_energy = Some(report.energy);
        diag.lower_bounds = report.bound_history.clone();
        diag.solver_iterations = report.iterations;
        diag.solver_converged = report.converged;
        let raw = build.to_patch_labels(&report.labels, matches.len());
        solve = Some(report);
        timer.lap(&mut diag, Stage::Solver);
        PatchLabeling::from_raw(&raw).drop_small(cfg.min_plane_size)
    } else {
        refined.drop_small(cfg.min_plane_size)
    };
    diag.final_planes = final_labels.patch_count();

    let eval = ground_truth_labels(matches).map(|gt| evaluate(final_labels.labels(), &gt));
    Ok(PipelineOutput {
        labeling: final_labels,
        eval,
        diagnostics: diag,
        stages: StageOutputs {
            initial: init.labeling,
            refined,
            patches,
            local_normals,
            solve,
        },
    })
}
