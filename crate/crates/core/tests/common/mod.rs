#![allow(dead_code)]

use planemerge_core::geometry::Correspondence;
use planemerge_core::multistructure::PatchLabeling;
use planemerge_core::refinement::{
    delaunay_triangulate, estimate_motion, local_normal, local_patch, patch_plane_model, LocalNormal, MatchGraph,
    PlanarPatch,
};
use planemerge_core::scene::{generate_scene, Scene, SceneSpec};
use planemerge_core::MrfProblem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scene(preset: &str, seed: u64, per_plane: usize, noise: f64, outliers: f64) -> Scene {
    let mut spec = SceneSpec::preset(preset, seed).unwrap();
    spec.matches_per_plane = per_plane;
    spec.noise_sigma = noise;
    spec.outlier_fraction = outliers;
    generate_scene(&spec).unwrap()
}

/// Everything the MRF builder needs, derived from a given patch labeling.
pub struct Refined {
    pub labels: PatchLabeling,
    pub graph: MatchGraph,
    pub patches: Vec<PlanarPatch>,
    pub local_patches: Vec<Vec<usize>>,
    pub local_normals: Vec<LocalNormal>,
}

pub fn refine(matches: &[Correspondence], scene: &Scene, labels: PatchLabeling) -> Refined {
    let k = &scene.intrinsics;
    let graph = delaunay_triangulate(matches).unwrap();
    let mut patches: Vec<PlanarPatch> = labels
        .patches()
        .iter()
        .enumerate()
        .map(|(id, m)| patch_plane_model(id, m, matches, k, None).unwrap())
        .collect();
    let motion = estimate_motion(&patches, matches, k, 1.0);
    if let Some(m) = &motion {
        for p in &mut patches {
            p.select_with(Some(m));
            p.fit_given_motion(matches, k, m);
        }
    }
    let local_patches: Vec<Vec<usize>> = (0..matches.len())
        .map(|i| local_patch(i, &labels, matches, 10))
        .collect();
    let local_normals = local_patches
        .iter()
        .map(|m| local_normal(m, matches, k, motion.as_ref()))
        .collect();
    Refined {
        labels,
        graph,
        patches,
        local_patches,
        local_normals,
    }
}

/// Random problem over the given edges with unaries in [0, 10) and
/// arbitrary pairwise tables in [0, 5).
pub fn random_problem(nodes: usize, labels: usize, edges: Vec<(usize, usize)>, seed: u64) -> MrfProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unary = (0..nodes)
        .map(|_| (0..labels).map(|_| rng.random_range(0.0..10.0)).collect())
        .collect();
    let tables = edges
        .iter()
        .map(|_| (0..labels * labels).map(|_| rng.random_range(0.0..5.0)).collect())
        .collect();
    MrfProblem::new(labels, unary, edges, tables, None).unwrap()
}

/// Random spanning tree over `n` nodes.
pub fn random_tree(n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (1..n).map(|i| (rng.random_range(0..i), i)).collect()
}
