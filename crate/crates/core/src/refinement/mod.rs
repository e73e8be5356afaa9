//! Mesh-based refinement of detected patches: Delaunay graph over the
//! matches, distance cutting, per-patch plane models and per-match local
//! normals.

mod delaunay;
mod motion;

pub use motion::refine_motion;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    decompose_homography, fit_homography, select_candidate, Correspondence, GeometryError, Homography, Intrinsics,
    PlaneDecomposition, RelativeMotion,
};
use crate::multistructure::PatchLabeling;
use motion::plane_vector;

/// Patches with fewer members are discarded.
pub const MIN_PATCH_SIZE: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefinementError {
    #[error("triangulation needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("distance threshold must be positive")]
    InvalidThreshold,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Undirected graph over match indices from a Delaunay triangulation of the
/// image-1 positions.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchGraph {
    node_count: usize,
    /// Sorted `(lo, hi)` pairs with `lo < hi`.
    edges: Vec<(usize, usize)>,
    lengths: Vec<f64>,
}

impl MatchGraph {
    /// Builds a graph from explicit edges; self-loops and duplicates are dropped.
    pub fn from_edges(points: &[Vector2<f64>], edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut list: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        list.sort_unstable();
        list.dedup();
        let lengths = list.iter().map(|&(a, b)| (points[a] - points[b]).norm()).collect();
        Self {
            node_count: points.len(),
            edges: list,
            lengths,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn median_edge_length(&self) -> f64 {
        let mut l = self.lengths.clone();
        if l.is_empty() {
            return 0.0;
        }
        l.sort_by(f64::total_cmp);
        let n = l.len();
        if n % 2 == 1 {
            l[n / 2]
        } else {
            0.5 * (l[n / 2 - 1] + l[n / 2])
        }
    }

    /// Neighbour lists indexed by node.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }
}

/// Delaunay graph of the image-1 positions of `matches`.
///
/// Points sharing a position are linked to their first occurrence; when all
/// distinct positions are collinear the graph is a nearest-neighbour chain.
pub fn delaunay_triangulate(matches: &[Correspondence]) -> Result<MatchGraph, RefinementError> {
    let points: Vec<Vector2<f64>> = matches.iter().map(|c| c.x).collect();
    if points.len() < 3 {
        return Err(RefinementError::TooFewPoints(points.len()));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .x
            .total_cmp(&points[b].x)
            .then(points[a].y.total_cmp(&points[b].y))
            .then(a.cmp(&b))
    });
    let mut distinct: Vec<usize> = Vec::new();
    let mut extra: Vec<(usize, usize)> = Vec::new();
    for &i in &order {
        match distinct.last() {
            Some(&prev) if points[prev] == points[i] => extra.push((prev, i)),
            _ => distinct.push(i),
        }
    }
    distinct.sort_unstable();
    let unique: Vec<Vector2<f64>> = distinct.iter().map(|&i| points[i]).collect();

    let local = if unique.len() >= 3 {
        let tris = delaunay::triangulate(&unique);
        if tris.is_empty() {
            delaunay::nearest_chain(&unique)
        } else {
            delaunay::triangle_edges(&tris)
        }
    } else {
        delaunay::nearest_chain(&unique)
    };
    let edges = local.into_iter().map(|(a, b)| (distinct[a], distinct[b])).chain(extra);
    Ok(MatchGraph::from_edges(&points, edges))
}

/// Delaunay triangles of the given points, for validity checks.
pub fn delaunay_triangles(points: &[Vector2<f64>]) -> Vec<[usize; 3]> {
    if points.len() < 3 {
        return Vec::new();
    }
    delaunay::triangulate(points)
}

/// Splits every patch into the connected components of its retained mesh
/// edges: edges longer than `threshold` or joining different patches are
/// dropped. Components below [`MIN_PATCH_SIZE`] become outliers.
pub fn cut_mesh_by_distance(
    graph: &MatchGraph,
    patches: &PatchLabeling,
    threshold: f64,
) -> Result<PatchLabeling, RefinementError> {
    if !(threshold > 0.0) {
        return Err(RefinementError::InvalidThreshold);
    }
    let n = patches.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (&(a, b), &len) in graph.edges.iter().zip(&graph.lengths) {
        if len <= threshold && patches.label(a).is_some() && patches.label(a) == patches.label(b) {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let raw: Vec<Option<usize>> = (0..n).map(|i| patches.label(i).map(|_| find(&mut parent, i))).collect();
    Ok(PatchLabeling::from_raw_in_order(&raw).drop_small(MIN_PATCH_SIZE))
}

/// Edges kept by [`cut_mesh_by_distance`]: both ends share a patch and the
/// edge is no longer than `threshold`.
pub fn retained_edges<'a>(
    graph: &'a MatchGraph,
    labels: &'a PatchLabeling,
    threshold: f64,
) -> impl Iterator<Item = (usize, usize, f64)> + 'a {
    graph
        .edges
        .iter()
        .zip(&graph.lengths)
        .filter(move |(&(a, b), &len)| {
            len <= threshold && labels.label(a).is_some() && labels.label(a) == labels.label(b)
        })
        .map(|(&(a, b), &len)| (a, b, len))
}

/// Plane model of one refined patch.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarPatch {
    pub id: usize,
    pub members: Vec<usize>,
    pub homography: Option<Homography>,
    /// Candidate decompositions, best first.
    pub candidates: Vec<PlaneDecomposition>,
    /// Unit normal of the selected candidate; zero when invalid.
    pub normal: Vector3<f64>,
    pub valid: bool,
}

impl PlanarPatch {
    fn invalid(id: usize, members: Vec<usize>, homography: Option<Homography>) -> Self {
        Self {
            id,
            members,
            homography,
            candidates: Vec::new(),
            normal: Vector3::zeros(),
            valid: false,
        }
    }

    /// Re-selects the normal from the stored candidates given a motion estimate.
    pub fn select_with(&mut self, reference: Option<&RelativeMotion>) {
        if let Some(c) = select_candidate(&self.candidates, reference) {
            self.normal = c.n;
        }
    }

    /// Re-fits the plane with the motion held fixed: only `N / D` is
    /// estimated, so the plane-induced homography `K (R + T Nᵀ/D) K⁻¹`
    /// extrapolates across the scene far better than a free 8-parameter fit
    /// to a small region. Patch and local normals then share one motion.
    /// Leaves the patch unchanged when the constrained fit is degenerate.
    pub fn fit_given_motion(&mut self, matches: &[Correspondence], k: &Intrinsics, motion: &RelativeMotion) {
        if !self.valid {
            return;
        }
        let Some(w) = plane_vector(&self.members, matches, k, &motion.r, &motion.t) else {
            return;
        };
        let norm = w.norm();
        if !(norm > 1e-12) {
            return;
        }
        let Ok(h) = Homography::new(k.matrix() * (motion.r + motion.t * w.transpose()) * k.inverse()) else {
            return;
        };
        self.homography = Some(h);
        self.normal = w / norm;
    }
}

/// Fits and decomposes the homography of a patch.
///
/// Patches below [`MIN_PATCH_SIZE`] members, or whose decomposition fails,
/// come back with `valid = false`. Degenerate member sets are errors.
pub fn patch_plane_model(
    id: usize,
    members: &[usize],
    matches: &[Correspondence],
    k: &Intrinsics,
    reference: Option<&RelativeMotion>,
) -> Result<PlanarPatch, RefinementError> {
    if members.len() < MIN_PATCH_SIZE {
        return Ok(PlanarPatch::invalid(id, members.to_vec(), None));
    }
    let h = fit_homography(members.iter().map(|&i| (&matches[i].x, &matches[i].x_prime)))?;
    let support: Vec<Correspondence> = members.iter().map(|&i| matches[i].clone()).collect();
    let candidates = match decompose_homography(&h, k, &support) {
        Ok(c) => c,
        Err(_) => return Ok(PlanarPatch::invalid(id, members.to_vec(), Some(h))),
    };
    let normal = select_candidate(&candidates, reference)
        .map(|c| c.n)
        .unwrap_or_default();
    Ok(PlanarPatch {
        id,
        members: members.to_vec(),
        homography: Some(h),
        candidates,
        normal,
        valid: true,
    })
}

/// Motion shared by the most patch decompositions.
///
/// Every candidate of every valid patch is scored by the member-weighted sum,
/// over patches, of the distance to that patch's closest candidate; the
/// lowest score wins (first in patch/candidate order on ties).
pub fn consensus_motion(patches: &[PlanarPatch]) -> Option<RelativeMotion> {
    let valid: Vec<&PlanarPatch> = patches.iter().filter(|p| p.valid && !p.candidates.is_empty()).collect();
    let mut best: Option<(f64, RelativeMotion)> = None;
    for p in &valid {
        for cand in &p.candidates {
            let motion = cand.motion();
            let score: f64 = valid
                .iter()
                .map(|q| {
                    let nearest = q
                        .candidates
                        .iter()
                        .map(|c| c.motion().distance(&motion))
                        .fold(f64::INFINITY, f64::min);
                    nearest * q.members.len() as f64
                })
                .sum();
            if best.as_ref().is_none_or(|(s, _)| score < *s) {
                best = Some((score, motion));
            }
        }
    }
    best.map(|b| b.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalPatchConfig {
    /// Same-patch nearest neighbours gathered around each match.
    pub k: usize,
}

impl Default for LocalPatchConfig {
    fn default() -> Self {
        Self { k: 10 }
    }
}

/// Per-match normal estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LocalNormal {
    Reliable(Vector3<f64>),
    Unreliable,
}

impl LocalNormal {
    pub fn normal(&self) -> Option<Vector3<f64>> {
        match self {
            LocalNormal::Reliable(n) => Some(*n),
            LocalNormal::Unreliable => None,
        }
    }
}

/// The match itself followed by up to `k` nearest same-patch neighbours in
/// image 1 (ties by index). Empty for outliers.
pub fn local_patch(index: usize, labels: &PatchLabeling, matches: &[Correspondence], k: usize) -> Vec<usize> {
    let Some(own) = labels.label(index) else {
        return Vec::new();
    };
    let origin = matches[index].x;
    let mut others: Vec<(f64, usize)> = (0..matches.len())
        .filter(|&j| j != index && labels.label(j) == Some(own))
        .map(|j| ((matches[j].x - origin).norm_squared(), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    std::iter::once(index)
        .chain(others.into_iter().take(k).map(|(_, j)| j))
        .collect()
}

/// Normal of the plane through a local patch.
///
/// Without a motion estimate a homography is fit and decomposed. With one,
/// only the plane vector `w = N / D` is unknown and it is solved linearly
/// from `x2 ~ R x1 + T (wᵀ x1)` in normalized coordinates, which is far
/// better conditioned over a handful of nearby points.
pub fn local_normal(
    members: &[usize],
    matches: &[Correspondence],
    k: &Intrinsics,
    reference: Option<&RelativeMotion>,
) -> LocalNormal {
    if members.len() < 4 {
        return LocalNormal::Unreliable;
    }
    match reference {
        Some(motion) => plane_given_motion(members, matches, k, motion),
        None => {
            let Ok(h) = fit_homography(members.iter().map(|&i| (&matches[i].x, &matches[i].x_prime))) else {
                return LocalNormal::Unreliable;
            };
            let support: Vec<Correspondence> = members.iter().map(|&i| matches[i].clone()).collect();
            match decompose_homography(&h, k, &support) {
                Ok(c) => select_candidate(&c, None).map_or(LocalNormal::Unreliable, |d| LocalNormal::Reliable(d.n)),
                Err(_) => LocalNormal::Unreliable,
            }
        }
    }
}

fn plane_given_motion(
    members: &[usize],
    matches: &[Correspondence],
    k: &Intrinsics,
    motion: &RelativeMotion,
) -> LocalNormal {
    let Some(w) = plane_vector(members, matches, k, &motion.r, &motion.t) else {
        return LocalNormal::Unreliable;
    };
    let norm = w.norm();
    if !(norm > 1e-9) {
        return LocalNormal::Unreliable;
    }
    let n = w / norm;
    if members.iter().any(|&i| n.dot(&k.unproject(&matches[i].x)) <= 0.0) {
        return LocalNormal::Unreliable;
    }
    LocalNormal::Reliable(n)
}

/// Motion best explaining all valid patches at once.
///
/// Starts from [`consensus_motion`] and from every decomposition candidate,
/// refines each jointly over the valid patches (see [`refine_motion`]) and
/// keeps the lowest robust cost. Falls back to the consensus motion when no
/// refinement succeeds.
pub fn estimate_motion(
    patches: &[PlanarPatch],
    matches: &[Correspondence],
    k: &Intrinsics,
    huber_delta: f64,
) -> Option<RelativeMotion> {
    let consensus = consensus_motion(patches)?;
    let groups: Vec<&[usize]> = patches
        .iter()
        .filter(|p| p.valid)
        .map(|p| p.members.as_slice())
        .collect();
    let starts: Vec<RelativeMotion> = std::iter::once(consensus)
        .chain(
            patches
                .iter()
                .filter(|p| p.valid)
                .flat_map(|p| p.candidates.iter().map(|c| c.motion())),
        )
        .collect();
    starts
        .par_iter()
        .filter_map(|s| refine_motion(&groups, matches, k, s, huber_delta))
        .collect::<Vec<_>>()
        .into_iter()
        .fold(None, |best: Option<(RelativeMotion, f64)>, cur| match best {
            Some(b) if b.1 <= cur.1 => Some(b),
            _ => Some(cur),
        })
        .map(|b| orient_translation(b.0, &groups, matches, k))
        .or(Some(consensus))
}

/// Flips `(T, N/D)` to `(−T, −N/D)` when most points would otherwise lie
/// behind the first camera.
fn orient_translation(
    motion: RelativeMotion,
    groups: &[&[usize]],
    matches: &[Correspondence],
    k: &Intrinsics,
) -> RelativeMotion {
    let (mut front, mut behind) = (0usize, 0usize);
    for g in groups {
        if let Some(w) = plane_vector(g, matches, k, &motion.r, &motion.t) {
            for &i in *g {
                if w.dot(&k.unproject(&matches[i].x)) > 0.0 {
                    front += 1;
                } else {
                    behind += 1;
                }
            }
        }
    }
    if behind > front {
        RelativeMotion {
            r: motion.r,
            t: -motion.t,
        }
    } else {
        motion
    }
}
