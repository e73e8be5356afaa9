//! Pairwise MRF over the matches: labels are refined patches, unaries
//! combine local-patch transfer residuals with normal agreement, and
//! pairwise terms are Potts costs modulated by normal and texture
//! similarity.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Correspondence, Homography, ResidualKind};
use crate::multistructure::PatchLabeling;
use crate::refinement::{LocalNormal, MatchGraph, PlanarPatch};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MrfError {
    #[error("no valid planar patch to use as a label")]
    NoValidPatches,
    #[error("texture weight is positive but match {0} has no color")]
    MissingTexture(u64),
    #[error("node {node} has label {label}, but only {count} labels exist")]
    LabelOutOfRange { node: usize, label: usize, count: usize },
    #[error("labeling covers {got} nodes, problem has {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid energy weights: {0}")]
    InvalidWeights(&'static str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyWeights {
    /// Potts discontinuity cost.
    pub lambda1: f64,
    /// Normal-similarity weight.
    pub lambda2: f64,
    /// Texture-similarity weight.
    pub lambda3: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self) -> Result<(), MrfError> {
        for (v, name) in [
            (self.lambda1, "lambda1 must be finite and >= 0"),
            (self.lambda2, "lambda2 must be finite and >= 0"),
            (self.lambda3, "lambda3 must be finite and >= 0"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(MrfError::InvalidWeights(name));
            }
        }
        Ok(())
    }
}

/// Texture sampling around each feature. Color means are read from the
/// matches; the window documents how they were computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureConfig {
    pub window: usize,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self { window: 5 }
    }
}

impl TextureConfig {
    pub fn validate(&self) -> Result<(), MrfError> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(MrfError::InvalidWeights("texture window must be odd and >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrfConfig {
    pub weights: EnergyWeights,
    /// Discontinuity cost `λ1 + λ2·exp(−normal) + λ3·exp(−texture)` when set,
    /// otherwise `λ1 + λ2·normal + λ3·texture`.
    pub contrast_sensitive: bool,
    pub texture: TextureConfig,
    pub residual: ResidualKind,
}

impl Default for MrfConfig {
    fn default() -> Self {
        Self {
            weights: EnergyWeights::default(),
            contrast_sensitive: true,
            texture: TextureConfig::default(),
            residual: ResidualKind::OneWay,
        }
    }
}

/// Dense discrete pairwise energy.
#[derive(Clone, Debug, PartialEq)]
pub struct MrfProblem {
    label_count: usize,
    /// Row-major `node × label`.
    unary: Vec<f64>,
    /// `(a, b)` node pairs with `a < b`.
    edges: Vec<(usize, usize)>,
    /// Per edge, row-major `label(a) × label(b)`.
    pairwise: Vec<Vec<f64>>,
    initial: Vec<usize>,
}

impl MrfProblem {
    /// Validates and assembles a problem. Edges are reoriented so the
    /// smaller node comes first, transposing their tables.
    pub fn new(
        label_count: usize,
        unary: Vec<Vec<f64>>,
        edges: Vec<(usize, usize)>,
        pairwise: Vec<Vec<f64>>,
        initial: Option<Vec<usize>>,
    ) -> Result<Self, MrfError> {
        let n = unary.len();
        let bad = |m: String| Err(MrfError::InvalidProblem(m));
        if label_count == 0 {
            return bad("at least one label is required".into());
        }
        if edges.len() != pairwise.len() {
            return bad("one pairwise table per edge is required".into());
        }
        if unary.iter().any(|u| u.len() != label_count) {
            return bad("every unary row needs one entry per label".into());
        }
        let mut flat = Vec::with_capacity(n * label_count);
        for row in &unary {
            flat.extend_from_slice(row);
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return bad("unary energies must be finite".into());
        }
        let mut oriented = Vec::with_capacity(edges.len());
        let mut tables = Vec::with_capacity(edges.len());
        for (&(a, b), table) in edges.iter().zip(pairwise) {
            if a == b || a >= n || b >= n {
                return bad(format!("edge ({a}, {b}) is not between two distinct nodes"));
            }
            if table.len() != label_count * label_count || table.iter().any(|v| !v.is_finite()) {
                return bad(format!(
                    "edge ({a}, {b}) needs a finite {label_count}x{label_count} table"
                ));
            }
            if a < b {
                oriented.push((a, b));
                tables.push(table);
            } else {
                oriented.push((b, a));
                let l = label_count;
                tables.push((0..l * l).map(|i| table[(i % l) * l + i / l]).collect());
            }
        }
        let initial = initial.unwrap_or_else(|| vec![0; n]);
        let problem = Self {
            label_count,
            unary: flat,
            edges: oriented,
            pairwise: tables,
            initial,
        };
        problem.check_labeling(&problem.initial)?;
        Ok(problem)
    }

    pub fn node_count(&self) -> usize {
        self.unary.len() / self.label_count
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn unary(&self, node: usize, label: usize) -> f64 {
        self.unary[node * self.label_count + label]
    }

    pub fn unary_row(&self, node: usize) -> &[f64] {
        &self.unary[node * self.label_count..(node + 1) * self.label_count]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Cost of edge `e = (a, b)` with `a` labeled `la` and `b` labeled `lb`.
    pub fn pairwise(&self, e: usize, la: usize, lb: usize) -> f64 {
        self.pairwise[e][la * self.label_count + lb]
    }

    pub fn pairwise_table(&self, e: usize) -> &[f64] {
        &self.pairwise[e]
    }

    pub fn initial_labeling(&self) -> &[usize] {
        &self.initial
    }

    fn check_labeling(&self, labels: &[usize]) -> Result<(), MrfError> {
        if labels.len() != self.node_count() {
            return Err(MrfError::WrongLength {
                expected: self.node_count(),
                got: labels.len(),
            });
        }
        if let Some((node, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= self.label_count) {
            return Err(MrfError::LabelOutOfRange {
                node,
                label,
                count: self.label_count,
            });
        }
        Ok(())
    }

    /// Sum of unaries plus each edge's pairwise cost once.
    pub fn total_energy(&self, labels: &[usize]) -> Result<f64, MrfError> {
        self.check_labeling(labels)?;
        Ok(self.energy_unchecked(labels))
    }

    pub(crate) fn energy_unchecked(&self, labels: &[usize]) -> f64 {
        let u: f64 = labels.iter().enumerate().map(|(i, &l)| self.unary(i, l)).sum();
        let p: f64 = self
            .edges
            .iter()
            .enumerate()
            .map(|(e, &(a, b))| self.pairwise(e, labels[a], labels[b]))
            .sum();
        u + p
    }
}

/// Sum of transfer residuals of `members` under `h`.
pub fn local_residual_sum(members: &[usize], h: &Homography, matches: &[Correspondence], kind: ResidualKind) -> f64 {
    members.iter().map(|&i| kind.eval_or_inf(h, &matches[i])).sum()
}

/// Residual unary: local-patch residual sum divided by the robust scale `sigma_r`.
pub fn unary_residual(
    members: &[usize],
    h: &Homography,
    matches: &[Correspondence],
    kind: ResidualKind,
    sigma_r: f64,
) -> f64 {
    local_residual_sum(members, h, matches, kind) / sigma_r
}

/// `(1 − cos)²` between two normals.
pub fn normal_disagreement(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let denom = a.norm() * b.norm();
    if !(denom > 0.0) {
        return 1.0;
    }
    let cos = (a.dot(b) / denom).clamp(-1.0, 1.0);
    (1.0 - cos).powi(2)
}

/// Normal unary in `[0, 4]`; the neutral value 1 when either normal is unknown.
pub fn unary_normal(local: &LocalNormal, patch: &PlanarPatch) -> f64 {
    match local {
        LocalNormal::Reliable(n) if patch.valid => normal_disagreement(n, &patch.normal),
        _ => 1.0,
    }
}

/// Normal term between two neighbours; neutral 1 when either is unknown.
pub fn pair_normal_term(a: &LocalNormal, b: &LocalNormal) -> f64 {
    match (a, b) {
        (LocalNormal::Reliable(x), LocalNormal::Reliable(y)) => normal_disagreement(x, y),
        _ => 1.0,
    }
}

/// Euclidean distance between the color means of two matches.
pub fn texture_term(p: &Correspondence, q: &Correspondence) -> Result<f64, MrfError> {
    match (p.color_mean, q.color_mean) {
        (Some(a), Some(b)) => Ok((a - b).norm()),
        (None, _) => Err(MrfError::MissingTexture(p.id)),
        (_, None) => Err(MrfError::MissingTexture(q.id)),
    }
}

/// Cost of labeling neighbours `p` and `q` with `labels`: zero when they
/// agree, otherwise the Potts cost plus the normal and texture terms.
pub fn pairwise_energy(
    p: &Correspondence,
    q: &Correspondence,
    labels: (usize, usize),
    normals: (&LocalNormal, &LocalNormal),
    weights: &EnergyWeights,
    contrast_sensitive: bool,
) -> Result<f64, MrfError> {
    if labels.0 == labels.1 {
        return Ok(0.0);
    }
    discontinuity_cost(p, q, normals, weights, contrast_sensitive)
}

fn discontinuity_cost(
    p: &Correspondence,
    q: &Correspondence,
    normals: (&LocalNormal, &LocalNormal),
    weights: &EnergyWeights,
    contrast_sensitive: bool,
) -> Result<f64, MrfError> {
    let nt = pair_normal_term(normals.0, normals.1);
    let tt = if weights.lambda3 > 0.0 {
        texture_term(p, q)?
    } else {
        0.0
    };
    Ok(if contrast_sensitive {
        weights.lambda1 + weights.lambda2 * (-nt).exp() + weights.lambda3 * (-tt).exp()
    } else {
        weights.lambda1 + weights.lambda2 * nt + weights.lambda3 * tt
    })
}

/// Inputs gathered by the refinement stage.
pub struct MrfInputs<'a> {
    pub matches: &'a [Correspondence],
    /// Refined patch assignment; outliers stay out of the MRF.
    pub labeling: &'a PatchLabeling,
    pub graph: &'a MatchGraph,
    /// Indexed by match.
    pub local_normals: &'a [LocalNormal],
    /// Local patch (match plus same-patch neighbours), indexed by match.
    pub local_patches: &'a [Vec<usize>],
    /// Indexed by refined patch id.
    pub patches: &'a [PlanarPatch],
}

/// A built MRF and the bookkeeping needed to map results back.
#[derive(Clone, Debug, PartialEq)]
pub struct MrfBuild {
    pub problem: MrfProblem,
    /// Match index of each node.
    pub nodes: Vec<usize>,
    /// Refined patch id of each label.
    pub labels: Vec<usize>,
    pub sigma_r: f64,
}

impl MrfBuild {
    /// Per-match patch ids for a node labeling; matches outside the MRF are outliers.
    pub fn to_patch_labels(&self, node_labels: &[usize], match_count: usize) -> Vec<Option<usize>> {
        let mut raw = vec![None; match_count];
        for (&m, &l) in self.nodes.iter().zip(node_labels) {
            raw[m] = Some(self.labels[l]);
        }
        raw
    }
}

pub fn build_mrf(inputs: &MrfInputs<'_>, cfg: &MrfConfig) -> Result<MrfBuild, MrfError> {
    cfg.weights.validate()?;
    cfg.texture.validate()?;
    let labels: Vec<usize> = inputs
        .patches
        .iter()
        .filter(|p| p.valid && p.homography.is_some())
        .map(|p| p.id)
        .collect();
    if labels.is_empty() {
        return Err(MrfError::NoValidPatches);
    }
    let nodes: Vec<usize> = (0..inputs.matches.len())
        .filter(|&i| inputs.labeling.label(i).is_some())
        .collect();
    let mut node_of = vec![usize::MAX; inputs.matches.len()];
    for (k, &m) in nodes.iter().enumerate() {
        node_of[m] = k;
    }
    let patch_by_id = |id: usize| {
        inputs
            .patches
            .iter()
            .find(|p| p.id == id)
            .expect("label refers to a patch")
    };
    let label_patches: Vec<&PlanarPatch> = labels.iter().map(|&id| patch_by_id(id)).collect();

    let residual_sums: Vec<Vec<f64>> = nodes
        .par_iter()
        .map(|&m| {
            label_patches
                .iter()
                .map(|p| {
                    local_residual_sum(
                        &inputs.local_patches[m],
                        p.homography.as_ref().expect("valid patches carry a homography"),
                        inputs.matches,
                        cfg.residual,
                    )
                })
                .collect()
        })
        .collect();

    let own: Vec<f64> = nodes
        .iter()
        .zip(&residual_sums)
        .filter_map(|(&m, sums)| {
            let pid = inputs.labeling.label(m)?;
            labels.iter().position(|&l| l == pid).map(|li| sums[li])
        })
        .filter(|v| v.is_finite())
        .collect();
    let sigma_r = crate::multistructure::noise_scale(&own).max(1e-6);

    let unary: Vec<Vec<f64>> = nodes
        .iter()
        .zip(&residual_sums)
        .map(|(&m, sums)| {
            sums.iter()
                .zip(&label_patches)
                .map(|(s, p)| {
                    // Non-finite residuals (points mapped to infinity) are capped to stay solvable.
                    let r = if s.is_finite() { s / sigma_r } else { 1e12 };
                    r.min(1e12) + unary_normal(&inputs.local_normals[m], p)
                })
                .collect()
        })
        .collect();

    let l = labels.len();
    let mut edges = Vec::new();
    let mut tables = Vec::new();
    for &(a, b) in inputs.graph.edges() {
        let (na, nb) = (node_of[a], node_of[b]);
        if na == usize::MAX || nb == usize::MAX {
            continue;
        }
        let cost = discontinuity_cost(
            &inputs.matches[a],
            &inputs.matches[b],
            (&inputs.local_normals[a], &inputs.local_normals[b]),
            &cfg.weights,
            cfg.contrast_sensitive,
        )?;
        edges.push((na, nb));
        tables.push((0..l * l).map(|i| if i / l == i % l { 0.0 } else { cost }).collect());
    }

    let initial: Vec<usize> = nodes
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let pid = inputs.labeling.label(m).expect("nodes are inliers");
            labels.iter().position(|&x| x == pid).unwrap_or_else(|| {
                let row = &unary[k];
                (0..l).min_by(|&x, &y| row[x].total_cmp(&row[y])).unwrap_or(0)
            })
        })
        .collect();

    let problem = MrfProblem::new(l, unary, edges, tables, Some(initial))?;
    Ok(MrfBuild {
        problem,
        nodes,
        labels,
        sigma_r,
    })
}
