//! J-Linkage preference-set clustering and the Fouhey merge distance.

use serde::{Deserialize, Serialize};

use super::spectral::noise_scale;
use super::{MultiStructureError, PatchLabeling};
use crate::geometry::{fit_homography, Correspondence, GeometryError, Homography, ResidualKind};

/// Set of hypothesis indices stored as a bitset.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PreferenceSet {
    bits: Vec<u64>,
}

impl PreferenceSet {
    pub fn empty(universe: usize) -> Self {
        Self {
            bits: vec![0; universe.div_ceil(64)],
        }
    }

    pub fn from_indices(universe: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(universe);
        for i in indices {
            s.insert(i);
        }
        s
    }

    pub fn insert(&mut self, i: usize) {
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits.get(i / 64).is_some_and(|w| w & (1 << (i % 64)) != 0)
    }

    pub fn len(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn intersection(&self, other: &Self) -> Self {
        Self {
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| a & b).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .flat_map(|(w, &word)| (0..64).filter(move |b| word & (1 << b) != 0).map(move |b| w * 64 + b))
    }
}

/// `(|x ∪ y| − |x ∩ y|) / |x ∪ y|`; two empty sets are at distance 1.
pub fn jaccard_distance(x: &PreferenceSet, y: &PreferenceSet) -> f64 {
    let (mut union, mut inter) = (0u32, 0u32);
    for (a, b) in x.bits.iter().zip(&y.bits) {
        union += (a | b).count_ones();
        inter += (a & b).count_ones();
    }
    if union == 0 {
        1.0
    } else {
        (union - inter) as f64 / union as f64
    }
}

/// Preference set of every match: hypotheses with residual `≤ epsilon`.
pub fn preference_sets(
    matches: &[Correspondence],
    hypotheses: &[Homography],
    epsilon: f64,
    kind: ResidualKind,
) -> Vec<PreferenceSet> {
    matches
        .iter()
        .map(|c| {
            PreferenceSet::from_indices(
                hypotheses.len(),
                (0..hypotheses.len()).filter(|&j| kind.eval_or_inf(&hypotheses[j], c) <= epsilon),
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JLinkageConfig {
    /// Inlier threshold in pixels; `None` uses `3 ×` the robust scale of best residuals.
    pub epsilon: Option<f64>,
    pub epsilon_floor: f64,
    pub min_cluster_size: usize,
    pub residual: ResidualKind,
}

impl Default for JLinkageConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            epsilon_floor: 2.0,
            min_cluster_size: 10,
            residual: ResidualKind::OneWay,
        }
    }
}

impl JLinkageConfig {
    pub fn resolve_epsilon(&self, matches: &[Correspondence], hypotheses: &[Homography]) -> f64 {
        self.epsilon.unwrap_or_else(|| {
            let best: Vec<f64> = matches
                .iter()
                .map(|c| {
                    hypotheses
                        .iter()
                        .map(|h| self.residual.eval_or_inf(h, c))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            (3.0 * noise_scale(&best)).max(self.epsilon_floor)
        })
    }
}

/// Agglomerative J-Linkage clustering.
///
/// Repeatedly merges the pair of clusters whose preference sets (the
/// intersection over members) have the smallest Jaccard distance, lowest
/// index pair first on ties, until every remaining pair is at distance 1.
pub fn jlinkage_cluster(
    matches: &[Correspondence],
    hypotheses: &[Homography],
    cfg: &JLinkageConfig,
) -> Result<PatchLabeling, MultiStructureError> {
    if hypotheses.is_empty() {
        return Err(MultiStructureError::NoHypotheses);
    }
    let eps = cfg.resolve_epsilon(matches, hypotheses);
    let prefs = preference_sets(matches, hypotheses, eps, cfg.residual);
    let assignment = agglomerate(prefs);
    let raw: Vec<Option<usize>> = assignment.into_iter().map(Some).collect();
    Ok(PatchLabeling::from_raw_in_order(&raw).drop_small(cfg.min_cluster_size))
}

/// Returns the final cluster representative of every input set.
fn agglomerate(mut prefs: Vec<PreferenceSet>) -> Vec<usize> {
    let n = prefs.len();
    let mut alive = vec![true; n];
    let mut parent: Vec<usize> = (0..n).collect();
    // Cached nearest partner with a larger index for every live cluster.
    let nearest_of = |i: usize, prefs: &[PreferenceSet], alive: &[bool]| -> (f64, usize) {
        (i + 1..n)
            .filter(|&j| alive[j])
            .map(|j| (jaccard_distance(&prefs[i], &prefs[j]), j))
            .fold(
                (f64::INFINITY, usize::MAX),
                |best, cur| if cur.0 < best.0 { cur } else { best },
            )
    };
    let mut nearest: Vec<(f64, usize)> = (0..n).map(|i| nearest_of(i, &prefs, &alive)).collect();

    loop {
        let Some((a, (d, b))) = (0..n).filter(|&i| alive[i]).map(|i| (i, nearest[i])).fold(
            None,
            |best: Option<(usize, (f64, usize))>, cur| match best {
                Some(bst) if bst.1 .0 <= cur.1 .0 => Some(bst),
                _ => Some(cur),
            },
        ) else {
            break;
        };
        if !(d < 1.0) {
            break;
        }
        prefs[a] = prefs[a].intersection(&prefs[b]);
        alive[b] = false;
        parent[b] = a;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            if i == a || nearest[i].1 == a || nearest[i].1 == b {
                nearest[i] = nearest_of(i, &prefs, &alive);
            } else if i < a {
                let da = jaccard_distance(&prefs[i], &prefs[a]);
                if da < nearest[i].0 || (da == nearest[i].0 && a < nearest[i].1) {
                    nearest[i] = (da, a);
                }
            }
        }
    }

    (0..n)
        .map(|mut i| {
            while parent[i] != i {
                i = parent[i];
            }
            i
        })
        .collect()
}

/// Mean transfer residual of the homography fit to `x ∪ y`, over `x ∪ y`.
pub fn fouhey_distance(x: &[usize], y: &[usize], matches: &[Correspondence]) -> Result<f64, GeometryError> {
    let mut union: Vec<usize> = x.iter().chain(y).copied().collect();
    union.sort_unstable();
    union.dedup();
    let h = fit_homography(union.iter().map(|&i| (&matches[i].x, &matches[i].x_prime)))?;
    let total: f64 = union
        .iter()
        .map(|&i| ResidualKind::OneWay.eval_or_inf(&h, &matches[i]))
        .sum();
    Ok(total / union.len() as f64)
}
