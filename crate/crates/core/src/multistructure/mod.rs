//! Multi-structure detection: ordered residual kernels with spectral
//! clustering for the initial planar patches, plus the J-Linkage, Fouhey and
//! residue-merging baselines.

mod jlinkage;
mod merge;
mod ork;
mod spectral;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use jlinkage::{
    fouhey_distance, jaccard_distance, jlinkage_cluster, preference_sets, JLinkageConfig, PreferenceSet,
};
pub use merge::{residue_merge_baseline, second_min_residue_table, ResidueTable};
pub use ork::{doik, kernel_matrix, ordered_residues, ork_kernel, OrderedResidues, OrkConfig, OrkSchedule};
pub use spectral::{held_out_best_residuals, initial_patches, noise_scale, ClusterConfig, InitialPatches};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MultiStructureError {
    #[error("at least one hypothesis is required")]
    NoHypotheses,
    #[error("eigen-decomposition did not converge")]
    EmbeddingFailed,
    #[error("need at least {required} patches, got {got}")]
    TooFewPatches { required: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Assignment of every correspondence (by position) to a patch or to outliers.
///
/// Patch ids are contiguous `0..patch_count`; `None` is the outlier sentinel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchLabeling {
    labels: Vec<Option<usize>>,
    patch_count: usize,
}

impl PatchLabeling {
    /// Builds a labeling from arbitrary patch ids, compacting them to
    /// `0..n` in ascending order of the original ids.
    pub fn from_raw(raw: &[Option<usize>]) -> Self {
        let mut remap = BTreeMap::new();
        for id in raw.iter().flatten() {
            remap.insert(*id, 0);
        }
        for (next, slot) in remap.values_mut().enumerate() {
            *slot = next;
        }
        Self {
            labels: raw.iter().map(|l| l.map(|id| remap[&id])).collect(),
            patch_count: remap.len(),
        }
    }

    /// Like [`PatchLabeling::from_raw`] but numbering patches by first appearance.
    pub fn from_raw_in_order(raw: &[Option<usize>]) -> Self {
        let mut remap = BTreeMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                l.map(|id| {
                    let next = remap.len();
                    *remap.entry(id).or_insert(next)
                })
            })
            .collect();
        Self {
            labels,
            patch_count: remap.len(),
        }
    }

    pub fn all_outliers(n: usize) -> Self {
        Self {
            labels: vec![None; n],
            patch_count: 0,
        }
    }

    pub fn single_patch(n: usize) -> Self {
        Self::from_raw(&vec![Some(0); n])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn patch_count(&self) -> usize {
        self.patch_count
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn outlier_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Member indices of each patch, in ascending index order.
    pub fn patches(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.patch_count];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(p) = l {
                out[*p].push(i);
            }
        }
        out
    }

    /// Marks patches with fewer than `min_size` members as outliers and compacts ids.
    pub fn drop_small(&self, min_size: usize) -> Self {
        let sizes: Vec<usize> = self.patches().iter().map(Vec::len).collect();
        let raw: Vec<Option<usize>> = self
            .labels
            .iter()
            .map(|l| l.filter(|&p| sizes[p] >= min_size))
            .collect();
        Self::from_raw(&raw)
    }

    pub fn is_valid(&self) -> bool {
        let patches = self.patches();
        self.labels.iter().flatten().all(|&l| l < self.patch_count) && patches.iter().all(|p| !p.is_empty())
    }
}
