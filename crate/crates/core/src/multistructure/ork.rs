//! Ordered residues and the ordered residual kernel.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MultiStructureError;
use crate::geometry::{Correspondence, Homography, ResidualKind};

/// Per-match hypothesis orderings by ascending transfer residual.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderedResidues {
    /// `order[i]` is a permutation of `0..m`; `order[i][0]` fits match `i` best.
    pub order: Vec<Vec<u32>>,
    /// Residuals aligned with `order`, nondecreasing along each row.
    pub residuals: Vec<Vec<f64>>,
}

impl OrderedResidues {
    pub fn hypothesis_count(&self) -> usize {
        self.order.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Smallest residual of each match over all hypotheses.
    pub fn best_residuals(&self) -> Vec<f64> {
        self.residuals.iter().map(|r| r[0]).collect()
    }

    /// Rows restricted to `indices`.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            order: indices.iter().map(|&i| self.order[i].clone()).collect(),
            residuals: indices.iter().map(|&i| self.residuals[i].clone()).collect(),
        }
    }
}

/// Sorts hypotheses per match by residual; ties keep ascending hypothesis index.
pub fn ordered_residues(
    matches: &[Correspondence],
    hypotheses: &[Homography],
    kind: ResidualKind,
) -> Result<OrderedResidues, MultiStructureError> {
    if hypotheses.is_empty() {
        return Err(MultiStructureError::NoHypotheses);
    }
    let rows: Vec<(Vec<u32>, Vec<f64>)> = matches
        .par_iter()
        .map(|c| {
            let res: Vec<f64> = hypotheses.iter().map(|h| kind.eval_or_inf(h, c)).collect();
            let mut order: Vec<u32> = (0..hypotheses.len() as u32).collect();
            // Stable sort keeps index order among equal residuals.
            order.sort_by(|&a, &b| res[a as usize].total_cmp(&res[b as usize]));
            let sorted = order.iter().map(|&j| res[j as usize]).collect();
            (order, sorted)
        })
        .collect();
    let (order, residuals) = rows.into_iter().unzip();
    Ok(OrderedResidues { order, residuals })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrkConfig {
    /// Step size `h`; `None` selects `max(1, M / 20)`.
    pub step: Option<usize>,
    pub residual: ResidualKind,
}

impl Default for OrkConfig {
    fn default() -> Self {
        Self {
            step: None,
            residual: ResidualKind::OneWay,
        }
    }
}

impl OrkConfig {
    pub fn schedule(&self, m: usize) -> OrkSchedule {
        OrkSchedule::harmonic(m, self.step.unwrap_or((m / 20).max(1)))
    }
}

/// Resolved kernel parameters for `m` hypotheses.
///
/// When `h` does not divide `m`, the orderings are padded with hypotheses
/// that rank last (in index order) for every match, giving `m_padded`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrkSchedule {
    pub h: usize,
    pub m: usize,
    pub m_padded: usize,
    /// Weights `z_1..z_T`, stored zero-based.
    pub z: Vec<f64>,
    /// `Σ z_t`.
    pub big_z: f64,
}

impl OrkSchedule {
    /// Harmonic weights `z_t = 1/t`.
    pub fn harmonic(m: usize, h: usize) -> Self {
        let h = h.max(1);
        let steps = m.div_ceil(h);
        let z: Vec<f64> = (1..=steps).map(|t| 1.0 / t as f64).collect();
        Self::with_weights(m, h, z)
    }

    pub fn with_weights(m: usize, h: usize, z: Vec<f64>) -> Self {
        let steps = m.div_ceil(h);
        assert_eq!(z.len(), steps, "one weight per step");
        assert!(z.iter().all(|&w| w > 0.0), "weights must be positive");
        let big_z = z.iter().sum();
        Self {
            h,
            m,
            m_padded: steps * h,
            z,
            big_z,
        }
    }

    pub fn steps(&self) -> usize {
        self.z.len()
    }

    /// Cut point `α_t = t·h`.
    pub fn alpha(&self, t: usize) -> usize {
        t * self.h
    }

    fn padded_row(&self, row: &[u32]) -> Vec<u32> {
        let mut out = row.to_vec();
        out.extend(self.m as u32..self.m_padded as u32);
        out
    }
}

fn prefix_intersection(a: &[u32], b: &[u32], len: usize, universe: usize) -> usize {
    let mut seen = vec![false; universe];
    for &x in &a[..len] {
        seen[x as usize] = true;
    }
    b[..len].iter().filter(|&&x| seen[x as usize]).count()
}

/// Difference of intersection kernel at step `t` (1-based).
pub fn doik(a: &[u32], b: &[u32], t: usize, schedule: &OrkSchedule) -> f64 {
    assert!(t >= 1 && t <= schedule.steps(), "step out of range");
    let (a, b) = (schedule.padded_row(a), schedule.padded_row(b));
    let now = prefix_intersection(&a, &b, schedule.alpha(t), schedule.m_padded);
    let before = prefix_intersection(&a, &b, schedule.alpha(t - 1), schedule.m_padded);
    (now - before) as f64 / schedule.h as f64
}

/// Ordered residual kernel between two hypothesis orderings.
pub fn ork_kernel(a: &[u32], b: &[u32], schedule: &OrkSchedule) -> f64 {
    let (a, b) = (schedule.padded_row(a), schedule.padded_row(b));
    let mut seen_a = vec![false; schedule.m_padded];
    let mut seen_b = vec![false; schedule.m_padded];
    let mut shared = 0usize;
    let mut acc = 0.0;
    for t in 1..=schedule.steps() {
        let before = shared;
        for pos in schedule.alpha(t - 1)..schedule.alpha(t) {
            let (x, y) = (a[pos] as usize, b[pos] as usize);
            seen_a[x] = true;
            if seen_b[x] {
                shared += 1;
            }
            seen_b[y] = true;
            if seen_a[y] {
                shared += 1;
            }
        }
        acc += schedule.z[t - 1] * ((shared - before) as f64 / schedule.h as f64);
    }
    acc / schedule.big_z
}

/// The `n×n` ORK matrix of the given orderings.
///
/// A hypothesis enters the shared prefix of two matches at step
/// `⌊max(rank_a, rank_b) / h⌋ + 1`, so each entry reduces to a histogram of
/// per-hypothesis step indices.
pub fn kernel_matrix(ordered: &OrderedResidues, schedule: &OrkSchedule) -> DMatrix<f64> {
    let n = ordered.len();
    let steps = schedule.steps();
    let buckets: Vec<Vec<u16>> = ordered
        .order
        .par_iter()
        .map(|row| {
            let padded = schedule.padded_row(row);
            let mut bucket = vec![0u16; schedule.m_padded];
            for (rank, &hyp) in padded.iter().enumerate() {
                bucket[hyp as usize] = (rank / schedule.h) as u16;
            }
            bucket
        })
        .collect();

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut counts = vec![0u32; steps];
            let mut row = vec![0.0; n];
            for j in i..n {
                counts.iter_mut().for_each(|c| *c = 0);
                for (&bi, &bj) in buckets[i].iter().zip(&buckets[j]) {
                    counts[bi.max(bj) as usize] += 1;
                }
                let mut acc = 0.0;
                for (t, &c) in counts.iter().enumerate() {
                    acc += schedule.z[t] * (c as f64 / schedule.h as f64);
                }
                row[j] = acc / schedule.big_z;
            }
            row
        })
        .collect();

    let mut k = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for j in i..n {
            k[(i, j)] = row[j];
            k[(j, i)] = row[j];
        }
    }
    k
}
