//! Residue-based patch merging and the second-minimum residue table.

use nalgebra::DMatrix;

use super::{MultiStructureError, PatchLabeling};
use crate::geometry::{fit_homography, Correspondence, Homography, ResidualKind};

fn fit_members(members: &[usize], matches: &[Correspondence]) -> Result<Homography, MultiStructureError> {
    Ok(fit_homography(
        members.iter().map(|&i| (&matches[i].x, &matches[i].x_prime)),
    )?)
}

fn summed_residual(h: &Homography, members: &[usize], matches: &[Correspondence]) -> f64 {
    members
        .iter()
        .map(|&i| ResidualKind::OneWay.eval_or_inf(h, &matches[i]))
        .sum()
}

/// Summed residual of the homography refit to the union of two patches.
fn merged_cost(a: &[usize], b: &[usize], matches: &[Correspondence]) -> f64 {
    let union: Vec<usize> = a.iter().chain(b).copied().collect();
    match fit_members(&union, matches) {
        Ok(h) => summed_residual(&h, &union, matches),
        Err(_) => f64::INFINITY,
    }
}

/// Greedy best-first merging: while the cheapest pair's post-merge summed
/// residual is below `threshold`, merge it and refit.
///
/// Ties go to the lexicographically smallest patch pair. The merged patch
/// keeps the smaller id.
pub fn residue_merge_baseline(patches: &PatchLabeling, matches: &[Correspondence], threshold: f64) -> PatchLabeling {
    let mut groups: Vec<Option<Vec<usize>>> = patches.patches().into_iter().map(Some).collect();
    let n = groups.len();
    let mut cost = vec![vec![f64::INFINITY; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            cost[a][b] = merged_cost(groups[a].as_ref().unwrap(), groups[b].as_ref().unwrap(), matches);
        }
    }
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            for b in a + 1..n {
                if groups[a].is_some() && groups[b].is_some() && best.is_none_or(|(c, _, _)| cost[a][b] < c) {
                    best = Some((cost[a][b], a, b));
                }
            }
        }
        let Some((c, a, b)) = best else { break };
        if !(c < threshold) {
            break;
        }
        let moved = groups[b].take().unwrap();
        groups[a].as_mut().unwrap().extend(moved);
        groups[a].as_mut().unwrap().sort_unstable();
        for other in 0..n {
            if other != a && groups[other].is_some() {
                let (lo, hi) = (a.min(other), a.max(other));
                cost[lo][hi] = merged_cost(groups[lo].as_ref().unwrap(), groups[hi].as_ref().unwrap(), matches);
            }
        }
    }
    let mut raw = vec![None; patches.len()];
    for (id, group) in groups.iter().enumerate() {
        for &i in group.iter().flatten() {
            raw[i] = Some(id);
        }
    }
    PatchLabeling::from_raw(&raw)
}

/// Mean residual of each patch homography (rows) on each patch's members (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct ResidueTable {
    pub values: DMatrix<f64>,
    /// Row holding the smallest value of each column.
    pub first_min: Vec<usize>,
    /// Row holding the second smallest value of each column.
    pub second_min: Vec<usize>,
}

impl ResidueTable {
    /// True when, for every column, the marked rows belong to the same group
    /// as the column under `group_of`.
    pub fn minima_within_groups(&self, group_of: &[usize]) -> (bool, bool) {
        let check = |marks: &[usize]| marks.iter().enumerate().all(|(c, &r)| group_of[r] == group_of[c]);
        (check(&self.first_min), check(&self.second_min))
    }
}

pub fn second_min_residue_table(
    patches: &PatchLabeling,
    matches: &[Correspondence],
) -> Result<ResidueTable, MultiStructureError> {
    let groups = patches.patches();
    if groups.len() < 2 {
        return Err(MultiStructureError::TooFewPatches {
            required: 2,
            got: groups.len(),
        });
    }
    let homographies = groups
        .iter()
        .map(|g| fit_members(g, matches))
        .collect::<Result<Vec<_>, _>>()?;
    let n = groups.len();
    let values = DMatrix::from_fn(n, n, |r, c| {
        summed_residual(&homographies[r], &groups[c], matches) / groups[c].len() as f64
    });
    let mut first_min = Vec::with_capacity(n);
    let mut second_min = Vec::with_capacity(n);
    for c in 0..n {
        let mut rows: Vec<usize> = (0..n).collect();
        rows.sort_by(|&a, &b| values[(a, c)].total_cmp(&values[(b, c)]).then(a.cmp(&b)));
        first_min.push(rows[0]);
        second_min.push(rows[1]);
    }
    Ok(ResidueTable {
        values,
        first_min,
        second_min,
    })
}
