//! Evaluation against ground truth: classification error under the best
//! label assignment, plane counts, and the PS/AD overlap matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

/// Maximum-weight assignment on a rectangular profit matrix.
/// Returns, for every row, the matched column (if any).
pub fn max_weight_assignment(profit: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = profit.len();
    let cols = profit.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let n = rows.max(cols);
    let max = profit.iter().flatten().copied().fold(0.0, f64::max);
    // Square cost matrix; padding cells cost as much as a zero-profit pair.
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            max - profit[i][j]
        } else {
            max
        }
    };
    // Shortest augmenting path with potentials, 1-based.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

/// Distinct non-outlier labels in ascending order.
fn label_set(labels: &[Option<usize>]) -> Vec<usize> {
    let mut s: Vec<usize> = labels.iter().flatten().copied().collect();
    s.sort_unstable();
    s.dedup();
    s
}

/// Overlap counts `[predicted][truth]` over ground-truth inliers with a predicted label.
fn overlap(pred: &[Option<usize>], gt: &[Option<usize>], p: &[usize], g: &[usize]) -> Vec<Vec<usize>> {
    let pi: BTreeMap<usize, usize> = p.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let gi: BTreeMap<usize, usize> = g.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut c = vec![vec![0usize; g.len()]; p.len()];
    for (a, b) in pred.iter().zip(gt) {
        if let (Some(a), Some(b)) = (a, b) {
            c[pi[a]][gi[b]] += 1;
        }
    }
    c
}

/// Percentage of ground-truth inliers whose predicted label disagrees with
/// the optimally assigned scene plane. Predicted outliers on true inliers
/// count as errors; ground-truth outliers are ignored.
///
/// # Panics
/// When the two labelings differ in length.
pub fn classification_error(pred: &[Option<usize>], gt: &[Option<usize>]) -> f64 {
    assert_eq!(pred.len(), gt.len(), "labelings must cover the same matches");
    let total = gt.iter().flatten().count();
    if total == 0 {
        return 0.0;
    }
    let (p, g) = (label_set(pred), label_set(gt));
    let counts = overlap(pred, gt, &p, &g);
    let profit: Vec<Vec<f64>> = counts.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
    let assignment = max_weight_assignment(&profit);
    let correct: usize = assignment
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| counts[i][j]))
        .sum();
    100.0 * (total - correct) as f64 / total as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub classification_error: f64,
    pub detected_planes: usize,
    pub ground_truth_planes: usize,
    /// Scene-plane labels indexing the matrix rows.
    pub scene_planes: Vec<usize>,
    /// Detected-plane labels indexing the matrix columns.
    pub detected: Vec<usize>,
    /// `ps[s][d]`: percentage of detected plane `d` lying in scene plane `s`.
    pub ps: Vec<Vec<f64>>,
    /// `ad[s][d]`: percentage of scene plane `s` covered by detected plane `d`.
    pub ad: Vec<Vec<f64>>,
}

/// PS and AD matrices (rows scene planes, columns detected planes), over
/// matches that are inliers in both labelings.
pub fn ps_ad_tables(pred: &[Option<usize>], gt: &[Option<usize>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (p, g) = (label_set(pred), label_set(gt));
    let counts = overlap(pred, gt, &p, &g);
    let col: Vec<usize> = (0..p.len()).map(|d| counts[d].iter().sum()).collect();
    let row: Vec<usize> = (0..g.len()).map(|s| counts.iter().map(|r| r[s]).sum()).collect();
    let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    let ps = (0..g.len())
        .map(|s| (0..p.len()).map(|d| pct(counts[d][s], col[d])).collect())
        .collect();
    let ad = (0..g.len())
        .map(|s| (0..p.len()).map(|d| pct(counts[d][s], row[s])).collect())
        .collect();
    (ps, ad)
}

pub fn evaluate(pred: &[Option<usize>], gt: &[Option<usize>]) -> EvalReport {
    let (ps, ad) = ps_ad_tables(pred, gt);
    let detected = label_set(pred);
    let scene_planes = label_set(gt);
    EvalReport {
        classification_error: classification_error(pred, gt),
        detected_planes: detected.len(),
        ground_truth_planes: scene_planes.len(),
        scene_planes,
        detected,
        ps,
        ad,
    }
}

/// Upper-case Roman numeral for `n ≥ 1`.
pub fn roman(mut n: usize) -> String {
    const TABLE: [(usize, &str); 13] = [
        (1000, "M"),
        (900, "CM"),
        (500, "D"),
        (400, "CD"),
        (100, "C"),
        (90, "XC"),
        (50, "L"),
        (40, "XL"),
        (10, "X"),
        (9, "IX"),
        (5, "V"),
        (4, "IV"),
        (1, "I"),
    ];
    let mut s = String::new();
    for &(v, sym) in &TABLE {
        while n >= v {
            s.push_str(sym);
            n -= v;
        }
    }
    s
}

/// Matrix with `SP i` rows and `PD j` columns, numbered from I.
pub fn render_matrix(title: &str, m: &[Vec<f64>]) -> String {
    let cols = m.first().map_or(0, Vec::len);
    let mut header = vec![title.to_string()];
    header.extend((1..=cols).map(|j| format!("PD {}", roman(j))));
    let mut rows = vec![header];
    for (i, r) in m.iter().enumerate() {
        let mut cells = vec![format!("SP {}", roman(i + 1))];
        cells.extend(r.iter().map(|v| format!("{v:.2}")));
        rows.push(cells);
    }
    let widths: Vec<usize> = (0..=cols)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(s, &w)| format!("{s:>w$}")).collect();
        let _ = writeln!(out, "{}", line.join(" | ").trim_end());
    }
    out
}

impl EvalReport {
    /// Plain-text tables: error and plane counts, then PS and AD.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "error(in %) | No of SPs detected | No of SPs");
        let _ = writeln!(
            out,
            "{:.2} | {} | {}",
            self.classification_error, self.detected_planes, self.ground_truth_planes
        );
        out.push('\n');
        out.push_str(&render_matrix("PS", &self.ps));
        out.push('\n');
        out.push_str(&render_matrix("AD", &self.ad));
        out
    }
}
