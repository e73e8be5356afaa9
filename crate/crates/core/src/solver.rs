//! Sequential tree-reweighted message passing and an exhaustive reference
//! minimizer for small problems.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mrf::{MrfError, MrfProblem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Mrf(#[from] MrfError),
    #[error("exhaustive search over {labelings:.3e} labelings exceeds the limit of {limit:.0e}")]
    TooLarge { labelings: f64, limit: f64 },
    #[error("invalid solver settings: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrwsConfig {
    pub max_iters: usize,
    /// Relative change of the lower bound below which iteration stops.
    pub tol: f64,
}

impl Default for TrwsConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

impl TrwsConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.max_iters == 0 {
            return Err(SolverError::InvalidConfig("max_iters must be >= 1"));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(SolverError::InvalidConfig("tol must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveReport {
    /// Lowest-energy labeling seen, the initial one included.
    pub labels: Vec<usize>,
    pub energy: f64,
    pub lower_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best energy after each iteration, starting with the initial labeling.
    pub energy_history: Vec<f64>,
    /// Lower bound after each iteration.
    pub bound_history: Vec<f64>,
}

/// Monotonic chains covering every edge once, in node order.
struct Chains {
    /// Per chain: nodes and the edges joining consecutive nodes.
    chains: Vec<(Vec<usize>, Vec<usize>)>,
    /// Number of chains through each node.
    multiplicity: Vec<usize>,
}

fn build_chains(problem: &MrfProblem) -> Chains {
    let n = problem.node_count();
    let mut ins: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut outs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, &(a, b)) in problem.edges().iter().enumerate() {
        outs[a].push(e);
        ins[b].push(e);
    }
    let multiplicity: Vec<usize> = (0..n).map(|s| ins[s].len().max(outs[s].len()).max(1)).collect();
    // An edge entering s continues along the out-edge with the same rank.
    let mut next: Vec<Option<usize>> = vec![None; problem.edges().len()];
    for s in 0..n {
        for (&i, &o) in ins[s].iter().zip(&outs[s]) {
            next[i] = Some(o);
        }
    }
    let mut chains = Vec::new();
    for s in 0..n {
        if ins[s].is_empty() && outs[s].is_empty() {
            chains.push((vec![s], Vec::new()));
        }
        for &start in outs[s].iter().skip(ins[s].len()) {
            let (mut nodes, mut edges) = (vec![s], Vec::new());
            let mut cur = Some(start);
            while let Some(e) = cur {
                edges.push(e);
                nodes.push(problem.edges()[e].1);
                cur = next[e];
            }
            chains.push((nodes, edges));
        }
    }
    Chains { chains, multiplicity }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

fn normalize(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::INFINITY, f64::min);
    v.iter_mut().for_each(|x| *x -= m);
}

struct Messages {
    /// `a → b`, a function of the label of `b`.
    fwd: Vec<Vec<f64>>,
    /// `b → a`, a function of the label of `a`.
    bwd: Vec<Vec<f64>>,
}

/// Incident edges of each node as `(edge, node is the smaller endpoint)`.
fn incidence(problem: &MrfProblem) -> Vec<Vec<(usize, bool)>> {
    let mut inc = vec![Vec::new(); problem.node_count()];
    for (e, &(a, b)) in problem.edges().iter().enumerate() {
        inc[a].push((e, true));
        inc[b].push((e, false));
    }
    inc
}

fn reparameterized_unary(problem: &MrfProblem, msgs: &Messages, inc: &[(usize, bool)], s: usize, out: &mut [f64]) {
    out.copy_from_slice(problem.unary_row(s));
    for &(e, is_a) in inc {
        let m = if is_a { &msgs.bwd[e] } else { &msgs.fwd[e] };
        out.iter_mut().zip(m).for_each(|(o, x)| *o += x);
    }
}

fn lower_bound(problem: &MrfProblem, msgs: &Messages, inc: &[Vec<(usize, bool)>], chains: &Chains) -> f64 {
    let l = problem.label_count();
    let scaled: Vec<Vec<f64>> = (0..problem.node_count())
        .map(|s| {
            let mut th = vec![0.0; l];
            reparameterized_unary(problem, msgs, &inc[s], s, &mut th);
            let k = chains.multiplicity[s] as f64;
            th.iter_mut().for_each(|x| *x /= k);
            th
        })
        .collect();
    let mut total = 0.0;
    let mut next = vec![0.0; l];
    for (nodes, edges) in &chains.chains {
        let mut cost = scaled[nodes[0]].clone();
        for (&e, &v) in edges.iter().zip(&nodes[1..]) {
            let table = problem.pairwise_table(e);
            for xb in 0..l {
                let mut best = f64::INFINITY;
                for xa in 0..l {
                    let c = cost[xa] + table[xa * l + xb] - msgs.bwd[e][xa];
                    best = best.min(c);
                }
                next[xb] = best - msgs.fwd[e][xb] + scaled[v][xb];
            }
            cost.copy_from_slice(&next);
        }
        total += cost.iter().copied().fold(f64::INFINITY, f64::min);
    }
    total
}

/// Minimizes the energy with TRW-S in node-index order.
///
/// Each iteration runs a forward pass that also decodes a labeling, then a
/// backward pass, then evaluates the lower bound of the current
/// reparameterization on a fixed monotonic-chain decomposition.
pub fn trws_solve(problem: &MrfProblem, cfg: &TrwsConfig) -> Result<SolveReport, SolverError> {
    cfg.validate()?;
    let n = problem.node_count();
    let l = problem.label_count();
    let inc = incidence(problem);
    let chains = build_chains(problem);
    let gamma: Vec<f64> = chains.multiplicity.iter().map(|&k| 1.0 / k as f64).collect();
    let m = problem.edges().len();
    let mut msgs = Messages {
        fwd: vec![vec![0.0; l]; m],
        bwd: vec![vec![0.0; l]; m],
    };

    let mut best_labels = problem.initial_labeling().to_vec();
    let mut best_energy = problem.total_energy(&best_labels)?;
    let mut energy_history = vec![best_energy];
    let mut bound_history = Vec::new();
    let mut labels = vec![0usize; n];
    let mut theta = vec![0.0; l];
    let mut decode = vec![0.0; l];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        iterations += 1;
        for s in 0..n {
            reparameterized_unary(problem, &msgs, &inc[s], s, &mut theta);
            decode.copy_from_slice(problem.unary_row(s));
            for &(e, is_a) in &inc[s] {
                if is_a {
                    decode.iter_mut().zip(&msgs.bwd[e]).for_each(|(d, x)| *d += x);
                } else {
                    let xa = labels[problem.edges()[e].0];
                    let table = problem.pairwise_table(e);
                    decode
                        .iter_mut()
                        .enumerate()
                        .for_each(|(xb, d)| *d += table[xa * l + xb]);
                }
            }
            labels[s] = argmin(&decode);
            for &(e, is_a) in &inc[s] {
                if !is_a {
                    continue;
                }
                let table = problem.pairwise_table(e);
                let mut out = vec![f64::INFINITY; l];
                for xa in 0..l {
                    let base = gamma[s] * theta[xa] - msgs.bwd[e][xa];
                    for (xb, o) in out.iter_mut().enumerate() {
                        *o = o.min(base + table[xa * l + xb]);
                    }
                }
                normalize(&mut out);
                msgs.fwd[e] = out;
            }
        }
        for s in (0..n).rev() {
            reparameterized_unary(problem, &msgs, &inc[s], s, &mut theta);
            for &(e, is_a) in &inc[s] {
                if is_a {
                    continue;
                }
                let table = problem.pairwise_table(e);
                let mut out = vec![f64::INFINITY; l];
                for xb in 0..l {
                    let base = gamma[s] * theta[xb] - msgs.fwd[e][xb];
                    for (xa, o) in out.iter_mut().enumerate() {
                        *o = o.min(base + table[xa * l + xb]);
                    }
                }
                normalize(&mut out);
                msgs.bwd[e] = out;
            }
        }

        let energy = problem.energy_unchecked(&labels);
        if energy < best_energy {
            best_energy = energy;
            best_labels.copy_from_slice(&labels);
        }
        energy_history.push(best_energy);
        let bound = lower_bound(problem, &msgs, &inc, &chains);
        let prev = bound_history.last().copied();
        bound_history.push(bound);

        let scale = best_energy.abs().max(1.0);
        if best_energy - bound <= 1e-9 * scale {
            converged = true;
            break;
        }
        if let Some(p) = prev {
            if (bound - p).abs() <= cfg.tol * bound.abs().max(1.0) {
                converged = true;
                break;
            }
        }
    }

    let lower_bound = bound_history.last().copied().unwrap_or(f64::NEG_INFINITY);
    Ok(SolveReport {
        labels: best_labels,
        energy: best_energy,
        lower_bound,
        iterations,
        converged,
        energy_history,
        bound_history,
    })
}

/// Largest search space [`brute_force_map`] accepts.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Exact minimizer by exhaustive enumeration. Ties go to the
/// lexicographically smallest labeling.
pub fn brute_force_map(problem: &MrfProblem) -> Result<(Vec<usize>, f64), SolverError> {
    let n = problem.node_count();
    let l = problem.label_count();
    let labelings = (l as f64).powi(n as i32);
    if labelings > BRUTE_FORCE_LIMIT {
        return Err(SolverError::TooLarge {
            labelings,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    // Edges charged when their later endpoint is assigned.
    let mut closing: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, &(_, b)) in problem.edges().iter().enumerate() {
        closing[b].push(e);
    }
    let mut labels = vec![0usize; n];
    let mut best = (Vec::new(), f64::INFINITY);
    let mut partial = vec![0.0; n + 1];
    let mut depth = 0usize;
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // Iterative depth-first enumeration in lexicographic order.
    loop {
        let s = depth;
        let mut cost = partial[s] + problem.unary(s, labels[s]);
        for &e in &closing[s] {
            let a = problem.edges()[e].0;
            cost += problem.pairwise(e, labels[a], labels[s]);
        }
        partial[s + 1] = cost;
        if s + 1 < n {
            depth += 1;
            labels[depth] = 0;
            continue;
        }
        if cost < best.1 {
            best = (labels.clone(), cost);
        }
        // Advance to the next labeling.
        loop {
            labels[depth] += 1;
            if labels[depth] < l {
                break;
            }
            if depth == 0 {
                let energy = problem.energy_unchecked(&best.0);
                return Ok((best.0, energy));
            }
            depth -= 1;
        }
    }
}

/// Greedy label-merge moves: repeatedly relabels every node of one label
/// with another label when that lowers the energy, taking the best move
/// each round. Returns the number of merges applied.
///
/// Message passing decodes nearly interchangeable labels (two models of the
/// same surface) into adjacent regions, and no single-node change can
/// remove the seam between them; a whole-label move can.
pub fn merge_labels(problem: &MrfProblem, labels: &mut [usize]) -> Result<usize, MrfError> {
    let mut energy = problem.total_energy(labels)?;
    let mut merges = 0;
    loop {
        let mut used: Vec<usize> = labels.to_vec();
        used.sort_unstable();
        used.dedup();
        let mut best: Option<(f64, usize, usize)> = None;
        let mut trial = labels.to_vec();
        for &from in &used {
            for &to in &used {
                if from == to {
                    continue;
                }
                for (t, &l) in trial.iter_mut().zip(labels.iter()) {
                    *t = if l == from { to } else { l };
                }
                let e = problem.energy_unchecked(&trial);
                if e < energy && best.is_none_or(|b| e < b.0) {
                    best = Some((e, from, to));
                }
            }
        }
        let Some((e, from, to)) = best else {
            return Ok(merges);
        };
        labels.iter_mut().filter(|l| **l == from).for_each(|l| *l = to);
        energy = e;
        merges += 1;
    }
}
