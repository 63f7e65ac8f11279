//! Comparison methods: Two Step (convex clustering of leaf explanations with
//! per-cluster medians) and SP-LIME greedy coverage selection.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{MameError, Result};
use crate::graph::PriorGraph;
use crate::solver::{run_ar_path, FusedProblem, LeafFit, LocalQuadratic, PathOptions, PathSolution, SolverConfig, NONZERO_TOL};
use crate::tree::{build_tree, ExplanationTree};

/// Fusion path over the leaf explanations themselves.
#[derive(Debug, Clone)]
pub struct TwoStepPath {
    /// `q x n` leaf explanations used as data points.
    pub omega: Array2<f64>,
    pub path: PathSolution,
}

/// The Two Step fusion problem: each instance contributes `||omega_i - theta_i||^2`
/// and no sparsity penalty.
pub fn two_step_problem(omega: ArrayView2<'_, f64>, graph: PriorGraph) -> Result<FusedProblem> {
    let (q, n) = omega.dim();
    let quads = omega.columns().into_iter().map(LocalQuadratic::identity_target).collect();
    FusedProblem::new(quads, vec![0.0; n], vec![1.0; q], graph)
}

pub fn two_step_path(leaf: &LeafFit, graph: PriorGraph, cfg: &SolverConfig, opts: PathOptions) -> Result<TwoStepPath> {
    let problem = two_step_problem(leaf.theta0.view(), graph)?;
    let path = run_ar_path(&problem, &leaf.theta0, cfg, opts)?;
    Ok(TwoStepPath {
        omega: leaf.theta0.clone(),
        path,
    })
}

/// Coordinate-wise median of the member columns of `omega`; even counts
/// take the midpoint of the two central values.
pub fn cluster_median(omega: ArrayView2<'_, f64>, members: &[usize]) -> Result<Array1<f64>> {
    if members.is_empty() {
        return Err(MameError::invalid("median of an empty cluster"));
    }
    let mut out = Array1::zeros(omega.nrows());
    let mut buf = Vec::with_capacity(members.len());
    for (j, row) in omega.rows().into_iter().enumerate() {
        buf.clear();
        buf.extend(members.iter().map(|&m| row[m]));
        buf.sort_by(f64::total_cmp);
        let mid = buf.len() / 2;
        out[j] = if buf.len() % 2 == 1 {
            buf[mid]
        } else {
            0.5 * (buf[mid - 1] + buf[mid])
        };
    }
    Ok(out)
}

/// Tree of the Two Step path with median representatives on every node.
pub fn two_step_medians(path: &TwoStepPath) -> Result<ExplanationTree> {
    let mut tree = build_tree(&path.path.events, path.omega.ncols())?;
    for node in &mut tree.nodes {
        node.theta = Some(cluster_median(path.omega.view(), &node.members)?);
    }
    Ok(tree)
}

/// Global importance `sqrt(sum_i |theta_ij|)` per coefficient row.
pub fn feature_importance(theta: ArrayView2<'_, f64>) -> Vec<f64> {
    theta
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>().sqrt())
        .collect()
}

/// Importance pooled over several levels: `sqrt(sum_k sum_i |theta_ij^(k)|)`.
pub fn feature_importance_multilevel<'a>(levels: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Result<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    for theta in levels {
        let acc = acc.get_or_insert_with(|| vec![0.0; theta.nrows()]);
        if acc.len() != theta.nrows() {
            return Err(MameError::invalid("levels disagree on explanation width"));
        }
        for (a, row) in acc.iter_mut().zip(theta.rows()) {
            *a += row.iter().map(|v| v.abs()).sum::<f64>();
        }
    }
    let acc = acc.ok_or_else(|| MameError::invalid("no levels to score"))?;
    Ok(acc.into_iter().map(f64::sqrt).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpLimeSelection {
    /// Picked instances in pick order.
    pub chosen: Vec<usize>,
    pub importance: Vec<f64>,
    /// Coverage after each pick.
    pub coverage_trace: Vec<f64>,
}

/// Greedy maximization of `c(S) = sum_j I_j [exists i in S: theta_ij != 0]`.
/// Ties go to the lower index.
pub fn sp_lime_pick(theta: ArrayView2<'_, f64>, budget: usize) -> Result<SpLimeSelection> {
    let (q, n) = theta.dim();
    if budget < 1 || budget > n {
        return Err(MameError::invalid(format!("budget {budget} outside 1..={n}")));
    }
    let importance = feature_importance(theta);
    let support = theta.mapv(|v| v.abs() > NONZERO_TOL);
    let mut covered = vec![false; q];
    let mut taken = vec![false; n];
    let mut chosen = Vec::with_capacity(budget);
    let mut coverage_trace = Vec::with_capacity(budget);
    let mut coverage = 0.0;
    for _ in 0..budget {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            let gain: f64 = (0..q).filter(|&j| !covered[j] && support[[j, i]]).map(|j| importance[j]).sum();
            if best.map_or(true, |(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let (i, gain) = best.expect("budget does not exceed n");
        taken[i] = true;
        chosen.push(i);
        for j in 0..q {
            covered[j] |= support[[j, i]];
        }
        coverage += gain;
        coverage_trace.push(coverage);
    }
    Ok(SpLimeSelection {
        chosen,
        importance,
        coverage_trace,
    })
}

/// Coverage of an arbitrary set of instances under [`sp_lime_pick`]'s objective.
pub fn coverage(theta: ArrayView2<'_, f64>, importance: &[f64], set: &[usize]) -> f64 {
    (0..theta.nrows())
        .filter(|&j| set.iter().any(|&i| theta[[j, i]].abs() > NONZERO_TOL))
        .map(|j| importance[j])
        .sum()
}
