//! Fused sparse regression over all instances: leaf fits, the ADMM updates,
//! and the two path drivers (one sweep per level, or converged per level).

mod admm;
mod cg;
mod lasso;
mod path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{MameError, Result};
use crate::graph::{incidence, Incidence, PriorGraph};
use crate::neighborhood::Neighborhood;

pub use admm::{dual_update, theta_update, u_update, v_update, AdmmState, CgMode};
pub use cg::{conjugate_gradient, CgOutcome};
pub use lasso::{
    alpha_max, count_nonzero, fit_leaves, fit_leaves_from_quadratics, fit_sparse, weighted_lasso, LeafFit,
    SparseFit, CD_TOL, NONZERO_TOL,
};
pub use path::{run_ar_path, run_exact_path, PathLevel, PathMode, PathOptions, PathSolution, Snapshot};

/// Sufficient statistics of one weighted least-squares fidelity term,
/// `sum_r psi_r (f_r - g_r' theta)^2 = theta' G theta - 2 b' theta + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalQuadratic {
    /// `G = sum_r psi_r g_r g_r'`.
    pub gram: Array2<f64>,
    /// `b = sum_r psi_r f_r g_r`.
    pub rhs: Array1<f64>,
    /// `c = sum_r psi_r f_r^2`.
    pub fsq: f64,
    /// `sum_r psi_r`.
    pub mass: f64,
}

impl LocalQuadratic {
    pub fn from_parts(g: ArrayView2<'_, f64>, psi: ArrayView1<'_, f64>, f: ArrayView1<'_, f64>) -> Self {
        let q = g.ncols();
        let mut gram = Array2::zeros((q, q));
        let mut rhs = Array1::zeros(q);
        let mut fsq = 0.0;
        for ((row, &w), &fr) in g.rows().into_iter().zip(psi.iter()).zip(f.iter()) {
            for a in 0..q {
                let wa = w * row[a];
                rhs[a] += wa * fr;
                for b in 0..q {
                    gram[[a, b]] += wa * row[b];
                }
            }
            fsq += w * fr * fr;
        }
        Self {
            gram,
            rhs,
            fsq,
            mass: psi.sum(),
        }
    }

    pub fn from_neighborhood(nb: &Neighborhood) -> Self {
        Self::from_parts(nb.g.view(), nb.psi.view(), nb.fz.view())
    }

    /// `||omega - theta||^2`: one pseudo-observation with identity design.
    pub fn identity_target(omega: ArrayView1<'_, f64>) -> Self {
        let q = omega.len();
        Self {
            gram: Array2::eye(q),
            rhs: omega.to_owned(),
            fsq: omega.dot(&omega),
            mass: 1.0,
        }
    }

    /// Sum of several fidelity terms sharing one coefficient vector.
    pub fn pooled<'a>(terms: impl IntoIterator<Item = &'a LocalQuadratic>) -> Option<Self> {
        let mut it = terms.into_iter();
        let mut acc = it.next()?.clone();
        for t in it {
            acc.gram += &t.gram;
            acc.rhs += &t.rhs;
            acc.fsq += t.fsq;
            acc.mass += t.mass;
        }
        Some(acc)
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    pub fn loss(&self, theta: ArrayView1<'_, f64>) -> f64 {
        theta.dot(&self.gram.dot(&theta)) - 2.0 * self.rhs.dot(&theta) + self.fsq
    }
}

/// Numeric settings of the path solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rho: f64,
    pub t: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub tol: f64,
    pub cg_iters: usize,
    /// Outer iteration cap for the one-sweep-per-level path.
    pub max_outer: usize,
    /// Inner iteration cap per level for the converged path.
    pub max_inner: usize,
    /// Converged-path residual threshold is `exact_tol * sqrt(q * n)`.
    pub exact_tol: f64,
    /// Relative residual at which converged-mode CG stops.
    pub exact_cg_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::from(&RunConfig::default())
    }
}

impl From<&RunConfig> for SolverConfig {
    fn from(c: &RunConfig) -> Self {
        Self {
            rho: c.rho,
            t: c.t,
            epsilon: c.epsilon,
            tau: c.tau,
            tol: c.tol,
            cg_iters: c.cg_iters,
            max_outer: 1_000_000,
            max_inner: 100_000,
            exact_tol: 1e-8,
            exact_cg_tol: 1e-10,
        }
    }
}

/// The full fused objective: per-instance fidelity, per-instance l1 weights
/// and the prior graph.
#[derive(Debug, Clone)]
pub struct FusedProblem {
    quads: Vec<LocalQuadratic>,
    alpha: Vec<f64>,
    mask: Vec<f64>,
    graph: PriorGraph,
    inc: Incidence,
}

impl FusedProblem {
    pub fn new(quads: Vec<LocalQuadratic>, alpha: Vec<f64>, mask: Vec<f64>, graph: PriorGraph) -> Result<Self> {
        let n = quads.len();
        if n == 0 || graph.n() != n || alpha.len() != n {
            return Err(MameError::invalid(format!(
                "problem sizes disagree: {n} fidelity terms, {} penalties, graph over {} nodes",
                alpha.len(),
                graph.n()
            )));
        }
        let q = quads[0].dim();
        if mask.len() != q || quads.iter().any(|t| t.dim() != q) {
            return Err(MameError::invalid("explanation widths disagree"));
        }
        let inc = incidence(&graph)?;
        Ok(Self {
            quads,
            alpha,
            mask,
            graph,
            inc,
        })
    }

    /// The explanation-tree objective over neighborhoods, with the leaf penalties.
    pub fn from_neighborhoods(nbhds: &[Neighborhood], leaf: &LeafFit, mask: Vec<f64>, graph: PriorGraph) -> Result<Self> {
        let quads = nbhds.iter().map(LocalQuadratic::from_neighborhood).collect();
        Self::new(quads, leaf.alpha.clone(), mask, graph)
    }

    pub fn n(&self) -> usize {
        self.quads.len()
    }

    pub fn q(&self) -> usize {
        self.mask.len()
    }

    pub fn quads(&self) -> &[LocalQuadratic] {
        &self.quads
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    pub fn graph(&self) -> &PriorGraph {
        &self.graph
    }

    pub fn incidence(&self) -> &Incidence {
        &self.inc
    }

    pub fn edge_weights(&self) -> Vec<f64> {
        self.graph.edges().iter().map(|e| e.w).collect()
    }

    /// Value of the fused objective at `theta` for fusion level `beta`.
    pub fn objective(&self, theta: ArrayView2<'_, f64>, beta: f64) -> f64 {
        let fidelity: f64 = self
            .quads
            .iter()
            .enumerate()
            .map(|(i, quad)| quad.loss(theta.column(i)))
            .sum();
        let l1: f64 = self
            .alpha
            .iter()
            .enumerate()
            .map(|(i, a)| a * theta.column(i).iter().zip(&self.mask).map(|(v, m)| m * v.abs()).sum::<f64>())
            .sum();
        fidelity + l1 + beta * self.graph.fusion_penalty(theta)
    }
}
