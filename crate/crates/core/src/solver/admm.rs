//! One ADMM sweep for the split problem
//! `min f(Theta) + sum_i alpha_i ||u_i||_1 + beta sum_l w_l ||v_l||_2`
//! subject to `Theta = U`, `Theta D = V`, with scaled duals `Z1`, `Z2`.

use ndarray::{Array2, ArrayView2, Zip};

use super::cg::{conjugate_gradient, CgOutcome};
use super::lasso::soft_threshold;
use super::FusedProblem;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CgMode {
    /// Fixed iteration budget, warm-started.
    Capped(usize),
    /// Run to the given relative residual (with an iteration cap).
    Converged { rel_tol: f64, max_iter: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    /// `q x n` explanations.
    pub theta: Array2<f64>,
    /// `q x n` sparse copy of `theta`.
    pub u: Array2<f64>,
    /// `q x |E|` edge differences.
    pub v: Array2<f64>,
    pub z1: Array2<f64>,
    pub z2: Array2<f64>,
    pub beta: f64,
    pub k: usize,
}

impl AdmmState {
    /// `Theta = U = theta0`, `V = Theta D`, zero duals.
    pub fn init(problem: &FusedProblem, theta0: &Array2<f64>, beta: f64) -> Self {
        let v = problem.incidence().apply(theta0.view());
        Self {
            theta: theta0.clone(),
            u: theta0.clone(),
            z1: Array2::zeros(theta0.raw_dim()),
            z2: Array2::zeros(v.raw_dim()),
            v,
            beta,
            k: 0,
        }
    }

    /// Runs the five updates once at the current `beta`.
    pub fn sweep(&mut self, problem: &FusedProblem, rho: f64, mode: CgMode) -> Result<CgOutcome> {
        let (theta, cg) = theta_update(self, problem, rho, mode)?;
        self.theta = theta;
        self.u = u_update(self.theta.view(), self.z1.view(), problem.alpha(), problem.mask(), rho);
        let theta_d = problem.incidence().apply(self.theta.view());
        self.v = v_update(theta_d.view(), self.z2.view(), &problem.edge_weights(), self.beta, rho);
        dual_update(self, theta_d.view());
        self.k += 1;
        Ok(cg)
    }

    /// `(||Theta - U||_F, ||Theta D - V||_F)`.
    pub fn primal_residuals(&self, problem: &FusedProblem) -> (f64, f64) {
        let theta_d = problem.incidence().apply(self.theta.view());
        (frobenius_diff(self.theta.view(), self.u.view()), frobenius_diff(theta_d.view(), self.v.view()))
    }
}

pub(crate) fn frobenius_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + (x - y) * (x - y)).sqrt()
}

/// Solves the quadratic subproblem in `Theta` with `U, V, Z1, Z2` frozen:
/// column `i` satisfies
/// `(2 G_i + rho I) theta_i + rho (Theta D D')_i = 2 b_i + rho (U - Z1)_i + rho ((V - Z2) D')_i`.
pub fn theta_update(state: &AdmmState, problem: &FusedProblem, rho: f64, mode: CgMode) -> Result<(Array2<f64>, CgOutcome)> {
    let inc = problem.incidence();
    let quads = problem.quads();
    let mut rhs = &state.u - &state.z1;
    let edge_part = inc.apply_transpose((&state.v - &state.z2).view());
    rhs += &edge_part;
    rhs *= rho;
    for (i, quad) in quads.iter().enumerate() {
        rhs.column_mut(i).scaled_add(2.0, &quad.rhs);
    }

    let apply = |x: &Array2<f64>| -> Array2<f64> {
        let mut out = inc.apply_transpose(inc.apply(x.view()).view());
        out.zip_mut_with(x, |o, xv| *o = rho * (*o + xv));
        for (i, quad) in quads.iter().enumerate() {
            let gx = quad.gram.dot(&x.column(i));
            out.column_mut(i).scaled_add(2.0, &gx);
        }
        out
    };

    let mut theta = state.theta.clone();
    let (max_iter, rel_tol) = match mode {
        CgMode::Capped(iters) => (iters, 0.0),
        CgMode::Converged { rel_tol, max_iter } => (max_iter, rel_tol),
    };
    let outcome = conjugate_gradient(apply, &rhs, &mut theta, max_iter, rel_tol)?;
    Ok((theta, outcome))
}

/// Elementwise soft-thresholding of `Theta + Z1` at `alpha_i * mask_j / rho`.
pub fn u_update(theta: ArrayView2<'_, f64>, z1: ArrayView2<'_, f64>, alpha: &[f64], mask: &[f64], rho: f64) -> Array2<f64> {
    let mut u = &theta + &z1;
    for (i, mut col) in u.columns_mut().into_iter().enumerate() {
        for (v, m) in col.iter_mut().zip(mask) {
            *v = soft_threshold(*v, alpha[i] * m / rho);
        }
    }
    u
}

/// Block soft-thresholding of each column of `Theta D + Z2` at `beta * w_l / rho`.
pub fn v_update(theta_d: ArrayView2<'_, f64>, z2: ArrayView2<'_, f64>, weights: &[f64], beta: f64, rho: f64) -> Array2<f64> {
    let mut v = &theta_d + &z2;
    for (l, mut col) in v.columns_mut().into_iter().enumerate() {
        let norm = col.dot(&col).sqrt();
        let scale = if norm > 0.0 {
            (1.0 - beta * weights[l] / (rho * norm)).max(0.0)
        } else {
            0.0
        };
        col *= scale;
    }
    v
}

/// `Z1 += Theta - U`, `Z2 += Theta D - V`.
pub fn dual_update(state: &mut AdmmState, theta_d: ArrayView2<'_, f64>) {
    Zip::from(&mut state.z1)
        .and(&state.theta)
        .and(&state.u)
        .for_each(|z, t, u| *z += t - u);
    Zip::from(&mut state.z2)
        .and(&theta_d)
        .and(&state.v)
        .for_each(|z, td, v| *z += td - v);
}
