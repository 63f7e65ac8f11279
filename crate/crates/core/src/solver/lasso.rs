//! Weighted lasso on Gram-form quadratics, with sparsity targeting over a
//! geometric penalty grid.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LocalQuadratic;
use crate::error::{MameError, Result};
use crate::neighborhood::Neighborhood;

/// Coefficient-change tolerance for coordinate descent.
pub const CD_TOL: f64 = 1e-8;
const CD_MAX_SWEEPS: usize = 500_000;
/// Grid points `alpha_max * 2^-s` for `s = 0..=GRID_STEPS`.
pub const GRID_STEPS: i32 = 30;
const BISECT_STEPS: usize = 40;
/// Coefficients with magnitude at or below this count as zero.
pub const NONZERO_TOL: f64 = 1e-12;

pub(crate) fn soft_threshold(a: f64, kappa: f64) -> f64 {
    a.signum() * (a.abs() - kappa).max(0.0)
}

/// Minimizes `theta' G theta - 2 b' theta + alpha * sum_j mask_j |theta_j|`
/// by cyclic coordinate descent, starting from `warm` (or zero).
pub fn weighted_lasso(
    quad: &LocalQuadratic,
    alpha: f64,
    mask: &[f64],
    warm: Option<ArrayView1<'_, f64>>,
) -> Result<Array1<f64>> {
    let q = quad.dim();
    let mut theta = warm.map(|w| w.to_owned()).unwrap_or_else(|| Array1::zeros(q));
    let g = &quad.gram;
    // grad_part = G theta, kept in sync with every coordinate move.
    let mut g_theta = g.dot(&theta);
    for _ in 0..CD_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..q {
            let gjj = g[[j, j]];
            let old = theta[j];
            let new = if gjj <= 0.0 {
                0.0
            } else {
                let c = quad.rhs[j] - (g_theta[j] - gjj * old);
                soft_threshold(c, 0.5 * alpha * mask[j]) / gjj
            };
            let delta = new - old;
            if delta != 0.0 {
                theta[j] = new;
                g_theta.scaled_add(delta, &g.column(j));
                max_change = max_change.max(delta.abs());
            }
        }
        if !max_change.is_finite() {
            return Err(MameError::Numerical("coordinate descent diverged".into()));
        }
        if max_change < CD_TOL {
            return Ok(theta);
        }
    }
    Err(MameError::IterationCap {
        cap: CD_MAX_SWEEPS,
        context: "lasso coordinate descent",
        residual: f64::NAN,
    })
}

pub fn count_nonzero(theta: ArrayView1<'_, f64>, mask: &[f64]) -> usize {
    theta
        .iter()
        .zip(mask)
        .filter(|(v, m)| **m > 0.0 && v.abs() > NONZERO_TOL)
        .count()
}

/// Smallest penalty that zeroes every penalized coefficient.
///
/// With unpenalized coordinates present this is measured at the fit that
/// uses only those coordinates.
pub fn alpha_max(quad: &LocalQuadratic, mask: &[f64]) -> Result<(f64, Array1<f64>)> {
    let base = if mask.iter().all(|m| *m > 0.0) {
        Array1::zeros(quad.dim())
    } else {
        weighted_lasso(quad, f64::MAX, mask, None)?
    };
    let grad = 2.0 * (&quad.rhs - &quad.gram.dot(&base));
    let amax = grad
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m > 0.0)
        .map(|(g, _)| g.abs())
        .fold(0.0, f64::max);
    Ok((amax, base))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFit {
    pub theta: Array1<f64>,
    pub alpha: f64,
    pub nnz: usize,
}

/// Fits with the largest grid penalty reaching `target` nonzeros.
///
/// The grid is `alpha_max * 2^-s`, `s = 0..=30`, walked with warm starts.
/// If the first penalty reaching the target overshoots it by more than one,
/// the bracketing grid interval is bisected; failing that, the penalty with
/// nonzero count closest to the target wins (larger penalty on ties). A target at or above the number of penalized
/// coordinates means no sparsity is wanted and the penalty is zero.
pub fn fit_sparse(quad: &LocalQuadratic, mask: &[f64], target: usize) -> Result<SparseFit> {
    let penalized = mask.iter().filter(|m| **m > 0.0).count();
    if target >= penalized {
        let theta = weighted_lasso(quad, 0.0, mask, None)?;
        let nnz = count_nonzero(theta.view(), mask);
        return Ok(SparseFit { theta, alpha: 0.0, nnz });
    }
    let (amax, base) = alpha_max(quad, mask)?;
    if amax == 0.0 {
        return Ok(SparseFit {
            theta: base,
            alpha: 0.0,
            nnz: 0,
        });
    }
    let mut grid = Vec::with_capacity(GRID_STEPS as usize + 1);
    let mut warm = base;
    for s in 0..=GRID_STEPS {
        let alpha = amax * 2f64.powi(-s);
        let theta = weighted_lasso(quad, alpha, mask, Some(warm.view()))?;
        let nnz = count_nonzero(theta.view(), mask);
        warm = theta.clone();
        let reached = nnz >= target;
        grid.push(SparseFit { theta, alpha, nnz });
        if reached {
            break;
        }
    }
    let last = grid.last().expect("non-empty grid");
    if last.nnz >= target && last.nnz <= target + 1 {
        return Ok(grid.pop().expect("non-empty grid"));
    }
    if last.nnz > target + 1 && grid.len() >= 2 {
        // Bisect (in log alpha) between the last two grid points.
        let (mut hi, mut lo) = (grid[grid.len() - 2].alpha, last.alpha);
        let mut warm = grid[grid.len() - 2].theta.clone();
        for _ in 0..BISECT_STEPS {
            let alpha = (hi * lo).sqrt();
            let theta = weighted_lasso(quad, alpha, mask, Some(warm.view()))?;
            let nnz = count_nonzero(theta.view(), mask);
            let fit = SparseFit { theta, alpha, nnz };
            if nnz >= target && nnz <= target + 1 {
                return Ok(fit);
            }
            if nnz < target {
                hi = alpha;
                warm = fit.theta.clone();
            } else {
                lo = alpha;
            }
            grid.push(fit);
        }
    }
    let best = grid
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.nnz
                .abs_diff(target)
                .cmp(&b.nnz.abs_diff(target))
                .then(b.alpha.total_cmp(&a.alpha))
        })
        .map(|(s, _)| s)
        .expect("non-empty grid");
    Ok(grid.swap_remove(best))
}

/// Independent per-instance explanations (no fusion).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafFit {
    /// `q x n`; column `i` explains instance `i`.
    pub theta0: Array2<f64>,
    pub alpha: Vec<f64>,
    pub nnz: Vec<usize>,
}

impl LeafFit {
    pub fn n(&self) -> usize {
        self.theta0.ncols()
    }
}

pub fn fit_leaves(nbhds: &[Neighborhood], target: usize, mask: &[f64]) -> Result<LeafFit> {
    let quads: Vec<LocalQuadratic> = nbhds.iter().map(LocalQuadratic::from_neighborhood).collect();
    fit_leaves_from_quadratics(&quads, target, mask)
}

pub fn fit_leaves_from_quadratics(quads: &[LocalQuadratic], target: usize, mask: &[f64]) -> Result<LeafFit> {
    if quads.is_empty() {
        return Err(MameError::invalid("no neighborhoods to fit"));
    }
    let q = quads[0].dim();
    if mask.len() != q {
        return Err(MameError::invalid("penalty mask width does not match explanations"));
    }
    for (i, quad) in quads.iter().enumerate() {
        if !(quad.mass > 0.0) {
            return Err(MameError::invalid(format!("neighborhood {i} has zero kernel weight mass")));
        }
    }
    let fits: Vec<SparseFit> = quads
        .par_iter()
        .map(|quad| fit_sparse(quad, mask, target))
        .collect::<Result<_>>()?;
    let mut theta0 = Array2::zeros((q, quads.len()));
    for (i, f) in fits.iter().enumerate() {
        theta0.column_mut(i).assign(&f.theta);
    }
    Ok(LeafFit {
        theta0,
        alpha: fits.iter().map(|f| f.alpha).collect(),
        nnz: fits.iter().map(|f| f.nnz).collect(),
    })
}
