use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::admm::{frobenius_diff, AdmmState, CgMode};
use super::{FusedProblem, SolverConfig};
use crate::error::{MameError, Result};
use crate::tree::{DisjointSet, MergeEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathMode {
    /// One ADMM sweep per fusion level, warm-started along a geometric schedule.
    Ar,
    /// ADMM run to convergence at every level of a given grid.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathLevel {
    pub k: usize,
    pub beta: f64,
    /// Edges whose union joined two distinct clusters at this level.
    pub merges: Vec<usize>,
    /// Cluster count after this level's merges.
    pub components: usize,
    pub v_norm: f64,
    /// ADMM sweeps spent at this level (always 1 on the AR path).
    pub sweeps: usize,
    pub wall_seconds: f64,
    /// Linked pairs whose explanations moved apart since the previous level.
    /// Converged solutions only guarantee the weighted sum of gaps shrinks, so
    /// a single pair can still widen after a neighbor fuses.
    pub widened_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub k: usize,
    pub beta: f64,
    pub theta: Array2<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathSolution {
    pub mode: PathMode,
    pub n: usize,
    /// Explanations the path was started from (the leaf fits).
    pub initial_theta: Array2<f64>,
    pub levels: Vec<PathLevel>,
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<MergeEvent>,
}

impl PathSolution {
    pub fn final_theta(&self) -> &Array2<f64> {
        self.snapshots.last().map(|s| &s.theta).unwrap_or(&self.initial_theta)
    }

    pub fn final_components(&self) -> usize {
        self.levels.last().map(|l| l.components).unwrap_or(self.n)
    }

    pub fn betas(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.beta).collect()
    }

    pub fn total_seconds(&self) -> f64 {
        self.levels.iter().map(|l| l.wall_seconds).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PathOptions {
    /// Keep `Theta` at every level instead of only at merges and endpoints.
    pub snapshot_all: bool,
    /// Converged path only: stop once every edge difference has vanished.
    pub stop_when_fused: bool,
}

/// Slack below which a growing edge gap counts as noise.
const WIDEN_SLACK: f64 = 1e-6;

fn edge_gaps(theta: &Array2<f64>, problem: &FusedProblem) -> Vec<f64> {
    let inc = problem.incidence();
    (0..inc.n_edges())
        .map(|l| {
            let (i, j) = inc.endpoints(l);
            let d = &theta.column(i) - &theta.column(j);
            d.dot(&d).sqrt()
        })
        .collect()
}

fn count_widened(prev: &mut Vec<f64>, theta: &Array2<f64>, problem: &FusedProblem) -> usize {
    let now = edge_gaps(theta, problem);
    let widened = now.iter().zip(prev.iter()).filter(|(a, b)| **a > **b + WIDEN_SLACK).count();
    *prev = now;
    widened
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn record_merges(
    state: &AdmmState,
    problem: &FusedProblem,
    ds: &mut DisjointSet,
    tau: f64,
    k: usize,
    beta: f64,
    events: &mut Vec<MergeEvent>,
) -> Vec<usize> {
    let mut merged = Vec::new();
    for (l, col) in state.v.columns().into_iter().enumerate() {
        if col.dot(&col).sqrt() < tau {
            let (i, j) = problem.incidence().endpoints(l);
            if let Some(ev) = ds.record_merge(i, j, k, beta) {
                events.push(ev);
                merged.push(l);
            }
        }
    }
    merged
}

fn check_start(problem: &FusedProblem, theta0: &Array2<f64>, cfg: &SolverConfig) -> Result<()> {
    if theta0.dim() != (problem.q(), problem.n()) {
        return Err(MameError::invalid(format!(
            "initial explanations have shape {:?}, expected ({}, {})",
            theta0.dim(),
            problem.q(),
            problem.n()
        )));
    }
    if !(cfg.rho > 0.0) {
        return Err(MameError::invalid("rho must be positive"));
    }
    Ok(())
}

/// Approximate path: one sweep per level with `beta_k = epsilon * t^k`, until
/// `||V||_F <= tol`.
pub fn run_ar_path(problem: &FusedProblem, theta0: &Array2<f64>, cfg: &SolverConfig, opts: PathOptions) -> Result<PathSolution> {
    check_start(problem, theta0, cfg)?;
    if !(cfg.t > 1.0 && cfg.epsilon > 0.0) {
        return Err(MameError::invalid("the fusion schedule needs t > 1 and epsilon > 0"));
    }
    let n = problem.n();
    let mut state = AdmmState::init(problem, theta0, cfg.epsilon);
    let mut ds = DisjointSet::new(n);
    let mut events = Vec::new();
    let mut levels = Vec::new();
    let mut snapshots = Vec::new();
    let mut beta = cfg.epsilon;
    let mut v_norm = f64::INFINITY;
    let mut gaps = edge_gaps(theta0, problem);

    for k in 0..cfg.max_outer {
        let start = Instant::now();
        state.beta = beta;
        state.sweep(problem, cfg.rho, CgMode::Capped(cfg.cg_iters))?;
        let merges = record_merges(&state, problem, &mut ds, cfg.tau, k, beta, &mut events);
        v_norm = frobenius(&state.v);
        let done = v_norm <= cfg.tol;
        if opts.snapshot_all || k == 0 || done || !merges.is_empty() {
            snapshots.push(Snapshot {
                k,
                beta,
                theta: state.theta.clone(),
            });
        }
        levels.push(PathLevel {
            k,
            beta,
            merges,
            components: ds.component_count(),
            v_norm,
            sweeps: 1,
            wall_seconds: start.elapsed().as_secs_f64(),
            widened_edges: count_widened(&mut gaps, &state.theta, problem),
        });
        if done {
            let widened: usize = levels.iter().map(|l| l.widened_edges).sum();
            if widened > 0 {
                log::debug!("one-sweep path widened a linked pair {widened} times over {} levels", levels.len());
            }
            return Ok(PathSolution {
                mode: PathMode::Ar,
                n,
                initial_theta: theta0.clone(),
                levels,
                snapshots,
                events,
            });
        }
        beta *= cfg.t;
    }
    Err(MameError::IterationCap {
        cap: cfg.max_outer,
        context: "fusion path",
        residual: v_norm,
    })
}

/// Converged path over an ascending grid, warm-starting each level from
/// the previous one. Every level is snapshotted.
pub fn run_exact_path(
    problem: &FusedProblem,
    theta0: &Array2<f64>,
    cfg: &SolverConfig,
    beta_grid: &[f64],
    opts: PathOptions,
) -> Result<PathSolution> {
    check_start(problem, theta0, cfg)?;
    if beta_grid.is_empty() {
        return Err(MameError::invalid("empty fusion grid"));
    }
    if beta_grid.iter().any(|b| !(b.is_finite() && *b >= 0.0)) || beta_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(MameError::invalid("fusion grid must be finite, nonnegative and ascending"));
    }
    let n = problem.n();
    let dim = problem.q() * n;
    let threshold = cfg.exact_tol * (dim as f64).sqrt();
    let cg = CgMode::Converged {
        rel_tol: cfg.exact_cg_tol,
        max_iter: 10 * (dim + problem.incidence().n_edges()) + 100,
    };
    let mut state = AdmmState::init(problem, theta0, beta_grid[0]);
    let mut ds = DisjointSet::new(n);
    let mut events = Vec::new();
    let mut levels = Vec::new();
    let mut snapshots = Vec::new();
    let mut gaps = edge_gaps(theta0, problem);

    for (k, &beta) in beta_grid.iter().enumerate() {
        let start = Instant::now();
        state.beta = beta;
        let mut sweeps = 0;
        loop {
            if sweeps == cfg.max_inner {
                let (r1, r2) = state.primal_residuals(problem);
                return Err(MameError::IterationCap {
                    cap: cfg.max_inner,
                    context: "converged fusion level",
                    residual: r1.max(r2),
                });
            }
            let u_prev = state.u.clone();
            let v_prev = state.v.clone();
            state.sweep(problem, cfg.rho, cg)?;
            sweeps += 1;
            let (r1, r2) = state.primal_residuals(problem);
            let dual = cfg.rho * frobenius_diff(state.u.view(), u_prev.view()).max(frobenius_diff(state.v.view(), v_prev.view()));
            if r1.max(r2) <= threshold && dual <= threshold {
                break;
            }
        }
        let merges = record_merges(&state, problem, &mut ds, cfg.tau, k, beta, &mut events);
        let v_norm = frobenius(&state.v);
        snapshots.push(Snapshot {
            k,
            beta,
            theta: state.theta.clone(),
        });
        levels.push(PathLevel {
            k,
            beta,
            merges,
            components: ds.component_count(),
            v_norm,
            sweeps,
            wall_seconds: start.elapsed().as_secs_f64(),
            widened_edges: count_widened(&mut gaps, &state.theta, problem),
        });
        if opts.stop_when_fused && v_norm <= cfg.tol {
            break;
        }
    }
    Ok(PathSolution {
        mode: PathMode::Exact,
        n,
        initial_theta: theta0.clone(),
        levels,
        snapshots,
        events,
    })
}
