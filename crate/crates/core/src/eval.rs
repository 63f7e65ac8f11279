//! Generalized fidelity, rank correlation of feature importances, and the
//! one-sweep versus converged path comparison.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MameError, Result};
use crate::neighborhood::CoordinateMap;
use crate::solver::{run_ar_path, run_exact_path, FusedProblem, PathOptions, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mame,
    TwoStep,
    SpLime,
    Lime,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Mame, Method::TwoStep, Method::SpLime, Method::Lime];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mame => "mame",
            Method::TwoStep => "two_step",
            Method::SpLime => "sp_lime",
            Method::Lime => "lime",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = MameError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s.trim()).ok_or_else(|| {
            let valid: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
            MameError::invalid(format!("unknown method '{s}'; valid methods: {}", valid.join(", ")))
        })
    }
}

/// Row of `candidates` closest to `x` in Euclidean distance; lowest index on ties.
pub fn nearest_training(x: ArrayView1<'_, f64>, train: ArrayView2<'_, f64>, candidates: &[usize]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &c in candidates {
        let d: f64 = train.row(c).iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        match best {
            Some((bi, bd)) if d > bd || (d == bd && c > bi) => {}
            _ => best = Some((c, d)),
        }
    }
    best.map(|(c, _)| c).ok_or_else(|| MameError::invalid("no candidate training rows"))
}

/// `1 - SS_res / SS_tot` centered on the mean of `y`; `None` when `y` is constant.
pub fn r_squared(y: &[f64], yhat: &[f64]) -> Option<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if !(ss_tot > 0.0) {
        return None;
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Some(1.0 - ss_res / ss_tot)
}

/// Explanation predictions on test points: each test point borrows the
/// explanation (column of `theta`) of its nearest candidate training row.
pub fn proxy_predictions(
    train: ArrayView2<'_, f64>,
    theta: ArrayView2<'_, f64>,
    candidates: &[usize],
    map: &CoordinateMap,
    test: ArrayView2<'_, f64>,
) -> Result<Vec<f64>> {
    if theta.ncols() != train.nrows() || theta.nrows() != map.output_dim() {
        return Err(MameError::invalid("explanations do not match the training rows or coordinate map"));
    }
    test.rows()
        .into_iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|x| {
            let nn = nearest_training(*x, train, candidates)?;
            Ok(map.apply_row(*x).dot(&theta.column(nn)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityPoint {
    pub level: usize,
    pub clusters: usize,
    /// `None` when the black box is constant on the test set.
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityCurve {
    pub method: Method,
    pub points: Vec<FidelityPoint>,
}

/// Generalized fidelity of one set of per-instance explanations.
pub fn generalized_fidelity(
    train: ArrayView2<'_, f64>,
    theta: ArrayView2<'_, f64>,
    candidates: &[usize],
    map: &CoordinateMap,
    test: ArrayView2<'_, f64>,
    f_test: &[f64],
) -> Result<Option<f64>> {
    if f_test.len() != test.nrows() || f_test.is_empty() {
        return Err(MameError::invalid("need one black-box output per test row"));
    }
    let yhat = proxy_predictions(train, theta, candidates, map, test)?;
    Ok(r_squared(f_test, &yhat))
}

/// Average ranks by descending score (1 = largest).
pub fn rank_descending(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn tie_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

fn merge_count_swaps(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count_swaps(&mut v[..mid], buf) + merge_count_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Tie-corrected Kendall tau-b in `O(n log n)`. NaN when either input is constant.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(MameError::invalid("rank correlation needs two equal-length inputs of length >= 2"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(MameError::invalid("rank correlation input contains NaN"));
    }
    let n = a.len() as u64;
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));

    let n0 = n * (n - 1) / 2;
    let sorted_a: Vec<f64> = order.iter().map(|&i| a[i]).collect();
    let n1 = tie_pairs(&sorted_a);
    let mut joint = 0u64;
    let mut run = 1u64;
    for w in order.windows(2) {
        if a[w[0]] == a[w[1]] && b[w[0]] == b[w[1]] {
            run += 1;
        } else {
            joint += run * (run - 1) / 2;
            run = 1;
        }
    }
    joint += run * (run - 1) / 2;

    let mut by_b: Vec<f64> = order.iter().map(|&i| b[i]).collect();
    let swaps = merge_count_swaps(&mut by_b, &mut Vec::with_capacity(a.len()));
    let n2 = tie_pairs(&by_b);

    let numer = n0 as f64 - n1 as f64 - n2 as f64 + joint as f64 - 2.0 * swaps as f64;
    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok(if denom > 0.0 { numer / denom } else { f64::NAN })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArExactReport {
    pub t_grid: Vec<f64>,
    pub normalized_distance: Vec<f64>,
    pub ar_seconds: Vec<f64>,
    pub exact_seconds: Vec<f64>,
    /// Largest leaf explanation gap across a graph edge.
    pub mu: f64,
    pub epsilon: f64,
}

impl ArExactReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,normalized_distance,ar_seconds,exact_seconds\n");
        for i in 0..self.t_grid.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.t_grid[i], self.normalized_distance[i], self.ar_seconds[i], self.exact_seconds[i]
            ));
        }
        out
    }
}

/// Largest edge-wise distance between leaf explanations.
pub fn leaf_spread(problem: &FusedProblem, theta0: &Array2<f64>) -> f64 {
    problem
        .incidence()
        .apply(theta0.view())
        .columns()
        .into_iter()
        .map(|c| c.dot(&c).sqrt())
        .fold(0.0, f64::max)
}

/// `max(mean_b min_a ||A_a - B_b||, mean_a min_b ||A_a - B_b||)` over two
/// sequences of matrices.
pub fn path_distance(ar: &[&Array2<f64>], exact: &[&Array2<f64>]) -> f64 {
    let dist = |x: &Array2<f64>, y: &Array2<f64>| x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let nearest = |from: &[&Array2<f64>], to: &[&Array2<f64>]| -> f64 {
        let total: f64 = from
            .par_iter()
            .map(|x| to.iter().map(|y| dist(x, y)).fold(f64::INFINITY, f64::min))
            .sum();
        total / from.len() as f64
    };
    nearest(exact, ar).max(nearest(ar, exact))
}

/// Runs both path solvers for every `t` (sorted ascending) from the same
/// leaf explanations. The converged solver uses the one-sweep path's own
/// fusion levels as its grid.
pub fn ar_exact_study(
    problem: &FusedProblem,
    theta0: &Array2<f64>,
    base: &SolverConfig,
    t_grid: &[f64],
    epsilon: f64,
) -> Result<ArExactReport> {
    if t_grid.is_empty() || t_grid.iter().any(|t| !(t.is_finite() && *t > 1.0)) {
        return Err(MameError::invalid("every t must be a finite value above 1"));
    }
    let mu = leaf_spread(problem, theta0);
    if !(mu > 0.0) {
        return Err(MameError::invalid("all connected leaf explanations coincide; the distance is undefined"));
    }
    let mut ts = t_grid.to_vec();
    ts.sort_by(f64::total_cmp);
    let norm = (problem.q() * problem.n()) as f64 * mu;
    let mut report = ArExactReport {
        t_grid: Vec::new(),
        normalized_distance: Vec::new(),
        ar_seconds: Vec::new(),
        exact_seconds: Vec::new(),
        mu,
        epsilon,
    };
    let opts = PathOptions {
        snapshot_all: true,
        stop_when_fused: false,
    };
    for t in ts {
        let cfg = SolverConfig { t, epsilon, ..base.clone() };
        let clock = Instant::now();
        let ar = run_ar_path(problem, theta0, &cfg, opts)?;
        let ar_seconds = clock.elapsed().as_secs_f64();
        let clock = Instant::now();
        let exact = run_exact_path(problem, theta0, &cfg, &ar.betas(), opts)?;
        let exact_seconds = clock.elapsed().as_secs_f64();
        let a: Vec<&Array2<f64>> = ar.snapshots.iter().map(|s| &s.theta).collect();
        let b: Vec<&Array2<f64>> = exact.snapshots.iter().map(|s| &s.theta).collect();
        report.t_grid.push(t);
        report.normalized_distance.push(path_distance(&a, &b) / norm);
        report.ar_seconds.push(ar_seconds);
        report.exact_seconds.push(exact_seconds);
    }
    Ok(report)
}
