//! End-to-end wiring: neighborhoods, leaf fits, the fusion path and the tree.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{feature_stats, Dataset, FeatureStats};
use crate::error::{MameError, Result};
use crate::graph::{prediction_chain_graph, PriorGraph};
use crate::neighborhood::{build_neighborhoods, CoordinateMap, KernelConfig, Neighborhood, SamplingConfig};
use crate::oracle::Oracle;
use crate::solver::{
    fit_leaves_from_quadratics, run_ar_path, run_exact_path, FusedProblem, LeafFit, LocalQuadratic, PathMode,
    PathOptions, PathSolution, SolverConfig,
};
use crate::tree::{build_tree, fit_representatives, ExplanationTree};

/// Largest fusion level the converged path is allowed to reach.
const EXACT_BETA_CEILING: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainOptions {
    pub config: RunConfig,
    /// Append an unpenalized constant column to the explanation design.
    pub intercept: bool,
    /// Explain in standardized coordinates instead of raw features.
    pub standardize: bool,
    /// Kernel width override; `0.75 * sqrt(p)` when absent.
    pub kernel_width: Option<f64>,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            config: RunConfig::default(),
            intercept: true,
            standardize: false,
            kernel_width: None,
        }
    }
}

/// Independent local explanations for the training rows.
#[derive(Debug, Clone)]
pub struct LeafStage {
    /// Dataset rows explained; explanation `i` belongs to row `train_idx[i]`.
    pub train_idx: Vec<usize>,
    pub stats: FeatureStats,
    pub map: CoordinateMap,
    pub neighborhoods: Vec<Neighborhood>,
    pub quads: Vec<LocalQuadratic>,
    pub mask: Vec<f64>,
    pub leaf: LeafFit,
}

impl LeafStage {
    pub fn n(&self) -> usize {
        self.train_idx.len()
    }

    /// Names of the explanation coefficients.
    pub fn coefficient_names(&self, d: &Dataset) -> Vec<String> {
        let mut names = d.feature_names().to_vec();
        if self.map.has_intercept() {
            names.push("(intercept)".to_string());
        }
        names
    }
}

pub fn fit_leaf_stage(d: &Dataset, train_idx: &[usize], oracle: &Oracle, opts: &ExplainOptions) -> Result<LeafStage> {
    opts.config.validate()?;
    let stats = feature_stats(d, train_idx)?;
    let map = if opts.standardize {
        CoordinateMap::zscore(&stats)
    } else {
        CoordinateMap::identity(d.p())
    }
    .with_intercept(opts.intercept);
    let kernel = match opts.kernel_width {
        Some(width) => KernelConfig { width },
        None => KernelConfig::default_for(d.p()),
    };
    let sampling = SamplingConfig {
        size: opts.config.neighborhood_size,
        seed: opts.config.seed,
        categorical_flip_prob: opts.config.categorical_flip_prob,
    };
    let neighborhoods = build_neighborhoods(d, &stats, oracle, &map, &kernel, &sampling, train_idx)?;
    let quads: Vec<LocalQuadratic> = neighborhoods.iter().map(LocalQuadratic::from_neighborhood).collect();
    let mask = map.penalty_mask();
    let leaf = fit_leaves_from_quadratics(&quads, opts.config.target_nonzeros, &mask)?;
    Ok(LeafStage {
        train_idx: train_idx.to_vec(),
        stats,
        map,
        neighborhoods,
        quads,
        mask,
        leaf,
    })
}

/// The default prior graph: a chain through the training rows sorted by black-box output.
pub fn default_graph(d: &Dataset, train_idx: &[usize], oracle: &Oracle) -> Result<PriorGraph> {
    let preds = oracle.predict_batch(d.rows(train_idx).view())?;
    prediction_chain_graph(preds.as_slice().expect("contiguous"))
}

/// Geometric grid `epsilon * t^k` up to a ceiling, for the converged path.
pub fn geometric_grid(cfg: &SolverConfig, ceiling: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    let mut beta = cfg.epsilon;
    while beta <= ceiling && grid.len() < cfg.max_outer {
        grid.push(beta);
        beta *= cfg.t;
    }
    grid
}

#[derive(Debug, Clone)]
pub struct Explained {
    pub leaves: LeafStage,
    pub graph: PriorGraph,
    pub problem: FusedProblem,
    pub path: PathSolution,
    /// Tree with representative explanations on every node.
    pub tree: ExplanationTree,
}

/// Runs the whole pipeline on `train_idx`. With no graph given, the
/// prediction chain is used.
pub fn explain_tree(
    d: &Dataset,
    train_idx: &[usize],
    oracle: &Oracle,
    opts: &ExplainOptions,
    graph: Option<PriorGraph>,
    mode: PathMode,
) -> Result<Explained> {
    let leaves = fit_leaf_stage(d, train_idx, oracle, opts)?;
    let graph = match graph {
        Some(g) => g,
        None => default_graph(d, train_idx, oracle)?,
    };
    if graph.n() != leaves.n() {
        return Err(MameError::invalid(format!(
            "prior graph covers {} nodes but {} rows are explained",
            graph.n(),
            leaves.n()
        )));
    }
    let problem = FusedProblem::new(leaves.quads.clone(), leaves.leaf.alpha.clone(), leaves.mask.clone(), graph.clone())?;
    let cfg = SolverConfig::from(&opts.config);
    let path = match mode {
        PathMode::Ar => run_ar_path(&problem, &leaves.leaf.theta0, &cfg, PathOptions::default())?,
        PathMode::Exact => {
            let grid = geometric_grid(&cfg, EXACT_BETA_CEILING);
            let opts = PathOptions {
                snapshot_all: false,
                stop_when_fused: true,
            };
            run_exact_path(&problem, &leaves.leaf.theta0, &cfg, &grid, opts)?
        }
    };
    let mut tree = build_tree(&path.events, leaves.n())?;
    fit_representatives(&mut tree, &leaves.quads, &leaves.leaf, &leaves.mask, opts.config.representative_target())?;
    Ok(Explained {
        leaves,
        graph,
        problem,
        path,
        tree,
    })
}

/// Standard normal feature matrix with generic column names.
pub fn gaussian_dataset(n: usize, p: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut rng));
    Dataset::from_matrix(x)
}

/// Drops the intercept row (if any) so coefficients line up with raw features.
pub fn feature_rows<'a>(theta: ArrayView2<'a, f64>, map: &CoordinateMap) -> ArrayView2<'a, f64> {
    let p = map.input_dim();
    theta.slice_move(ndarray::s![..p, ..])
}
