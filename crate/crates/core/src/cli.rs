//! Command-line front end. Every command resolves its flags into a
//! [`Manifest`], writes it next to its outputs, and runs from it; `replay`
//! re-executes a saved manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::baselines::{feature_importance, feature_importance_multilevel, sp_lime_pick, two_step_medians, two_step_path};
use crate::config::RunConfig;
use crate::data::{load_csv, split_dataset, Dataset, Split};
use crate::error::{MameError, Result};
use crate::eval::{ar_exact_study, generalized_fidelity, kendall_tau, rank_descending, Method};
use crate::graph::{load_side_info, PriorGraph};
use crate::oracle::{make_synthetic_blackbox, Oracle, RemoteOracle, SyntheticKind};
use crate::pipeline::{
    default_graph, explain_tree, feature_rows, fit_leaf_stage, gaussian_dataset, ExplainOptions, LeafStage,
};
use crate::solver::{PathMode, PathOptions, SolverConfig};
use crate::tree::{select_level, ExplanationTree, TreeExport};

pub const ORACLE_URL_ENV: &str = "MAME_ORACLE_URL";
pub const DEFAULT_T_GRID: [f64; 7] = [1.01, 1.05, 1.1, 1.2, 1.3, 1.4, 1.5];

#[derive(Debug, Parser)]
#[command(name = "mame", version, about = "Multilevel explanation trees for black-box models")]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit independent local explanations for the training rows.
    Explain(RunArgs),
    /// Build the explanation tree.
    Tree(TreeArgs),
    /// Generalized fidelity and rank correlation for several methods.
    Eval(EvalArgs),
    /// Fidelity of MAME and Two Step side by side at matching cluster counts.
    Compare(CompareArgs),
    /// Distance and timing between one-sweep and converged paths on a synthetic fixture.
    ArStudy(StudyArgs),
    /// Re-run a saved run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV of feature rows to explain
    #[arg(long)]
    pub data: PathBuf,
    /// The CSV has no header row.
    #[arg(long)]
    pub no_header: bool,
    /// Column (name or zero-based index) to drop from the features.
    #[arg(long)]
    pub target_col: Option<String>,
    /// builtin:linear | builtin:piecewise | builtin:sine | http:URL
    #[arg(long)]
    pub oracle: Option<String>,
    /// CSV of `i,j,w` edges over training rows.
    #[arg(long)]
    pub side_info: Option<PathBuf>,
    #[arg(long, default_value_t = 0.75)]
    pub train_frac: f64,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Neighborhood size.
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    /// Nonzero coefficients targeted in leaf explanations.
    #[arg(long, default_value_t = 5)]
    pub k_sparsity: usize,
    /// Nonzero coefficients targeted in representative explanations (default: --k-sparsity).
    #[arg(long)]
    pub rep_sparsity: Option<usize>,
    #[arg(long, default_value_t = 2.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tau: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 10)]
    pub cg_iters: usize,
    /// Probability of resampling a categorical feature in a perturbation.
    #[arg(long, default_value_t = 0.3)]
    pub flip_prob: f64,
    /// Kernel width (default 0.75 * sqrt(p)).
    #[arg(long)]
    pub kernel_width: Option<f64>,
    /// Explain standardized features.
    #[arg(long)]
    pub standardize: bool,
    /// Fit explanations without an intercept.
    #[arg(long)]
    pub no_intercept: bool,
}

impl ConfigArgs {
    fn options(&self, t: f64) -> ExplainOptions {
        ExplainOptions {
            config: RunConfig {
                rho: self.rho,
                t,
                epsilon: self.epsilon,
                tau: self.tau,
                tol: self.tol,
                cg_iters: self.cg_iters,
                neighborhood_size: self.m,
                target_nonzeros: self.k_sparsity,
                representative_nonzeros: self.rep_sparsity,
                categorical_flip_prob: self.flip_prob,
                seed: self.seed,
            },
            intercept: !self.no_intercept,
            standardize: self.standardize,
            kernel_width: self.kernel_width,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Multiplicative step of the fusion schedule.
    #[arg(long, default_value_t = 1.01)]
    pub t: f64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TreeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Solve every fusion level to convergence instead of one sweep per level.
    #[arg(long)]
    pub exact: bool,
    /// Skip the Graphviz export.
    #[arg(long)]
    pub no_dot: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Previously exported tree.json to evaluate instead of rebuilding.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Report only the level with this many clusters.
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "mame,two_step,sp_lime,lime")]
    pub methods: Vec<String>,
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub clusters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub p: usize,
    /// builtin:linear | builtin:piecewise | builtin:sine
    #[arg(long, default_value = "builtin:sine")]
    pub oracle: String,
    /// Fusion schedule steps to compare (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub t: Vec<f64>,
    /// Largest fixture the converged solver is run on.
    #[arg(long, default_value_t = 60)]
    pub max_n: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Explain,
    Tree,
    Eval,
    Compare,
    ArStudy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub data: PathBuf,
    pub has_header: bool,
    pub target_col: Option<String>,
    pub oracle: String,
    pub side_info: Option<PathBuf>,
    pub train_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub n: usize,
    pub p: usize,
    pub oracle: String,
    pub t_grid: Vec<f64>,
    pub max_n: usize,
}

/// Fully resolved description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: CommandKind,
    pub input: Option<InputSpec>,
    pub options: ExplainOptions,
    #[serde(default)]
    pub exact: bool,
    #[serde(default = "yes")]
    pub dot: bool,
    #[serde(default)]
    pub tree: Option<PathBuf>,
    #[serde(default)]
    pub clusters: Option<usize>,
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub study: Option<StudySpec>,
}

fn yes() -> bool {
    true
}

/// Resolves `--oracle`, falling back to the environment for `http:` and when absent.
pub fn resolve_oracle_spec(spec: Option<&str>) -> Result<String> {
    let env = || std::env::var(ORACLE_URL_ENV).ok().filter(|u| !u.trim().is_empty());
    match spec.map(str::trim) {
        Some("http:") | Some("http") => env()
            .map(|u| format!("http:{u}"))
            .ok_or_else(|| MameError::invalid(format!("--oracle http: needs a URL or {ORACLE_URL_ENV}"))),
        Some(s) => Ok(s.to_string()),
        None => env()
            .map(|u| format!("http:{u}"))
            .ok_or_else(|| MameError::invalid(format!("no oracle given (use --oracle or {ORACLE_URL_ENV})"))),
    }
}

/// Builds the oracle named by a resolved spec. Built-in models draw their
/// parameters from `seed`.
pub fn make_oracle(spec: &str, p: usize, seed: u64) -> Result<Oracle> {
    if let Some(kind) = spec.strip_prefix("builtin:") {
        make_synthetic_blackbox(kind.parse::<SyntheticKind>()?, p, seed)
    } else if let Some(url) = spec.strip_prefix("http:") {
        Ok(Oracle::Remote(RemoteOracle::new(url)))
    } else {
        Err(MameError::invalid(format!(
            "unknown oracle '{spec}' (expected builtin:linear, builtin:piecewise, builtin:sine or http:URL)"
        )))
    }
}

fn input_spec(a: &DataArgs) -> Result<InputSpec> {
    Ok(InputSpec {
        data: a.data.clone(),
        has_header: !a.no_header,
        target_col: a.target_col.clone(),
        oracle: resolve_oracle_spec(a.oracle.as_deref())?,
        side_info: a.side_info.clone(),
        train_frac: a.train_frac,
    })
}

fn base_manifest(command: CommandKind, run: &RunArgs) -> Result<Manifest> {
    Ok(Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command,
        input: Some(input_spec(&run.data)?),
        options: run.config.options(run.t),
        exact: false,
        dot: true,
        tree: None,
        clusters: None,
        methods: Vec::new(),
        study: None,
    })
}

/// Turns parsed flags into a manifest and the output directory.
pub fn manifest_from_cli(command: &Command) -> Result<(Manifest, PathBuf)> {
    Ok(match command {
        Command::Explain(run) => (base_manifest(CommandKind::Explain, run)?, run.out_dir.clone()),
        Command::Tree(a) => {
            let mut m = base_manifest(CommandKind::Tree, &a.run)?;
            m.exact = a.exact;
            m.dot = !a.no_dot;
            (m, a.run.out_dir.clone())
        }
        Command::Eval(a) => {
            let mut m = base_manifest(CommandKind::Eval, &a.run)?;
            m.exact = a.exact;
            m.tree = a.tree.clone();
            m.clusters = a.clusters;
            m.methods = a.methods.iter().map(|s| s.parse()).collect::<Result<_>>()?;
            if m.methods.is_empty() {
                return Err(MameError::invalid("no methods selected"));
            }
            (m, a.run.out_dir.clone())
        }
        Command::Compare(a) => {
            let mut m = base_manifest(CommandKind::Compare, &a.run)?;
            m.clusters = a.clusters;
            (m, a.run.out_dir.clone())
        }
        Command::ArStudy(a) => {
            let mut t_grid = if a.t.is_empty() { DEFAULT_T_GRID.to_vec() } else { a.t.clone() };
            t_grid.sort_by(f64::total_cmp);
            let m = Manifest {
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: CommandKind::ArStudy,
                input: None,
                options: a.config.options(DEFAULT_T_GRID[0]),
                exact: true,
                dot: false,
                tree: None,
                clusters: None,
                methods: Vec::new(),
                study: Some(StudySpec {
                    n: a.n,
                    p: a.p,
                    oracle: a.oracle.clone(),
                    t_grid,
                    max_n: a.max_n,
                }),
            };
            (m, a.out_dir.clone())
        }
        Command::Replay(a) => {
            let text = fs::read_to_string(&a.manifest)?;
            (serde_json::from_str(&text)?, a.out_dir.clone())
        }
    })
}

struct Prepared {
    data: Dataset,
    split: Split,
    oracle: Oracle,
    graph: Option<PriorGraph>,
}

fn prepare(m: &Manifest) -> Result<Prepared> {
    let input = m.input.as_ref().ok_or_else(|| MameError::invalid("manifest has no input section"))?;
    let mut data = load_csv(&input.data, input.has_header, None)?;
    if let Some(col) = &input.target_col {
        data.take_column(col)?;
    }
    let split = split_dataset(&data, input.train_frac, m.options.config.seed)?;
    let oracle = make_oracle(&input.oracle, data.p(), m.options.config.seed)?;
    let graph = match &input.side_info {
        Some(path) => Some(load_side_info(path, split.train_idx.len())?),
        None => None,
    };
    Ok(Prepared {
        data,
        split,
        oracle,
        graph,
    })
}

fn mode(m: &Manifest) -> PathMode {
    if m.exact {
        PathMode::Exact
    } else {
        PathMode::Ar
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn fmt_r2(r2: Option<f64>) -> String {
    r2.map_or_else(|| "NaN".to_string(), |v| v.to_string())
}

/// Executes a manifest, writing every output (and the manifest) under `out_dir`.
/// Returns a one-line summary.
pub fn execute(m: &Manifest, out_dir: &Path) -> Result<String> {
    m.options.config.validate()?;
    fs::create_dir_all(out_dir)?;
    write(out_dir, "run_manifest.json", &(serde_json::to_string_pretty(m)? + "\n"))?;
    match m.command {
        CommandKind::Explain => cmd_explain(m, out_dir),
        CommandKind::Tree => cmd_tree(m, out_dir),
        CommandKind::Eval => cmd_eval(m, out_dir),
        CommandKind::Compare => cmd_compare(m, out_dir),
        CommandKind::ArStudy => cmd_ar_study(m, out_dir),
    }
}

fn cmd_explain(m: &Manifest, out: &Path) -> Result<String> {
    let prep = prepare(m)?;
    let stage = fit_leaf_stage(&prep.data, &prep.split.train_idx, &prep.oracle, &m.options)?;
    let names = stage.coefficient_names(&prep.data);
    let mut csv = format!("row_id,alpha,nnz,{}\n", names.join(","));
    for (i, &row) in stage.train_idx.iter().enumerate() {
        let coefs: Vec<String> = stage.leaf.theta0.column(i).iter().map(|v| v.to_string()).collect();
        csv.push_str(&format!(
            "{},{},{},{}\n",
            prep.data.row_ids()[row],
            stage.leaf.alpha[i],
            stage.leaf.nnz[i],
            coefs.join(",")
        ));
    }
    write(out, "explanations.csv", &csv)?;
    Ok(format!("explained {} rows with {} coefficients each", stage.n(), names.len()))
}

fn cmd_tree(m: &Manifest, out: &Path) -> Result<String> {
    let prep = prepare(m)?;
    let res = explain_tree(&prep.data, &prep.split.train_idx, &prep.oracle, &m.options, prep.graph, mode(m))?;
    let names = res.leaves.coefficient_names(&prep.data);
    let export = res.tree.to_export(&names);
    write(out, "tree.json", &(serde_json::to_string_pretty(&export)? + "\n"))?;
    if m.dot {
        write(out, "tree.dot", &res.tree.to_dot(&names))?;
    }
    let mut csv = String::from("k,beta,components,wall_ms\n");
    for l in &res.path.levels {
        csv.push_str(&format!("{},{},{},{}\n", l.k, l.beta, l.components, l.wall_seconds * 1e3));
    }
    write(out, "path.csv", &csv)?;
    let widened: usize = res.path.levels.iter().map(|l| l.widened_edges).sum();
    Ok(format!(
        "tree over {} rows: {} nodes, {} root(s), {} path levels, {widened} widened pair steps",
        res.tree.n,
        res.tree.nodes.len(),
        res.tree.roots.len(),
        res.path.levels.len()
    ))
}

/// Everything the fidelity and importance reports need.
struct Evaluation {
    train: Array2<f64>,
    test: Array2<f64>,
    f_test: Vec<f64>,
    stage: LeafStage,
    mame: ExplanationTree,
    two_step: ExplanationTree,
    black_box: Option<Vec<f64>>,
}

fn evaluation(m: &Manifest) -> Result<Evaluation> {
    let prep = prepare(m)?;
    let train_idx = &prep.split.train_idx;
    let (stage, graph, mame) = match &m.tree {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| MameError::invalid(format!("cannot read tree artifact {}: {e}", path.display())))?;
            let export: TreeExport = serde_json::from_str(&text)?;
            let tree = ExplanationTree::from_export(&export)?;
            let stage = fit_leaf_stage(&prep.data, train_idx, &prep.oracle, &m.options)?;
            if tree.n != stage.n() {
                return Err(MameError::invalid(format!(
                    "tree artifact covers {} rows but the training split has {}",
                    tree.n,
                    stage.n()
                )));
            }
            let graph = match prep.graph {
                Some(g) => g,
                None => default_graph(&prep.data, train_idx, &prep.oracle)?,
            };
            (stage, graph, tree)
        }
        None => {
            let res = explain_tree(&prep.data, train_idx, &prep.oracle, &m.options, prep.graph, mode(m))?;
            (res.leaves, res.graph, res.tree)
        }
    };
    let cfg = SolverConfig::from(&m.options.config);
    let ts = two_step_path(&stage.leaf, graph, &cfg, PathOptions::default())?;
    let two_step = two_step_medians(&ts)?;
    let test = prep.data.rows(&prep.split.test_idx);
    let f_test = prep.oracle.predict_batch(test.view())?.to_vec();
    Ok(Evaluation {
        train: prep.data.rows(train_idx),
        test,
        f_test,
        black_box: prep.oracle.feature_importance(),
        stage,
        mame,
        two_step,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityRow {
    pub method: Method,
    pub level: usize,
    pub clusters: usize,
    pub r2: Option<f64>,
}

impl Evaluation {
    fn all(&self) -> Vec<usize> {
        (0..self.stage.n()).collect()
    }

    fn tree_row(&self, method: Method, tree: &ExplanationTree, c: usize) -> Result<FidelityRow> {
        let view = select_level(tree, c)?;
        let theta = tree.expanded_theta(view.level)?;
        let r2 = generalized_fidelity(
            self.train.view(),
            theta.view(),
            &self.all(),
            &self.stage.map,
            self.test.view(),
            &self.f_test,
        )?;
        Ok(FidelityRow {
            method,
            level: view.level,
            clusters: view.cluster_count(),
            r2,
        })
    }

    fn rows(&self, method: Method, counts: &[usize]) -> Result<Vec<FidelityRow>> {
        let n = self.stage.n();
        let theta0 = &self.stage.leaf.theta0;
        match method {
            Method::Mame => counts.iter().map(|&c| self.tree_row(method, &self.mame, c)).collect(),
            Method::TwoStep => counts.iter().map(|&c| self.tree_row(method, &self.two_step, c)).collect(),
            Method::Lime => {
                if !counts.contains(&n) {
                    return Ok(Vec::new());
                }
                let r2 = generalized_fidelity(
                    self.train.view(),
                    theta0.view(),
                    &self.all(),
                    &self.stage.map,
                    self.test.view(),
                    &self.f_test,
                )?;
                Ok(vec![FidelityRow {
                    method,
                    level: 0,
                    clusters: n,
                    r2,
                }])
            }
            Method::SpLime => counts
                .iter()
                .map(|&c| {
                    let sel = sp_lime_pick(feature_rows(theta0.view(), &self.stage.map), c)?;
                    let r2 = generalized_fidelity(
                        self.train.view(),
                        theta0.view(),
                        &sel.chosen,
                        &self.stage.map,
                        self.test.view(),
                        &self.f_test,
                    )?;
                    Ok(FidelityRow {
                        method,
                        level: c,
                        clusters: c,
                        r2,
                    })
                })
                .collect(),
        }
    }

    fn counts(&self, clusters: Option<usize>) -> Vec<usize> {
        match clusters {
            Some(c) => vec![c],
            None => {
                let mut cs: Vec<usize> = self.mame.levels.iter().map(|l| l.clusters.len()).collect();
                cs.dedup();
                cs
            }
        }
    }

    fn tree_importance(&self, tree: &ExplanationTree) -> Result<Vec<f64>> {
        let levels: Vec<Array2<f64>> = (0..tree.levels.len())
            .map(|l| tree.expanded_theta(l))
            .collect::<Result<_>>()?;
        feature_importance_multilevel(levels.iter().map(|t| feature_rows(t.view(), &self.stage.map)))
    }

    fn importance(&self, method: Method, budget: usize) -> Result<Vec<f64>> {
        let theta0 = feature_rows(self.stage.leaf.theta0.view(), &self.stage.map);
        match method {
            Method::Mame => self.tree_importance(&self.mame),
            Method::TwoStep => self.tree_importance(&self.two_step),
            Method::Lime => Ok(feature_importance(theta0)),
            Method::SpLime => {
                let sel = sp_lime_pick(theta0, budget)?;
                Ok(feature_importance(theta0.select(Axis(1), &sel.chosen).view()))
            }
        }
    }
}

/// Budget used for the SP-LIME importance when no cluster count is given.
const DEFAULT_SP_LIME_BUDGET: usize = 4;

fn cmd_eval(m: &Manifest, out: &Path) -> Result<String> {
    let ev = evaluation(m)?;
    let n = ev.stage.n();
    if let Some(c) = m.clusters {
        if c < 1 || c > n {
            return Err(MameError::invalid(format!("--clusters {c} outside 1..={n}")));
        }
    }
    let counts = ev.counts(m.clusters);
    let mut csv = String::from("method,level,clusters,r2\n");
    let mut rows = 0;
    for &method in &m.methods {
        for r in ev.rows(method, &counts)? {
            csv.push_str(&format!("{},{},{},{}\n", r.method, r.level, r.clusters, fmt_r2(r.r2)));
            rows += 1;
        }
    }
    write(out, "fidelity.csv", &csv)?;

    let budget = m.clusters.unwrap_or(DEFAULT_SP_LIME_BUDGET).min(n);
    let mut methods = BTreeMap::new();
    for &method in &m.methods {
        let imp = ev.importance(method, budget)?;
        let tau = match &ev.black_box {
            Some(bb) => kendall_tau(&rank_descending(bb), &rank_descending(&imp)).ok(),
            None => None,
        };
        methods.insert(
            method.name(),
            json!({
                "importance": imp.iter().map(|v| num(*v)).collect::<Vec<_>>(),
                "kendall_tau": tau.map_or(Value::Null, num),
            }),
        );
    }
    let report = json!({
        "black_box_importance": ev.black_box.as_ref().map(|b| b.iter().map(|v| num(*v)).collect::<Vec<_>>()),
        "methods": methods,
    });
    write(out, "rank_correlation.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(format!("wrote {rows} fidelity rows for {} method(s)", m.methods.len()))
}

fn cmd_compare(m: &Manifest, out: &Path) -> Result<String> {
    let ev = evaluation(m)?;
    let counts = ev.counts(m.clusters);
    let mut csv = String::from("clusters,mame_level,mame_r2,two_step_level,two_step_r2\n");
    for &c in &counts {
        let a = ev.tree_row(Method::Mame, &ev.mame, c)?;
        let b = ev.tree_row(Method::TwoStep, &ev.two_step, c)?;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            a.clusters,
            a.level,
            fmt_r2(a.r2),
            b.level,
            fmt_r2(b.r2)
        ));
    }
    write(out, "comparison.csv", &csv)?;
    Ok(format!("compared {} cluster counts", counts.len()))
}

fn cmd_ar_study(m: &Manifest, out: &Path) -> Result<String> {
    let study = m.study.as_ref().ok_or_else(|| MameError::invalid("manifest has no study section"))?;
    if study.n > study.max_n {
        return Err(MameError::invalid(format!(
            "fixture with n = {} exceeds the converged-solver cap of {}",
            study.n, study.max_n
        )));
    }
    let seed = m.options.config.seed;
    let data = gaussian_dataset(study.n, study.p, seed)?;
    let oracle = make_oracle(&study.oracle, study.p, seed)?;
    let idx: Vec<usize> = (0..study.n).collect();
    let res = explain_tree(&data, &idx, &oracle, &m.options, None, PathMode::Ar)?;
    let cfg = SolverConfig::from(&m.options.config);
    let report = ar_exact_study(&res.problem, &res.leaves.leaf.theta0, &cfg, &study.t_grid, cfg.epsilon)?;
    write(out, "ar_study.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write(out, "ar_study.csv", &report.to_csv())?;
    Ok(format!("compared paths at {} values of t", report.t_grid.len()))
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return 1;
        }
    };
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let result = manifest_from_cli(&cli.command).and_then(|(m, out)| execute(&m, &out));
    match result {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            1
        }
    }
}
