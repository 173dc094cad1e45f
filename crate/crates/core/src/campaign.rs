//! Experiment configuration, problem files, campaign execution over a worker
//! pool, and the CSV/JSON outputs of runs, oracles and regret studies.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use evalexpr::{build_operator_tree, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::UncertaintySet;
use crate::bench::{make_benchmark, robust_oracle, OracleResult};
use crate::driver::{run_strategy, RunOptions, RunRecord, Strategy};
use crate::error::{Error, Result};
use crate::funcnet::{FunctionNetwork, NodeFn, NodeFunction, NodeSpec};
use crate::optim::BoxBounds;
use crate::problem::RobustProblem;
use crate::regret::{
    bound_curve, regret_inequality_check, make_regret_problem, mig_sum, nominal_ts_run, probe_boxes, sensitivity_estimate,
    single_node_reduction_holds, InequalityRow, RegretCurve, SensitivityOptions, TsOptions,
};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const RUN_CSV_SCHEMA: &str = "bonsai-run-v1";
pub const ORACLE_CSV_SCHEMA: &str = "bonsai-oracle-v1";
pub const REGRET_CSV_SCHEMA: &str = "bonsai-regret-v1";
pub const SUMMARY_SCHEMA: &str = "bonsai-summary-v1";

/// Environment variable overriding the configured worker count.
pub const WORKERS_ENV: &str = "BONSAI_WORKERS";

fn config_error(message: impl Into<String>) -> Error {
    Error::Config(message.into())
}

fn check_schema(version: u32) -> Result<()> {
    if version != CONFIG_SCHEMA_VERSION {
        return Err(config_error(format!(
            "schema_version {version} is not supported (expected {CONFIG_SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

/// Resolves `path` against the directory of the file that referenced it.
fn relative_to(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Name of a built-in benchmark; exclusive with `problem_file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<String>,
    /// Path to a problem file, relative to the configuration file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_file: Option<PathBuf>,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub options: RunOptions,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        check_schema(c.schema_version)?;
        Ok(c)
    }

    /// Reads a configuration; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut c = Self::from_toml_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        c.problem_file = c.problem_file.map(|p| relative_to(path, &p));
        c.output_dir = relative_to(path, &c.output_dir);
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_error(e.to_string()))
    }

    pub fn problem(&self) -> Result<RobustProblem> {
        match (&self.benchmark, &self.problem_file) {
            (Some(name), None) => Ok(make_benchmark(name)?.problem),
            (None, Some(path)) => ProblemFile::load(path)?.build(),
            _ => Err(config_error("exactly one of `benchmark` and `problem_file` must be set")),
        }
    }

    /// Checks the campaign against the problem it runs on.
    pub fn validate(&self, problem: &RobustProblem) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(config_error("`strategies` is empty"));
        }
        if self.seeds.is_empty() {
            return Err(config_error("`seeds` is empty"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.seeds {
            if !seen.insert(s) {
                return Err(config_error(format!("seed {s} appears more than once in `seeds`")));
            }
        }
        let mut strategies = std::collections::BTreeSet::new();
        for s in &self.strategies {
            if !strategies.insert(s.to_string()) {
                return Err(config_error(format!("strategy {s} appears more than once in `strategies`")));
            }
        }
        let init = problem.init_size();
        if self.options.budget < init {
            return Err(config_error(format!(
                "`options.budget` = {} is below the initialization size {init} of `{}`",
                self.options.budget, problem.name
            )));
        }
        if self.options.recommend_every == 0 {
            return Err(config_error("`options.recommend_every` must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(config_error("`workers` must be at least 1"));
        }
        Ok(())
    }
}

/// A node of a problem file. `expression` is the node's function of its
/// input vector, written with variables `z0, z1, ...` in the layout design
/// inputs, uncertainty inputs, parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemNode {
    #[serde(flatten)]
    pub spec: NodeSpec,
    pub expression: String,
}

/// A custom robust problem: network, node expressions, design box and a
/// finite uncertainty set (explicit points or a product of grids).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema_version: u32,
    pub name: String,
    pub design_lower: Vec<f64>,
    pub design_upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty_points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty_grids: Option<Vec<Vec<f64>>>,
    pub nominal: Vec<f64>,
    pub projection: Vec<f64>,
    pub nodes: Vec<ProblemNode>,
}

/// Node function given by an arithmetic expression over `z0, z1, ...`.
pub struct ExpressionNode {
    tree: Node<DefaultNumericTypes>,
    names: Vec<String>,
}

impl ExpressionNode {
    pub fn parse(expression: &str, input_dim: usize) -> Result<Self> {
        let tree = build_operator_tree::<DefaultNumericTypes>(expression)
            .map_err(|e| config_error(format!("cannot parse `{expression}`: {e}")))?;
        let names: Vec<String> = (0..input_dim).map(|i| format!("z{i}")).collect();
        for v in tree.iter_variable_identifiers() {
            if !names.iter().any(|n| n == v) {
                return Err(config_error(format!(
                    "`{expression}` uses `{v}`; the node has inputs z0..z{}",
                    input_dim.saturating_sub(1)
                )));
            }
        }
        let node = ExpressionNode { tree, names };
        node.try_eval(&vec![0.5; input_dim])
            .map_err(|e| config_error(format!("cannot evaluate `{expression}`: {e}")))?;
        Ok(node)
    }

    fn try_eval(&self, z: &[f64]) -> std::result::Result<f64, String> {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        for (name, v) in self.names.iter().zip(z) {
            ctx.set_value(name.clone(), Value::Float(*v)).map_err(|e| e.to_string())?;
        }
        self.tree.eval_number_with_context(&ctx).map_err(|e| e.to_string())
    }
}

impl NodeFunction for ExpressionNode {
    fn eval(&self, z: &[f64]) -> f64 {
        self.try_eval(z).unwrap_or(f64::NAN)
    }
}

impl ProblemFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let p: ProblemFile = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        check_schema(p.schema_version)?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
    }

    pub fn build(&self) -> Result<RobustProblem> {
        let specs: Vec<NodeSpec> = self.nodes.iter().map(|n| n.spec.clone()).collect();
        let design_dim = self.design_lower.len();
        let net = FunctionNetwork::new(specs, self.projection.clone(), design_dim, self.nominal.len())?;
        let truth = self
            .nodes
            .iter()
            .enumerate()
            .map(|(k, n)| {
                let f = ExpressionNode::parse(&n.expression, n.spec.input_dim())
                    .map_err(|e| config_error(format!("node {k} ({}): {e}", n.spec.name)))?;
                Ok(Arc::new(f) as NodeFn)
            })
            .collect::<Result<Vec<_>>>()?;
        let bounds = BoxBounds::new(self.design_lower.clone(), self.design_upper.clone())?;
        let set = match (&self.uncertainty_points, &self.uncertainty_grids) {
            (Some(points), None) => UncertaintySet::new(points.clone(), self.nominal.clone())?,
            (None, Some(grids)) => UncertaintySet::product(grids, self.nominal.clone())?,
            _ => return Err(config_error("exactly one of `uncertainty_points` and `uncertainty_grids` must be set")),
        };
        RobustProblem::new(&self.name, net, truth, bounds, set)
    }
}

/// Worker count: explicit request, then the environment override, then the
/// configuration, then the available parallelism.
pub fn resolve_workers(explicit: Option<usize>, configured: Option<usize>) -> Result<usize> {
    if let Some(n) = explicit {
        return if n == 0 { Err(config_error("worker count must be at least 1")) } else { Ok(n) };
    }
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(config_error(format!("{WORKERS_ENV}=`{v}` is not a positive integer"))),
        };
    }
    Ok(configured.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes a run as CSV: one row per evaluation, with the recommendation made
/// after that evaluation (if any) and its true worst case.
pub fn write_run_csv<W: Write>(out: W, record: &RunRecord, problem: &RobustProblem) -> Result<()> {
    let nx = problem.design_dim();
    let nw = problem.uncertainty_dim();
    let k = problem.net.node_count();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["schema".to_string(), "iteration".into(), "stage".into()];
    header.extend((1..=nx).map(|i| format!("x{i}")));
    header.extend((1..=nw).map(|i| format!("w{i}")));
    header.push("w_index".into());
    header.extend(problem.net.nodes().iter().map(|n| format!("h_{}", n.name)));
    header.push("objective".into());
    header.push("recommendation".into());
    header.extend((1..=nx).map(|i| format!("rec_x{i}")));
    header.push("worst_case".into());
    w.write_record(&header)?;
    for q in &record.queries {
        let rec = record.recommendations.iter().find(|r| r.evaluations == q.evaluation);
        let mut row = vec![RUN_CSV_SCHEMA.to_string(), q.evaluation.to_string(), q.stage.as_str().to_string()];
        row.extend(q.x.iter().map(f64::to_string));
        row.extend(q.w.iter().map(f64::to_string));
        row.push(q.w_index.to_string());
        row.extend((0..k).map(|i| fmt_opt(q.node_outputs.get(i).copied())));
        row.push(q.objective.to_string());
        row.push(rec.is_some().to_string());
        match rec {
            Some(r) => row.extend(r.x.iter().map(f64::to_string)),
            None => row.extend((0..nx).map(|_| String::new())),
        }
        row.push(fmt_opt(rec.map(|r| r.worst_case)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and 95% half-width `1.96·SE` of a sample.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub evaluations: usize,
    pub mean: f64,
    pub ci_half_width: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub final_worst_case: Option<f64>,
    pub failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub curve: Vec<CurvePoint>,
    pub final_mean: f64,
    pub final_ci_half_width: f64,
    pub seeds: Vec<SeedOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub schema: String,
    pub tool_version: String,
    pub problem: String,
    pub config: ExperimentConfig,
    pub workers: usize,
    pub wall_seconds: f64,
    pub failed_cells: usize,
    pub strategies: Vec<StrategySummary>,
}

impl CampaignSummary {
    pub fn strategy(&self, s: Strategy) -> Option<&StrategySummary> {
        self.strategies.iter().find(|x| x.strategy == s)
    }
}

pub fn run_file_name(problem: &str, strategy: Strategy, seed: u64) -> String {
    let tag: String = strategy.to_string().chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect();
    format!("{problem}_{tag}_seed{seed}.csv")
}

fn summarize(strategy: Strategy, cells: &[(u64, std::result::Result<RunRecord, String>, Option<String>)]) -> StrategySummary {
    let records: Vec<&RunRecord> = cells.iter().filter_map(|(_, r, _)| r.as_ref().ok()).collect();
    let mut checkpoints: Vec<usize> = records.iter().flat_map(|r| r.recommendations.iter().map(|x| x.evaluations)).collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let curve = checkpoints
        .into_iter()
        .map(|n| {
            let vals: Vec<f64> = records
                .iter()
                .filter_map(|r| r.recommendations.iter().find(|x| x.evaluations == n).map(|x| x.worst_case))
                .collect();
            let (mean, ci) = mean_ci(&vals);
            CurvePoint {
                evaluations: n,
                mean,
                ci_half_width: ci,
                seeds: vals.len(),
            }
        })
        .collect();
    let finals: Vec<f64> = records.iter().filter_map(|r| r.final_worst_case()).collect();
    let (final_mean, final_ci_half_width) = mean_ci(&finals);
    let seeds = cells
        .iter()
        .map(|(seed, r, csv)| match r {
            Ok(r) => SeedOutcome {
                seed: *seed,
                final_worst_case: r.final_worst_case(),
                failures: r.failures,
                error: None,
                csv: csv.clone(),
            },
            Err(e) => SeedOutcome {
                seed: *seed,
                final_worst_case: None,
                failures: 0,
                error: Some(e.clone()),
                csv: None,
            },
        })
        .collect();
    StrategySummary {
        strategy,
        curve,
        final_mean,
        final_ci_half_width,
        seeds,
    }
}

/// Runs every (strategy, seed) cell on a pool of `workers` threads, writes
/// one CSV per cell and `summary.json` into the output directory.
pub fn run_campaign(config: &ExperimentConfig, workers: usize) -> Result<CampaignSummary> {
    let problem = config.problem()?;
    config.validate(&problem)?;
    fs::create_dir_all(&config.output_dir)?;
    let start = Instant::now();
    let cells: Vec<(Strategy, u64)> = config
        .strategies
        .iter()
        .flat_map(|s| config.seeds.iter().map(move |seed| (*s, *seed)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| config_error(format!("cannot start {workers} workers: {e}")))?;
    let results: Vec<(Strategy, u64, std::result::Result<RunRecord, String>, Option<String>)> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|&(strategy, seed)| {
                log::info!("{} {strategy} seed {seed}: start", problem.name);
                match run_strategy(&problem, strategy, &config.options, seed) {
                    Ok(record) => {
                        let name = run_file_name(&problem.name, strategy, seed);
                        let written = fs::File::create(config.output_dir.join(&name))
                            .map_err(Error::from)
                            .and_then(|f| write_run_csv(std::io::BufWriter::new(f), &record, &problem));
                        match written {
                            Ok(()) => (strategy, seed, Ok(record), Some(name)),
                            Err(e) => (strategy, seed, Err(format!("writing {name}: {e}")), None),
                        }
                    }
                    Err(e) => {
                        log::warn!("{} {strategy} seed {seed}: {e}", problem.name);
                        (strategy, seed, Err(e.to_string()), None)
                    }
                }
            })
            .collect()
    });
    let failed_cells = results.iter().filter(|r| r.2.is_err()).count();
    let strategies = config
        .strategies
        .iter()
        .map(|&s| {
            let cells: Vec<_> = results
                .iter()
                .filter(|r| r.0 == s)
                .map(|(_, seed, r, csv)| (*seed, r.clone(), csv.clone()))
                .collect();
            summarize(s, &cells)
        })
        .collect();
    let summary = CampaignSummary {
        schema: SUMMARY_SCHEMA.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        problem: problem.name.clone(),
        config: config.clone(),
        workers,
        wall_seconds: start.elapsed().as_secs_f64(),
        failed_cells,
        strategies,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(config.output_dir.join("summary.json"), json + "\n")?;
    Ok(summary)
}

/// Oracle table as CSV: every evaluated cell, then the refined optimum
/// flagged in the `optimum` column.
pub fn write_oracle_csv<W: Write>(out: W, result: &OracleResult) -> Result<()> {
    let nx = result.x.len();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["schema".to_string()];
    header.extend((1..=nx).map(|i| format!("x{i}")));
    header.push("worst_case".into());
    header.push("optimum".into());
    w.write_record(&header)?;
    let mut row = |x: &[f64], v: f64, opt: bool| {
        let mut r = vec![ORACLE_CSV_SCHEMA.to_string()];
        r.extend(x.iter().map(f64::to_string));
        r.push(v.to_string());
        r.push(opt.to_string());
        w.write_record(&r).map_err(Error::from)
    };
    for c in &result.table {
        row(&c.x, c.value, false)?;
    }
    row(&result.x, result.value, true)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_oracle(name: &str, grid: Option<usize>) -> Result<(OracleResult, String)> {
    let b = make_benchmark(name)?;
    let r = robust_oracle(&b.problem, grid.unwrap_or(b.grid))?;
    let mut buf = Vec::new();
    write_oracle_csv(&mut buf, &r)?;
    Ok((r, String::from_utf8(buf).expect("csv output is utf-8")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegretConfig {
    pub schema_version: u32,
    /// One of the built-in finite design problems.
    pub problem: String,
    pub designs: usize,
    pub iterations: usize,
    /// Each seed draws its own truth from the prior and runs once.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<usize>,
    /// Proxy for the sub-Gaussian constant of the bound.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub ts: TsOptions,
    #[serde(default)]
    pub sensitivity: SensitivityOptions,
}

fn default_checkpoints() -> Vec<usize> {
    vec![25, 50, 100]
}

fn default_kappa() -> f64 {
    1.0
}

impl RegretConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: RegretConfig = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        check_schema(c.schema_version)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut c = Self::from_toml_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        c.output_dir = relative_to(path, &c.output_dir);
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_error("`seeds` is empty"));
        }
        let distinct: std::collections::BTreeSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(config_error("`seeds` contains duplicates"));
        }
        if self.iterations == 0 {
            return Err(config_error("`iterations` must be at least 1"));
        }
        if let Some(t) = self.checkpoints.iter().find(|t| **t == 0 || **t > self.iterations) {
            return Err(config_error(format!("checkpoint {t} is outside 1..={}", self.iterations)));
        }
        if !(self.kappa > 0.0) {
            return Err(config_error("`kappa` must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSensitivity {
    pub seed: u64,
    pub spectral_radius: f64,
    pub l_net: Option<f64>,
    pub edge_lipschitz: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub schema: String,
    pub tool_version: String,
    pub config: RegretConfig,
    pub note: String,
    /// `Some("pass"|"fail")` for single-node problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<String>,
    pub average_regret: Vec<(usize, f64)>,
    pub inequalities: Vec<InequalityRow>,
    pub inequalities_hold: bool,
    pub sensitivity: Vec<SeedSensitivity>,
    pub wall_seconds: f64,
}

struct SeedRegret {
    curve: RegretCurve,
    bound: Vec<f64>,
    sensitivity: SeedSensitivity,
    reduction: Option<bool>,
}

fn regret_seed(config: &RegretConfig, seed: u64) -> Result<SeedRegret> {
    let problem = make_regret_problem(&config.problem, config.designs, seed)?;
    let fp = &config.ts.fixed_point;
    let curve = nominal_ts_run(&problem, config.iterations, seed, &config.ts)?;
    let boxes = probe_boxes(&problem, fp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sens = sensitivity_estimate(&problem.net, &problem.truth, &boxes, &config.sensitivity, &mut rng)?;
    let steps = config.iterations.min(problem.designs.len());
    let gamma = mig_sum(&problem, steps, fp)?;
    let noise = problem.kernels.iter().flatten().map(|k| k.noise_variance).fold(f64::INFINITY, f64::min);
    let points: Vec<(usize, f64)> = (1..=config.iterations).map(|t| (t, gamma[(t - 1).min(steps - 1)])).collect();
    let bound = match sens.l_net {
        Some(l) => bound_curve(&points, problem.designs.len(), l, noise, config.kappa),
        None => vec![f64::NAN; config.iterations],
    };
    let reduction = if problem.net.node_count() == 1 {
        Some(single_node_reduction_holds(&problem, config.iterations, seed, &config.ts)?)
    } else {
        None
    };
    Ok(SeedRegret {
        curve,
        bound,
        sensitivity: SeedSensitivity {
            seed,
            spectral_radius: sens.spectral_radius,
            l_net: sens.l_net,
            edge_lipschitz: sens.edges.iter().map(|e| (e.child, e.parent, e.value)).collect(),
        },
        reduction,
    })
}

fn write_regret_csv(path: &Path, rows: impl Iterator<Item = Vec<String>>, header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the regret study, writing per-seed and aggregate CSV curves and a
/// JSON report with the inequalities check, sensitivities and reduction check.
pub fn cmd_regret(config: &RegretConfig, workers: usize) -> Result<RegretReport> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| config_error(format!("cannot start {workers} workers: {e}")))?;
    let seeds: Vec<SeedRegret> = pool.install(|| {
        use rayon::prelude::*;
        config.seeds.par_iter().map(|&s| regret_seed(config, s)).collect::<Result<Vec<_>>>()
    })?;
    let header = ["schema", "t", "query", "recommendation", "instantaneous", "cumulative", "simple", "bound"];
    for s in &seeds {
        let c = &s.curve;
        let rows = (0..c.len()).map(|i| {
            vec![
                REGRET_CSV_SCHEMA.to_string(),
                (i + 1).to_string(),
                c.queries[i].to_string(),
                c.recommendations[i].to_string(),
                c.instantaneous[i].to_string(),
                c.cumulative[i].to_string(),
                c.simple[i].to_string(),
                s.bound[i].to_string(),
            ]
        });
        write_regret_csv(&config.output_dir.join(format!("regret_seed{}.csv", c.seed)), rows, &header)?;
    }
    let n = seeds.len() as f64;
    let mean_of = |f: &dyn Fn(&SeedRegret) -> f64| seeds.iter().map(f).sum::<f64>() / n;
    let agg_header = ["schema", "t", "instantaneous", "cumulative", "cumulative_ci", "simple", "average_regret", "bound"];
    let rows = (0..config.iterations).map(|i| {
        let cum: Vec<f64> = seeds.iter().map(|s| s.curve.cumulative[i]).collect();
        let (cm, ci) = mean_ci(&cum);
        vec![
            REGRET_CSV_SCHEMA.to_string(),
            (i + 1).to_string(),
            mean_of(&|s| s.curve.instantaneous[i]).to_string(),
            cm.to_string(),
            ci.to_string(),
            mean_of(&|s| s.curve.simple[i]).to_string(),
            (cm / (i + 1) as f64).to_string(),
            mean_of(&|s| s.bound[i]).to_string(),
        ]
    });
    write_regret_csv(&config.output_dir.join("regret_aggregate.csv"), rows, &agg_header)?;
    let curves: Vec<RegretCurve> = seeds.iter().map(|s| s.curve.clone()).collect();
    let inequalities = regret_inequality_check(&curves, &config.checkpoints)?;
    let reduction = seeds
        .iter()
        .map(|s| s.reduction)
        .collect::<Option<Vec<bool>>>()
        .map(|v| if v.iter().all(|x| *x) { "pass".to_string() } else { "fail".to_string() });
    let report = RegretReport {
        schema: SUMMARY_SCHEMA.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        note: format!(
            "bound values use kappa = {} as an uncalibrated proxy and greedy information gain; compare growth, not magnitude",
            config.kappa
        ),
        reduction,
        average_regret: config
            .checkpoints
            .iter()
            .map(|&t| (t, curves.iter().map(|c| c.cumulative[t - 1] / t as f64).sum::<f64>() / n))
            .collect(),
        inequalities_hold: inequalities.iter().all(|r| r.holds),
        inequalities,
        sensitivity: seeds.iter().map(|s| s.sensitivity.clone()).collect(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(config.output_dir.join("regret_report.json"), json + "\n")?;
    Ok(report)
}
