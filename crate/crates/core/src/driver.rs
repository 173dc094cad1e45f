//! Optimization loops: BONSAI, uniform random search, and the joint-GP
//! confidence-bound baselines, with periodic worst-case evaluation of the
//! recommended design.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    acquire, argmin_first, recommend, solve_outer_maxmin, AcquisitionOptions, OuterResult, Recommender, ScenarioObjective,
    UncertaintySet,
};
use crate::error::{invalid, Error, Result};
use crate::funcnet::{FixedPointOptions, NetworkState};
use crate::gp::{fit_hyperparameters, HyperFitOptions, NodeDataset, NodeGp, PriorMean};
use crate::kernel::KernelParams;
use crate::pathwise::{NetworkSample, NodeSurrogate, SampleTag};
use crate::problem::RobustProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "BONSAI")]
    Bonsai,
    #[serde(rename = "Random")]
    Random,
    #[serde(rename = "ARBO-GP")]
    ArboGp,
    #[serde(rename = "ARBO-GP-Quantile")]
    ArboGpQuantile,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Bonsai, Strategy::Random, Strategy::ArboGp, Strategy::ArboGpQuantile];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Bonsai => "BONSAI",
            Strategy::Random => "Random",
            Strategy::ArboGp => "ARBO-GP",
            Strategy::ArboGpQuantile => "ARBO-GP-Quantile",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy '{s}'; expected one of BONSAI, Random, ARBO-GP, ARBO-GP-Quantile")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    /// Total number of full-network evaluations, initialization included.
    pub budget: usize,
    pub acquisition: AcquisitionOptions,
    pub recommender: Recommender,
    /// Options of the first hyperparameter fit of each model.
    pub hyper: HyperFitOptions,
    /// Random restarts of later refits, in addition to the warm start.
    pub refit_restarts: usize,
    /// Ascent iterations of later refits.
    pub refit_iters: usize,
    /// Evaluations between recorded recommendations.
    pub recommend_every: usize,
    /// Standard-deviation multiplier of the confidence-bound baselines.
    pub confidence_multiplier: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            budget: 100,
            acquisition: AcquisitionOptions::default(),
            recommender: Recommender::GpfnMean,
            hyper: HyperFitOptions::default(),
            refit_restarts: 2,
            refit_iters: 50,
            recommend_every: 5,
            confidence_multiplier: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStage {
    Initial,
    Acquisition,
    /// Uniform random query after a failed acquisition.
    Fallback,
}

impl QueryStage {
    pub fn as_str(&self) -> &'static str {
        match self {
            QueryStage::Initial => "initial",
            QueryStage::Acquisition => "acquisition",
            QueryStage::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    /// Number of evaluations including this one.
    pub evaluation: usize,
    pub stage: QueryStage,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub w_index: usize,
    pub node_inputs: Vec<Vec<f64>>,
    pub node_outputs: Vec<f64>,
    pub objective: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRecord {
    /// Evaluations spent when the recommendation was made.
    pub evaluations: usize,
    pub x: Vec<f64>,
    /// True worst case of `x` over the uncertainty set.
    pub worst_case: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub budget: usize,
    pub init_size: usize,
    pub queries: Vec<QueryRecord>,
    pub recommendations: Vec<RecommendationRecord>,
    pub failures: usize,
    pub seconds: f64,
}

impl RunRecord {
    /// `(evaluations, true worst case)` at every recommendation.
    pub fn metric_curve(&self) -> Vec<(usize, f64)> {
        self.recommendations.iter().map(|r| (r.evaluations, r.worst_case)).collect()
    }

    pub fn final_worst_case(&self) -> Option<f64> {
        self.recommendations.last().map(|r| r.worst_case)
    }
}

/// Running maximum of a metric curve.
pub fn best_so_far(curve: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut best = f64::NEG_INFINITY;
    curve
        .iter()
        .map(|(n, v)| {
            best = best.max(*v);
            (*n, best)
        })
        .collect()
}

/// Independent random streams derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    SampleDesign = 2,
    SampleUncertainty = 3,
    Optimizer = 4,
    Hyper = 5,
    Recommend = 6,
    Queries = 7,
}

pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(purpose as u64);
    r
}

fn random_query<R: Rng + ?Sized>(problem: &RobustProblem, rng: &mut R) -> (Vec<f64>, usize) {
    let x = problem.bounds.sample_uniform(rng);
    let j = rng.gen_range(0..problem.set.len());
    (x, j)
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 1.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd > 1e-12 {
        sd
    } else {
        1.0
    }
}

/// Per-node GP posteriors of the function-network surrogate.
pub struct NetworkModel {
    datasets: Vec<Option<NodeDataset>>,
    params: Vec<Option<KernelParams>>,
    models: Vec<NodeSurrogate>,
    outputs: Vec<Vec<f64>>,
}

impl NetworkModel {
    pub fn new(problem: &RobustProblem) -> Self {
        let net = &problem.net;
        let datasets = net
            .nodes()
            .iter()
            .map(|n| n.is_black_box().then(|| NodeDataset::new(n.input_dim())))
            .collect();
        let models = net
            .nodes()
            .iter()
            .enumerate()
            .map(|(k, n)| {
                if n.is_black_box() {
                    let data = NodeDataset::new(n.input_dim());
                    let gp = NodeGp::fit_posterior(PriorMean::Zero, &data, &KernelParams::unit(n.input_dim(), 0.0))
                        .expect("prior model");
                    NodeSurrogate::Gp(Arc::new(gp))
                } else {
                    NodeSurrogate::Known(problem.truth[k].clone())
                }
            })
            .collect();
        NetworkModel {
            datasets,
            params: vec![None; net.node_count()],
            models,
            outputs: vec![Vec::new(); net.node_count()],
        }
    }

    /// Appends `(z_k, h_k)` of every black-box node.
    pub fn add(&mut self, state: &NetworkState) -> Result<()> {
        for (k, ds) in self.datasets.iter_mut().enumerate() {
            if let Some(ds) = ds {
                ds.push(state.node_inputs[k].clone(), state.h[k])?;
            }
            self.outputs[k].push(state.h[k]);
        }
        Ok(())
    }

    pub fn datasets(&self) -> &[Option<NodeDataset>] {
        &self.datasets
    }

    pub fn models(&self) -> &[NodeSurrogate] {
        &self.models
    }

    /// Refits hyperparameters (warm-started after the first fit) and posteriors.
    pub fn refit<R: Rng + ?Sized>(&mut self, opts: &RunOptions, rng: &mut R) -> Result<()> {
        for k in 0..self.datasets.len() {
            let Some(ds) = self.datasets[k].as_mut() else { continue };
            ds.renormalize();
            let warm = self.params[k].clone();
            let hyper = if warm.is_some() {
                HyperFitOptions {
                    restarts: opts.refit_restarts,
                    max_iters: opts.refit_iters,
                    ..opts.hyper.clone()
                }
            } else {
                opts.hyper.clone()
            };
            let fit = fit_hyperparameters(ds, &hyper, warm.as_ref(), rng)?;
            let gp = NodeGp::fit_posterior(PriorMean::Zero, ds, &fit.params)?;
            self.params[k] = Some(fit.params);
            self.models[k] = NodeSurrogate::Gp(Arc::new(gp));
        }
        Ok(())
    }

    /// Fixed-point options whose residual is scaled by observed node output spreads.
    pub fn fixed_point(&self, base: &FixedPointOptions) -> FixedPointOptions {
        FixedPointOptions {
            scales: Some(self.outputs.iter().map(|o| std_dev(o)).collect()),
            ..base.clone()
        }
    }
}

/// One joint GP over `(x, w) ↦ g(x, w)`.
pub struct JointModel {
    data: NodeDataset,
    params: Option<KernelParams>,
    gp: Option<NodeGp>,
}

impl JointModel {
    pub fn new(dim: usize) -> Self {
        JointModel {
            data: NodeDataset::new(dim),
            params: None,
            gp: None,
        }
    }

    pub fn add(&mut self, x: &[f64], w: &[f64], g: f64) -> Result<()> {
        let mut z = x.to_vec();
        z.extend_from_slice(w);
        self.data.push(z, g)
    }

    pub fn refit<R: Rng + ?Sized>(&mut self, opts: &RunOptions, rng: &mut R) -> Result<()> {
        self.data.renormalize();
        let hyper = if self.params.is_some() {
            HyperFitOptions {
                restarts: opts.refit_restarts,
                max_iters: opts.refit_iters,
                ..opts.hyper.clone()
            }
        } else {
            opts.hyper.clone()
        };
        let fit = fit_hyperparameters(&self.data, &hyper, self.params.as_ref(), rng)?;
        self.gp = Some(NodeGp::fit_posterior(PriorMean::Zero, &self.data, &fit.params)?);
        self.params = Some(fit.params);
        Ok(())
    }

    pub fn gp(&self) -> Option<&NodeGp> {
        self.gp.as_ref()
    }
}

/// `μ(x, w_j) + multiplier·σ(x, w_j)` of a joint GP at every scenario.
pub struct ConfidenceScenarios<'a> {
    gp: &'a NodeGp,
    set: &'a UncertaintySet,
    multiplier: f64,
    points: Vec<Vec<f64>>,
    means: Vec<f64>,
    vars: Vec<f64>,
}

impl<'a> ConfidenceScenarios<'a> {
    pub fn new(gp: &'a NodeGp, set: &'a UncertaintySet, multiplier: f64) -> Self {
        let m = set.len();
        ConfidenceScenarios {
            gp,
            set,
            multiplier,
            points: set.points.iter().map(|w| w.clone()).collect(),
            means: vec![0.0; m],
            vars: vec![0.0; m],
        }
    }
}

impl ScenarioObjective for ConfidenceScenarios<'_> {
    fn scenario_count(&self) -> usize {
        self.set.len()
    }

    fn values(&mut self, x: &[f64], out: &mut [f64]) {
        for (p, w) in self.points.iter_mut().zip(&self.set.points) {
            p.clear();
            p.extend_from_slice(x);
            p.extend_from_slice(w);
        }
        self.gp.predict_many(&self.points, &mut self.means, &mut self.vars);
        for j in 0..out.len() {
            out[j] = self.means[j] + self.multiplier * self.vars[j].sqrt();
        }
    }
}

struct Runner<'a> {
    problem: &'a RobustProblem,
    opts: &'a RunOptions,
    record: RunRecord,
    objectives: Vec<f64>,
    started: Instant,
}

impl<'a> Runner<'a> {
    fn evaluations(&self) -> usize {
        self.record.queries.len()
    }

    fn query(&mut self, x: Vec<f64>, w_index: usize, stage: QueryStage, t0: Instant) -> Result<NetworkState> {
        let w = self.problem.set.points[w_index].clone();
        let state = self.problem.state(&x, &w)?;
        let g = crate::funcnet::objective(&self.problem.net, &state)?;
        self.objectives.push(g);
        self.record.queries.push(QueryRecord {
            evaluation: self.record.queries.len() + 1,
            stage,
            x,
            w,
            w_index,
            node_inputs: state.node_inputs.clone(),
            node_outputs: state.h.clone(),
            objective: g,
            seconds: t0.elapsed().as_secs_f64(),
        });
        Ok(state)
    }

    fn due(&self) -> bool {
        let n = self.evaluations();
        let init = self.record.init_size;
        n == self.opts.budget || (n >= init && (n - init) % self.opts.recommend_every.max(1) == 0)
    }

    fn record_recommendation(&mut self, x: Vec<f64>) -> Result<()> {
        let (_, worst) = self.problem.worst_case(&x)?;
        self.record.recommendations.push(RecommendationRecord {
            evaluations: self.evaluations(),
            x,
            worst_case: worst,
        });
        Ok(())
    }

    fn finish(mut self) -> RunRecord {
        self.record.seconds = self.started.elapsed().as_secs_f64();
        self.record
    }
}

/// Runs one strategy on a problem to the evaluation budget.
pub fn run_strategy(problem: &RobustProblem, strategy: Strategy, opts: &RunOptions, seed: u64) -> Result<RunRecord> {
    let init = problem.init_size();
    if opts.budget < init {
        return invalid(format!("budget {} is below the initialization size {init}", opts.budget));
    }
    let mut runner = Runner {
        problem,
        opts,
        record: RunRecord {
            problem: problem.name.clone(),
            strategy,
            seed,
            budget: opts.budget,
            init_size: init,
            queries: Vec::with_capacity(opts.budget),
            recommendations: Vec::new(),
            failures: 0,
            seconds: 0.0,
        },
        objectives: Vec::with_capacity(opts.budget),
        started: Instant::now(),
    };
    let mut init_rng = stream(seed, Stream::Init);
    let mut states = Vec::with_capacity(init);
    for _ in 0..init {
        let t0 = Instant::now();
        let (x, j) = random_query(problem, &mut init_rng);
        states.push(runner.query(x, j, QueryStage::Initial, t0)?);
    }
    match strategy {
        Strategy::Bonsai | Strategy::Random => run_network(&mut runner, strategy, states, seed)?,
        Strategy::ArboGp | Strategy::ArboGpQuantile => run_joint(&mut runner, strategy, seed)?,
    }
    Ok(runner.finish())
}

fn run_network(runner: &mut Runner<'_>, strategy: Strategy, initial: Vec<NetworkState>, seed: u64) -> Result<()> {
    let problem = runner.problem;
    let opts = runner.opts;
    let mut model = NetworkModel::new(problem);
    for s in &initial {
        model.add(s)?;
    }
    let mut hyper_rng = stream(seed, Stream::Hyper);
    let mut rx = stream(seed, Stream::SampleDesign);
    let mut rw = stream(seed, Stream::SampleUncertainty);
    let mut ropt = stream(seed, Stream::Optimizer);
    let mut rrec = stream(seed, Stream::Recommend);
    let mut rq = stream(seed, Stream::Queries);
    let bonsai = strategy == Strategy::Bonsai;
    let mut fitted_for = 0;
    loop {
        let due = runner.due();
        if bonsai || due {
            if fitted_for != runner.evaluations() {
                model.refit(opts, &mut hyper_rng)?;
                fitted_for = runner.evaluations();
            }
        }
        if due {
            let scale = std_dev(&runner.objectives);
            let fp = model.fixed_point(&problem.fixed_point);
            let rec = recommend(
                &problem.net,
                model.models(),
                &problem.bounds,
                &problem.set,
                opts.recommender,
                &opts.acquisition,
                &fp,
                scale,
                &mut rrec,
            )?;
            runner.record_recommendation(rec.x)?;
        }
        if runner.evaluations() >= opts.budget {
            return Ok(());
        }
        let t0 = Instant::now();
        let choice = if bonsai { bonsai_acquire(runner, &model, &mut rx, &mut rw, &mut ropt) } else { Ok(random_query(problem, &mut rq)) };
        let state = match choice.and_then(|(x, j)| {
            runner.query(x, j, QueryStage::Acquisition, t0)
        }) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("{} iteration {} failed: {e}; querying a random point", strategy, runner.evaluations() + 1);
                runner.record.failures += 1;
                let (x, j) = random_query(problem, &mut rq);
                runner.query(x, j, QueryStage::Fallback, t0)?
            }
        };
        model.add(&state)?;
    }
}

fn bonsai_acquire(
    runner: &Runner<'_>,
    model: &NetworkModel,
    rx: &mut ChaCha8Rng,
    rw: &mut ChaCha8Rng,
    ropt: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, usize)> {
    let problem = runner.problem;
    let opts = runner.opts;
    let features = opts.acquisition.features;
    let sx = NetworkSample::draw(&problem.net, model.models(), features, rx, SampleTag::Design)?;
    let sw = NetworkSample::draw(&problem.net, model.models(), features, rw, SampleTag::Uncertainty)?;
    let fp = model.fixed_point(&problem.fixed_point);
    let scale = std_dev(&runner.objectives);
    let acq = acquire(&problem.net, &sx, &sw, &problem.bounds, &problem.set, &opts.acquisition, &fp, scale, ropt)?;
    Ok((acq.x_next, acq.w_index))
}

fn joint_maxmin<R: Rng + ?Sized>(gp: &NodeGp, problem: &RobustProblem, opts: &RunOptions, multiplier: f64, rng: &mut R) -> Result<OuterResult> {
    let mut scen = ConfidenceScenarios::new(gp, &problem.set, multiplier);
    solve_outer_maxmin(&mut scen, &problem.bounds, &opts.acquisition, 1.0, rng)
}

fn run_joint(runner: &mut Runner<'_>, strategy: Strategy, seed: u64) -> Result<()> {
    let problem = runner.problem;
    let opts = runner.opts;
    let beta = opts.confidence_multiplier;
    let mut model = JointModel::new(problem.design_dim() + problem.uncertainty_dim());
    for q in &runner.record.queries {
        model.add(&q.x, &q.w, q.objective)?;
    }
    let mut hyper_rng = stream(seed, Stream::Hyper);
    let mut ropt = stream(seed, Stream::Optimizer);
    let mut rrec = stream(seed, Stream::Recommend);
    let mut rq = stream(seed, Stream::Queries);
    let rec_multiplier = if strategy == Strategy::ArboGpQuantile { -beta } else { 0.0 };
    loop {
        model.refit(opts, &mut hyper_rng)?;
        let gp = model.gp().expect("fitted joint model");
        if runner.due() {
            let rec = joint_maxmin(gp, problem, opts, rec_multiplier, &mut rrec)?;
            runner.record_recommendation(rec.x)?;
        }
        if runner.evaluations() >= opts.budget {
            return Ok(());
        }
        let t0 = Instant::now();
        let choice = joint_maxmin(gp, problem, opts, beta, &mut ropt).map(|outer| {
            let mut lower = ConfidenceScenarios::new(gp, &problem.set, -beta);
            let mut vals = vec![0.0; problem.set.len()];
            lower.values(&outer.x, &mut vals);
            (outer.x, argmin_first(&vals).0)
        });
        let state = match choice.and_then(|(x, j)| runner.query(x, j, QueryStage::Acquisition, t0)) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("{} iteration {} failed: {e}; querying a random point", strategy, runner.evaluations() + 1);
                runner.record.failures += 1;
                let (x, j) = random_query(problem, &mut rq);
                runner.query(x, j, QueryStage::Fallback, t0)?
            }
        };
        let g = crate::funcnet::objective(&problem.net, &state)?;
        let q = runner.record.queries.last().expect("query just made");
        model.add(&q.x.clone(), &q.w.clone(), g)?;
    }
}
