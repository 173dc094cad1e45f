//! Nominal Thompson sampling over function networks on a finite design set,
//! with regret bookkeeping, greedy information gain, parent sensitivity, and
//! the cumulative-regret bound shape.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::driver::{stream, Stream};
use crate::error::{invalid, Error, Result};
use crate::funcnet::{evaluate, objective, FixedPointOptions, FunctionNetwork, NetworkState, NodeFn, NodeSpec};
use crate::gp::{NodeDataset, NodeGp, PriorMean};
use crate::kernel::{matern52, KernelParams};
use crate::optim::BoxBounds;
use crate::pathwise::{PathSample, PosteriorMean};

/// A network without uncertainty inputs, optimized over an explicit list of
/// designs. Black-box nodes carry a known prior kernel and observation noise.
#[derive(Clone)]
pub struct FiniteDesignProblem {
    pub name: String,
    pub net: FunctionNetwork,
    pub truth: Vec<NodeFn>,
    pub designs: Vec<Vec<f64>>,
    /// Prior kernel per node; `None` for white-box nodes. The kernel's noise
    /// variance is the node's observation noise.
    pub kernels: Vec<Option<KernelParams>>,
}

impl std::fmt::Debug for FiniteDesignProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FiniteDesignProblem")
            .field("name", &self.name)
            .field("nodes", &self.net.node_count())
            .field("designs", &self.designs.len())
            .finish()
    }
}

impl FiniteDesignProblem {
    pub fn new(
        name: &str,
        net: FunctionNetwork,
        truth: Vec<NodeFn>,
        designs: Vec<Vec<f64>>,
        kernels: Vec<Option<KernelParams>>,
    ) -> Result<Self> {
        if net.uncertainty_dim() != 0 {
            return invalid("finite design problems take no uncertainty inputs");
        }
        if designs.len() < 2 {
            return invalid(format!("need at least 2 designs, got {}", designs.len()));
        }
        if let Some(x) = designs.iter().find(|x| x.len() != net.design_dim()) {
            return invalid(format!("design {x:?} does not have dimension {}", net.design_dim()));
        }
        if truth.len() != net.node_count() || kernels.len() != net.node_count() {
            return invalid(format!(
                "{} node functions and {} kernels for {} nodes",
                truth.len(),
                kernels.len(),
                net.node_count()
            ));
        }
        for (k, (spec, kernel)) in net.nodes().iter().zip(&kernels).enumerate() {
            match (spec.is_black_box(), kernel) {
                (true, Some(p)) => {
                    p.validate()?;
                    if p.dim() != spec.input_dim() {
                        return invalid(format!("node {k}: kernel dimension {} for input dimension {}", p.dim(), spec.input_dim()));
                    }
                    if p.noise_variance <= 0.0 {
                        return invalid(format!("node {k}: observation noise must be positive"));
                    }
                }
                (true, None) => return invalid(format!("black-box node {k} needs a prior kernel")),
                (false, _) => {}
            }
        }
        Ok(FiniteDesignProblem {
            name: name.to_string(),
            net,
            truth,
            designs,
            kernels,
        })
    }

    /// True network state at every design.
    pub fn true_states(&self, fixed_point: &FixedPointOptions) -> Result<Vec<NetworkState>> {
        self.designs
            .iter()
            .map(|x| {
                let s = evaluate(&self.net, &self.truth, x, &[], None, fixed_point)?;
                if !s.converged {
                    return Err(Error::FixedPoint { residual: s.residual });
                }
                Ok(s)
            })
            .collect()
    }

    /// True objective at every design.
    pub fn true_values(&self, fixed_point: &FixedPointOptions) -> Result<Vec<f64>> {
        self.true_states(fixed_point)?
            .iter()
            .map(|s| objective(&self.net, s))
            .collect()
    }
}

/// First index attaining the maximum; NaN counts as `-∞`.
pub fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.iter().enumerate() {
        let v = if v.is_nan() { f64::NEG_INFINITY } else { *v };
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsOptions {
    /// Random Fourier features per node sample.
    pub features: usize,
    pub fixed_point: FixedPointOptions,
}

impl Default for TsOptions {
    fn default() -> Self {
        TsOptions {
            features: crate::pathwise::DEFAULT_FEATURES,
            fixed_point: FixedPointOptions::default(),
        }
    }
}

/// Per-iteration regret of one run. Index `t − 1` holds iteration `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    pub seed: u64,
    pub optimum_index: usize,
    pub optimum: f64,
    /// Design index queried at each iteration.
    pub queries: Vec<usize>,
    /// Design index recommended at each iteration, from the posterior at the
    /// start of that iteration.
    pub recommendations: Vec<usize>,
    /// `g(x⋆) − g(x_t)`.
    pub instantaneous: Vec<f64>,
    /// Running sum of the instantaneous regret.
    pub cumulative: Vec<f64>,
    /// `g(x⋆) − g(x̂_t)`.
    pub simple: Vec<f64>,
}

impl RegretCurve {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

fn posterior(data: &NodeDataset, kernel: &KernelParams) -> Result<Arc<NodeGp>> {
    Ok(Arc::new(NodeGp::fit_posterior(PriorMean::Zero, data, kernel)?))
}

fn network_values(net: &FunctionNetwork, evaluators: &[NodeFn], designs: &[Vec<f64>], fp: &FixedPointOptions) -> Vec<f64> {
    designs
        .iter()
        .map(|x| {
            evaluate(net, evaluators, x, &[], None, fp)
                .and_then(|s| objective(net, &s))
                .ok()
                .filter(|v| v.is_finite())
                .unwrap_or(f64::NEG_INFINITY)
        })
        .collect()
}

/// Thompson sampling with known node priors: each iteration draws one
/// posterior sample per black-box node, queries the design maximizing the
/// sampled network, and observes every black-box node with Gaussian noise.
/// The recommendation maximizes the network of posterior means.
pub fn nominal_ts_run(problem: &FiniteDesignProblem, iterations: usize, seed: u64, opts: &TsOptions) -> Result<RegretCurve> {
    if iterations == 0 {
        return invalid("at least one iteration is required");
    }
    let fp = &opts.fixed_point;
    let states = problem.true_states(fp)?;
    let values: Vec<f64> = states.iter().map(|s| objective(&problem.net, s)).collect::<Result<_>>()?;
    let (optimum_index, optimum) = argmax_first(&values);
    let mut sample_rng = stream(seed, Stream::SampleDesign);
    let mut noise_rng = stream(seed, Stream::Queries);
    let mut data: Vec<NodeDataset> = problem.net.nodes().iter().map(|n| NodeDataset::new(n.input_dim())).collect();
    let mut curve = RegretCurve {
        seed,
        optimum_index,
        optimum,
        queries: Vec::with_capacity(iterations),
        recommendations: Vec::with_capacity(iterations),
        instantaneous: Vec::with_capacity(iterations),
        cumulative: Vec::with_capacity(iterations),
        simple: Vec::with_capacity(iterations),
    };
    let mut total = 0.0;
    for _ in 0..iterations {
        let mut sample: Vec<NodeFn> = Vec::with_capacity(problem.net.node_count());
        let mut means: Vec<NodeFn> = Vec::with_capacity(problem.net.node_count());
        for (k, kernel) in problem.kernels.iter().enumerate() {
            match kernel {
                Some(p) => {
                    let gp = posterior(&data[k], p)?;
                    means.push(Arc::new(PosteriorMean(gp.clone())));
                    sample.push(Arc::new(PathSample::draw_noisy(gp, opts.features, &mut sample_rng)?));
                }
                None => {
                    means.push(problem.truth[k].clone());
                    sample.push(problem.truth[k].clone());
                }
            }
        }
        let (query, _) = argmax_first(&network_values(&problem.net, &sample, &problem.designs, fp));
        let (rec, _) = argmax_first(&network_values(&problem.net, &means, &problem.designs, fp));
        let regret = optimum - values[query];
        total += regret;
        curve.queries.push(query);
        curve.recommendations.push(rec);
        curve.instantaneous.push(regret);
        curve.cumulative.push(total);
        curve.simple.push(optimum - values[rec]);
        for (k, kernel) in problem.kernels.iter().enumerate() {
            if let Some(p) = kernel {
                let e: f64 = StandardNormal.sample(&mut noise_rng);
                let y = states[query].h[k] + p.noise_variance.sqrt() * e;
                data[k].push(states[query].node_inputs[k].clone(), y)?;
            }
        }
    }
    Ok(curve)
}

/// Classical GP Thompson sampling on a single function of the design,
/// written without the network machinery. Returns the queried indices.
pub fn classical_ts_queries(
    f: &NodeFn,
    kernel: &KernelParams,
    designs: &[Vec<f64>],
    iterations: usize,
    seed: u64,
    features: usize,
) -> Result<Vec<usize>> {
    let truth: Vec<f64> = designs.iter().map(|x| f.eval(x)).collect();
    let mut sample_rng = stream(seed, Stream::SampleDesign);
    let mut noise_rng = stream(seed, Stream::Queries);
    let mut data = NodeDataset::new(kernel.dim());
    let mut queries = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let path = PathSample::draw_noisy(posterior(&data, kernel)?, features, &mut sample_rng)?;
        let sampled: Vec<f64> = designs.iter().map(|x| crate::funcnet::NodeFunction::eval(&path, x)).collect();
        let (q, _) = argmax_first(&sampled);
        let e: f64 = StandardNormal.sample(&mut noise_rng);
        data.push(designs[q].clone(), truth[q] + kernel.noise_variance.sqrt() * e)?;
        queries.push(q);
    }
    Ok(queries)
}

/// Checks that a single-node network whose node reads the whole design in
/// order queries exactly like [`classical_ts_queries`].
pub fn single_node_reduction_holds(problem: &FiniteDesignProblem, iterations: usize, seed: u64, opts: &TsOptions) -> Result<bool> {
    let net = &problem.net;
    let direct = net.node_count() == 1
        && net.nodes()[0].is_black_box()
        && net.nodes()[0].parents.is_empty()
        && net.nodes()[0].design_inputs == (0..net.design_dim()).collect::<Vec<_>>()
        && net.projection() == [1.0];
    if !direct {
        return invalid("reduction check needs one black-box node reading the full design with unit projection");
    }
    let kernel = problem.kernels[0].as_ref().expect("validated black-box kernel");
    let curve = nominal_ts_run(problem, iterations, seed, opts)?;
    let classical = classical_ts_queries(&problem.truth[0], kernel, &problem.designs, iterations, seed, opts.features)?;
    Ok(curve.queries == classical)
}

/// Greedy maximization of `½ log det(I + σ⁻²K_A)` over multisets `A` of the
/// candidates. Entry `t − 1` is the greedy value with `t` points. Greedy is a
/// `(1 − 1/e)` approximation of the true maximum information gain.
pub fn mig_greedy(params: &KernelParams, candidates: &[Vec<f64>], steps: usize, noise_variance: f64) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return invalid("candidate set is empty");
    }
    if steps > candidates.len() {
        return invalid(format!("{steps} steps exceed {} candidates", candidates.len()));
    }
    if noise_variance <= 0.0 {
        return invalid("noise variance must be positive");
    }
    let m = candidates.len();
    let mut cov = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = matern52(&candidates[i], &candidates[j], params)?;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let mut gains = Vec::with_capacity(steps);
    let mut total = 0.0;
    for _ in 0..steps {
        let (best, var) = argmax_first(&(0..m).map(|i| cov[(i, i)]).collect::<Vec<_>>());
        let var = var.max(0.0);
        total += 0.5 * (var / noise_variance).ln_1p();
        gains.push(total);
        let col: DVector<f64> = cov.column(best).into_owned();
        cov -= &col * col.transpose() / (var + noise_variance);
    }
    Ok(gains)
}

/// Greedy information gain summed over the black-box nodes, using each
/// node's true inputs at the designs as candidates.
pub fn mig_sum(problem: &FiniteDesignProblem, steps: usize, fixed_point: &FixedPointOptions) -> Result<Vec<f64>> {
    let states = problem.true_states(fixed_point)?;
    let mut sum = vec![0.0; steps];
    for (k, kernel) in problem.kernels.iter().enumerate() {
        if let Some(p) = kernel {
            let candidates: Vec<Vec<f64>> = states.iter().map(|s| s.node_inputs[k].clone()).collect();
            let steps_k = steps.min(candidates.len());
            let g = mig_greedy(p, &candidates, steps_k, p.noise_variance)?;
            for t in 0..steps {
                sum[t] += g[t.min(steps_k - 1)];
            }
        }
    }
    Ok(sum)
}

/// `C₁ = 2 / log(1 + σ⁻²)`.
pub fn c1(noise_variance: f64) -> f64 {
    2.0 / (1.0 / noise_variance).ln_1p()
}

/// `κ √(2(1 + log|X|)T) √(L_net C₁ γ_sum(T))` for each `(T, γ_sum(T))`.
/// `κ` has no computable value; it is a user-supplied proxy, so only the
/// shape of the curve is meaningful.
pub fn bound_curve(points: &[(usize, f64)], design_count: usize, l_net: f64, noise_variance: f64, kappa: f64) -> Vec<f64> {
    let c = c1(noise_variance);
    let log_x = (design_count as f64).ln();
    points
        .iter()
        .map(|&(t, gamma)| kappa * (2.0 * (1.0 + log_x) * t as f64).sqrt() * (l_net * c * gamma).sqrt())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeLipschitz {
    pub child: usize,
    pub parent: usize,
    pub value: f64,
}

/// Edge constants `L_{k←j}`, the parent-sensitivity matrix `A` with
/// `A_kj = Σ_{j'} L²_{k←j'}` on parent entries, its spectral radius, and the
/// amplification constant `L_net = ‖|c|ᵀ(I − A)⁻¹‖_∞` (only when `ρ(A) < 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityModel {
    pub edges: Vec<EdgeLipschitz>,
    pub a: DMatrix<f64>,
    pub spectral_radius: f64,
    pub l_net: Option<f64>,
}

fn acyclic_pattern(k: usize, edges: &[EdgeLipschitz]) -> bool {
    let mut indegree = vec![0usize; k];
    for e in edges {
        indegree[e.child] += 1;
    }
    let mut ready: Vec<usize> = (0..k).filter(|&i| indegree[i] == 0).collect();
    let mut seen = 0;
    while let Some(j) = ready.pop() {
        seen += 1;
        for e in edges.iter().filter(|e| e.parent == j) {
            indegree[e.child] -= 1;
            if indegree[e.child] == 0 {
                ready.push(e.child);
            }
        }
    }
    seen == k
}

impl SensitivityModel {
    /// Assembles the model from edge constants on `node_count` nodes; edges
    /// may form cycles or self-loops. `weights` is the objective projection.
    pub fn from_edges(node_count: usize, edges: Vec<EdgeLipschitz>, weights: &[f64]) -> Result<Self> {
        if weights.len() != node_count {
            return invalid(format!("{} projection weights for {node_count} nodes", weights.len()));
        }
        if let Some(e) = edges.iter().find(|e| e.child >= node_count || e.parent >= node_count) {
            return invalid(format!("edge {} <- {} out of range", e.child, e.parent));
        }
        let mut lbar2 = vec![0.0; node_count];
        for e in &edges {
            lbar2[e.child] += e.value * e.value;
        }
        let mut a = DMatrix::zeros(node_count, node_count);
        for e in &edges {
            a[(e.child, e.parent)] = lbar2[e.child];
        }
        let spectral_radius = if acyclic_pattern(node_count, &edges) {
            0.0
        } else {
            a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
        };
        let l_net = if spectral_radius < 1.0 {
            let m = (DMatrix::identity(node_count, node_count) - &a).transpose();
            let c = DVector::from_iterator(node_count, weights.iter().map(|w| w.abs()));
            let row = m.lu().solve(&c).ok_or_else(|| Error::NumericFailure {
                message: "I - A is singular".into(),
                condition: f64::INFINITY,
            })?;
            Some(row.iter().fold(0.0, |m: f64, v| m.max(v.abs())))
        } else {
            None
        };
        Ok(SensitivityModel {
            edges,
            a,
            spectral_radius,
            l_net,
        })
    }

    /// Whether `ρ(A) < 1`, the condition for the amplification constant to exist.
    pub fn amplification_bounded(&self) -> bool {
        self.spectral_radius < 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityOptions {
    pub probes: usize,
    pub step: f64,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        SensitivityOptions { probes: 2048, step: 1e-4 }
    }
}

/// Per-node boxes spanned by the true node inputs at the designs.
pub fn probe_boxes(problem: &FiniteDesignProblem, fixed_point: &FixedPointOptions) -> Result<Vec<BoxBounds>> {
    let states = problem.true_states(fixed_point)?;
    problem
        .net
        .nodes()
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let d = spec.input_dim();
            let mut lo = vec![f64::INFINITY; d];
            let mut hi = vec![f64::NEG_INFINITY; d];
            for s in &states {
                for (i, v) in s.node_inputs[k].iter().enumerate() {
                    lo[i] = lo[i].min(*v);
                    hi[i] = hi[i].max(*v);
                }
            }
            BoxBounds::new(lo, hi)
        })
        .collect()
}

/// Estimates each `L_{k←j}` as the largest central-difference slope of node
/// `k`'s function along parent `j` over random probes drawn from `boxes[k]`.
pub fn sensitivity_estimate<R: Rng + ?Sized>(
    net: &FunctionNetwork,
    evaluators: &[NodeFn],
    boxes: &[BoxBounds],
    opts: &SensitivityOptions,
    rng: &mut R,
) -> Result<SensitivityModel> {
    if evaluators.len() != net.node_count() || boxes.len() != net.node_count() {
        return invalid("need one evaluator and one probe box per node");
    }
    if opts.probes == 0 || opts.step <= 0.0 {
        return invalid("probe count and step must be positive");
    }
    let mut edges = Vec::new();
    for (k, spec) in net.nodes().iter().enumerate() {
        if spec.parents.is_empty() {
            continue;
        }
        if boxes[k].dim() != spec.input_dim() {
            return invalid(format!("probe box for node {k} has the wrong dimension"));
        }
        let offset = spec.design_inputs.len() + spec.uncertainty_inputs.len();
        let mut slopes = vec![0.0f64; spec.parents.len()];
        for _ in 0..opts.probes {
            let z = boxes[k].sample_uniform(rng);
            let mut zp = z.clone();
            for (p, slope) in slopes.iter_mut().enumerate() {
                let i = offset + p;
                zp[i] = z[i] + opts.step;
                let up = evaluators[k].eval(&zp);
                zp[i] = z[i] - opts.step;
                let down = evaluators[k].eval(&zp);
                zp[i] = z[i];
                let q = ((up - down) / (2.0 * opts.step)).abs();
                if q.is_finite() {
                    *slope = slope.max(q);
                }
            }
        }
        for (p, &parent) in spec.parents.iter().enumerate() {
            edges.push(EdgeLipschitz {
                child: k,
                parent,
                value: slopes[p],
            });
        }
    }
    SensitivityModel::from_edges(net.node_count(), edges, net.projection())
}

/// Across-seed comparison of simple regret, recommendation regret and
/// average cumulative regret at one horizon `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityRow {
    pub t: usize,
    /// Mean simple regret of the recommendation at `t`.
    pub simple_last: f64,
    /// Mean of `(1/t) Σ_{s≤t}` simple regret.
    pub simple_average: f64,
    /// Mean of cumulative regret divided by `t`.
    pub cumulative_average: f64,
    /// Standard errors of the paired differences for the two inequalities.
    pub first_se: f64,
    pub second_se: f64,
    pub holds: bool,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Checks `simple_T ≤ (1/T)Σ simple_t ≤ (1/T)·cumulative_T` on across-seed
/// means, allowing two standard errors of the paired per-seed differences.
pub fn regret_inequality_check(curves: &[RegretCurve], checkpoints: &[usize]) -> Result<Vec<InequalityRow>> {
    if curves.is_empty() {
        return invalid("no regret curves");
    }
    let mut rows = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        if t == 0 || curves.iter().any(|c| c.len() < t) {
            return invalid(format!("checkpoint {t} outside the recorded iterations"));
        }
        let last: Vec<f64> = curves.iter().map(|c| c.simple[t - 1]).collect();
        let avg: Vec<f64> = curves.iter().map(|c| c.simple[..t].iter().sum::<f64>() / t as f64).collect();
        let cum: Vec<f64> = curves.iter().map(|c| c.cumulative[t - 1] / t as f64).collect();
        let d1: Vec<f64> = last.iter().zip(&avg).map(|(a, b)| a - b).collect();
        let d2: Vec<f64> = avg.iter().zip(&cum).map(|(a, b)| a - b).collect();
        let (m1, se1) = mean_se(&d1);
        let (m2, se2) = mean_se(&d2);
        rows.push(InequalityRow {
            t,
            simple_last: mean_se(&last).0,
            simple_average: mean_se(&avg).0,
            cumulative_average: mean_se(&cum).0,
            first_se: se1,
            second_se: se2,
            holds: m1 <= 2.0 * se1 + 1e-12 && m2 <= 2.0 * se2 + 1e-12,
        });
    }
    Ok(rows)
}

/// Across-seed mean of cumulative regret at `t`, divided by `t`.
pub fn mean_average_regret(curves: &[RegretCurve], t: usize) -> f64 {
    curves.iter().map(|c| c.cumulative[t - 1] / t as f64).sum::<f64>() / curves.len() as f64
}

/// Draws a function from a zero-mean GP prior.
fn prior_draw<R: Rng + ?Sized>(kernel: &KernelParams, features: usize, rng: &mut R) -> Result<NodeFn> {
    let gp = posterior(&NodeDataset::new(kernel.dim()), kernel)?;
    Ok(Arc::new(PathSample::draw(gp, features, rng)?))
}

const TRUTH_FEATURES: usize = 2048;

fn grid_designs(count: usize) -> Vec<Vec<f64>> {
    (0..count).map(|i| vec![i as f64 / (count - 1).max(1) as f64]).collect()
}

/// One black-box node on `count` designs evenly spaced in `[0, 1]`, with the
/// truth drawn from the node prior using `truth_seed`.
pub fn single_node_problem(count: usize, truth_seed: u64) -> Result<FiniteDesignProblem> {
    let kernel = KernelParams::new(1.0, vec![0.2], 1e-2)?;
    let net = FunctionNetwork::new(vec![NodeSpec::black("f", &[0], &[], &[])], vec![1.0], 1, 0)?;
    let mut rng = stream(truth_seed, Stream::Init);
    let truth = vec![prior_draw(&kernel, TRUTH_FEATURES, &mut rng)?];
    FiniteDesignProblem::new("single_node", net, truth, grid_designs(count), vec![Some(kernel)])
}

/// Chain `h₁ = f₁(x)`, `h₂ = f₂(x, h₁)`, `h₃ = f₃(x, h₂)` with objective `h₃`
/// on `count` designs in `[0, 1]`; node truths are drawn from their priors.
pub fn chain_problem(count: usize, truth_seed: u64) -> Result<FiniteDesignProblem> {
    let first = KernelParams::new(1.0, vec![0.2], 1e-2)?;
    let later = KernelParams::new(1.0, vec![0.2, 1.0], 1e-2)?;
    let net = FunctionNetwork::new(
        vec![
            NodeSpec::black("f1", &[0], &[], &[]),
            NodeSpec::black("f2", &[0], &[], &[0]),
            NodeSpec::black("f3", &[0], &[], &[1]),
        ],
        vec![0.0, 0.0, 1.0],
        1,
        0,
    )?;
    let mut rng = stream(truth_seed, Stream::Init);
    let truth = vec![
        prior_draw(&first, TRUTH_FEATURES, &mut rng)?,
        prior_draw(&later, TRUTH_FEATURES, &mut rng)?,
        prior_draw(&later, TRUTH_FEATURES, &mut rng)?,
    ];
    FiniteDesignProblem::new("chain", net, truth, grid_designs(count), vec![Some(first), Some(later.clone()), Some(later)])
}

/// Names accepted by [`make_regret_problem`].
pub const REGRET_PROBLEMS: [&str; 2] = ["single_node", "chain"];

pub fn make_regret_problem(name: &str, count: usize, truth_seed: u64) -> Result<FiniteDesignProblem> {
    match name {
        "single_node" => single_node_problem(count, truth_seed),
        "chain" => chain_problem(count, truth_seed),
        _ => invalid(format!("unknown regret problem `{name}`; expected one of {}", REGRET_PROBLEMS.join(", "))),
    }
}
