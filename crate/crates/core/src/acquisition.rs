//! Max-min acquisition: smoothed worst case over a finite uncertainty set,
//! the outer design search, the inner worst-case enumeration, and the
//! posterior recommenders.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::funcnet::{evaluate, forward_acyclic, forward_acyclic_masked, FixedPointOptions, ForwardWorkspace, FunctionNetwork, NetworkState, NodeFn};
use crate::optim::{evolve_maximize, maximize_box, sobol_points, BoxBounds, EvolutionOptions, LocalOptions};
use crate::pathwise::{mean_evaluators, NetworkSample, NodeSurrogate, SampleTag};

/// Finite uncertainty set with a nominal member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySet {
    pub points: Vec<Vec<f64>>,
    pub nominal: Vec<f64>,
}

impl UncertaintySet {
    pub fn new(points: Vec<Vec<f64>>, nominal: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return invalid("uncertainty set needs at least one point");
        }
        let d = nominal.len();
        if points.iter().any(|p| p.len() != d) {
            return invalid("uncertainty points must share the nominal dimension");
        }
        Ok(UncertaintySet { points, nominal })
    }

    /// Cartesian product of per-coordinate grids, first coordinate slowest.
    pub fn product(grids: &[Vec<f64>], nominal: Vec<f64>) -> Result<Self> {
        let mut points: Vec<Vec<f64>> = vec![Vec::new()];
        for g in grids {
            points = points
                .into_iter()
                .flat_map(|p| {
                    g.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        Self::new(points, nominal)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nominal.len()
    }
}

/// Smooth maximum `max q + τ·log Σ_i [1 + ((q_i − max q)/τ)²]⁻¹`.
/// When `grad` is given it receives `∂φ/∂q`.
pub fn fat_max(q: &[f64], tau: f64, grad: Option<&mut [f64]>) -> Result<f64> {
    if q.is_empty() {
        return invalid("fat extremum of an empty vector");
    }
    if !(tau > 0.0) {
        return invalid("smoothing width must be positive");
    }
    let (imax, m) = q
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if *v > bv { (i, *v) } else { (bi, bv) });
    if !m.is_finite() {
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        return Ok(m);
    }
    let mut total = 0.0;
    for v in q {
        let u = (v - m) / tau;
        total += 1.0 / (1.0 + u * u);
    }
    if let Some(g) = grad {
        let mut at_max = 1.0;
        for (i, v) in q.iter().enumerate() {
            let u = (v - m) / tau;
            let s = 1.0 / (1.0 + u * u);
            let d = -2.0 * u * s * s / total;
            g[i] = d;
            at_max -= d;
        }
        g[imax] = at_max;
    }
    Ok(m + tau * total.ln())
}

/// Smooth minimum `−fat_max(−q)`.
pub fn fat_min(q: &[f64], tau: f64, grad: Option<&mut [f64]>) -> Result<f64> {
    let neg: Vec<f64> = q.iter().map(|v| -v).collect();
    Ok(-fat_max(&neg, tau, grad)?)
}

/// Index and value of the hard minimum, lowest index among ties.
pub fn argmin_first(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.iter().enumerate() {
        let v = if v.is_nan() { f64::INFINITY } else { *v };
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

/// Objective values at every uncertainty scenario for a given design.
pub trait ScenarioObjective {
    fn scenario_count(&self) -> usize;

    /// Writes `g(x, w_j)` for every scenario `j`.
    fn values(&mut self, x: &[f64], out: &mut [f64]);

    /// Writes values and the row-major `m × n_x` Jacobian. Returns `false`
    /// when gradients are unavailable.
    fn values_grad(&mut self, _x: &[f64], _out: &mut [f64], _jac: &mut [f64]) -> bool {
        false
    }

    fn has_grad(&self) -> bool {
        false
    }
}

/// Scenario values of a function network under fixed node evaluators.
///
/// On acyclic networks, a node whose uncertainty support agrees between two
/// scenarios has the same output in both, so it is evaluated once per `x`
/// and copied.
pub struct NetworkScenarios<'a> {
    net: &'a FunctionNetwork,
    evaluators: &'a [NodeFn],
    set: &'a UncertaintySet,
    fixed_point: &'a FixedPointOptions,
    /// Value assigned to scenarios whose evaluation fails.
    pub failure_value: f64,
    ws: ForwardWorkspace,
    grad: Vec<f64>,
    /// `S × K`: earliest scenario sharing node `k`'s output with scenario `j`.
    source: Vec<usize>,
    keep: Vec<bool>,
    h: Vec<f64>,
    dh: Vec<f64>,
    /// `S × K`: whether the stored output is current for this `x`.
    stored: Vec<bool>,
}

/// For each scenario and node, the first scenario that agrees with it on the
/// node's uncertainty support.
fn sharing_sources(net: &FunctionNetwork, set: &UncertaintySet) -> Vec<usize> {
    let k = net.node_count();
    let support = net.uncertainty_support();
    let mut source = vec![0; set.len() * k];
    for (i, coords) in support.iter().enumerate() {
        let mut first: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
        for (j, w) in set.points.iter().enumerate() {
            let key: Vec<u64> = coords.iter().map(|&c| w[c].to_bits()).collect();
            source[j * k + i] = *first.entry(key).or_insert(j);
        }
    }
    source
}

impl<'a> NetworkScenarios<'a> {
    pub fn new(net: &'a FunctionNetwork, evaluators: &'a [NodeFn], set: &'a UncertaintySet, fixed_point: &'a FixedPointOptions) -> Self {
        let source = if net.is_acyclic() { sharing_sources(net, set) } else { Vec::new() };
        NetworkScenarios {
            net,
            evaluators,
            set,
            fixed_point,
            failure_value: f64::NEG_INFINITY,
            ws: ForwardWorkspace::default(),
            grad: vec![0.0; net.design_dim()],
            keep: vec![false; net.node_count()],
            h: vec![0.0; source.len()],
            dh: vec![0.0; source.len() * net.design_dim()],
            stored: vec![false; source.len()],
            source,
        }
    }

    /// Acyclic forward pass for scenario `j`, reusing outputs stored for
    /// earlier scenarios in this sweep.
    fn shared_forward(&mut self, x: &[f64], j: usize, with_grad: bool) -> Option<f64> {
        let k = self.net.node_count();
        let nx = self.net.design_dim();
        self.ws.h.resize(k, 0.0);
        if with_grad {
            self.ws.dh.resize(k * nx, 0.0);
        }
        for i in 0..k {
            let src = self.source[j * k + i];
            let reuse = src < j && self.stored[src * k + i];
            self.keep[i] = reuse;
            if reuse {
                self.ws.h[i] = self.h[src * k + i];
                if with_grad {
                    let from = (src * k + i) * nx;
                    self.ws.dh[i * nx..(i + 1) * nx].copy_from_slice(&self.dh[from..from + nx]);
                }
            }
        }
        let grad = if with_grad { Some(&mut self.grad[..]) } else { None };
        let r = forward_acyclic_masked(self.net, self.evaluators, x, &self.set.points[j], &mut self.ws, grad, Some(&self.keep));
        match r {
            Ok(v) if v.is_finite() => {
                self.h[j * k..(j + 1) * k].copy_from_slice(&self.ws.h);
                if with_grad {
                    self.dh[j * k * nx..(j + 1) * k * nx].copy_from_slice(&self.ws.dh);
                }
                self.stored[j * k..(j + 1) * k].iter_mut().for_each(|s| *s = true);
                Some(v)
            }
            _ => None,
        }
    }

    fn one(&mut self, x: &[f64], j: usize) -> f64 {
        let w = &self.set.points[j];
        let r = if self.net.is_acyclic() {
            forward_acyclic(self.net, self.evaluators, x, w, &mut self.ws, None)
        } else {
            evaluate(self.net, self.evaluators, x, w, None, self.fixed_point).and_then(|s| crate::funcnet::objective(self.net, &s))
        };
        match r {
            Ok(v) if v.is_finite() => v,
            _ => self.failure_value,
        }
    }
}

impl ScenarioObjective for NetworkScenarios<'_> {
    fn scenario_count(&self) -> usize {
        self.set.len()
    }

    fn values(&mut self, x: &[f64], out: &mut [f64]) {
        if !self.net.is_acyclic() {
            for (j, o) in out.iter_mut().enumerate() {
                *o = self.one(x, j);
            }
            return;
        }
        self.stored.iter_mut().for_each(|s| *s = false);
        for j in 0..self.set.len() {
            out[j] = self.shared_forward(x, j, false).unwrap_or(self.failure_value);
        }
    }

    fn values_grad(&mut self, x: &[f64], out: &mut [f64], jac: &mut [f64]) -> bool {
        if !self.net.is_acyclic() {
            return false;
        }
        let nx = x.len();
        self.stored.iter_mut().for_each(|s| *s = false);
        for j in 0..self.set.len() {
            match self.shared_forward(x, j, true) {
                Some(v) => {
                    out[j] = v;
                    jac[j * nx..(j + 1) * nx].copy_from_slice(&self.grad);
                }
                None => {
                    out[j] = self.failure_value;
                    jac[j * nx..(j + 1) * nx].iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        true
    }

    fn has_grad(&self) -> bool {
        self.net.is_acyclic()
    }
}

/// Empirical α-quantile of the objective over a set of network samples.
pub struct QuantileScenarios<'a> {
    net: &'a FunctionNetwork,
    samples: &'a [NetworkSample],
    set: &'a UncertaintySet,
    fixed_point: &'a FixedPointOptions,
    alpha: f64,
    buf: Vec<f64>,
    ws: ForwardWorkspace,
}

impl<'a> QuantileScenarios<'a> {
    pub fn new(
        net: &'a FunctionNetwork,
        samples: &'a [NetworkSample],
        set: &'a UncertaintySet,
        fixed_point: &'a FixedPointOptions,
        alpha: f64,
    ) -> Self {
        QuantileScenarios {
            net,
            samples,
            set,
            fixed_point,
            alpha,
            buf: Vec::with_capacity(samples.len()),
            ws: ForwardWorkspace::default(),
        }
    }
}

/// Lower empirical quantile: the `⌈α·S⌉`-th smallest value.
pub fn empirical_quantile(values: &mut [f64], alpha: f64) -> f64 {
    let n = values.len();
    let k = ((alpha * n as f64).ceil() as usize).clamp(1, n) - 1;
    let (_, v, _) = values.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *v
}

impl ScenarioObjective for QuantileScenarios<'_> {
    fn scenario_count(&self) -> usize {
        self.set.len()
    }

    fn values(&mut self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let w = &self.set.points[j];
            self.buf.clear();
            for s in self.samples {
                let r = if self.net.is_acyclic() {
                    forward_acyclic(self.net, s.evaluators(), x, w, &mut self.ws, None)
                } else {
                    s.objective(self.net, x, w, self.fixed_point)
                };
                self.buf.push(match r {
                    Ok(v) if v.is_finite() => v,
                    _ => f64::NEG_INFINITY,
                });
            }
            *o = empirical_quantile(&mut self.buf, self.alpha);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionOptions {
    /// Smoothing width of the fat minimum, relative to the objective scale.
    pub tau: f64,
    /// Size of the quasi-random start pool.
    pub raw: usize,
    /// Number of pool points refined by local ascent.
    pub starts: usize,
    /// Local ascent iterations per start.
    pub steps: usize,
    /// Population of the derivative-free search.
    pub population: usize,
    /// Generations of the derivative-free search.
    pub generations: usize,
    /// Initial mutation scale as a fraction of each box width.
    pub sigma: f64,
    /// Random features per node sample.
    pub features: usize,
}

impl Default for AcquisitionOptions {
    fn default() -> Self {
        AcquisitionOptions {
            tau: 1e-2,
            raw: 512,
            starts: 10,
            steps: 200,
            population: 32,
            generations: 60,
            sigma: 0.2,
            features: crate::pathwise::DEFAULT_FEATURES,
        }
    }
}

impl AcquisitionOptions {
    fn evolution(&self) -> EvolutionOptions {
        EvolutionOptions {
            population: self.population,
            generations: self.generations,
            initial_sigma: self.sigma,
            final_sigma: (self.sigma * 0.05).min(self.sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterResult {
    pub x: Vec<f64>,
    /// Hard worst-case value of the objective at `x`.
    pub value: f64,
    /// Best hard worst-case value among the start points.
    pub best_start_value: f64,
    pub restarts: usize,
    /// Whether every refinement failed and the best pool point was returned.
    pub fallback: bool,
}

/// Maximizes `min_j g(x, w_j)` over the box. With gradients, ascends the
/// fat-min smoothed objective from the best pool points and re-scores with
/// the hard minimum; without, runs the evolutionary search on the hard
/// minimum. `scale` converts `tau` to objective units.
pub fn solve_outer_maxmin<S, R>(obj: &mut S, bounds: &BoxBounds, opts: &AcquisitionOptions, scale: f64, rng: &mut R) -> Result<OuterResult>
where
    S: ScenarioObjective + ?Sized,
    R: Rng + ?Sized,
{
    let m = obj.scenario_count();
    if m == 0 {
        return invalid("no uncertainty scenarios");
    }
    let nx = bounds.dim();
    let tau = opts.tau * if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    let mut vals = vec![0.0; m];
    let hard = |obj: &mut S, x: &[f64], vals: &mut [f64]| -> f64 {
        obj.values(x, vals);
        argmin_first(vals).1
    };

    if bounds.widths().iter().all(|w| *w == 0.0) || nx == 0 {
        let x = bounds.lower.clone();
        let v = hard(obj, &x, &mut vals);
        return Ok(OuterResult {
            x,
            value: v,
            best_start_value: v,
            restarts: 0,
            fallback: false,
        });
    }

    // Score the quasi-random pool.
    let seed: u32 = rng.gen();
    let pool: Vec<Vec<f64>> = sobol_points(opts.raw.max(1), nx, seed).iter().map(|u| bounds.from_unit(u)).collect();
    let use_grad = obj.has_grad();
    let mut scored: Vec<(f64, f64, usize)> = Vec::with_capacity(pool.len());
    for (i, x) in pool.iter().enumerate() {
        obj.values(x, &mut vals);
        let h = argmin_first(&vals).1;
        let s = if use_grad { fat_min(&vals, tau, None).unwrap_or(h) } else { h };
        let s = if s.is_nan() { f64::NEG_INFINITY } else { s };
        scored.push((s, h, i));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)));
    let n_starts = opts.starts.max(1).min(scored.len());
    let starts: Vec<(Vec<f64>, f64)> = scored[..n_starts].iter().map(|(_, h, i)| (pool[*i].clone(), *h)).collect();
    let best_start_value = starts.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);

    let mut candidates: Vec<(Vec<f64>, f64)> = starts.clone();
    let mut any_refined = false;
    if use_grad {
        let local = LocalOptions {
            max_iters: opts.steps,
            ..LocalOptions::default()
        };
        let mut jac = vec![0.0; m * nx];
        let mut w = vec![0.0; m];
        for (x0, _) in &starts {
            let res = maximize_box(
                |x, g| {
                    obj.values_grad(x, &mut vals, &mut jac);
                    let Ok(v) = fat_min(&vals, tau, Some(&mut w)) else {
                        return f64::NEG_INFINITY;
                    };
                    g.iter_mut().for_each(|v| *v = 0.0);
                    for j in 0..m {
                        if w[j] != 0.0 {
                            for d in 0..nx {
                                g[d] += w[j] * jac[j * nx + d];
                            }
                        }
                    }
                    if v.is_finite() {
                        v
                    } else {
                        f64::NEG_INFINITY
                    }
                },
                x0,
                bounds,
                &local,
            );
            if res.value.is_finite() {
                any_refined = true;
                let h = hard(obj, &res.x, &mut vals);
                candidates.push((res.x, h));
            }
        }
    } else {
        let seeds: Vec<Vec<f64>> = starts.iter().map(|s| s.0.clone()).collect();
        let res = evolve_maximize(|x| hard(obj, x, &mut vals), bounds, &seeds, &opts.evolution(), rng);
        if res.value.is_finite() {
            any_refined = true;
        }
        candidates.push((res.x, res.value));
    }
    // First strictly best candidate wins; starts come first.
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.1 > candidates[best].1 {
            best = i;
        }
    }
    let (mut x, value) = candidates.swap_remove(best);
    bounds.clamp(&mut x);
    if !any_refined {
        log::warn!("all acquisition refinements failed; returning the best pool point");
    }
    Ok(OuterResult {
        x,
        value,
        best_start_value,
        restarts: n_starts,
        fallback: !any_refined,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub index: usize,
    pub w: Vec<f64>,
    pub value: f64,
    pub state: NetworkState,
    /// Scenarios whose evaluation failed.
    pub failed: Vec<usize>,
}

/// Exact worst case of a network at `x` over the uncertainty set; ties go
/// to the lowest index and failed scenarios are excluded (scored `+∞`).
pub fn inner_min(
    net: &FunctionNetwork,
    evaluators: &[NodeFn],
    x: &[f64],
    set: &UncertaintySet,
    fixed_point: &FixedPointOptions,
) -> Result<InnerResult> {
    let mut values = Vec::with_capacity(set.len());
    let mut states = Vec::with_capacity(set.len());
    let mut failed = Vec::new();
    for (j, w) in set.points.iter().enumerate() {
        match evaluate(net, evaluators, x, w, None, fixed_point).and_then(|s| Ok((crate::funcnet::objective(net, &s)?, s))) {
            Ok((v, s)) if v.is_finite() => {
                values.push(v);
                states.push(Some(s));
            }
            _ => {
                failed.push(j);
                values.push(f64::INFINITY);
                states.push(None);
            }
        }
    }
    if failed.len() == set.len() {
        return Err(crate::Error::NodeEvaluation {
            node: 0,
            message: "network evaluation failed at every uncertainty scenario".into(),
        });
    }
    let (index, value) = argmin_first(&values);
    Ok(InnerResult {
        index,
        w: set.points[index].clone(),
        value,
        state: states[index].take().expect("state of a successful scenario"),
        failed,
    })
}

/// Worst case of the uncertainty-stage sample at the chosen design.
pub fn solve_inner_stage(
    net: &FunctionNetwork,
    sample: &NetworkSample,
    x: &[f64],
    set: &UncertaintySet,
    fixed_point: &FixedPointOptions,
) -> Result<InnerResult> {
    inner_min(net, sample.evaluators(), x, set, fixed_point)
}

/// Outcome of one two-stage acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionResult {
    pub x_next: Vec<f64>,
    pub w_next: Vec<f64>,
    pub w_index: usize,
    /// Sampled worst case at `x_next` under the design-stage sample.
    pub inner_value: f64,
    pub restarts: usize,
    pub best_start_value: f64,
    pub seconds: f64,
}

/// Design stage then uncertainty stage on two independent samples.
pub fn acquire<R: Rng + ?Sized>(
    net: &FunctionNetwork,
    sample_x: &NetworkSample,
    sample_w: &NetworkSample,
    bounds: &BoxBounds,
    set: &UncertaintySet,
    opts: &AcquisitionOptions,
    fixed_point: &FixedPointOptions,
    scale: f64,
    rng: &mut R,
) -> Result<AcquisitionResult> {
    debug_assert_eq!(sample_x.tag(), SampleTag::Design);
    let start = Instant::now();
    let mut scen = NetworkScenarios::new(net, sample_x.evaluators(), set, fixed_point);
    let outer = solve_outer_maxmin(&mut scen, bounds, opts, scale, rng)?;
    let inner = solve_inner_stage(net, sample_w, &outer.x, set, fixed_point)?;
    Ok(AcquisitionResult {
        x_next: outer.x,
        w_next: inner.w,
        w_index: inner.index,
        inner_value: outer.value,
        restarts: outer.restarts,
        best_start_value: outer.best_start_value,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// How the final design is read off the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recommender {
    /// Max-min of the network with every node replaced by its posterior mean.
    GpfnMean,
    /// Max-min of the empirical α-quantile over posterior network samples.
    GpfnQuantile { alpha: f64, samples: usize },
}

impl Default for Recommender {
    fn default() -> Self {
        Recommender::GpfnMean
    }
}

impl Recommender {
    pub fn quantile() -> Self {
        Recommender::GpfnQuantile { alpha: 0.05, samples: 256 }
    }
}

/// Recommended robust design under the posterior network model.
#[allow(clippy::too_many_arguments)]
pub fn recommend<R: Rng + ?Sized>(
    net: &FunctionNetwork,
    models: &[NodeSurrogate],
    bounds: &BoxBounds,
    set: &UncertaintySet,
    rule: Recommender,
    opts: &AcquisitionOptions,
    fixed_point: &FixedPointOptions,
    scale: f64,
    rng: &mut R,
) -> Result<OuterResult> {
    match rule {
        Recommender::GpfnMean => {
            let evals = mean_evaluators(models);
            let mut scen = NetworkScenarios::new(net, &evals, set, fixed_point);
            solve_outer_maxmin(&mut scen, bounds, opts, scale, rng)
        }
        Recommender::GpfnQuantile { alpha, samples } => {
            if !(0.0..=1.0).contains(&alpha) || samples == 0 {
                return invalid("quantile recommender needs α in [0, 1] and at least one sample");
            }
            let draws = (0..samples)
                .map(|_| NetworkSample::draw(net, models, opts.features, rng, SampleTag::Design))
                .collect::<Result<Vec<_>>>()?;
            let mut scen = QuantileScenarios::new(net, &draws, set, fixed_point, alpha);
            solve_outer_maxmin(&mut scen, bounds, opts, scale, rng)
        }
    }
}
