//! Benchmark problems and brute-force robust oracles.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::acquisition::UncertaintySet;
use crate::error::{invalid, Error, Result};
use crate::funcnet::{ClosureNode, ForwardWorkspace, FunctionNetwork, LinearNode, NodeFn, NodeSpec};
use crate::optim::BoxBounds;
use crate::problem::RobustProblem;

/// Registered benchmark names. The `_literal` variants keep formulas that
/// read literally do not reach the reference optimum.
pub const BENCHMARKS: &[&str] = &[
    "polynomial",
    "polynomial_literal",
    "cliff",
    "rosenbrock",
    "rosenbrock_literal",
    "modified_sine",
    "vibration_absorber",
    "vibration_absorber_literal",
    "quartic_pair",
];

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub name: String,
    pub problem: RobustProblem,
    /// Reference optimum `(x*, worst-case value)`, where one exists.
    pub reference_optimum: Option<(Vec<f64>, f64)>,
    /// Default oracle grid points per design dimension.
    pub grid: usize,
}

fn node(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> NodeFn {
    ClosureNode::new(f).into_fn()
}

fn sum_node(k: usize) -> NodeFn {
    Arc::new(LinearNode(vec![1.0; k]))
}

fn selector(k: usize) -> Vec<f64> {
    let mut c = vec![0.0; k];
    c[k - 1] = 1.0;
    c
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn make_benchmark(name: &str) -> Result<Benchmark> {
    match name {
        "polynomial" => polynomial(false),
        "polynomial_literal" => polynomial(true),
        "cliff" => cliff(),
        "rosenbrock" => rosenbrock(false),
        "rosenbrock_literal" => rosenbrock(true),
        "modified_sine" => modified_sine(),
        "vibration_absorber" => vibration_absorber(false),
        "vibration_absorber_literal" => vibration_absorber(true),
        "quartic_pair" => quartic_pair(),
        other => invalid(format!("unknown benchmark '{other}'; valid names: {}", BENCHMARKS.join(", "))),
    }
}

/// Four nodes with `r₁ = x₁ + w₁cos w₂`, `r₂ = x₂ + w₁sin w₂`. The
/// literal first polynomial has two linear terms in `r₁`; the default
/// reads the first of them as the quartic term `−21.2r₁⁴`.
fn polynomial(literal: bool) -> Result<Benchmark> {
    let h1 = move |z: &[f64]| {
        let r = z[0] + z[1] * z[2].cos();
        let quartic = if literal { r } else { r.powi(4) };
        -2.0 * r.powi(6) + 12.2 * r.powi(5) - 21.2 * quartic - 6.2 * r + 6.4 * r.powi(3) + 4.7 * r * r
    };
    let h2 = |z: &[f64]| {
        let r = z[0] + z[1] * z[2].sin();
        -r.powi(6) + 11.0 * r.powi(5) - 43.3 * r.powi(4) + 10.0 * r + 74.8 * r.powi(3) - 56.9 * r * r
    };
    let h3 = |z: &[f64]| {
        let r1 = z[0] + z[2] * z[3].cos();
        let r2 = z[1] + z[2] * z[3].sin();
        4.1 * r1 * r2 + 0.1 * r1 * r1 * r2 * r2 - 0.4 * r1 * r2 * r2 - 0.4 * r1 * r1 * r2
    };
    let net = FunctionNetwork::new(
        vec![
            NodeSpec::black("h1", &[0], &[0, 1], &[]),
            NodeSpec::black("h2", &[1], &[0, 1], &[]),
            NodeSpec::black("h3", &[0, 1], &[0, 1], &[]),
            NodeSpec::white("sum", &[], &[], &[0, 1, 2]),
        ],
        selector(4),
        2,
        2,
    )?;
    let w1: Vec<f64> = [0.0, 0.2, 0.4, 0.6, 1.0].iter().map(|v| 0.5 * v).collect();
    let w2: Vec<f64> = [
        0.0, 0.1, 0.125, 0.2, 0.25, 0.3, 0.375, 0.45, 0.5, 0.575, 0.625, 0.7, 0.75, 0.875, 0.95, 1.0,
    ]
    .iter()
    .map(|v| 2.0 * PI * v)
    .collect();
    let set = UncertaintySet::product(&[w1, w2], vec![0.0, 0.0])?;
    let bounds = BoxBounds::new(vec![-0.5, -0.5], vec![3.25, 4.25])?;
    let name = if literal { "polynomial_literal" } else { "polynomial" };
    let problem = RobustProblem::new(name, net, vec![node(h1), node(h2), node(h3), sum_node(3)], bounds, set)?;
    let reference = (vec![-0.178, 0.289], -4.2);
    let problem = if literal { problem } else { problem.with_known_optimum(reference.0.clone(), reference.1) };
    Ok(Benchmark {
        name: name.into(),
        problem,
        reference_optimum: Some(reference),
        grid: 400,
    })
}

fn cliff() -> Result<Benchmark> {
    let h = |z: &[f64]| {
        let (x, w) = (z[0], z[1]);
        -10.0 / (1.0 + 0.3 * (6.0 * x + 3.0 * w.sin()).exp()) - 0.2 * (x + 0.5 * w.sin()).powi(2)
    };
    let mut nodes: Vec<NodeSpec> = (0..5).map(|i| NodeSpec::black(&format!("h{}", i + 1), &[i], &[i], &[])).collect();
    nodes.push(NodeSpec::white("sum", &[], &[], &[0, 1, 2, 3, 4]));
    let net = FunctionNetwork::new(nodes, selector(6), 5, 5)?;
    let w: Vec<f64> = [0.0, 0.5, 1.0].iter().map(|v| PI * v - PI / 2.0).collect();
    let set = UncertaintySet::product(&vec![w; 5], vec![0.0; 5])?;
    let bounds = BoxBounds::new(vec![0.0; 5], vec![5.0; 5])?;
    let mut truth: Vec<NodeFn> = (0..5).map(|_| node(h)).collect();
    truth.push(sum_node(5));
    let reference = (vec![1.2; 5], -2.9);
    let problem = RobustProblem::new("cliff", net, truth, bounds, set)?.with_known_optimum(reference.0.clone(), reference.1);
    Ok(Benchmark {
        name: "cliff".into(),
        problem,
        reference_optimum: Some(reference),
        grid: 60,
    })
}

/// The literal second uncertainty set `{−0.1, 0, 0.1}` does not reach the
/// reference optimum; the default uses `{0, 1, 2}`, which does.
fn rosenbrock(literal: bool) -> Result<Benchmark> {
    let net = FunctionNetwork::new(
        vec![
            NodeSpec::black("h1", &[0], &[0], &[]),
            NodeSpec::black("h2", &[0], &[0], &[]),
            NodeSpec::black("h3", &[], &[1], &[0]),
            NodeSpec::white("h4", &[], &[], &[1, 2]),
        ],
        selector(4),
        1,
        2,
    )?;
    let truth = vec![
        node(|z: &[f64]| (z[0] + z[1]).powi(2)),
        node(|z: &[f64]| (z[0] + z[1] - 1.0).powi(2)),
        node(|z: &[f64]| (z[0] - z[1]).powi(2)),
        Arc::new(LinearNode(vec![-1.0, -100.0])) as NodeFn,
    ];
    let w1: Vec<f64> = (0..20).map(|p| 0.2 * p as f64 / 19.0 - 0.1).collect();
    let w2 = if literal { vec![-0.1, 0.0, 0.1] } else { vec![0.0, 1.0, 2.0] };
    let set = UncertaintySet::product(&[w1, w2], vec![0.0, 1.4])?;
    let bounds = BoxBounds::new(vec![-1.0], vec![2.0])?;
    let name = if literal { "rosenbrock_literal" } else { "rosenbrock" };
    let reference = (vec![1.0], -143.8);
    let problem = RobustProblem::new(name, net, truth, bounds, set)?;
    let problem = if literal { problem } else { problem.with_known_optimum(reference.0.clone(), reference.1) };
    Ok(Benchmark {
        name: name.into(),
        problem,
        reference_optimum: Some(reference),
        grid: 400,
    })
}

fn modified_sine() -> Result<Benchmark> {
    let net = FunctionNetwork::new(
        vec![
            NodeSpec::black("h1", &[0], &[0], &[]),
            NodeSpec::black("h2", &[], &[], &[0]),
            NodeSpec::black("h3", &[], &[], &[0]),
            NodeSpec::black("h4", &[1], &[1], &[]),
            NodeSpec::black("h5", &[], &[], &[3]),
            NodeSpec::black("h6", &[], &[], &[3]),
            NodeSpec::white("h7", &[], &[], &[1, 2, 4, 5]),
        ],
        selector(7),
        2,
        2,
    )?;
    let add = |z: &[f64]| z[0] + z[1];
    let wave = |z: &[f64]| -(2.0 * PI * z[0] * z[0]).sin();
    let bowl = |z: &[f64]| -z[0] * z[0] - 0.2 * z[0];
    let truth = vec![node(add), node(wave), node(bowl), node(add), node(wave), node(bowl), sum_node(4)];
    let w: Vec<f64> = [0.0, 0.33, 0.50, 0.66, 1.0].iter().map(|v| 0.5 * v - 0.25).collect();
    let set = UncertaintySet::product(&[w.clone(), w], vec![0.0, 0.0])?;
    let bounds = BoxBounds::new(vec![-1.0, -1.0], vec![1.0, 1.0])?;
    let reference = (vec![0.0, 0.0], -0.891);
    let problem = RobustProblem::new("modified_sine", net, truth, bounds, set)?.with_known_optimum(reference.0.clone(), reference.1);
    Ok(Benchmark {
        name: "modified_sine".into(),
        problem,
        reference_optimum: Some(reference),
        grid: 400,
    })
}

/// Node inputs are `(x₁, x₂, w)`. The literal box `[0.05, 0.5] × [1, 2]`
/// excludes the reference optimum `x₂ ≈ 0.862`; the default widens the
/// second coordinate to `[0.5, 2]`.
fn vibration_absorber(literal: bool) -> Result<Benchmark> {
    const C1: f64 = 0.1;
    const C2: f64 = 0.1;
    let net = FunctionNetwork::new(
        vec![
            NodeSpec::black("h1", &[0, 1], &[0], &[]),
            NodeSpec::black("h2", &[0, 1], &[0], &[]),
            NodeSpec::black("h3", &[0, 1], &[0], &[]),
            NodeSpec::white("h4", &[], &[], &[0, 1, 2]),
        ],
        selector(4),
        2,
        1,
    )?;
    let h1 = |z: &[f64]| {
        let (x1, x2, w) = (z[0], z[1], z[2]);
        ((1.0 - w * w / (x2 * x2)).powi(2) + 4.0 * (x1 * w / x2).powi(2)).sqrt()
    };
    let h2 = |z: &[f64]| {
        let (x1, x2, w) = (z[0], z[1], z[2]);
        let w2 = w * w;
        w2 / (x2 * x2) * (w2 - 1.0) - w2 * (1.0 + C1) - 4.0 * x1 * C2 * w2 / x2 + 1.0
    };
    let h3 = |z: &[f64]| {
        let (x1, x2, w) = (z[0], z[1], z[2]);
        let w3 = w * w * w;
        C2 * w3 / (x2 * x2) + (x1 * w3 * (1.0 + C1) - x1 * w) / x2 - C2 * w
    };
    let h4 = ClosureNode::new(|z: &[f64]| -z[0] / (z[1] * z[1] + 4.0 * z[2] * z[2]).sqrt())
        .with_grad(|z: &[f64], g: &mut [f64]| {
            let q = z[1] * z[1] + 4.0 * z[2] * z[2];
            let s = q.sqrt();
            g[0] = -1.0 / s;
            g[1] = z[0] * z[1] / (q * s);
            g[2] = 4.0 * z[0] * z[2] / (q * s);
            -z[0] / s
        })
        .into_fn();
    let truth = vec![node(h1), node(h2), node(h3), h4];
    let points: Vec<Vec<f64>> = (0..50).map(|k| vec![0.05 + 0.05 * k as f64]).collect();
    let set = UncertaintySet::new(points, vec![1.275])?;
    let lower2 = if literal { 1.0 } else { 0.5 };
    let bounds = BoxBounds::new(vec![0.05, lower2], vec![0.5, 2.0])?;
    let name = if literal { "vibration_absorber_literal" } else { "vibration_absorber" };
    let reference = (vec![0.199, 0.862], -2.623);
    let problem = RobustProblem::new(name, net, truth, bounds, set)?;
    let problem = if literal { problem } else { problem.with_known_optimum(reference.0.clone(), reference.1) };
    Ok(Benchmark {
        name: name.into(),
        problem,
        reference_optimum: Some(reference),
        grid: 400,
    })
}

/// `g = −(f₁² + f₂²)²` with `f₁ = x² + w − 5`, `f₂ = x + w² − 1`.
fn quartic_pair() -> Result<Benchmark> {
    let net = FunctionNetwork::new(
        vec![
            NodeSpec::black("f1", &[0], &[0], &[]),
            NodeSpec::black("f2", &[0], &[0], &[]),
            NodeSpec::white("g", &[], &[], &[0, 1]),
        ],
        selector(3),
        1,
        1,
    )?;
    let agg = ClosureNode::new(|z: &[f64]| -(z[0] * z[0] + z[1] * z[1]).powi(2))
        .with_grad(|z: &[f64], g: &mut [f64]| {
            let s = z[0] * z[0] + z[1] * z[1];
            g[0] = -4.0 * s * z[0];
            g[1] = -4.0 * s * z[1];
            -s * s
        })
        .into_fn();
    let truth = vec![
        node(|z: &[f64]| z[0] * z[0] + z[1] - 5.0),
        node(|z: &[f64]| z[0] + z[1] * z[1] - 1.0),
        agg,
    ];
    let points: Vec<Vec<f64>> = linspace(-1.0, 1.0, 21).into_iter().map(|v| vec![v]).collect();
    let set = UncertaintySet::new(points, vec![0.0])?;
    let bounds = BoxBounds::new(vec![-2.5], vec![2.5])?;
    let problem = RobustProblem::new("quartic_pair", net, truth, bounds, set)?;
    Ok(Benchmark {
        name: "quartic_pair".into(),
        problem,
        reference_optimum: None,
        grid: 1000,
    })
}

/// Largest number of `(design point, scenario)` evaluations a full grid may use.
pub const MAX_GRID_EVALUATIONS: u128 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    /// Full tensor grid followed by compass refinement.
    Grid,
    /// Cyclic one-dimensional grid sweeps followed by compass refinement.
    Coordinate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCell {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub method: OracleMethod,
    pub resolution: usize,
    /// Every grid point evaluated before refinement.
    pub table: Vec<OracleCell>,
}

/// Maximizes `G(x) = min_j g(x, w_j)` by exhaustive search over a design
/// grid with `grid` points per dimension. Design spaces too large for a
/// full grid (`n_x > 2`) use cyclic coordinate sweeps instead, which are
/// exact for separable problems.
pub fn robust_oracle(problem: &RobustProblem, grid: usize) -> Result<OracleResult> {
    let mut ws = ForwardWorkspace::default();
    let f = move |x: &[f64]| problem.worst_case_with(x, &mut ws).map(|(_, v)| v);
    search(problem, grid, problem.set.len(), f)
}

/// Maximizes `g(x, w̄)` at the nominal uncertainty on the same grid.
pub fn nominal_oracle(problem: &RobustProblem, grid: usize) -> Result<OracleResult> {
    let nominal = problem.set.nominal.clone();
    let f = move |x: &[f64]| problem.objective(x, &nominal);
    search(problem, grid, 1, f)
}

fn search<F>(problem: &RobustProblem, grid: usize, scenarios: usize, mut f: F) -> Result<OracleResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if grid == 0 {
        return invalid("oracle grid needs at least one point per dimension");
    }
    let bounds = &problem.bounds;
    let nx = bounds.dim();
    let axes: Vec<Vec<f64>> = (0..nx).map(|i| linspace(bounds.lower[i], bounds.upper[i], grid)).collect();
    let cells = (grid as u128).saturating_pow(nx as u32).saturating_mul(scenarios as u128);
    let mut table = Vec::new();
    let method;
    let (mut x, mut value);
    if cells <= MAX_GRID_EVALUATIONS {
        method = OracleMethod::Grid;
        let total = grid.pow(nx as u32);
        let mut best = (f64::NEG_INFINITY, Vec::new());
        let mut idx = vec![0usize; nx];
        for _ in 0..total {
            let p: Vec<f64> = idx.iter().enumerate().map(|(d, i)| axes[d][*i]).collect();
            let v = f(&p)?;
            if v > best.0 {
                best = (v, p.clone());
            }
            table.push(OracleCell { x: p, value: v });
            for d in (0..nx).rev() {
                idx[d] += 1;
                if idx[d] < grid {
                    break;
                }
                idx[d] = 0;
            }
        }
        (value, x) = best;
    } else if nx > 2 {
        method = OracleMethod::Coordinate;
        x = axes.iter().map(|a| a[a.len() / 2]).collect();
        value = f(&x)?;
        table.push(OracleCell { x: x.clone(), value });
        for _ in 0..20 {
            let mut improved = false;
            for d in 0..nx {
                for v in &axes[d] {
                    let mut p = x.clone();
                    p[d] = *v;
                    let g = f(&p)?;
                    table.push(OracleCell { x: p.clone(), value: g });
                    if g > value {
                        value = g;
                        x = p;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
    } else {
        let suggested = ((MAX_GRID_EVALUATIONS / scenarios.max(1) as u128) as f64).powf(1.0 / nx as f64).floor() as usize;
        return Err(Error::Resolution { cells, suggested });
    }
    // Compass refinement from the best grid point.
    let widths = bounds.widths();
    let mut step: Vec<f64> = widths.iter().map(|w| w / (grid.max(2) - 1) as f64).collect();
    while step.iter().zip(&widths).any(|(s, w)| *s > 1e-9 * w.max(1e-12)) {
        let mut improved = false;
        for d in 0..nx {
            for sign in [1.0, -1.0] {
                let mut p = x.clone();
                p[d] = (p[d] + sign * step[d]).clamp(bounds.lower[d], bounds.upper[d]);
                if p[d] == x[d] {
                    continue;
                }
                let g = f(&p)?;
                if g > value {
                    value = g;
                    x = p;
                    improved = true;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    Ok(OracleResult {
        x,
        value,
        method,
        resolution: grid,
        table,
    })
}
