//! Function networks: node wiring, evaluation in topological order, and a
//! damped fixed-point solver for networks with feedback loops.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A scalar node function `h_k = f_k(z_k)`.
pub trait NodeFunction: Send + Sync {
    fn eval(&self, z: &[f64]) -> f64;

    /// Value and gradient with respect to `z`. Defaults to central differences.
    fn eval_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let mut zp = z.to_vec();
        for i in 0..z.len() {
            let h = 1e-6 * (1.0 + z[i].abs());
            zp[i] = z[i] + h;
            let fp = self.eval(&zp);
            zp[i] = z[i] - h;
            let fm = self.eval(&zp);
            zp[i] = z[i];
            grad[i] = (fp - fm) / (2.0 * h);
        }
        self.eval(z)
    }
}

pub type NodeFn = Arc<dyn NodeFunction>;

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) -> f64 + Send + Sync;

/// A node function built from closures, with an optional analytic gradient.
#[derive(Clone)]
pub struct ClosureNode {
    value: Arc<ValueFn>,
    grad: Option<Arc<GradFn>>,
}

impl ClosureNode {
    pub fn new(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ClosureNode {
            value: Arc::new(f),
            grad: None,
        }
    }

    pub fn with_grad(mut self, g: impl Fn(&[f64], &mut [f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(g));
        self
    }

    pub fn into_fn(self) -> NodeFn {
        Arc::new(self)
    }
}

impl NodeFunction for ClosureNode {
    fn eval(&self, z: &[f64]) -> f64 {
        (self.value)(z)
    }

    fn eval_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        match &self.grad {
            Some(g) => g(z, grad),
            None => {
                let mut zp = z.to_vec();
                for i in 0..z.len() {
                    let h = 1e-6 * (1.0 + z[i].abs());
                    zp[i] = z[i] + h;
                    let fp = (self.value)(&zp);
                    zp[i] = z[i] - h;
                    let fm = (self.value)(&zp);
                    zp[i] = z[i];
                    grad[i] = (fp - fm) / (2.0 * h);
                }
                (self.value)(z)
            }
        }
    }
}

impl fmt::Debug for ClosureNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ClosureNode(grad: {})", self.grad.is_some())
    }
}

/// Linear node `Σ coeffs_i z_i`, used for white-box aggregators.
#[derive(Debug, Clone)]
pub struct LinearNode(pub Vec<f64>);

impl NodeFunction for LinearNode {
    fn eval(&self, z: &[f64]) -> f64 {
        self.0.iter().zip(z).map(|(a, b)| a * b).sum()
    }

    fn eval_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        grad.copy_from_slice(&self.0);
        self.eval(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    /// Known function, modeled with zero posterior covariance.
    WhiteBox,
    /// Unknown function, modeled by a Gaussian process.
    BlackBox,
}

/// Wiring of one node. Indices are zero-based. The node input vector `z_k`
/// is laid out as design slice, uncertainty slice, parent slice, each in
/// ascending index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub design_inputs: Vec<usize>,
    #[serde(default)]
    pub uncertainty_inputs: Vec<usize>,
    #[serde(default)]
    pub parents: Vec<usize>,
}

impl NodeSpec {
    pub fn new(name: &str, kind: NodeKind, design_inputs: &[usize], uncertainty_inputs: &[usize], parents: &[usize]) -> Self {
        NodeSpec {
            name: name.to_string(),
            kind,
            design_inputs: design_inputs.to_vec(),
            uncertainty_inputs: uncertainty_inputs.to_vec(),
            parents: parents.to_vec(),
        }
    }

    pub fn black(name: &str, design_inputs: &[usize], uncertainty_inputs: &[usize], parents: &[usize]) -> Self {
        Self::new(name, NodeKind::BlackBox, design_inputs, uncertainty_inputs, parents)
    }

    pub fn white(name: &str, design_inputs: &[usize], uncertainty_inputs: &[usize], parents: &[usize]) -> Self {
        Self::new(name, NodeKind::WhiteBox, design_inputs, uncertainty_inputs, parents)
    }

    pub fn input_dim(&self) -> usize {
        self.design_inputs.len() + self.uncertainty_inputs.len() + self.parents.len()
    }

    pub fn is_black_box(&self) -> bool {
        self.kind == NodeKind::BlackBox
    }
}

/// Serializable network topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub design_dim: usize,
    pub uncertainty_dim: usize,
    pub projection: Vec<f64>,
    pub nodes: Vec<NodeSpec>,
}

/// A validated function network.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionNetwork {
    nodes: Vec<NodeSpec>,
    projection: Vec<f64>,
    design_dim: usize,
    uncertainty_dim: usize,
    order: Option<Vec<usize>>,
    /// Nodes lying on a directed cycle.
    on_cycle: Vec<bool>,
}

impl FunctionNetwork {
    pub fn new(nodes: Vec<NodeSpec>, projection: Vec<f64>, design_dim: usize, uncertainty_dim: usize) -> Result<Self> {
        let k = nodes.len();
        if k == 0 {
            return invalid("network needs at least one node");
        }
        if projection.len() != k {
            return invalid(format!("projection has {} entries for {} nodes", projection.len(), k));
        }
        for (i, n) in nodes.iter().enumerate() {
            let check = |idx: &[usize], bound: usize, what: &str| -> Result<()> {
                let mut sorted = idx.to_vec();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != idx.len() {
                    return invalid(format!("node {i} lists a duplicate {what} index"));
                }
                if sorted != idx {
                    return invalid(format!("node {i} must list {what} indices in ascending order"));
                }
                if let Some(bad) = idx.iter().find(|j| **j >= bound) {
                    return invalid(format!("node {i} references {what} index {bad} out of range {bound}"));
                }
                Ok(())
            };
            check(&n.design_inputs, design_dim, "design")?;
            check(&n.uncertainty_inputs, uncertainty_dim, "uncertainty")?;
            check(&n.parents, k, "parent")?;
            if n.parents.contains(&i) {
                return invalid(format!("node {i} lists itself as a parent"));
            }
        }
        let order = kahn_order(&nodes);
        let on_cycle = cycle_membership(&nodes);
        Ok(FunctionNetwork {
            nodes,
            projection,
            design_dim,
            uncertainty_dim,
            order,
            on_cycle,
        })
    }

    pub fn from_config(cfg: NetworkConfig) -> Result<Self> {
        Self::new(cfg.nodes, cfg.projection, cfg.design_dim, cfg.uncertainty_dim)
    }

    pub fn to_config(&self) -> NetworkConfig {
        NetworkConfig {
            design_dim: self.design_dim,
            uncertainty_dim: self.uncertainty_dim,
            projection: self.projection.clone(),
            nodes: self.nodes.clone(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: NetworkConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_config(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_config()).expect("network config serializes")
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> &NodeSpec {
        &self.nodes[k]
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn design_dim(&self) -> usize {
        self.design_dim
    }

    pub fn uncertainty_dim(&self) -> usize {
        self.uncertainty_dim
    }

    /// Directed edges `(j, k)` meaning node `k` consumes the output of `j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(k, n)| n.parents.iter().map(move |j| (*j, k)))
            .collect()
    }

    pub fn is_acyclic(&self) -> bool {
        self.order.is_some()
    }

    /// Uncertainty coordinates each node depends on, directly or through
    /// its ancestors, in ascending order.
    pub fn uncertainty_support(&self) -> Vec<Vec<usize>> {
        let k = self.nodes.len();
        let mut support: Vec<Vec<bool>> = self
            .nodes
            .iter()
            .map(|n| {
                let mut m = vec![false; self.uncertainty_dim];
                n.uncertainty_inputs.iter().for_each(|&i| m[i] = true);
                m
            })
            .collect();
        // Propagate until stable; handles cycles as well.
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..k {
                for &p in &self.nodes[i].parents {
                    for c in 0..self.uncertainty_dim {
                        if support[p][c] && !support[i][c] {
                            support[i][c] = true;
                            changed = true;
                        }
                    }
                }
            }
        }
        support.into_iter().map(|m| (0..m.len()).filter(|&c| m[c]).collect()).collect()
    }

    pub fn is_on_cycle(&self, k: usize) -> bool {
        self.on_cycle[k]
    }

    /// Nodes ordered so every node follows its parents; smallest index first among ties.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        match &self.order {
            Some(o) => Ok(o.clone()),
            None => Err(Error::CyclicGraph {
                node: self.on_cycle.iter().position(|c| *c).unwrap_or(0),
            }),
        }
    }

    pub(crate) fn order_slice(&self) -> Option<&[usize]> {
        self.order.as_deref()
    }

    /// Writes `z_k` assembled from `(x, w, h)` into `out`.
    #[inline]
    pub fn assemble_input(&self, k: usize, x: &[f64], w: &[f64], h: &[f64], out: &mut Vec<f64>) {
        let n = &self.nodes[k];
        out.clear();
        out.extend(n.design_inputs.iter().map(|i| x[*i]));
        out.extend(n.uncertainty_inputs.iter().map(|i| w[*i]));
        out.extend(n.parents.iter().map(|j| h[*j]));
    }

    fn check_point(&self, x: &[f64], w: &[f64]) -> Result<()> {
        if x.len() != self.design_dim {
            return invalid(format!("design vector has length {}, expected {}", x.len(), self.design_dim));
        }
        if w.len() != self.uncertainty_dim {
            return invalid(format!("uncertainty vector has length {}, expected {}", w.len(), self.uncertainty_dim));
        }
        Ok(())
    }

    fn check_evaluators(&self, evaluators: &[NodeFn]) -> Result<()> {
        if evaluators.len() != self.nodes.len() {
            return invalid(format!("{} evaluators for {} nodes", evaluators.len(), self.nodes.len()));
        }
        Ok(())
    }
}

fn kahn_order(nodes: &[NodeSpec]) -> Option<Vec<usize>> {
    let k = nodes.len();
    let mut indeg: Vec<usize> = nodes.iter().map(|n| n.parents.len()).collect();
    let mut children = vec![Vec::new(); k];
    for (i, n) in nodes.iter().enumerate() {
        for j in &n.parents {
            children[*j].push(i);
        }
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..k).filter(|i| indeg[*i] == 0).collect();
    let mut order = Vec::with_capacity(k);
    while let Some(&i) = ready.iter().next() {
        ready.remove(&i);
        order.push(i);
        for c in &children[i] {
            indeg[*c] -= 1;
            if indeg[*c] == 0 {
                ready.insert(*c);
            }
        }
    }
    (order.len() == k).then_some(order)
}

fn cycle_membership(nodes: &[NodeSpec]) -> Vec<bool> {
    let k = nodes.len();
    // node k is on a cycle iff k is reachable from one of its parents... i.e. from itself
    (0..k)
        .map(|start| {
            let mut seen = vec![false; k];
            let mut stack: Vec<usize> = nodes[start].parents.clone();
            while let Some(v) = stack.pop() {
                if v == start {
                    return true;
                }
                if !seen[v] {
                    seen[v] = true;
                    stack.extend(nodes[v].parents.iter().copied());
                }
            }
            false
        })
        .collect()
}

/// Node outputs at one `(x, w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub h: Vec<f64>,
    pub converged: bool,
    /// ∞-norm of `H − F(x, w, H)` (scaled when the solver was given scales).
    pub residual: f64,
    pub iterations: usize,
    /// Input vector `z_k` of every node at this state.
    pub node_inputs: Vec<Vec<f64>>,
}

fn node_error(k: usize, v: f64) -> Error {
    Error::NodeEvaluation {
        node: k,
        message: format!("non-finite output {v}"),
    }
}

/// Evaluates an acyclic network once per node in topological order.
pub fn evaluate_acyclic(net: &FunctionNetwork, evaluators: &[NodeFn], x: &[f64], w: &[f64]) -> Result<NetworkState> {
    net.check_point(x, w)?;
    net.check_evaluators(evaluators)?;
    let order = net.topological_order()?;
    let k = net.node_count();
    let mut h = vec![0.0; k];
    let mut node_inputs = vec![Vec::new(); k];
    for &i in &order {
        let mut z = Vec::with_capacity(net.node(i).input_dim());
        net.assemble_input(i, x, w, &h, &mut z);
        let v = evaluators[i].eval(&z);
        if !v.is_finite() {
            return Err(node_error(i, v));
        }
        h[i] = v;
        node_inputs[i] = z;
    }
    Ok(NetworkState {
        h,
        converged: true,
        residual: 0.0,
        iterations: 1,
        node_inputs,
    })
}

/// Reusable buffers for repeated forward passes with design gradients.
#[derive(Debug, Clone, Default)]
pub struct ForwardWorkspace {
    pub h: Vec<f64>,
    /// Row-major `K × n_x` Jacobian `∂h/∂x`.
    pub dh: Vec<f64>,
    z: Vec<f64>,
    gz: Vec<f64>,
}

/// Forward pass on an acyclic network returning `cᵀH`; when `with_grad` is
/// set, also fills `ws.dh` and writes `∂(cᵀH)/∂x` into `grad`.
pub fn forward_acyclic(
    net: &FunctionNetwork,
    evaluators: &[NodeFn],
    x: &[f64],
    w: &[f64],
    ws: &mut ForwardWorkspace,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    forward_acyclic_masked(net, evaluators, x, w, ws, grad, None)
}

/// As [`forward_acyclic`], but nodes flagged in `keep` are not evaluated:
/// their entries in `ws.h` (and `ws.dh` rows when a gradient is requested)
/// must already hold valid values.
pub(crate) fn forward_acyclic_masked(
    net: &FunctionNetwork,
    evaluators: &[NodeFn],
    x: &[f64],
    w: &[f64],
    ws: &mut ForwardWorkspace,
    grad: Option<&mut [f64]>,
    keep: Option<&[bool]>,
) -> Result<f64> {
    let order = net.order_slice().ok_or(Error::CyclicGraph { node: 0 })?;
    let k = net.node_count();
    let nx = net.design_dim();
    ws.h.resize(k, 0.0);
    let with_grad = grad.is_some();
    if with_grad {
        ws.dh.resize(k * nx, 0.0);
    }
    for &i in order {
        if keep.is_some_and(|m| m[i]) {
            continue;
        }
        net.assemble_input(i, x, w, &ws.h, &mut ws.z);
        let v = if with_grad {
            ws.gz.clear();
            ws.gz.resize(ws.z.len(), 0.0);
            let v = evaluators[i].eval_grad(&ws.z, &mut ws.gz);
            let spec = net.node(i);
            let base = i * nx;
            for d in 0..nx {
                ws.dh[base + d] = 0.0;
            }
            for (p, xi) in spec.design_inputs.iter().enumerate() {
                ws.dh[base + *xi] += ws.gz[p];
            }
            let off = spec.design_inputs.len() + spec.uncertainty_inputs.len();
            for (p, j) in spec.parents.iter().enumerate() {
                let gj = ws.gz[off + p];
                if gj != 0.0 {
                    for d in 0..nx {
                        ws.dh[base + d] += gj * ws.dh[j * nx + d];
                    }
                }
            }
            v
        } else {
            evaluators[i].eval(&ws.z)
        };
        if !v.is_finite() {
            return Err(node_error(i, v));
        }
        ws.h[i] = v;
    }
    let c = net.projection();
    let value = c.iter().zip(&ws.h).map(|(a, b)| a * b).sum();
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..k {
            if c[i] != 0.0 {
                for d in 0..nx {
                    g[d] += c[i] * ws.dh[i * nx + d];
                }
            }
        }
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub damping: f64,
    pub max_iters: usize,
    /// Per-node output scales used to normalize the residual.
    #[serde(default)]
    pub scales: Option<Vec<f64>>,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tol: 1e-8,
            damping: 0.5,
            max_iters: 200,
            scales: None,
        }
    }
}

fn scaled_inf_norm(r: &[f64], scales: Option<&[f64]>) -> f64 {
    r.iter()
        .enumerate()
        .map(|(i, v)| v.abs() / scales.map_or(1.0, |s| s[i]))
        .fold(0.0, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v) })
}

/// Result of solving `H = F(H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSolution {
    pub h: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Whether the least-squares root fallback produced the answer.
    pub used_fallback: bool,
}

/// Solves `H = F(H)` by damped Picard iteration, with per-component damping
/// factors (`1.0` means an undamped update). Falls back to a damped
/// Gauss-Newton root solve of `H − F(H) = 0` when Picard stalls.
pub fn solve_fixed_point_map<F>(mut f: F, h0: &[f64], damping: &[f64], opts: &FixedPointOptions) -> Result<FixedPointSolution>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let k = h0.len();
    let scales = opts.scales.as_deref();
    let mut h = h0.to_vec();
    let mut fh = vec![0.0; k];
    let mut r = vec![0.0; k];
    let mut best = (f64::INFINITY, h.clone());
    for it in 0..opts.max_iters {
        f(&h, &mut fh)?;
        for i in 0..k {
            r[i] = h[i] - fh[i];
        }
        let res = scaled_inf_norm(&r, scales);
        if res < best.0 {
            best = (res, h.clone());
        }
        if res <= opts.tol {
            // For a contraction F(H) is closer to the root than H; keep it if
            // its own residual is no worse.
            let mut ffh = vec![0.0; k];
            let (h, res) = match f(&fh, &mut ffh) {
                Ok(()) => {
                    let r2: Vec<f64> = fh.iter().zip(&ffh).map(|(a, b)| a - b).collect();
                    let res2 = scaled_inf_norm(&r2, scales);
                    if res2 <= res {
                        (fh, res2)
                    } else {
                        (h, res)
                    }
                }
                Err(_) => (h, res),
            };
            return Ok(FixedPointSolution {
                h,
                residual: res,
                iterations: it,
                converged: true,
                used_fallback: false,
            });
        }
        if !res.is_finite() {
            break;
        }
        for i in 0..k {
            h[i] = (1.0 - damping[i]) * h[i] + damping[i] * fh[i];
        }
    }
    // Least-squares root solve from the best Picard iterate.
    let start = if best.1.iter().all(|v| v.is_finite()) { best.1.clone() } else { h0.to_vec() };
    match gauss_newton_root(&mut f, &start, opts) {
        Ok((hs, res, iters)) if res <= opts.tol => Ok(FixedPointSolution {
            h: hs,
            residual: res,
            iterations: opts.max_iters + iters,
            converged: true,
            used_fallback: true,
        }),
        Ok((_, res, _)) => Err(Error::FixedPoint { residual: res.min(best.0) }),
        Err(_) => Err(Error::FixedPoint { residual: best.0 }),
    }
}

fn gauss_newton_root<F>(f: &mut F, h0: &[f64], opts: &FixedPointOptions) -> Result<(Vec<f64>, f64, usize)>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    use nalgebra::{DMatrix, DVector};
    let k = h0.len();
    let scales = opts.scales.as_deref();
    let resid = |f: &mut F, h: &[f64]| -> Result<DVector<f64>> {
        let mut fh = vec![0.0; k];
        f(h, &mut fh)?;
        Ok(DVector::from_iterator(k, h.iter().zip(&fh).map(|(a, b)| a - b)))
    };
    let mut h = h0.to_vec();
    let mut r = resid(f, &h)?;
    let mut lambda = 1e-6;
    let mut iters = 0;
    for _ in 0..opts.max_iters {
        iters += 1;
        let res = scaled_inf_norm(r.as_slice(), scales);
        if res <= opts.tol {
            return Ok((h, res, iters));
        }
        let mut jac = DMatrix::zeros(k, k);
        for j in 0..k {
            let step = 1e-7 * (1.0 + h[j].abs());
            let mut hp = h.clone();
            hp[j] += step;
            let rp = resid(f, &hp)?;
            for i in 0..k {
                jac[(i, j)] = (rp[i] - r[i]) / step;
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let jtr = &jt * &r;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..k {
                a[(i, i)] += lambda * (1.0 + jtj[(i, i)]);
            }
            let Some(delta) = a.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let hn: Vec<f64> = h.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            if let Ok(rn) = resid(f, &hn) {
                if rn.norm() < r.norm() {
                    h = hn;
                    r = rn;
                    lambda = (lambda * 0.1).max(1e-12);
                    improved = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let res = scaled_inf_norm(r.as_slice(), scales);
    Ok((h, res, iters))
}

/// Solves the network equations `H = F(x, w, H)` from `h0` (zeros when `None`).
/// Damping applies to nodes on a cycle; other nodes take full updates, so an
/// acyclic network is solved exactly after at most `K` sweeps.
pub fn solve_fixed_point(
    net: &FunctionNetwork,
    evaluators: &[NodeFn],
    x: &[f64],
    w: &[f64],
    h0: Option<&[f64]>,
    opts: &FixedPointOptions,
) -> Result<NetworkState> {
    net.check_point(x, w)?;
    net.check_evaluators(evaluators)?;
    let k = net.node_count();
    let zeros = vec![0.0; k];
    let h0 = h0.unwrap_or(&zeros);
    if h0.len() != k {
        return invalid("initial guess has the wrong length");
    }
    let damping: Vec<f64> = (0..k).map(|i| if net.is_on_cycle(i) { opts.damping } else { 1.0 }).collect();
    let mut z = Vec::new();
    let map = |h: &[f64], out: &mut [f64]| -> Result<()> {
        for i in 0..k {
            net.assemble_input(i, x, w, h, &mut z);
            let v = evaluators[i].eval(&z);
            if !v.is_finite() {
                return Err(node_error(i, v));
            }
            out[i] = v;
        }
        Ok(())
    };
    let sol = solve_fixed_point_map(map, h0, &damping, opts)?;
    let node_inputs = (0..k)
        .map(|i| {
            let mut zi = Vec::new();
            net.assemble_input(i, x, w, &sol.h, &mut zi);
            zi
        })
        .collect();
    Ok(NetworkState {
        h: sol.h,
        converged: sol.converged,
        residual: sol.residual,
        iterations: sol.iterations,
        node_inputs,
    })
}

/// Evaluates the network by the acyclic pass when possible, otherwise by
/// the fixed-point solver.
pub fn evaluate(
    net: &FunctionNetwork,
    evaluators: &[NodeFn],
    x: &[f64],
    w: &[f64],
    h0: Option<&[f64]>,
    opts: &FixedPointOptions,
) -> Result<NetworkState> {
    if net.is_acyclic() {
        evaluate_acyclic(net, evaluators, x, w)
    } else {
        solve_fixed_point(net, evaluators, x, w, h0, opts)
    }
}

/// `cᵀH` for a converged state.
pub fn objective(net: &FunctionNetwork, state: &NetworkState) -> Result<f64> {
    if !state.converged {
        return Err(Error::InvalidState { residual: state.residual });
    }
    if state.h.len() != net.node_count() {
        return invalid("state length does not match the network");
    }
    Ok(net.projection().iter().zip(&state.h).map(|(a, b)| a * b).sum())
}
