//! Exact Gaussian process regression for a single node function.
//!
//! A [`NodeGp`] works in a normalized coordinate system: inputs are min-max
//! scaled to the unit cube and outputs are z-scored, both according to the
//! [`Normalization`] carried by its [`NodeDataset`]. Kernel hyperparameters
//! live in that normalized space; predictions are returned in raw units.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::{matern52_accumulate_grad, matern52_grad_factor, matern52_of_r, scaled_distance, KernelParams};
use crate::optim::{maximize_box, BoxBounds, LocalOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Affine maps between raw and normalized node coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_shift: f64,
    pub output_scale: f64,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Normalization {
            input_shift: vec![0.0; dim],
            input_scale: vec![1.0; dim],
            output_shift: 0.0,
            output_scale: 1.0,
        }
    }

    /// Min-max for inputs, z-score for outputs. Constant columns keep unit scale.
    pub fn fit(inputs: &[Vec<f64>], outputs: &[f64], dim: usize) -> Self {
        if inputs.is_empty() {
            return Normalization::identity(dim);
        }
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for z in inputs {
            for i in 0..dim {
                lo[i] = lo[i].min(z[i]);
                hi[i] = hi[i].max(z[i]);
            }
        }
        let input_scale = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| {
                let w = h - l;
                if w > 1e-12 * (1.0 + l.abs().max(h.abs())) {
                    w
                } else {
                    1.0
                }
            })
            .collect();
        let n = outputs.len() as f64;
        let mean = outputs.iter().sum::<f64>() / n;
        let var = outputs.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let output_scale = if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 };
        Normalization {
            input_shift: lo,
            input_scale,
            output_shift: mean,
            output_scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.input_shift.len()
    }

    #[inline]
    pub fn normalize_input_into(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..z.len() {
            out[i] = (z[i] - self.input_shift[i]) / self.input_scale[i];
        }
    }

    pub fn normalize_input(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        self.normalize_input_into(z, &mut out);
        out
    }

    #[inline]
    pub fn normalize_output(&self, y: f64) -> f64 {
        (y - self.output_shift) / self.output_scale
    }

    #[inline]
    pub fn denormalize_output(&self, v: f64) -> f64 {
        self.output_shift + self.output_scale * v
    }
}

/// Observations `(z, y)` of one node, with the normalization used for fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDataset {
    dim: usize,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
    pub normalization: Normalization,
}

impl NodeDataset {
    pub fn new(dim: usize) -> Self {
        NodeDataset {
            dim,
            inputs: Vec::new(),
            outputs: Vec::new(),
            normalization: Normalization::identity(dim),
        }
    }

    /// Builds a dataset with identity normalization.
    pub fn from_pairs(inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return invalid(format!("{} inputs but {} outputs", inputs.len(), outputs.len()));
        }
        let dim = inputs.first().map_or(0, |z| z.len());
        if inputs.iter().any(|z| z.len() != dim) {
            return invalid("input vectors have differing dimensions");
        }
        Ok(NodeDataset {
            dim,
            inputs,
            outputs,
            normalization: Normalization::identity(dim),
        })
    }

    pub fn push(&mut self, z: Vec<f64>, y: f64) -> Result<()> {
        if z.len() != self.dim {
            return invalid(format!("expected input of dimension {}, got {}", self.dim, z.len()));
        }
        self.inputs.push(z);
        self.outputs.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Recomputes the normalization from the current data.
    pub fn renormalize(&mut self) {
        self.normalization = Normalization::fit(&self.inputs, &self.outputs, self.dim);
    }

    pub fn normalized_inputs(&self) -> Vec<f64> {
        let mut flat = vec![0.0; self.len() * self.dim];
        for (row, z) in flat.chunks_mut(self.dim.max(1)).zip(&self.inputs) {
            self.normalization.normalize_input_into(z, row);
        }
        flat
    }

    pub fn normalized_outputs(&self) -> Vec<f64> {
        self.outputs.iter().map(|y| self.normalization.normalize_output(*y)).collect()
    }
}

/// Prior mean of a node, in raw units.
#[derive(Clone, Default)]
pub enum PriorMean {
    #[default]
    Zero,
    Function(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl PriorMean {
    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            PriorMean::Zero => 0.0,
            PriorMean::Function(f) => f(z),
        }
    }
}

impl fmt::Debug for PriorMean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorMean::Zero => write!(f, "Zero"),
            PriorMean::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// Lower Cholesky factor of `K + noise·I`, retrying with escalating jitter.
/// Returns the factor and the jitter that was added.
pub(crate) fn robust_cholesky(mut k: DMatrix<f64>, output_scale: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let mut added = 0.0;
    let mut jitter = 1e-10 * output_scale;
    while jitter <= 1e-6 * output_scale * (1.0 + 1e-9) {
        for i in 0..n {
            k[(i, i)] += jitter - added;
        }
        added = jitter;
        if let Some(c) = Cholesky::new(k.clone()) {
            return Ok((c, added));
        }
        jitter *= 10.0;
    }
    let diag_max = (0..n).map(|i| k[(i, i)]).fold(0.0f64, f64::max);
    let diag_min = (0..n).map(|i| k[(i, i)]).fold(f64::INFINITY, f64::min);
    Err(Error::NumericFailure {
        message: format!("kernel matrix of size {n} is not positive definite after jitter"),
        condition: if diag_min > 0.0 { diag_max / diag_min } else { f64::INFINITY },
    })
}

fn kernel_matrix(z: &[f64], n: usize, dim: usize, params: &KernelParams) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.output_scale + params.noise_variance;
        for j in 0..i {
            let r = scaled_distance(&z[i * dim..(i + 1) * dim], &z[j * dim..(j + 1) * dim], &params.lengthscales);
            let v = matern52_of_r(r, params.output_scale);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Posterior of one node function given its dataset.
#[derive(Debug, Clone)]
pub struct NodeGp {
    params: KernelParams,
    normalization: Normalization,
    prior_mean: PriorMean,
    dim: usize,
    n: usize,
    /// Normalized training inputs, row-major `n × dim`.
    train_z: Vec<f64>,
    /// Normalized training targets (residuals from the prior mean).
    targets: DVector<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl NodeGp {
    /// Conditions the prior `GP(prior_mean, k_params)` on `data`, using the
    /// dataset's stored normalization.
    pub fn fit_posterior(prior_mean: PriorMean, data: &NodeDataset, params: &KernelParams) -> Result<Self> {
        params.validate()?;
        if params.dim() != data.dim() {
            return invalid(format!(
                "kernel has {} lengthscales but data has dimension {}",
                params.dim(),
                data.dim()
            ));
        }
        let dim = data.dim();
        let n = data.len();
        let train_z = data.normalized_inputs();
        let targets = DVector::from_iterator(
            n,
            data.inputs
                .iter()
                .zip(&data.outputs)
                .map(|(z, y)| data.normalization.normalize_output(y - prior_mean.eval(z))),
        );
        let (chol, alpha, jitter) = if n == 0 {
            (None, DVector::zeros(0), 0.0)
        } else {
            let k = kernel_matrix(&train_z, n, dim, params);
            let (c, jitter) = robust_cholesky(k, params.output_scale)?;
            let alpha = c.solve(&targets);
            (Some(c), alpha, jitter)
        };
        Ok(NodeGp {
            params: params.clone(),
            normalization: data.normalization.clone(),
            prior_mean,
            dim,
            n,
            train_z,
            targets,
            chol,
            alpha,
            jitter,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn prior_mean(&self) -> &PriorMean {
        &self.prior_mean
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_train(&self) -> usize {
        self.n
    }

    /// Jitter added to the diagonal beyond the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub(crate) fn train_row(&self, i: usize) -> &[f64] {
        &self.train_z[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub(crate) fn cholesky(&self) -> Option<&Cholesky<f64, Dyn>> {
        self.chol.as_ref()
    }

    /// The reconstructed `L·Lᵀ` of the factored training covariance.
    pub fn factor_product(&self) -> Option<DMatrix<f64>> {
        self.chol.as_ref().map(|c| {
            let l = c.l();
            &l * l.transpose()
        })
    }

    /// Training covariance `Σ₀(Z,Z) + σ²I` (without jitter).
    pub fn training_covariance(&self) -> DMatrix<f64> {
        kernel_matrix(&self.train_z, self.n, self.dim, &self.params)
    }

    /// Cross-covariance `k(ẑ, Z)` for a normalized point.
    pub(crate) fn kernel_row_normalized(&self, zn: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            let r = scaled_distance(zn, self.train_row(i), &self.params.lengthscales);
            *o = matern52_of_r(r, self.params.output_scale);
        }
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return invalid(format!("expected input of dimension {}, got {}", self.dim, z.len()));
        }
        Ok(())
    }

    /// Posterior mean and variance at `z` in raw units.
    pub fn predict(&self, z: &[f64]) -> Result<(f64, f64)> {
        self.check_dim(z)?;
        let zn = self.normalization.normalize_input(z);
        let mu0 = self.prior_mean.eval(z);
        let s = self.normalization.output_scale;
        if self.n == 0 {
            return Ok((mu0 + self.normalization.output_shift, s * s * self.params.output_scale));
        }
        let mut kv = vec![0.0; self.n];
        self.kernel_row_normalized(&zn, &mut kv);
        let kv = DVector::from_vec(kv);
        let mean = kv.dot(&self.alpha);
        let v = self.chol.as_ref().expect("factor present when n > 0").l().solve_lower_triangular(&kv);
        let v = v.expect("triangular solve");
        let var = (self.params.output_scale - v.norm_squared()).max(0.0);
        Ok((mu0 + self.normalization.denormalize_output(mean), s * s * var))
    }

    /// Posterior means and variances at many raw points, in raw units.
    pub fn predict_many(&self, points: &[Vec<f64>], means: &mut [f64], vars: &mut [f64]) {
        let m = points.len();
        let s = self.normalization.output_scale;
        let mut kstar = DMatrix::zeros(self.n, m);
        let mut zn = vec![0.0; self.dim];
        let mut row = vec![0.0; self.n];
        for (j, z) in points.iter().enumerate() {
            self.normalization.normalize_input_into(z, &mut zn);
            self.kernel_row_normalized(&zn, &mut row);
            let mut mean = 0.0;
            for i in 0..self.n {
                kstar[(i, j)] = row[i];
                mean += row[i] * self.alpha[i];
            }
            means[j] = self.prior_mean.eval(z) + self.normalization.denormalize_output(mean);
        }
        match &self.chol {
            Some(c) => {
                let v = c.l_dirty().solve_lower_triangular(&kstar).expect("triangular solve");
                for j in 0..m {
                    let q = v.column(j).norm_squared();
                    vars[j] = s * s * (self.params.output_scale - q).max(0.0);
                }
            }
            None => vars.iter_mut().for_each(|v| *v = s * s * self.params.output_scale),
        }
    }

    /// Posterior covariance between two raw points.
    pub fn posterior_covariance(&self, z: &[f64], z2: &[f64]) -> Result<f64> {
        self.check_dim(z)?;
        self.check_dim(z2)?;
        let a = self.normalization.normalize_input(z);
        let b = self.normalization.normalize_input(z2);
        let prior = matern52_of_r(scaled_distance(&a, &b, &self.params.lengthscales), self.params.output_scale);
        let s2 = self.normalization.output_scale.powi(2);
        if self.n == 0 {
            return Ok(s2 * prior);
        }
        let mut ka = vec![0.0; self.n];
        let mut kb = vec![0.0; self.n];
        self.kernel_row_normalized(&a, &mut ka);
        self.kernel_row_normalized(&b, &mut kb);
        let chol = self.chol.as_ref().expect("factor present");
        let sol = chol.solve(&DVector::from_vec(kb));
        Ok(s2 * (prior - DVector::from_vec(ka).dot(&sol)))
    }

    /// Posterior mean in raw units, accumulating its gradient with respect
    /// to raw `z` into `grad` (overwritten). A non-zero prior mean is
    /// differentiated by central differences.
    pub fn mean_with_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let zn = self.normalization.normalize_input(z);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut m = 0.0;
        for i in 0..self.n {
            let zi = self.train_row(i);
            let r = scaled_distance(&zn, zi, &self.params.lengthscales);
            m += self.alpha[i] * matern52_of_r(r, self.params.output_scale);
            matern52_accumulate_grad(&zn, zi, &self.params, self.alpha[i], grad);
        }
        let s = self.normalization.output_scale;
        for (g, sc) in grad.iter_mut().zip(&self.normalization.input_scale) {
            *g *= s / sc;
        }
        let mut out = self.normalization.denormalize_output(m);
        if let PriorMean::Function(f) = &self.prior_mean {
            out += f(z);
            let mut zp = z.to_vec();
            for i in 0..z.len() {
                let h = 1e-6 * (1.0 + z[i].abs());
                zp[i] = z[i] + h;
                let fp = f(&zp);
                zp[i] = z[i] - h;
                let fm = f(&zp);
                zp[i] = z[i];
                grad[i] += (fp - fm) / (2.0 * h);
            }
        }
        out
    }

    /// Posterior mean in raw units.
    #[inline]
    pub fn mean(&self, z: &[f64]) -> f64 {
        let mut zn = [0.0f64; 16];
        let zn: &mut [f64] = if self.dim <= 16 { &mut zn[..self.dim] } else { return self.mean_slow(z) };
        self.normalization.normalize_input_into(z, zn);
        let mut m = 0.0;
        for i in 0..self.n {
            let r = scaled_distance(zn, self.train_row(i), &self.params.lengthscales);
            m += self.alpha[i] * matern52_of_r(r, self.params.output_scale);
        }
        self.prior_mean.eval(z) + self.normalization.denormalize_output(m)
    }

    fn mean_slow(&self, z: &[f64]) -> f64 {
        let mut g = vec![0.0; z.len()];
        self.mean_with_grad(z, &mut g)
    }
}

/// Layout of the log-hyperparameter vector used by the likelihood gradient:
/// `[log ζ², log ℓ₁, …, log ℓ_d, log σ²]`.
pub fn log_params(params: &KernelParams) -> Vec<f64> {
    let mut v = Vec::with_capacity(params.dim() + 2);
    v.push(params.output_scale.ln());
    v.extend(params.lengthscales.iter().map(|l| l.ln()));
    v.push(params.noise_variance.ln());
    v
}

/// Log marginal likelihood `log N(y; 0, K_n)` of the normalized data.
pub fn log_marginal_likelihood(data: &NodeDataset, params: &KernelParams) -> Result<f64> {
    mll_impl(data, params, false).map(|(v, _)| v)
}

/// Log marginal likelihood and its gradient with respect to
/// [`log_params`]. The noise entry is zero when `σ² = 0`.
pub fn log_marginal_likelihood_grad(data: &NodeDataset, params: &KernelParams) -> Result<(f64, Vec<f64>)> {
    mll_impl(data, params, true)
}

fn mll_impl(data: &NodeDataset, params: &KernelParams, with_grad: bool) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    let n = data.len();
    if n == 0 {
        return invalid("marginal likelihood needs at least one observation");
    }
    let dim = data.dim();
    if params.dim() != dim {
        return invalid("lengthscale count does not match data dimension");
    }
    let z = data.normalized_inputs();
    let y = DVector::from_vec(data.normalized_outputs());
    let k = kernel_matrix(&z, n, dim, params);
    let (chol, _) = robust_cholesky(k, params.output_scale)?;
    let alpha = chol.solve(&y);
    let l = chol.l_dirty();
    let logdet: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let mll = -0.5 * y.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * LN_2PI;
    if !with_grad {
        return Ok((mll, Vec::new()));
    }
    let kinv = chol.inverse();
    let mut grad = vec![0.0; dim + 2];
    for a in 0..n {
        let za = &z[a * dim..(a + 1) * dim];
        // diagonal terms: dK_aa/dlogζ² = ζ², dK_aa/dlogσ² = σ²
        let w_aa = alpha[a] * alpha[a] - kinv[(a, a)];
        grad[0] += 0.5 * w_aa * params.output_scale;
        grad[dim + 1] += 0.5 * w_aa * params.noise_variance;
        for b in 0..a {
            let zb = &z[b * dim..(b + 1) * dim];
            let w = alpha[a] * alpha[b] - kinv[(a, b)];
            let r = scaled_distance(za, zb, &params.lengthscales);
            // symmetric pair counted twice
            grad[0] += w * matern52_of_r(r, params.output_scale);
            let f = matern52_grad_factor(r, params.output_scale);
            for i in 0..dim {
                let d = (za[i] - zb[i]) / params.lengthscales[i];
                grad[1 + i] += w * f * d * d;
            }
        }
    }
    Ok((mll, grad))
}

/// How observation noise is treated while fitting hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoisePolicy {
    /// σ² = ratio·ζ², tied to the output scale.
    Relative { ratio: f64 },
    /// σ² fixed (normalized units).
    Fixed { variance: f64 },
    /// σ² learned within bounds.
    Learned { lower: f64, upper: f64 },
}

impl Default for NoisePolicy {
    fn default() -> Self {
        NoisePolicy::Relative { ratio: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperFitOptions {
    pub restarts: usize,
    pub noise: NoisePolicy,
    pub lengthscale_bounds: (f64, f64),
    pub output_scale_bounds: (f64, f64),
    pub max_iters: usize,
}

impl Default for HyperFitOptions {
    fn default() -> Self {
        HyperFitOptions {
            restarts: 8,
            noise: NoisePolicy::default(),
            lengthscale_bounds: (1e-3, 1e3),
            output_scale_bounds: (1e-4, 1e4),
            max_iters: 100,
        }
    }
}

/// Outcome of hyperparameter fitting.
#[derive(Debug, Clone)]
pub struct HyperFit {
    pub params: KernelParams,
    pub mll: f64,
    /// Set when every restart failed and unit hyperparameters were returned.
    pub fallback: bool,
}

impl HyperFitOptions {
    fn theta_bounds(&self, dim: usize) -> BoxBounds {
        let mut lo = vec![self.output_scale_bounds.0.ln()];
        let mut hi = vec![self.output_scale_bounds.1.ln()];
        lo.extend(std::iter::repeat(self.lengthscale_bounds.0.ln()).take(dim));
        hi.extend(std::iter::repeat(self.lengthscale_bounds.1.ln()).take(dim));
        if let NoisePolicy::Learned { lower, upper } = self.noise {
            lo.push(lower.ln());
            hi.push(upper.ln());
        }
        BoxBounds { lower: lo, upper: hi }
    }

    fn params_from_theta(&self, theta: &[f64], dim: usize) -> KernelParams {
        let output_scale = theta[0].exp();
        let lengthscales = theta[1..1 + dim].iter().map(|t| t.exp()).collect();
        let noise_variance = match self.noise {
            NoisePolicy::Relative { ratio } => ratio * output_scale,
            NoisePolicy::Fixed { variance } => variance,
            NoisePolicy::Learned { .. } => theta[1 + dim].exp(),
        };
        KernelParams {
            output_scale,
            lengthscales,
            noise_variance,
        }
    }

    fn theta_from_params(&self, p: &KernelParams) -> Vec<f64> {
        let mut t = vec![p.output_scale.ln()];
        t.extend(p.lengthscales.iter().map(|l| l.ln()));
        if let NoisePolicy::Learned { .. } = self.noise {
            t.push(p.noise_variance.max(1e-300).ln());
        }
        t
    }
}

/// Maximizes the log marginal likelihood over log-hyperparameters starting
/// from each of `starts`; returns the best result.
pub fn fit_hyperparameters_from(data: &NodeDataset, starts: &[KernelParams], opts: &HyperFitOptions) -> HyperFit {
    let dim = data.dim();
    let bounds = opts.theta_bounds(dim);
    let local = LocalOptions {
        max_iters: opts.max_iters,
        grad_tol: 1e-6,
        value_tol: 1e-10,
        memory: 6,
    };
    let mut best: Option<(KernelParams, f64)> = None;
    for start in starts {
        let theta0 = opts.theta_from_params(start);
        let objective = |theta: &[f64], g: &mut [f64]| -> f64 {
            let p = opts.params_from_theta(theta, dim);
            match log_marginal_likelihood_grad(data, &p) {
                Ok((v, grad)) => {
                    g[0] = grad[0];
                    g[1..1 + dim].copy_from_slice(&grad[1..1 + dim]);
                    match opts.noise {
                        NoisePolicy::Relative { .. } => g[0] += grad[dim + 1],
                        NoisePolicy::Fixed { .. } => {}
                        NoisePolicy::Learned { .. } => g[1 + dim] = grad[dim + 1],
                    }
                    v
                }
                Err(_) => {
                    g.iter_mut().for_each(|v| *v = 0.0);
                    f64::NEG_INFINITY
                }
            }
        };
        let res = maximize_box(objective, &theta0, &bounds, &local);
        if res.value.is_finite() && best.as_ref().map_or(true, |(_, b)| res.value > *b) {
            best = Some((opts.params_from_theta(&res.x, dim), res.value));
        }
    }
    match best {
        Some((params, mll)) => HyperFit {
            params,
            mll,
            fallback: false,
        },
        None => {
            let mut params = KernelParams::unit(dim, 0.0);
            params.noise_variance = opts.params_from_theta(&opts.theta_from_params(&params), dim).noise_variance;
            log::warn!("all hyperparameter restarts failed; falling back to unit hyperparameters");
            HyperFit {
                params,
                mll: f64::NEG_INFINITY,
                fallback: true,
            }
        }
    }
}

/// Stratified log-uniform start points over the hyperparameter box.
pub fn stratified_starts<R: Rng + ?Sized>(dim: usize, count: usize, opts: &HyperFitOptions, rng: &mut R) -> Vec<KernelParams> {
    let bounds = opts.theta_bounds(dim);
    let m = bounds.dim();
    let columns: Vec<Vec<usize>> = (0..m)
        .map(|_| {
            let mut p: Vec<usize> = (0..count).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    (0..count)
        .map(|r| {
            let theta: Vec<f64> = (0..m)
                .map(|j| {
                    let stratum = columns[j][r] as f64;
                    let u = (stratum + rng.gen::<f64>()) / count as f64;
                    bounds.lower[j] + u * (bounds.upper[j] - bounds.lower[j])
                })
                .collect();
            opts.params_from_theta(&theta, dim)
        })
        .collect()
}

/// Multi-start marginal-likelihood fit: `opts.restarts` stratified starts,
/// plus `warm_start` when given. Requires at least two observations.
pub fn fit_hyperparameters<R: Rng + ?Sized>(
    data: &NodeDataset,
    opts: &HyperFitOptions,
    warm_start: Option<&KernelParams>,
    rng: &mut R,
) -> Result<HyperFit> {
    if data.len() < 2 {
        return invalid(format!("hyperparameter fitting needs at least 2 observations, got {}", data.len()));
    }
    let mut starts = Vec::with_capacity(opts.restarts + 1);
    if let Some(w) = warm_start {
        if w.dim() == data.dim() {
            starts.push(w.clone());
        }
    }
    starts.extend(stratified_starts(data.dim(), opts.restarts, opts, rng));
    Ok(fit_hyperparameters_from(data, &starts, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_data(noise: bool) -> (NodeDataset, KernelParams) {
        let inputs: Vec<Vec<f64>> = vec![vec![0.1, 0.3], vec![0.5, -0.2], vec![0.9, 0.8], vec![-0.4, 0.0], vec![0.2, 0.6]];
        let outputs = inputs.iter().map(|z| (3.0 * z[0]).sin() + z[1] * z[1]).collect();
        let data = NodeDataset::from_pairs(inputs, outputs).unwrap();
        let p = KernelParams::new(1.3, vec![0.7, 0.4], if noise { 0.05 } else { 0.0 }).unwrap();
        (data, p)
    }

    #[test]
    fn empty_data_returns_prior() {
        let data = NodeDataset::new(1);
        let p = KernelParams::new(2.0, vec![0.5], 0.0).unwrap();
        let gp = NodeGp::fit_posterior(PriorMean::Function(Arc::new(|z| 3.0 * z[0])), &data, &p).unwrap();
        let (m, v) = gp.predict(&[0.7]).unwrap();
        assert_relative_eq!(m, 2.1, max_relative = 1e-15);
        assert_eq!(v, 2.0);
        let gp0 = NodeGp::fit_posterior(PriorMean::Zero, &data, &p).unwrap();
        assert_eq!(gp0.predict(&[-4.0]).unwrap(), (0.0, 2.0));
    }

    #[test]
    fn single_noise_free_observation_interpolates() {
        let data = NodeDataset::from_pairs(vec![vec![0.3]], vec![1.7]).unwrap();
        let p = KernelParams::new(1.0, vec![0.5], 0.0).unwrap();
        let gp = NodeGp::fit_posterior(PriorMean::Zero, &data, &p).unwrap();
        let (m, v) = gp.predict(&[0.3]).unwrap();
        assert!((m - 1.7).abs() <= 1e-8);
        assert!(v <= 1e-8);
    }

    #[test]
    fn factor_reconstructs_training_covariance() {
        let (data, p) = toy_data(true);
        let gp = NodeGp::fit_posterior(PriorMean::Zero, &data, &p).unwrap();
        let k = gp.training_covariance();
        let llt = gp.factor_product().unwrap();
        let rel = (&llt - &k).norm() / k.norm();
        assert!(rel < 1e-8, "{rel}");
        assert_eq!(gp.jitter(), 0.0);
    }

    #[test]
    fn dense_solve_oracle_matches() {
        let (data, p) = toy_data(true);
        let gp = NodeGp::fit_posterior(PriorMean::Zero, &data, &p).unwrap();
        let n = data.len();
        let kmat = DMatrix::from_fn(n, n, |i, j| {
            crate::kernel::matern52(&data.inputs[i], &data.inputs[j], &p).unwrap() + if i == j { p.noise_variance } else { 0.0 }
        });
        let lu = kmat.lu();
        let z = [0.35, 0.1];
        let kz = DVector::from_fn(n, |i, _| crate::kernel::matern52(&z, &data.inputs[i], &p).unwrap());
        let y = DVector::from_vec(data.outputs.clone());
        let mean = kz.dot(&lu.solve(&y).unwrap());
        let var = p.output_scale - kz.dot(&lu.solve(&kz).unwrap());
        let (m, v) = gp.predict(&z).unwrap();
        assert!((m - mean).abs() < 1e-10);
        assert!((v - var).abs() < 1e-10);
    }

    #[test]
    fn mll_single_observation_is_gaussian_log_density() {
        let data = NodeDataset::from_pairs(vec![vec![0.0]], vec![0.8]).unwrap();
        let p = KernelParams::new(1.5, vec![1.0], 0.25).unwrap();
        let s2: f64 = 1.75;
        let expected = -0.5 * 0.8f64.powi(2) / s2 - 0.5 * (2.0 * std::f64::consts::PI * s2).ln();
        assert_relative_eq!(log_marginal_likelihood(&data, &p).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn mll_gradient_matches_central_differences() {
        let (data, p) = toy_data(true);
        let (_, grad) = log_marginal_likelihood_grad(&data, &p).unwrap();
        let theta = log_params(&p);
        let h = 1e-5;
        for i in 0..theta.len() {
            let eval = |t: &[f64]| {
                let q = KernelParams {
                    output_scale: t[0].exp(),
                    lengthscales: t[1..3].iter().map(|v| v.exp()).collect(),
                    noise_variance: t[3].exp(),
                };
                log_marginal_likelihood(&data, &q).unwrap()
            };
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (eval(&tp) - eval(&tm)) / (2.0 * h);
            assert!((grad[i] - fd).abs() <= 1e-4 * fd.abs().max(1e-6), "param {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn constant_outputs_normalize_to_zero_and_fit() {
        let inputs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.2]).collect();
        let mut data = NodeDataset::from_pairs(inputs, vec![3.0; 6]).unwrap();
        data.renormalize();
        assert!(data.normalized_outputs().iter().all(|v| *v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fit = fit_hyperparameters(&data, &HyperFitOptions::default(), None, &mut rng).unwrap();
        assert!(!fit.fallback);
        fit.params.validate().unwrap();
        let gp = NodeGp::fit_posterior(PriorMean::Zero, &data, &fit.params).unwrap();
        assert!((gp.predict(&[0.5]).unwrap().0 - 3.0).abs() < 1e-9);
    }

    #[test]
    fn ascent_from_a_start_never_decreases_mll() {
        let (mut data, _) = toy_data(false);
        data.renormalize();
        let opts = HyperFitOptions::default();
        let start = KernelParams::new(0.8, vec![0.3, 0.6], 0.8e-6).unwrap();
        let fit = fit_hyperparameters_from(&data, &[start.clone()], &opts);
        assert!(fit.mll >= log_marginal_likelihood(&data, &start).unwrap());
    }

    #[test]
    fn mean_gradient_matches_finite_differences() {
        let (mut data, p) = toy_data(true);
        data.renormalize();
        let gp = NodeGp::fit_posterior(PriorMean::Zero, &data, &p).unwrap();
        let z = [0.3, 0.25];
        let mut g = [0.0; 2];
        let m = gp.mean_with_grad(&z, &mut g);
        assert_relative_eq!(m, gp.predict(&z).unwrap().0, max_relative = 1e-12);
        assert_relative_eq!(m, gp.mean(&z), max_relative = 1e-12);
        for i in 0..2 {
            let h = 1e-6;
            let mut zp = z;
            let mut zm = z;
            zp[i] += h;
            zm[i] -= h;
            let fd = (gp.mean(&zp) - gp.mean(&zm)) / (2.0 * h);
            assert_relative_eq!(g[i], fd, max_relative = 1e-5);
        }
    }

    #[test]
    fn fit_requires_two_points() {
        let data = NodeDataset::from_pairs(vec![vec![0.0]], vec![1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(fit_hyperparameters(&data, &HyperFitOptions::default(), None, &mut rng).is_err());
        assert!(NodeDataset::from_pairs(vec![vec![0.0]], vec![]).is_err());
        assert!(NodeDataset::from_pairs(vec![vec![0.0], vec![1.0, 2.0]], vec![1.0, 2.0]).is_err());
    }
}
