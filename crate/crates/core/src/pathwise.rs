//! Posterior function samples built from random Fourier features plus an
//! exact correction through the training data, and their composition into
//! whole-network samples.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::funcnet::{
    evaluate, forward_acyclic, FixedPointOptions, ForwardWorkspace, FunctionNetwork, NetworkState, NodeFn, NodeFunction,
};
use crate::gp::NodeGp;
use crate::kernel::KernelParams;
use crate::trig;

pub const DEFAULT_FEATURES: usize = 1024;
const CHUNK: usize = 64;

/// Random Fourier features `φ_d(z) = √(2ζ²/D)·cos(ω_dᵀz + b_d)` for a
/// Matérn-5/2 kernel, so that `φ(z)ᵀφ(z') ≈ k(z, z')`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBasis {
    dim: usize,
    /// Row-major `D × dim`.
    frequencies: Vec<f64>,
    /// Column-major copy, `dim × D`.
    by_coord: Vec<f64>,
    phases: Vec<f64>,
    amplitude: f64,
}

impl FeatureBasis {
    /// Frequencies follow a multivariate t with 5 degrees of freedom scaled
    /// by the inverse lengthscales: `ω = u/√g`, `u ~ N(0, L⁻²)`, `g ~ χ²(5)/5`.
    pub fn draw<R: Rng + ?Sized>(params: &KernelParams, count: usize, rng: &mut R) -> Result<Self> {
        if count == 0 {
            return invalid("feature count must be at least 1");
        }
        params.validate()?;
        let dim = params.dim();
        let chi = ChiSquared::new(5.0).expect("valid degrees of freedom");
        let mut frequencies = Vec::with_capacity(count * dim);
        let mut phases = Vec::with_capacity(count);
        for _ in 0..count {
            let g: f64 = chi.sample(rng) / 5.0;
            let s = 1.0 / g.sqrt();
            for l in &params.lengthscales {
                let u: f64 = StandardNormal.sample(rng);
                frequencies.push(s * u / l);
            }
            phases.push(rng.gen::<f64>() * std::f64::consts::TAU);
        }
        let by_coord = (0..dim).flat_map(|i| frequencies.iter().skip(i).step_by(dim).copied()).collect();
        Ok(FeatureBasis {
            dim,
            frequencies,
            by_coord,
            phases,
            amplitude: (2.0 * params.output_scale / count as f64).sqrt(),
        })
    }

    pub fn feature_count(&self) -> usize {
        self.phases.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    #[inline]
    fn arg(&self, d: usize, z: &[f64]) -> f64 {
        let w = &self.frequencies[d * self.dim..(d + 1) * self.dim];
        w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + self.phases[d]
    }

    pub fn features(&self, z: &[f64]) -> Vec<f64> {
        (0..self.feature_count()).map(|d| self.amplitude * trig::cos(self.arg(d, z))).collect()
    }

    /// Arguments `ω_dᵀz + b_d` for features `start..start + out.len()`.
    #[inline]
    fn args_into(&self, start: usize, z: &[f64], out: &mut [f64]) {
        let count = self.feature_count();
        out.copy_from_slice(&self.phases[start..start + out.len()]);
        for (i, zi) in z.iter().enumerate() {
            let col = &self.by_coord[i * count + start..i * count + start + out.len()];
            for (o, w) in out.iter_mut().zip(col) {
                *o += zi * w;
            }
        }
    }

    /// `Σ_d c_d φ_d(z)`.
    pub fn combine(&self, coeffs: &[f64], z: &[f64]) -> f64 {
        let mut buf = [0.0f64; CHUNK];
        let mut acc = 0.0;
        for (k, cs) in coeffs.chunks(CHUNK).enumerate() {
            let args = &mut buf[..cs.len()];
            self.args_into(k * CHUNK, z, args);
            trig::cos_in_place(args);
            acc += cs.iter().zip(args.iter()).map(|(c, a)| c * a).sum::<f64>();
        }
        self.amplitude * acc
    }

    /// `Σ_d c_d φ_d(z)` and its gradient in `z`, written to `grad`.
    pub fn combine_grad(&self, coeffs: &[f64], z: &[f64], grad: &mut [f64]) -> f64 {
        let count = self.feature_count();
        let mut buf = [0.0f64; CHUNK];
        let mut sin = [0.0f64; CHUNK];
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut acc = 0.0;
        for (k, cs) in coeffs.chunks(CHUNK).enumerate() {
            let start = k * CHUNK;
            let args = &mut buf[..cs.len()];
            let sin = &mut sin[..cs.len()];
            self.args_into(start, z, args);
            trig::sin_cos_in_place(args, sin);
            acc += cs.iter().zip(args.iter()).map(|(c, a)| c * a).sum::<f64>();
            for (s, c) in sin.iter_mut().zip(cs) {
                *s *= -c;
            }
            for (i, g) in grad.iter_mut().enumerate() {
                let col = &self.by_coord[i * count + start..i * count + start + cs.len()];
                *g += col.iter().zip(sin.iter()).map(|(w, s)| w * s).sum::<f64>();
            }
        }
        grad.iter_mut().for_each(|g| *g *= self.amplitude);
        self.amplitude * acc
    }
}

/// One posterior sample of a node function, evaluated in raw units:
/// `f̂(z) = μ₀(z) + denorm(φ(ẑ)ᵀθ + k(ẑ, Ẑ)v)` with `v = K⁻¹(y − Φθ)`.
#[derive(Debug, Clone)]
pub struct PathSample {
    gp: Arc<NodeGp>,
    basis: FeatureBasis,
    weights: Vec<f64>,
    correction: Vec<f64>,
}

impl PathSample {
    /// Sample conditioned on the training targets as exact values; the
    /// kernel's noise variance acts only as a nugget.
    pub fn draw<R: Rng + ?Sized>(gp: Arc<NodeGp>, count: usize, rng: &mut R) -> Result<Self> {
        Self::draw_impl(gp, count, rng, false)
    }

    /// Sample conditioned on noisy targets: the update also subtracts a
    /// draw of the observation noise `ε ~ N(0, σ²)` at each training point.
    pub fn draw_noisy<R: Rng + ?Sized>(gp: Arc<NodeGp>, count: usize, rng: &mut R) -> Result<Self> {
        Self::draw_impl(gp, count, rng, true)
    }

    fn draw_impl<R: Rng + ?Sized>(gp: Arc<NodeGp>, count: usize, rng: &mut R, noisy: bool) -> Result<Self> {
        let basis = FeatureBasis::draw(gp.params(), count, rng)?;
        let weights: Vec<f64> = (0..count).map(|_| StandardNormal.sample(rng)).collect();
        let n = gp.n_train();
        let correction = if n == 0 {
            Vec::new()
        } else {
            let sd = gp.params().noise_variance.sqrt();
            let resid = DVector::from_iterator(
                n,
                (0..n).map(|i| {
                    let eps = if noisy {
                        let e: f64 = StandardNormal.sample(rng);
                        sd * e
                    } else {
                        0.0
                    };
                    gp.targets()[i] - basis.combine(&weights, gp.train_row(i)) - eps
                }),
            );
            let chol = gp.cholesky().ok_or_else(|| Error::NumericFailure {
                message: "posterior has data but no factorization".into(),
                condition: f64::INFINITY,
            })?;
            let v = chol.solve(&resid);
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericFailure {
                    message: "non-finite pathwise correction".into(),
                    condition: f64::INFINITY,
                });
            }
            v.as_slice().to_vec()
        };
        Ok(PathSample {
            gp,
            basis,
            weights,
            correction,
        })
    }

    pub fn basis(&self) -> &FeatureBasis {
        &self.basis
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn correction(&self) -> &[f64] {
        &self.correction
    }

    #[inline]
    fn normalized_value(&self, zn: &[f64]) -> f64 {
        let mut v = self.basis.combine(&self.weights, zn);
        let p = self.gp.params();
        for (i, c) in self.correction.iter().enumerate() {
            let r = crate::kernel::scaled_distance(zn, self.gp.train_row(i), &p.lengthscales);
            v += c * crate::kernel::matern52_of_r(r, p.output_scale);
        }
        v
    }
}

const STACK_DIM: usize = 16;

impl NodeFunction for PathSample {
    fn eval(&self, z: &[f64]) -> f64 {
        let norm = self.gp.normalization();
        let mut buf = [0.0f64; STACK_DIM];
        let mut heap;
        let zn: &mut [f64] = if z.len() <= STACK_DIM {
            &mut buf[..z.len()]
        } else {
            heap = vec![0.0; z.len()];
            &mut heap
        };
        norm.normalize_input_into(z, zn);
        self.gp.prior_mean().eval(z) + norm.denormalize_output(self.normalized_value(zn))
    }

    fn eval_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let norm = self.gp.normalization();
        let zn = norm.normalize_input(z);
        let mut v = self.basis.combine_grad(&self.weights, &zn, grad);
        let p = self.gp.params();
        for (i, c) in self.correction.iter().enumerate() {
            let zi = self.gp.train_row(i);
            let r = crate::kernel::scaled_distance(&zn, zi, &p.lengthscales);
            v += c * crate::kernel::matern52_of_r(r, p.output_scale);
            crate::kernel::matern52_accumulate_grad(&zn, zi, p, *c, grad);
        }
        let s = norm.output_scale;
        for (g, sc) in grad.iter_mut().zip(&norm.input_scale) {
            *g *= s / sc;
        }
        let mut out = norm.denormalize_output(v);
        let pm = self.gp.prior_mean();
        if let crate::gp::PriorMean::Function(f) = pm {
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
}

/// Posterior mean of a node GP as a node function.
#[derive(Debug, Clone)]
pub struct PosteriorMean(pub Arc<NodeGp>);

impl NodeFunction for PosteriorMean {
    fn eval(&self, z: &[f64]) -> f64 {
        self.0.mean(z)
    }

    fn eval_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        self.0.mean_with_grad(z, grad)
    }
}

/// Per-node model: a known function or a GP posterior.
#[derive(Clone)]
pub enum NodeSurrogate {
    Known(NodeFn),
    Gp(Arc<NodeGp>),
}

impl std::fmt::Debug for NodeSurrogate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeSurrogate::Known(_) => write!(f, "Known"),
            NodeSurrogate::Gp(g) => write!(f, "Gp(n = {})", g.n_train()),
        }
    }
}

/// Node functions given by posterior means (known nodes pass through).
pub fn mean_evaluators(models: &[NodeSurrogate]) -> Vec<NodeFn> {
    models
        .iter()
        .map(|m| match m {
            NodeSurrogate::Known(f) => f.clone(),
            NodeSurrogate::Gp(g) => Arc::new(PosteriorMean(g.clone())) as NodeFn,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleTag {
    /// Sample used to choose the next design.
    Design,
    /// Sample used to choose the next uncertainty realization.
    Uncertainty,
}

/// A deterministic realization of every node function of a network.
#[derive(Clone)]
pub struct NetworkSample {
    evaluators: Vec<NodeFn>,
    tag: SampleTag,
}

impl std::fmt::Debug for NetworkSample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "NetworkSample({:?}, {} nodes)", self.tag, self.evaluators.len())
    }
}

impl NetworkSample {
    /// Wraps fixed node functions, e.g. the ground truth or posterior means.
    pub fn from_evaluators(evaluators: Vec<NodeFn>, tag: SampleTag) -> Self {
        NetworkSample { evaluators, tag }
    }

    /// Draws independent path samples for every GP node; known nodes pass through.
    pub fn draw<R: Rng + ?Sized>(
        net: &FunctionNetwork,
        models: &[NodeSurrogate],
        features: usize,
        rng: &mut R,
        tag: SampleTag,
    ) -> Result<Self> {
        if models.len() != net.node_count() {
            return invalid(format!("{} node models for {} nodes", models.len(), net.node_count()));
        }
        let evaluators = models
            .iter()
            .map(|m| match m {
                NodeSurrogate::Known(f) => Ok(f.clone()),
                NodeSurrogate::Gp(g) => Ok(Arc::new(PathSample::draw(g.clone(), features, rng)?) as NodeFn),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NetworkSample { evaluators, tag })
    }

    pub fn tag(&self) -> SampleTag {
        self.tag
    }

    pub fn evaluators(&self) -> &[NodeFn] {
        &self.evaluators
    }

    pub fn state(&self, net: &FunctionNetwork, x: &[f64], w: &[f64], opts: &FixedPointOptions) -> Result<NetworkState> {
        evaluate(net, &self.evaluators, x, w, None, opts)
    }

    /// Sampled objective `cᵀĤ(x, w)`.
    pub fn objective(&self, net: &FunctionNetwork, x: &[f64], w: &[f64], opts: &FixedPointOptions) -> Result<f64> {
        let s = self.state(net, x, w, opts)?;
        crate::funcnet::objective(net, &s)
    }

    /// Sampled objective with its design gradient; acyclic networks only.
    pub fn objective_grad(&self, net: &FunctionNetwork, x: &[f64], w: &[f64], ws: &mut ForwardWorkspace, grad: &mut [f64]) -> Result<f64> {
        forward_acyclic(net, &self.evaluators, x, w, ws, Some(grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{NodeDataset, PriorMean};
    use crate::kernel::matern52;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn fitted(noise: f64) -> Arc<NodeGp> {
        let inputs: Vec<Vec<f64>> = vec![vec![0.1, 0.2], vec![0.5, 0.9], vec![0.8, 0.3], vec![0.3, 0.6]];
        let outputs: Vec<f64> = inputs.iter().map(|z| (3.0 * z[0]).sin() + z[1] * z[1]).collect();
        let mut data = NodeDataset::from_pairs(inputs, outputs).unwrap();
        data.renormalize();
        let params = KernelParams::new(1.3, vec![0.4, 0.7], noise).unwrap();
        Arc::new(NodeGp::fit_posterior(PriorMean::Zero, &data, &params).unwrap())
    }

    #[test]
    fn basis_is_deterministic() {
        let p = KernelParams::unit(2, 0.0);
        let a = FeatureBasis::draw(&p, 64, &mut rng(3)).unwrap();
        let b = FeatureBasis::draw(&p, 64, &mut rng(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.phases().iter().all(|b| (0.0..std::f64::consts::TAU).contains(b)));
        assert!(FeatureBasis::draw(&p, 0, &mut rng(3)).is_err());
    }

    #[test]
    fn feature_products_approximate_kernel() {
        let p = KernelParams::unit(1, 0.0);
        let mut r = rng(11);
        for dist in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let mut acc = 0.0;
            for _ in 0..50 {
                let b = FeatureBasis::draw(&p, 4096, &mut r).unwrap();
                let fa = b.features(&[0.2]);
                let fb = b.features(&[0.2 + dist]);
                acc += fa.iter().zip(&fb).map(|(a, b)| a * b).sum::<f64>();
            }
            let k = matern52(&[0.2], &[0.2 + dist], &p).unwrap();
            assert!((acc / 50.0 - k).abs() < 0.05, "dist {dist}: {} vs {k}", acc / 50.0);
        }
    }

    #[test]
    fn sample_interpolates_noise_free_data() {
        let gp = fitted(0.0);
        for seed in 0..5 {
            let s = PathSample::draw(gp.clone(), 1024, &mut rng(seed)).unwrap();
            let inputs: [[f64; 2]; 4] = [[0.1, 0.2], [0.5, 0.9], [0.8, 0.3], [0.3, 0.6]];
            for z in inputs {
                let y = (3.0 * z[0]).sin() + z[1] * z[1];
                assert!((s.eval(&z) - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sample_gradient_matches_differences() {
        let gp = fitted(1e-4);
        let s = PathSample::draw(gp, 256, &mut rng(5)).unwrap();
        let mut r = rng(6);
        for _ in 0..10 {
            let z = [r.gen::<f64>(), r.gen::<f64>()];
            let mut g = [0.0; 2];
            s.eval_grad(&z, &mut g);
            for d in 0..2 {
                let h = 1e-5;
                let mut zp = z;
                let mut zm = z;
                zp[d] += h;
                zm[d] -= h;
                let fd = (s.eval(&zp) - s.eval(&zm)) / (2.0 * h);
                assert!((g[d] - fd).abs() <= 1e-4 * fd.abs().max(1.0), "{} vs {fd}", g[d]);
            }
        }
    }

    #[test]
    fn independent_draws_differ() {
        let gp = fitted(0.0);
        let a = PathSample::draw(gp.clone(), 128, &mut rng(1)).unwrap();
        let b = PathSample::draw(gp, 128, &mut rng(2)).unwrap();
        assert_ne!(a.eval(&[0.61, 0.12]), b.eval(&[0.61, 0.12]));
    }

    #[test]
    fn empty_data_is_prior_weight_sample() {
        let data = NodeDataset::new(1);
        let gp = Arc::new(NodeGp::fit_posterior(PriorMean::Zero, &data, &KernelParams::unit(1, 0.0)).unwrap());
        let s = PathSample::draw(gp, 32, &mut rng(4)).unwrap();
        assert!(s.correction().is_empty());
        let direct: f64 = s.basis().features(&[0.3]).iter().zip(s.weights()).map(|(a, b)| a * b).sum();
        assert!((s.eval(&[0.3]) - direct).abs() < 1e-12);
    }
}
