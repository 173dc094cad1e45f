//! Matérn-5/2 kernel with automatic relevance determination.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Hyperparameters of a node kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Output variance ζ².
    pub output_scale: f64,
    /// One lengthscale per input dimension.
    pub lengthscales: Vec<f64>,
    /// Observation noise variance σ².
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(output_scale: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let p = KernelParams {
            output_scale,
            lengthscales,
            noise_variance,
        };
        p.validate()?;
        Ok(p)
    }

    /// Unit output scale and lengthscales with the given noise variance.
    pub fn unit(dim: usize, noise_variance: f64) -> Self {
        KernelParams {
            output_scale: 1.0,
            lengthscales: vec![1.0; dim],
            noise_variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return invalid(format!("output scale must be positive, got {}", self.output_scale));
        }
        if let Some(l) = self.lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return invalid(format!("lengthscales must be positive, got {l}"));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return invalid(format!("noise variance must be nonnegative, got {}", self.noise_variance));
        }
        Ok(())
    }
}

/// Matérn-5/2 covariance between `z` and `z2`.
pub fn matern52(z: &[f64], z2: &[f64], params: &KernelParams) -> Result<f64> {
    if z.len() != z2.len() || z.len() != params.dim() {
        return invalid(format!(
            "dimension mismatch: {} vs {} with {} lengthscales",
            z.len(),
            z2.len(),
            params.dim()
        ));
    }
    Ok(matern52_unchecked(z, z2, params))
}

#[inline]
pub(crate) fn scaled_distance(z: &[f64], z2: &[f64], lengthscales: &[f64]) -> f64 {
    let mut r2 = 0.0;
    for ((a, b), l) in z.iter().zip(z2).zip(lengthscales) {
        let d = (a - b) / l;
        r2 += d * d;
    }
    r2.sqrt()
}

#[inline]
pub(crate) fn matern52_of_r(r: f64, output_scale: f64) -> f64 {
    let s = SQRT5 * r;
    output_scale * (1.0 + s + s * s / 3.0) * (-s).exp()
}

#[inline]
pub(crate) fn matern52_unchecked(z: &[f64], z2: &[f64], params: &KernelParams) -> f64 {
    matern52_of_r(scaled_distance(z, z2, &params.lengthscales), params.output_scale)
}

/// The common factor ζ²(5/3)(1+√5 r)exp(−√5 r) shared by the derivatives
/// with respect to inputs and log-lengthscales.
#[inline]
pub(crate) fn matern52_grad_factor(r: f64, output_scale: f64) -> f64 {
    let s = SQRT5 * r;
    output_scale * (5.0 / 3.0) * (1.0 + s) * (-s).exp()
}

/// Adds ∂k(z, z2)/∂z into `grad`, scaled by `weight`.
#[inline]
pub(crate) fn matern52_accumulate_grad(z: &[f64], z2: &[f64], params: &KernelParams, weight: f64, grad: &mut [f64]) {
    let r = scaled_distance(z, z2, &params.lengthscales);
    let f = weight * matern52_grad_factor(r, params.output_scale);
    for i in 0..z.len() {
        let l = params.lengthscales[i];
        grad[i] -= f * (z[i] - z2[i]) / (l * l);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_distance_gives_output_scale() {
        let p = KernelParams::new(2.5, vec![0.3, 4.0], 0.0).unwrap();
        assert_eq!(matern52(&[1.0, -2.0], &[1.0, -2.0], &p).unwrap(), 2.5);
        let p = KernelParams::unit(2, 0.0);
        assert_eq!(matern52(&[0.4, 0.1], &[0.4, 0.1], &p).unwrap(), 1.0);
    }

    #[test]
    fn unit_distance_matches_substitution() {
        let p = KernelParams::unit(1, 0.0);
        let s5 = 5f64.sqrt();
        let expected = (1.0 + s5 + 5.0 / 3.0) * (-s5).exp();
        assert_relative_eq!(matern52(&[0.0], &[1.0], &p).unwrap(), expected, max_relative = 1e-15);
    }

    #[test]
    fn symmetric_and_checked() {
        let p = KernelParams::new(1.3, vec![0.5, 2.0], 0.0).unwrap();
        let a = [0.1, 0.7];
        let b = [-0.4, 1.9];
        assert_eq!(matern52(&a, &b, &p).unwrap(), matern52(&b, &a, &p).unwrap());
        assert!(matern52(&a, &[0.0], &p).is_err());
        assert!(KernelParams::new(0.0, vec![1.0], 0.0).is_err());
        assert!(KernelParams::new(1.0, vec![-1.0], 0.0).is_err());
        assert!(KernelParams::new(1.0, vec![1.0], -1e-3).is_err());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let p = KernelParams::new(1.7, vec![0.4, 1.3, 0.9], 0.0).unwrap();
        let z = [0.2, -0.3, 0.5];
        let z2 = [0.1, 0.4, -0.2];
        let mut g = [0.0; 3];
        matern52_accumulate_grad(&z, &z2, &p, 1.0, &mut g);
        for i in 0..3 {
            let h = 1e-6;
            let mut zp = z;
            let mut zm = z;
            zp[i] += h;
            zm[i] -= h;
            let fd = (matern52_unchecked(&zp, &z2, &p) - matern52_unchecked(&zm, &z2, &p)) / (2.0 * h);
            assert_relative_eq!(g[i], fd, max_relative = 1e-6);
        }
    }
}
