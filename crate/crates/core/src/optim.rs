//! Box-constrained local optimizers, a derivative-free evolutionary search,
//! and quasi-random point generation.

use rand::Rng;
use rand_distr::StandardNormal;

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> crate::Result<Self> {
        if lower.len() != upper.len() {
            return crate::error::invalid("box bounds have mismatched lengths");
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return crate::error::invalid("box lower bound exceeds upper bound");
        }
        Ok(BoxBounds { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| *v >= *l && *v <= *u)
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .map(|((t, l), h)| l + t * (h - l))
            .collect()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| if u > l { rng.gen_range(*l..*u) } else { *l })
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }
}

/// Scrambled Sobol points in `[0,1)^dim`; `seed` selects the scramble.
pub fn sobol_points(count: usize, dim: usize, seed: u32) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            (0..dim)
                .map(|d| sobol_burley::sample(i as u32, d as u32, seed) as f64)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LocalOptions {
    pub max_iters: usize,
    /// Stop once the projected gradient's ∞-norm falls below this.
    pub grad_tol: f64,
    /// Stop once an accepted step improves the value by less than this (relative).
    pub value_tol: f64,
    pub memory: usize,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions {
            max_iters: 200,
            grad_tol: 1e-8,
            value_tol: 1e-12,
            memory: 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

fn projected_grad_norm(x: &[f64], g: &[f64], bounds: &BoxBounds) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..x.len() {
        let gi = g[i];
        let blocked = (x[i] >= bounds.upper[i] && gi > 0.0) || (x[i] <= bounds.lower[i] && gi < 0.0);
        if !blocked {
            m = m.max(gi.abs());
        }
    }
    m
}

/// Maximizes `f` over a box by projected L-BFGS ascent with a backtracking
/// Armijo line search. `f` writes the gradient into its second argument and
/// returns the value. The returned value never falls below the start value.
pub fn maximize_box<F>(mut f: F, x0: &[f64], bounds: &BoxBounds, opts: &LocalOptions) -> LocalResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.clamp(&mut x);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evals = 1;
    if !fx.is_finite() {
        return LocalResult { x, value: fx, iterations: 0, evaluations: evals };
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iters = 0;
    let mut gnew = vec![0.0; n];
    let mut xnew = vec![0.0; n];
    let widths = bounds.widths();
    let scale = widths.iter().cloned().fold(0.0f64, f64::max).max(1e-12);

    while iters < opts.max_iters {
        if projected_grad_norm(&x, &g, bounds) <= opts.grad_tol {
            break;
        }
        iters += 1;
        // Two-loop recursion on the ascent problem (i.e. minimizing −f).
        let mut d: Vec<f64> = g.clone();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alphas[i] = rho * dot(&s_hist[i], &d);
            axpy(-alphas[i], &y_hist[i], &mut d);
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &d);
            axpy(alphas[i] - beta, &s_hist[i], &mut d);
        }
        // Freeze coordinates pinned at a bound.
        for i in 0..n {
            if (x[i] >= bounds.upper[i] && d[i] > 0.0) || (x[i] <= bounds.lower[i] && d[i] < 0.0) {
                d[i] = 0.0;
            }
        }
        let mut first_step = 1.0;
        if dot(&d, &g) <= 0.0 || k == 0 {
            d.copy_from_slice(&g);
            for i in 0..n {
                if (x[i] >= bounds.upper[i] && d[i] > 0.0) || (x[i] <= bounds.lower[i] && d[i] < 0.0) {
                    d[i] = 0.0;
                }
            }
            s_hist.clear();
            y_hist.clear();
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if dmax == 0.0 {
                break;
            }
            first_step = 0.1 * scale / dmax;
        }

        let mut step = first_step;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                xnew[i] = x[i] + step * d[i];
            }
            bounds.clamp(&mut xnew);
            let fnew = f(&xnew, &mut gnew);
            evals += 1;
            let mut dir = 0.0;
            for i in 0..n {
                dir += g[i] * (xnew[i] - x[i]);
            }
            if fnew.is_finite() && fnew >= fx + 1e-4 * dir && fnew >= fx {
                let s: Vec<f64> = xnew.iter().zip(&x).map(|(a, b)| a - b).collect();
                // y for the minimization of −f
                let y: Vec<f64> = g.iter().zip(&gnew).map(|(a, b)| a - b).collect();
                let improvement = fnew - fx;
                x.copy_from_slice(&xnew);
                g.copy_from_slice(&gnew);
                let prev = fx;
                fx = fnew;
                if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
                    s_hist.push(s);
                    y_hist.push(y);
                    if s_hist.len() > opts.memory {
                        s_hist.remove(0);
                        y_hist.remove(0);
                    }
                }
                accepted = true;
                if improvement <= opts.value_tol * prev.abs().max(1.0) {
                    return LocalResult { x, value: fx, iterations: iters, evaluations: evals };
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if s_hist.is_empty() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
        }
    }
    LocalResult { x, value: fx, iterations: iters, evaluations: evals }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionOptions {
    pub population: usize,
    pub generations: usize,
    /// Initial mutation scale as a fraction of each box width.
    pub initial_sigma: f64,
    pub final_sigma: f64,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        EvolutionOptions {
            population: 32,
            generations: 60,
            initial_sigma: 0.2,
            final_sigma: 0.01,
        }
    }
}

/// Derivative-free maximization by an elitist (μ+λ) evolution strategy with
/// Gaussian mutation annealed geometrically from `initial_sigma` to
/// `final_sigma` (fractions of the box width). `seeds` are injected into the
/// initial population.
pub fn evolve_maximize<F, R>(
    mut f: F,
    bounds: &BoxBounds,
    seeds: &[Vec<f64>],
    opts: &EvolutionOptions,
    rng: &mut R,
) -> LocalResult
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let pop = opts.population.max(2);
    let elite = (pop / 4).max(1);
    let widths = bounds.widths();
    let mut members: Vec<(Vec<f64>, f64)> = Vec::with_capacity(pop);
    let mut evals = 0;
    for s in seeds.iter().take(pop) {
        let mut x = s.clone();
        bounds.clamp(&mut x);
        let v = f(&x);
        evals += 1;
        members.push((x, v));
    }
    while members.len() < pop {
        let x = bounds.sample_uniform(rng);
        let v = f(&x);
        evals += 1;
        members.push((x, v));
    }
    let score = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let gens = opts.generations.max(1);
    for gen in 0..gens {
        members.sort_by(|a, b| score(b.1).total_cmp(&score(a.1)));
        members.truncate(elite);
        let frac = gen as f64 / (gens.saturating_sub(1).max(1)) as f64;
        let sigma = opts.initial_sigma * (opts.final_sigma / opts.initial_sigma).powf(frac);
        let mut children = Vec::with_capacity(pop - elite);
        for c in 0..(pop - elite) {
            let parent = &members[c % elite].0;
            let mut x: Vec<f64> = parent
                .iter()
                .zip(&widths)
                .map(|(p, w)| {
                    let z: f64 = rng.sample(StandardNormal);
                    p + sigma * w * z
                })
                .collect();
            bounds.clamp(&mut x);
            let v = f(&x);
            evals += 1;
            children.push((x, v));
        }
        members.extend(children);
    }
    members.sort_by(|a, b| score(b.1).total_cmp(&score(a.1)));
    let (x, value) = members.swap_remove(0);
    LocalResult { x, value, iterations: gens, evaluations: evals }
}
