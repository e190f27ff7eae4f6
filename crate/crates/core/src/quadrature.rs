//! Integration against the standard Gaussian measure in one and two
//! dimensions.

use crate::error::{Error, Result};
use crate::rng::{rng_stream, StreamId, StreamPurpose};
use crate::scalar::{pairwise_sum, Scalar};
use rand::Rng;
use rand_distr::StandardNormal;

/// Default number of Gauss-Hermite nodes used by every mean-field recursion.
pub const DEFAULT_ORDER: usize = 64;

/// Gauss-Hermite rule for `dγ(ξ) = (2π)^{-1/2} e^{-ξ²/2} dξ`; weights sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussHermite<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> GaussHermite<T> {
    /// Builds the `order`-point rule (`order >= 1`).
    pub fn new(order: usize) -> Self {
        let (x, w) = hermite_nodes(order.max(1));
        let norm = std::f64::consts::PI.sqrt();
        let sqrt2 = std::f64::consts::SQRT_2;
        GaussHermite {
            nodes: x.iter().map(|&v| T::of(v * sqrt2)).collect(),
            weights: w.iter().map(|&v| T::of(v / norm)).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }
}

impl<T: Scalar> Default for GaussHermite<T> {
    fn default() -> Self {
        Self::new(DEFAULT_ORDER)
    }
}

/// Physicists' Gauss-Hermite nodes and weights (weight `e^{-x²}`). Nodes
/// start from the eigenvalues of the Jacobi matrix and are polished by
/// Newton iteration on the orthonormal Hermite recurrence.
fn hermite_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i.abs_diff(j) == 1 {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut guesses: Vec<f64> = jacobi.symmetric_eigenvalues().iter().cloned().collect();
    guesses.sort_by(|a, b| b.total_cmp(a));
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = guesses[i];
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        if n % 2 == 1 && i == n / 2 {
            z = 0.0;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 1.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `∫_a^b f(x) dx` by 16-point Gauss-Legendre on `panels` equal panels.
pub fn integrate_interval<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    thread_local! {
        static NODES: (Vec<f64>, Vec<f64>) = legendre_nodes(16);
    }
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    NODES.with(|(x, w)| {
        let mut total = 0.0;
        for k in 0..panels {
            let mid = a + (k as f64 + 0.5) * width;
            let part: f64 = x.iter().zip(w).map(|(&xi, &wi)| wi * f(mid + 0.5 * width * xi)).sum();
            total += 0.5 * width * part;
        }
        total
    })
}

/// Composite Gauss-Legendre rule for `γ` truncated to `[-L, L]`.
///
/// Scale-aware callers ([`gaussian_expectation`], [`gaussian_pair_expectation`])
/// refine the panels so that each one spans at most `span` units of the
/// integrand's argument, which keeps steep integrands resolved when the
/// Gaussian is wide. Plain [`integrate1`]/[`integrate2`] use the minimum
/// panel count.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeLegendre<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
    half_width: T,
    span: T,
    min_panels: usize,
    max_panels: usize,
}

impl<T: Scalar> CompositeLegendre<T> {
    pub const DEFAULT_POINTS: usize = 8;
    pub const DEFAULT_HALF_WIDTH: f64 = 9.0;
    pub const MIN_PANELS: usize = 24;
    pub const MAX_PANELS: usize = 2048;

    /// `points` Legendre nodes per panel; each panel covers at most `span`
    /// units of the integrand's argument.
    pub fn new(points: usize, span: T) -> Self {
        let (x, w) = legendre_nodes(points.max(1));
        CompositeLegendre {
            nodes: x.into_iter().map(T::of).collect(),
            weights: w.into_iter().map(T::of).collect(),
            half_width: T::of(Self::DEFAULT_HALF_WIDTH),
            span,
            min_panels: Self::MIN_PANELS,
            max_panels: Self::MAX_PANELS,
        }
    }

    pub fn span(&self) -> T {
        self.span
    }

    /// Panels needed when `ξ` enters the integrand multiplied by `scale`.
    pub fn panels_for(&self, scale: T) -> usize {
        let needed = (T::two() * self.half_width * scale.abs() / self.span).ceil();
        let needed = needed.to_usize().unwrap_or(self.max_panels);
        needed.clamp(self.min_panels, self.max_panels)
    }

    /// Nodes in `ξ` and weights including the Gaussian density.
    pub fn grid(&self, panels: usize) -> (Vec<T>, Vec<T>) {
        let width = T::two() * self.half_width / T::of(panels as f64);
        let half = width * T::half();
        let density = T::one() / (T::two() * T::PI()).sqrt();
        let mut xs = Vec::with_capacity(panels * self.nodes.len());
        let mut ws = Vec::with_capacity(panels * self.nodes.len());
        for p in 0..panels {
            let centre = -self.half_width + half + width * T::of(p as f64);
            for (&x, &w) in self.nodes.iter().zip(&self.weights) {
                let z = centre + half * x;
                xs.push(z);
                ws.push(half * w * density * (-z * z * T::half()).exp());
            }
        }
        (xs, ws)
    }
}

/// Plain Monte Carlo against γ with a fixed deterministic stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MonteCarlo {
    pub samples: usize,
    pub seed: u64,
    pub stream: u64,
}

impl MonteCarlo {
    fn draws(&self, dim: usize) -> Vec<f64> {
        let mut rng = rng_stream(self.seed, StreamId::new(StreamPurpose::Quadrature, self.stream));
        (0..self.samples * dim).map(|_| rng.sample(StandardNormal)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QuadratureRule<T> {
    GaussHermite(GaussHermite<T>),
    CompositeLegendre(CompositeLegendre<T>),
    MonteCarlo(MonteCarlo),
}

impl<T: Scalar> Default for QuadratureRule<T> {
    fn default() -> Self {
        QuadratureRule::GaussHermite(GaussHermite::default())
    }
}

impl<T: Scalar> QuadratureRule<T> {
    pub fn gauss_hermite(order: usize) -> Self {
        QuadratureRule::GaussHermite(GaussHermite::new(order))
    }

    /// Composite rule resolving integrands that vary on the scale
    /// `1 / steepness` in their argument (e.g. a logistic of that gain).
    pub fn resolved(steepness: T) -> Self {
        let span = T::two() / steepness.max(T::of(1e-6));
        QuadratureRule::CompositeLegendre(CompositeLegendre::new(CompositeLegendre::<T>::DEFAULT_POINTS, span))
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        QuadratureRule::MonteCarlo(MonteCarlo {
            samples,
            seed,
            stream: 0,
        })
    }
}

/// Integral value; Monte Carlo rules also report the standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate<T> {
    pub value: T,
    pub std_error: Option<T>,
}

fn checked<T: Scalar>(v: T, location: (T, T)) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteIntegrand {
            location: (location.0.as_f64(), location.1.as_f64()),
        })
    }
}

fn mc_estimate<T: Scalar>(values: &[T]) -> Estimate<T> {
    let n = T::of(values.len() as f64);
    let mean = pairwise_sum(values) / n;
    let sq: Vec<T> = values.iter().map(|&v| (v - mean) * (v - mean)).collect();
    let var = if values.len() > 1 {
        pairwise_sum(&sq) / (n - T::one())
    } else {
        T::zero()
    };
    Estimate {
        value: mean,
        std_error: Some((var / n).sqrt()),
    }
}

/// `∫ φ dγ`.
pub fn integrate1<T: Scalar, F: Fn(T) -> T>(rule: &QuadratureRule<T>, phi: F) -> Result<Estimate<T>> {
    match rule {
        QuadratureRule::GaussHermite(gh) => weighted_sum(&gh.nodes, &gh.weights, phi),
        QuadratureRule::CompositeLegendre(cl) => {
            let (xs, ws) = cl.grid(cl.min_panels);
            weighted_sum(&xs, &ws, phi)
        }
        QuadratureRule::MonteCarlo(mc) => {
            let values = mc
                .draws(1)
                .into_iter()
                .map(|z| {
                    let x = T::of(z);
                    checked(phi(x), (x, T::zero()))
                })
                .collect::<Result<Vec<T>>>()?;
            Ok(mc_estimate(&values))
        }
    }
}

fn weighted_sum<T: Scalar, F: Fn(T) -> T>(nodes: &[T], weights: &[T], phi: F) -> Result<Estimate<T>> {
    let mut terms = Vec::with_capacity(nodes.len());
    for (&x, &w) in nodes.iter().zip(weights) {
        terms.push(w * checked(phi(x), (x, T::zero()))?);
    }
    Ok(Estimate {
        value: pairwise_sum(&terms),
        std_error: None,
    })
}

fn tensor_sum<T: Scalar, F: Fn(T, T) -> T>((x1s, w1s): (&[T], &[T]), (x2s, w2s): (&[T], &[T]), phi: F) -> Result<T> {
    let mut outer = Vec::with_capacity(x2s.len());
    for (&x2, &w2) in x2s.iter().zip(w2s) {
        let mut inner = T::zero();
        for (&x1, &w1) in x1s.iter().zip(w1s) {
            inner = inner + w1 * checked(phi(x1, x2), (x1, x2))?;
        }
        outer.push(w2 * inner);
    }
    Ok(pairwise_sum(&outer))
}

/// `E g(X)` for `X ~ N(mean, var)`; composite rules refine to the scale `√var`.
pub fn gaussian_expectation<T: Scalar, G: Fn(T) -> T>(rule: &QuadratureRule<T>, mean: T, var: T, g: G) -> Result<T> {
    if var < T::zero() || !var.is_finite() {
        return Err(Error::domain(
            "gaussian expectation",
            format!("variance must be finite and >= 0 (got {var})"),
        ));
    }
    if var == T::zero() {
        return checked(g(mean), (T::zero(), T::zero()));
    }
    let s = var.sqrt();
    match rule {
        QuadratureRule::CompositeLegendre(cl) => {
            let (xs, ws) = cl.grid(cl.panels_for(s));
            Ok(weighted_sum(&xs, &ws, |z| g(s * z + mean))?.value)
        }
        _ => Ok(integrate1(rule, |z| g(s * z + mean))?.value),
    }
}

/// `∬ φ(ξ₁, ξ₂) dγ(ξ₁) dγ(ξ₂)` by tensor-product nodes or paired draws.
pub fn integrate2<T: Scalar, F: Fn(T, T) -> T>(rule: &QuadratureRule<T>, phi: F) -> Result<Estimate<T>> {
    match rule {
        QuadratureRule::GaussHermite(gh) => {
            let g = (gh.nodes.as_slice(), gh.weights.as_slice());
            Ok(Estimate {
                value: tensor_sum(g, g, phi)?,
                std_error: None,
            })
        }
        QuadratureRule::CompositeLegendre(cl) => {
            let (xs, ws) = cl.grid(cl.min_panels);
            Ok(Estimate {
                value: tensor_sum((&xs, &ws), (&xs, &ws), phi)?,
                std_error: None,
            })
        }
        QuadratureRule::MonteCarlo(mc) => {
            let z = mc.draws(2);
            let values = z
                .chunks_exact(2)
                .map(|p| {
                    let (a, b) = (T::of(p[0]), T::of(p[1]));
                    checked(phi(a, b), (a, b))
                })
                .collect::<Result<Vec<T>>>()?;
            Ok(mc_estimate(&values))
        }
    }
}

/// First and second moments of a jointly Gaussian pair `(X, Y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairMoments<T> {
    pub mean_x: T,
    pub mean_y: T,
    pub var_x: T,
    pub var_y: T,
    pub cov: T,
}

impl<T: Scalar> PairMoments<T> {
    /// Swaps the roles of `X` and `Y`.
    pub fn swapped(self) -> Self {
        PairMoments {
            mean_x: self.mean_y,
            mean_y: self.mean_x,
            var_x: self.var_y,
            var_y: self.var_x,
            cov: self.cov,
        }
    }
}

/// Variances at or below this are treated as a point mass.
const DEGENERATE_VAR: f64 = 1e-300;
const CLAMP_EPS: f64 = 1e-12;
const ROUNDOFF_REL: f64 = 1e-9;

/// Coefficients `(a, b)` of `X = a ξ₁ + b ξ₂ + E X` given `Y = √VarY ξ₂ + E Y`.
/// Covariances within round-off of the Cauchy-Schwarz bound are clamped to
/// `±(√(VarX VarY) - 1e-12)`; anything beyond is a domain error.
pub fn conditional_coefficients<T: Scalar>(m: &PairMoments<T>) -> Result<(T, T)> {
    let (vx, vy) = (m.var_x, m.var_y);
    if vx < T::zero() || vy < T::zero() || !vx.is_finite() || !vy.is_finite() || !m.cov.is_finite() {
        return Err(Error::domain(
            "gaussian pair expectation",
            format!("variances must be finite and >= 0 (got {vx}, {vy}, cov {})", m.cov),
        ));
    }
    let bound = (vx * vy).sqrt();
    let mut cov = m.cov;
    if cov.abs() > bound {
        let excess = cov.abs() - bound;
        if excess > T::of(ROUNDOFF_REL) * bound.max(T::one()) {
            return Err(Error::domain(
                "gaussian pair expectation",
                format!("negative discriminant: cov² = {} > VarX·VarY = {}", cov * cov, vx * vy),
            ));
        }
        let clamped = (bound - T::of(CLAMP_EPS)).max(T::zero());
        cov = if cov > T::zero() { clamped } else { -clamped };
    }
    let disc = (vx * vy - cov * cov).max(T::zero());
    Ok(((disc / vy).sqrt(), cov / vy.sqrt()))
}

/// `E[g1(X) g2(Y)]` for jointly Gaussian `(X, Y)` with the given moments.
pub fn gaussian_pair_expectation<T, G1, G2>(
    rule: &QuadratureRule<T>,
    moments: &PairMoments<T>,
    g1: G1,
    g2: G2,
) -> Result<T>
where
    T: Scalar,
    G1: Fn(T) -> T,
    G2: Fn(T) -> T,
{
    let m = *moments;
    if m.var_y <= T::of(DEGENERATE_VAR) {
        if m.var_y < T::zero() {
            conditional_coefficients(&m)?;
        }
        // Y is the constant E[Y]; X keeps its own marginal.
        let gy = g2(m.mean_y);
        return Ok(gaussian_expectation(rule, m.mean_x, m.var_x.max(T::zero()), g1)? * gy);
    }
    let (a, b) = conditional_coefficients(&m)?;
    let sy = m.var_y.sqrt();
    let pair = |z1: T, z2: T| g1(a * z1 + b * z2 + m.mean_x) * g2(sy * z2 + m.mean_y);
    match rule {
        QuadratureRule::GaussHermite(gh) => pair_sum(
            gh.nodes(),
            gh.weights(),
            gh.nodes(),
            gh.weights(),
            a,
            b,
            sy,
            &m,
            &g1,
            &g2,
        ),
        QuadratureRule::CompositeLegendre(cl) => {
            let (x1, w1) = cl.grid(cl.panels_for(a));
            let (x2, w2) = cl.grid(cl.panels_for(b.abs().max(sy)));
            pair_sum(&x1, &w1, &x2, &w2, a, b, sy, &m, &g1, &g2)
        }
        QuadratureRule::MonteCarlo(_) => Ok(integrate2(rule, pair)?.value),
    }
}

#[allow(clippy::too_many_arguments)]
fn pair_sum<T: Scalar>(
    x1s: &[T],
    w1s: &[T],
    x2s: &[T],
    w2s: &[T],
    a: T,
    b: T,
    sy: T,
    m: &PairMoments<T>,
    g1: &impl Fn(T) -> T,
    g2: &impl Fn(T) -> T,
) -> Result<T> {
    let mut outer = Vec::with_capacity(x2s.len());
    for (&z2, &w2) in x2s.iter().zip(w2s) {
        let gy = checked(g2(sy * z2 + m.mean_y), (T::zero(), z2))?;
        let shift = b * z2 + m.mean_x;
        let mut inner = T::zero();
        for (&z1, &w1) in x1s.iter().zip(w1s) {
            inner = inner + w1 * checked(g1(a * z1 + shift), (z1, z2))?;
        }
        outer.push(w2 * gy * inner);
    }
    Ok(pairwise_sum(&outer))
}
