//! One-population dynamic mean-field equations.
//!
//! Under the mean-field law the potential `η(t)` of a generic neuron is
//! Gaussian. For `t >= 1` its mean is `m(t) - θ` and its variance
//! `q(t) + σ²`, where `m`, `q` and `c(s, t)` are the moments of the Gaussian
//! synaptic field. At `t = 0` the field is zero and `η(0)` follows the
//! initial law, independent of every later field value.

use crate::error::{Error, Result};
use crate::quadrature::{gaussian_expectation, gaussian_pair_expectation, PairMoments, QuadratureRule};
use crate::scalar::Scalar;
use crate::transfer::TransferFunction;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Statistical parameters of a homogeneous network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldParams<T> {
    /// Mean scale `J̄` of the weights.
    pub mean_coupling: T,
    /// Variance scale `J²` of the weights.
    pub coupling_var: T,
    pub threshold: T,
    /// Synaptic noise standard deviation `σ`; zero is allowed.
    pub noise: T,
    pub transfer: TransferFunction<T>,
    pub horizon: usize,
}

impl<T: Scalar> MeanFieldParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.coupling_var < T::zero() || self.noise < T::zero() {
            return Err(Error::config("J² and σ must be >= 0"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be >= 1"));
        }
        Ok(())
    }
}

/// Gaussian law of a potential: `N(mean, var)`; `var = 0` is a point mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialLaw<T> {
    pub mean: T,
    pub var: T,
}

impl<T: Scalar> PotentialLaw<T> {
    pub fn new(mean: T, var: T) -> Self {
        PotentialLaw { mean, var }
    }

    pub fn point(value: T) -> Self {
        PotentialLaw {
            mean: value,
            var: T::zero(),
        }
    }
}

/// `(E f(X), E f(X)²)` for `X ~ N(mean, var)`.
pub(crate) fn activation_moments<T: Scalar>(
    rule: &QuadratureRule<T>,
    f: &TransferFunction<T>,
    law: PotentialLaw<T>,
) -> Result<(T, T)> {
    let var = law.var.max(T::zero());
    let e1 = gaussian_expectation(rule, law.mean, var, |x| f.eval(x))?;
    let e2 = gaussian_expectation(rule, law.mean, var, |x| {
        let v = f.eval(x);
        v * v
    })?;
    Ok((e1, e2))
}

/// `E f(X) f(Y)` for a Gaussian pair.
pub(crate) fn activation_product<T: Scalar>(
    rule: &QuadratureRule<T>,
    f: &TransferFunction<T>,
    x: PotentialLaw<T>,
    y: PotentialLaw<T>,
    cov: T,
) -> Result<T> {
    let m = PairMoments {
        mean_x: x.mean,
        mean_y: y.mean,
        var_x: x.var,
        var_y: y.var,
        cov,
    };
    gaussian_pair_expectation(rule, &m, |a| f.eval(a), |b| f.eval(b))
}

/// Dense symmetric `(T+1) x (T+1)` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> SymMatrix<T> {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![T::zero(); dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, s: usize, t: usize) -> T {
        self.data[s * self.dim + t]
    }

    pub fn set(&mut self, s: usize, t: usize, v: T) {
        self.data[s * self.dim + t] = v;
        self.data[t * self.dim + s] = v;
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Smallest eigenvalue (computed in `f64`).
    pub fn min_eigenvalue(&self) -> f64 {
        let m = nalgebra::DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j).as_f64());
        m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Mean-field order parameters over `t = 0..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSeries<T> {
    /// Field mean `m(t)`; `m(0) = 0`.
    pub m: Vec<T>,
    /// Field variance `q(t) = c(t, t)`; `q(0) = 0`.
    pub q: Vec<T>,
    /// Field covariance `c(s, t)`.
    pub c: SymMatrix<T>,
    /// Mean of the potential `η(t)`.
    pub potential_mean: Vec<T>,
    /// Variance of the potential `η(t)`.
    pub potential_var: Vec<T>,
}

impl<T: Scalar> MomentSeries<T> {
    pub fn horizon(&self) -> usize {
        self.m.len() - 1
    }

    pub fn potential_law(&self, t: usize) -> PotentialLaw<T> {
        PotentialLaw::new(self.potential_mean[t], self.potential_var[t])
    }

    /// Covariance of `η(s)` and `η(t)`.
    pub fn potential_cov(&self, s: usize, t: usize) -> T {
        if s == t {
            self.potential_var[t]
        } else if s == 0 || t == 0 {
            T::zero()
        } else {
            self.c.get(s, t)
        }
    }
}

/// Forward recursion of `m(t)`, `q(t)` and `c(s, t)`.
pub fn propagate_moments<T: Scalar>(
    params: &MeanFieldParams<T>,
    initial: PotentialLaw<T>,
    rule: &QuadratureRule<T>,
) -> Result<MomentSeries<T>> {
    params.validate()?;
    let horizon = params.horizon;
    let f = &params.transfer;
    let sigma2 = params.noise * params.noise;
    let mut series = MomentSeries {
        m: vec![T::zero(); horizon + 1],
        q: vec![T::zero(); horizon + 1],
        c: SymMatrix::zeros(horizon + 1),
        potential_mean: vec![T::zero(); horizon + 1],
        potential_var: vec![T::zero(); horizon + 1],
    };
    series.potential_mean[0] = initial.mean;
    series.potential_var[0] = initial.var.max(T::zero());

    for t in 0..horizon {
        let law_t = series.potential_law(t);
        let (ef, ef2) = activation_moments(rule, f, law_t)?;
        series.m[t + 1] = params.mean_coupling * ef;
        let q_next = params.coupling_var * ef2;

        let row: Vec<T> = (0..t)
            .into_par_iter()
            .map(|s| {
                let cov = series.potential_cov(s, t);
                activation_product(rule, f, series.potential_law(s), law_t, cov)
                    .map(|e| params.coupling_var * e)
                    .map_err(|e| recursion_error(s, t, e))
            })
            .collect::<Result<_>>()?;
        for (s, v) in row.into_iter().enumerate() {
            series.c.set(s + 1, t + 1, v);
        }
        series.c.set(t + 1, t + 1, q_next);
        series.q[t + 1] = q_next;
        series.potential_mean[t + 1] = series.m[t + 1] - params.threshold;
        series.potential_var[t + 1] = q_next + sigma2;
    }
    Ok(series)
}

fn recursion_error(s: usize, t: usize, e: Error) -> Error {
    match e {
        Error::Domain { what, detail } => Error::Domain {
            what,
            detail: format!("covariance recursion at (s, t) = ({s}, {t}): {detail}"),
        },
        other => other,
    }
}

/// Field moments only, `O(T)` per step.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalSeries<T> {
    pub m: Vec<T>,
    pub q: Vec<T>,
    pub potential_mean: Vec<T>,
    pub potential_var: Vec<T>,
}

impl<T: Scalar> MarginalSeries<T> {
    pub fn potential_law(&self, t: usize) -> PotentialLaw<T> {
        PotentialLaw::new(self.potential_mean[t], self.potential_var[t])
    }
}

pub fn propagate_marginals<T: Scalar>(
    params: &MeanFieldParams<T>,
    initial: PotentialLaw<T>,
    rule: &QuadratureRule<T>,
) -> Result<MarginalSeries<T>> {
    params.validate()?;
    let n = params.horizon + 1;
    let sigma2 = params.noise * params.noise;
    let mut out = MarginalSeries {
        m: vec![T::zero(); n],
        q: vec![T::zero(); n],
        potential_mean: vec![initial.mean; n],
        potential_var: vec![initial.var.max(T::zero()); n],
    };
    for t in 0..params.horizon {
        let (ef, ef2) = activation_moments(rule, &params.transfer, out.potential_law(t))?;
        out.m[t + 1] = params.mean_coupling * ef;
        out.q[t + 1] = params.coupling_var * ef2;
        out.potential_mean[t + 1] = out.m[t + 1] - params.threshold;
        out.potential_var[t + 1] = out.q[t + 1] + sigma2;
    }
    Ok(out)
}

/// How the synaptic noise of two twin trajectories is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseCoupling {
    /// Independent noise sequences.
    #[default]
    Independent,
    /// Both trajectories receive the same noise.
    Shared,
}

/// Initial laws of two twin trajectories of the same network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwinInitial<T> {
    pub first: PotentialLaw<T>,
    pub second: PotentialLaw<T>,
    /// Covariance of the two initial potentials.
    pub cross_cov: T,
}

impl<T: Scalar> TwinInitial<T> {
    /// Second trajectory starts at the first plus independent `N(0, δ²)`.
    pub fn perturbed(law: PotentialLaw<T>, delta: T) -> Self {
        TwinInitial {
            first: law,
            second: PotentialLaw::new(law.mean, law.var + delta * delta),
            cross_cov: law.var,
        }
    }
}

/// Twin-trajectory mean-field prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossSeries<T> {
    pub first: MarginalSeries<T>,
    pub second: MarginalSeries<T>,
    /// Cross covariance of the two synaptic fields, `c₁₂(0) = 0`.
    pub c12: Vec<T>,
    /// `q₁ + q₂ - 2c₁₂ + (m₁ - m₂)²` for `t >= 1`; entry 0 holds the mean
    /// squared distance of the initial potentials.
    pub d12: Vec<T>,
    pub coupling: NoiseCoupling,
    pub noise: T,
}

impl<T: Scalar> CrossSeries<T> {
    /// Mean squared distance between the potentials themselves, which adds
    /// `2σ²` to `d12` when the noises are independent.
    pub fn potential_distance(&self, t: usize) -> T {
        match (t, self.coupling) {
            (0, _) | (_, NoiseCoupling::Shared) => self.d12[t],
            (_, NoiseCoupling::Independent) => self.d12[t] + T::two() * self.noise * self.noise,
        }
    }
}

/// Forward recursion of the instantaneous cross covariance of two
/// trajectories driven by the same weights.
pub fn cross_covariance_series<T: Scalar>(
    params: &MeanFieldParams<T>,
    initial: &TwinInitial<T>,
    coupling: NoiseCoupling,
    rule: &QuadratureRule<T>,
) -> Result<CrossSeries<T>> {
    params.validate()?;
    let first = propagate_marginals(params, initial.first, rule)?;
    let second = propagate_marginals(params, initial.second, rule)?;
    let sigma2 = params.noise * params.noise;
    let n = params.horizon + 1;
    let mut c12 = vec![T::zero(); n];
    let mut d12 = vec![T::zero(); n];
    let (a, b) = (initial.first, initial.second);
    d12[0] = a.var + b.var - T::two() * initial.cross_cov + (a.mean - b.mean) * (a.mean - b.mean);

    for t in 0..params.horizon {
        let cov = if t == 0 {
            initial.cross_cov
        } else {
            match coupling {
                NoiseCoupling::Independent => c12[t],
                NoiseCoupling::Shared => c12[t] + sigma2,
            }
        };
        let e = activation_product(
            rule,
            &params.transfer,
            first.potential_law(t),
            second.potential_law(t),
            cov,
        )
        .map_err(|e| recursion_error(t, t, e))?;
        c12[t + 1] = params.coupling_var * e;
        let dm = first.m[t + 1] - second.m[t + 1];
        d12[t + 1] = first.q[t + 1] + second.q[t + 1] - T::two() * c12[t + 1] + dm * dm;
    }
    Ok(CrossSeries {
        first,
        second,
        c12,
        d12,
        coupling,
        noise: params.noise,
    })
}

/// Low-noise balanced network (`J̄ = 0`, `σ → 0`) in units where `q` is
/// scaled by `J²`.
#[derive(Clone, Debug, PartialEq)]
pub struct BalancedMap<T> {
    pub coupling_var: T,
    pub threshold: T,
    pub transfer: TransferFunction<T>,
    pub rule: QuadratureRule<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FixedPoint<T> {
    pub q: T,
    pub residual: T,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StabilityMultiplier<T> {
    /// Slope of `H` at `c = q*` by a second-order one-sided difference.
    pub finite_difference: T,
    /// `J² ∫ f'(J√q* ξ − θ)² dγ(ξ)`.
    pub analytic: T,
}

impl<T: Scalar> StabilityMultiplier<T> {
    pub fn is_chaotic(&self) -> bool {
        self.finite_difference > T::one()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StationaryCovariance<T> {
    pub c: T,
    pub converged: bool,
}

const PICARD_DAMPING: f64 = 0.5;
const MAX_PICARD: usize = 10_000;

impl<T: Scalar> BalancedMap<T> {
    /// Uses a composite rule refined to the transfer function's steepness,
    /// since `J√q` reaches values that a fixed Gauss-Hermite rule cannot
    /// resolve.
    pub fn new(coupling_var: T, threshold: T, transfer: TransferFunction<T>) -> Self {
        BalancedMap {
            coupling_var,
            threshold,
            transfer,
            rule: QuadratureRule::resolved(transfer.steepness()),
        }
    }

    pub fn with_rule(mut self, rule: QuadratureRule<T>) -> Self {
        self.rule = rule;
        self
    }

    fn tolerance() -> T {
        T::of(1e-10).max(T::of(64.0) * T::epsilon())
    }

    /// `h(q) = ∫ f(J√q ξ − θ)² dγ(ξ)`.
    pub fn q_map(&self, q: T) -> Result<T> {
        if q < T::zero() {
            return Err(Error::domain("q map", format!("q must be >= 0 (got {q})")));
        }
        gaussian_expectation(&self.rule, -self.threshold, self.coupling_var * q, |x| {
            let v = self.transfer.eval(x);
            v * v
        })
    }

    /// Fixed point of `h` by damped Picard iteration, with a bisection
    /// fallback on `[0, max(1, J²/2)]`.
    pub fn fixed_point_q(&self) -> Result<FixedPoint<T>> {
        if self.coupling_var <= T::zero() {
            return Err(Error::config("fixed point requires J² > 0"));
        }
        let tol = Self::tolerance();
        let damping = T::of(PICARD_DAMPING);
        let mut q = self.q_map(T::zero())?;
        for it in 1..=MAX_PICARD {
            let hq = self.q_map(q)?;
            let residual = (hq - q).abs();
            if residual < tol {
                return Ok(FixedPoint {
                    q,
                    residual,
                    iterations: it,
                    converged: true,
                });
            }
            q = q + damping * (hq - q);
        }
        self.bisect_fixed_point(q)
    }

    fn bisect_fixed_point(&self, last: T) -> Result<FixedPoint<T>> {
        let tol = Self::tolerance();
        let mut lo = T::zero();
        let mut hi = T::one().max(self.coupling_var * T::half());
        if self.q_map(lo)? - lo < T::zero() || self.q_map(hi)? - hi > T::zero() {
            return Err(Error::NoConvergence {
                what: "fixed point of h",
                iterations: MAX_PICARD,
                last: last.as_f64(),
            });
        }
        for it in 0..200 {
            let mid = (lo + hi) * T::half();
            let r = self.q_map(mid)? - mid;
            if r.abs() < tol || hi - lo < T::epsilon() * hi {
                return Ok(FixedPoint {
                    q: mid,
                    residual: r.abs(),
                    iterations: MAX_PICARD + it,
                    converged: r.abs() < tol,
                });
            }
            if r > T::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Err(Error::NoConvergence {
            what: "bisection for fixed point of h",
            iterations: MAX_PICARD + 200,
            last: ((lo + hi) * T::half()).as_f64(),
        })
    }

    /// One application of the stationary covariance map `H_q(c)`.
    pub fn covariance_map(&self, q: T, c: T) -> Result<T> {
        if c.abs() > q * (T::one() + T::of(1e-12)) {
            return Err(Error::domain(
                "covariance map",
                format!("|c| = {} exceeds q* = {q}", c.abs()),
            ));
        }
        let j2 = self.coupling_var;
        let law = PotentialLaw::new(-self.threshold, j2 * q);
        activation_product(&self.rule, &self.transfer, law, law, j2 * c.max(-q).min(q))
    }

    /// Slope of `H` at its fixed point `c = q*`.
    pub fn stability_multiplier(&self, q_star: T) -> Result<StabilityMultiplier<T>> {
        let step = T::of(1e-5) * q_star;
        if !(step > T::of(1e3) * T::epsilon() * q_star.max(T::min_positive_value())) || step <= T::zero() {
            return Err(Error::domain(
                "stability multiplier",
                format!("finite-difference step underflows at q* = {q_star}"),
            ));
        }
        let h0 = self.covariance_map(q_star, q_star)?;
        let h1 = self.covariance_map(q_star, q_star - step)?;
        let h2 = self.covariance_map(q_star, q_star - step - step)?;
        let finite_difference = (T::of(3.0) * h0 - T::of(4.0) * h1 + h2) / (T::two() * step);
        let slope = gaussian_expectation(&self.rule, -self.threshold, self.coupling_var * q_star, |x| {
            let d = self.transfer.derivative(x);
            d * d
        })?;
        Ok(StabilityMultiplier {
            finite_difference,
            analytic: self.coupling_var * slope,
        })
    }

    /// Plain (optionally damped) iteration of `H` from `c0`.
    pub fn iterate_covariance_map(
        &self,
        q_star: T,
        c0: T,
        damping: T,
        tol: T,
        max_iter: usize,
    ) -> Result<(T, usize, bool)> {
        let mut c = c0;
        for it in 1..=max_iter {
            let next = self.covariance_map(q_star, c)?.min(q_star).max(-q_star);
            let step = damping * (next - c);
            c = c + step;
            if step.abs() < tol {
                return Ok((c, it, true));
            }
        }
        Ok((c, max_iter, false))
    }

    /// Stationary equal-lag covariance `c*`: the limit of iterating `H`
    /// from just below `q*`. `H` is increasing in `c`, so that limit is the
    /// largest fixed point below `q*` (or `q*` itself when it is stable).
    pub fn stationary_covariance(&self, q_star: T, multiplier: T) -> Result<StationaryCovariance<T>> {
        if multiplier <= T::one() {
            return Ok(StationaryCovariance {
                c: q_star,
                converged: true,
            });
        }
        let r = |c: T| -> Result<T> { Ok(self.covariance_map(q_star, c)? - c) };
        // descend from q* until H(c) - c turns nonnegative
        let mut hi = q_star * (T::one() - T::of(1e-6));
        let mut r_hi = r(hi)?;
        if r_hi >= T::zero() {
            return Ok(StationaryCovariance {
                c: q_star,
                converged: false,
            });
        }
        let mut gap = T::of(2e-6);
        let mut lo = hi;
        loop {
            let candidate = (q_star * (T::one() - gap)).max(T::zero());
            let r_c = r(candidate)?;
            if r_c >= T::zero() {
                lo = candidate;
                break;
            }
            hi = candidate;
            r_hi = r_c;
            if candidate <= T::zero() {
                break;
            }
            gap = gap * T::two();
        }
        debug_assert!(r_hi < T::zero());
        let tol = T::of(1e-12).max(T::of(16.0) * T::epsilon() * q_star);
        for _ in 0..200 {
            if hi - lo < tol {
                break;
            }
            let mid = (lo + hi) * T::half();
            if r(mid)? >= T::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(StationaryCovariance {
            c: (lo + hi) * T::half(),
            converged: hi - lo < tol,
        })
    }
}

/// One cell of the `(J², θ)` chaos surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChaosCell<T> {
    pub coupling_var: T,
    pub threshold: T,
    pub q_star: T,
    pub c_star: T,
    /// `q* − c*`: zero in the fixed-point regime, positive under chaos.
    pub qc_gap: T,
    pub multiplier: T,
    pub analytic_multiplier: T,
    pub converged: bool,
}

impl<T: Scalar> ChaosCell<T> {
    fn failed(coupling_var: T, threshold: T) -> Self {
        let nan = T::nan();
        ChaosCell {
            coupling_var,
            threshold,
            q_star: nan,
            c_star: nan,
            qc_gap: nan,
            multiplier: nan,
            analytic_multiplier: nan,
            converged: false,
        }
    }
}

pub fn chaos_cell<T: Scalar>(
    coupling_var: T,
    threshold: T,
    transfer: TransferFunction<T>,
    rule: &QuadratureRule<T>,
) -> Result<ChaosCell<T>> {
    let map = BalancedMap::new(coupling_var, threshold, transfer).with_rule(rule.clone());
    let fp = map.fixed_point_q()?;
    let mult = map.stability_multiplier(fp.q)?;
    let cs = map.stationary_covariance(fp.q, mult.finite_difference)?;
    Ok(ChaosCell {
        coupling_var,
        threshold,
        q_star: fp.q,
        c_star: cs.c,
        qc_gap: fp.q - cs.c,
        multiplier: mult.finite_difference,
        analytic_multiplier: mult.analytic,
        converged: fp.converged && cs.converged,
    })
}

/// Fixed point, stationary covariance and stability over a `(J², θ)` grid,
/// row-major in `J²`. Cells that fail are reported unconverged with NaNs.
pub fn chaos_surface<T: Scalar>(
    coupling_vars: &[T],
    thresholds: &[T],
    transfer: TransferFunction<T>,
    rule: &QuadratureRule<T>,
) -> Vec<ChaosCell<T>> {
    let cells: Vec<(T, T)> = coupling_vars
        .iter()
        .flat_map(|&j2| thresholds.iter().map(move |&th| (j2, th)))
        .collect();
    cells
        .into_par_iter()
        .map(|(j2, th)| chaos_cell(j2, th, transfer, rule).unwrap_or_else(|_| ChaosCell::failed(j2, th)))
        .collect()
}
