//! Continuous-time sparse inhibitory integrate-and-fire networks.
//!
//! Membrane potentials follow `τ du = (μ - u) dt + σ √τ dB` below the
//! threshold `θ` and are reset to `ϑ` (`0 < ϑ < θ`) when they reach it. The
//! recurrent input of a network firing at rate `ν` contributes
//! `μ_net = -C J ν τ` and `σ²_net = C J² ν τ`; external input is given
//! either by its moments or by a Poisson description.
//!
//! The firing rate is the probability flux through the threshold,
//! `ν = -(σ² / 2τ) ∂p/∂u (θ)`, which is non-negative because `p` vanishes at
//! `θ` and is positive below it.

use crate::error::{Error, Result};
use crate::io::{float, Table};
use crate::quadrature::integrate_interval;
use crate::rng::{rng_stream, StreamId, StreamPurpose};
use crate::weights::{sample_weights, WeightLaw, WeightMatrix};
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// External drive of every neuron.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExternalDrive {
    /// Diffusion moments `(μ_ext, σ_ext)` in potential units.
    Moments { mu: f64, sigma: f64 },
    /// `C_ext` Poisson inputs of weight `J_ext` firing at `ν_ext`, with
    /// `ν_ext` expressed per membrane time constant.
    Poisson { weight: f64, connections: f64, rate: f64 },
}

impl ExternalDrive {
    pub fn moments(&self) -> (f64, f64) {
        match *self {
            ExternalDrive::Moments { mu, sigma } => (mu, sigma),
            ExternalDrive::Poisson {
                weight,
                connections,
                rate,
            } => external_input_moments(weight, connections, rate),
        }
    }
}

/// Diffusion approximation `(J C ν, J √(C ν))` of superposed Poisson inputs.
pub fn external_input_moments(weight: f64, connections: f64, rate: f64) -> (f64, f64) {
    (weight * connections * rate, weight * (connections * rate).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IFContinuousParams {
    /// Membrane time constant `τ`.
    pub tau: f64,
    pub threshold: f64,
    pub reset: f64,
    /// Magnitude `J` of the inhibitory weights.
    pub weight: f64,
    /// Inputs per neuron `C`.
    pub connections: f64,
    /// Transmission delay `D`.
    pub delay: f64,
    pub external: ExternalDrive,
}

impl IFContinuousParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.reset && self.reset < self.threshold) {
            return Err(Error::config(format!(
                "need 0 < reset < threshold (got reset {}, threshold {})",
                self.reset, self.threshold
            )));
        }
        if !(self.tau > 0.0 && self.delay > 0.0) {
            return Err(Error::config("tau and delay must be positive"));
        }
        if !(self.weight >= 0.0 && self.connections >= 0.0) {
            return Err(Error::config("weight and connections must be >= 0"));
        }
        let (mu, sigma) = self.external.moments();
        if !(mu.is_finite() && sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!(
                "external drive needs finite mu and sigma >= 0 (got {mu}, {sigma})"
            )));
        }
        Ok(())
    }

    /// Total drive `(μ, σ)` when the network fires at `rate`.
    pub fn drive(&self, rate: f64) -> (f64, f64) {
        let (mu_ext, sigma_ext) = self.external.moments();
        let load = self.connections * rate * self.tau;
        let mu = mu_ext - self.weight * load;
        let var = self.weight * self.weight * load + sigma_ext * sigma_ext;
        (mu, var.max(0.0).sqrt())
    }

    pub fn with_external(&self, mu: f64, sigma: f64) -> Self {
        IFContinuousParams {
            external: ExternalDrive::Moments { mu, sigma },
            ..*self
        }
    }
}

/// Right-hand side `∫₀^∞ e^{-y²} (e^{2 y_θ y} - e^{2 y_ϑ y}) / y dy` of the
/// rate equation, equal to `1 / (ν τ)`.
pub fn rate_integral(y_theta: f64, y_reset: f64) -> f64 {
    let integrand = |y: f64| {
        if y < 1e-6 {
            2.0 * (y_theta - y_reset)
        } else {
            ((2.0 * y_theta - y) * y).exp() / y - ((2.0 * y_reset - y) * y).exp() / y
        }
    };
    let upper = y_theta.max(0.0) + 12.0;
    integrate_interval(integrand, 0.0, upper, (upper * 4.0).ceil() as usize)
}

/// Low-noise approximation `ν τ ≈ (y_θ / √π) e^{-y_θ²}`.
pub fn weak_noise_rate(y_theta: f64, tau: f64) -> f64 {
    y_theta / std::f64::consts::PI.sqrt() * (-y_theta * y_theta).exp() / tau
}

/// Stationary density on a uniform grid in increasing `u`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationaryDensity {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    /// Index of the reset potential in `u`.
    pub reset_index: usize,
    /// Threshold flux of the normalized density.
    pub implied_rate: f64,
    /// `|implied_rate / ν₀ - 1|` for the rate the density was built for.
    pub rate_mismatch: f64,
    /// Largest scaled residual of the stationary equation over interior
    /// points.
    pub residual: f64,
    pub mass: f64,
}

impl StationaryDensity {
    pub fn spacing(&self) -> f64 {
        self.u[1] - self.u[0]
    }

    /// Mass below the reset potential.
    pub fn mass_below_reset(&self) -> f64 {
        simpson(&self.p[..=self.reset_index], self.spacing())
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(["u", "p"]);
        for (u, p) in self.u.iter().zip(&self.p) {
            t.push(vec![float(*u), float(*p)]).expect("two columns");
        }
        t
    }
}

/// Resolution of the stationary density grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityGrid {
    pub points: usize,
    /// Lower end at `μ₀ - lower_sigmas σ₀`.
    pub lower_sigmas: f64,
    pub tolerance: f64,
}

impl Default for DensityGrid {
    fn default() -> Self {
        DensityGrid {
            points: 4000,
            lower_sigmas: 8.0,
            tolerance: 1e-6,
        }
    }
}

fn simpson(p: &[f64], h: f64) -> f64 {
    let n = p.len() - 1;
    debug_assert!(n.is_multiple_of(2));
    let mut s = p[0] + p[n];
    for (k, v) in p.iter().enumerate().take(n).skip(1) {
        s += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

/// Solves `σ²/2 p'' + ((u - μ) p)' = 0` with `p(θ) = 0` and the flux
/// reinjected at `ϑ`, by integrating the flux relation
/// `-(σ²/2τ) p' - ((u - μ)/τ) p = ν 1{u > ϑ}` downward from `θ` (RK4).
pub fn stationary_density(
    mu0: f64,
    sigma0: f64,
    nu0: f64,
    tau: f64,
    threshold: f64,
    reset: f64,
    grid: &DensityGrid,
) -> Result<StationaryDensity> {
    if !(sigma0 > 0.0) {
        return Err(Error::DegenerateNoise { sigma0 });
    }
    if !(reset < threshold) || grid.points < 8 {
        return Err(Error::config(
            "stationary density needs reset < threshold and at least 8 points",
        ));
    }
    let lower = (mu0 - grid.lower_sigmas * sigma0).min(reset - sigma0);
    let share = (threshold - reset) / (threshold - lower);
    let above = (((grid.points as f64 * share) / 2.0).round() as usize * 2).max(2);
    let h = (threshold - reset) / above as f64;
    let below = ((((reset - lower) / h) / 2.0).ceil() as usize * 2).max(2);
    let total = above + below;

    let s2 = sigma0 * sigma0;
    let slope = |u: f64, q: f64, source: f64| -2.0 / s2 * ((u - mu0) * q + tau * source);
    // unit flux; q[k] at u = θ - k h
    let mut q = vec![0.0; total + 1];
    for k in 0..total {
        let u = threshold - k as f64 * h;
        let source = if k < above { 1.0 } else { 0.0 };
        let y = q[k];
        let k1 = slope(u, y, source);
        let k2 = slope(u - 0.5 * h, y - 0.5 * h * k1, source);
        let k3 = slope(u - 0.5 * h, y - 0.5 * h * k2, source);
        let k4 = slope(u - h, y - h * k3, source);
        q[k + 1] = y - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    q.reverse();
    let u: Vec<f64> = (0..=total).map(|k| threshold - (total - k) as f64 * h).collect();
    let reset_index = below;
    let raw_mass = simpson(&q[..=reset_index], h) + simpson(&q[reset_index..], h);
    let p: Vec<f64> = q.iter().map(|v| v / raw_mass).collect();
    let implied_rate = 1.0 / raw_mass;
    let mass = simpson(&p[..=reset_index], h) + simpson(&p[reset_index..], h);

    let residual = stationary_residual(&u, &p, mu0, sigma0, reset_index);
    if residual > grid.tolerance {
        return Err(Error::GridTooCoarse {
            residual,
            tolerance: grid.tolerance,
        });
    }
    Ok(StationaryDensity {
        u,
        p,
        reset_index,
        implied_rate,
        rate_mismatch: (implied_rate / nu0 - 1.0).abs(),
        residual,
        mass,
    })
}

/// `max |½ P'' + P + y P'| / max P` in `y = (u - μ)/σ`, by fourth-order
/// differences, skipping the kink at the reset and the end points.
fn stationary_residual(u: &[f64], p: &[f64], mu: f64, sigma: f64, kink: usize) -> f64 {
    let hy = (u[1] - u[0]) / sigma;
    let scale = p.iter().cloned().fold(0.0, f64::max) * sigma;
    let big_p = |k: usize| p[k] * sigma;
    let mut worst: f64 = 0.0;
    for k in 2..u.len() - 2 {
        if k.abs_diff(kink) <= 2 {
            continue;
        }
        let (m2, m1, c, p1, p2) = (big_p(k - 2), big_p(k - 1), big_p(k), big_p(k + 1), big_p(k + 2));
        let d1 = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * hy);
        let d2 = (-m2 + 16.0 * m1 - 30.0 * c + 16.0 * p1 - p2) / (12.0 * hy * hy);
        let y = (u[k] - mu) / sigma;
        worst = worst.max((0.5 * d2 + c + y * d1).abs() / scale);
    }
    worst
}

/// Density `(2 ν τ / σ) e^{-y²} ∫_{max(y, y_ϑ)}^{y_θ} e^{x²} dx` at `u`.
pub fn stationary_profile(u: f64, mu0: f64, sigma0: f64, nu0: f64, tau: f64, threshold: f64, reset: f64) -> f64 {
    let y = (u - mu0) / sigma0;
    let yt = (threshold - mu0) / sigma0;
    let lo = y.max((reset - mu0) / sigma0);
    if lo >= yt {
        return 0.0;
    }
    let panels = ((yt - lo) * (4.0 + 2.0 * yt.abs().max(y.abs()))).ceil() as usize + 1;
    let integral = integrate_interval(|x| (x * x - y * y).exp(), lo, yt, panels);
    2.0 * nu0 * tau / sigma0 * integral
}

/// Self-consistent stationary state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationaryFPResult {
    pub nu0: f64,
    pub mu0: f64,
    pub sigma0: f64,
    pub y_theta: f64,
    pub y_reset: f64,
    /// `|1/(ν₀τ) - I| / (1/(ν₀τ))` at the returned rate.
    pub residual: f64,
    pub iterations: usize,
    /// Relative width of the final bracket.
    pub bracket_width: f64,
    /// Smallest residual seen after each bisection step (non-increasing).
    pub residual_history: Vec<f64>,
    pub density: StationaryDensity,
}

impl StationaryFPResult {
    pub fn weak_noise_rate(&self, tau: f64) -> f64 {
        weak_noise_rate(self.y_theta, tau)
    }
}

fn rate_mismatch(params: &IFContinuousParams, nu: f64) -> Result<(f64, f64)> {
    let (mu, sigma) = params.drive(nu);
    if !(sigma > 0.0) {
        return Err(Error::DegenerateNoise { sigma0: sigma });
    }
    let lhs = 1.0 / (nu * params.tau);
    let mut rhs = rate_integral((params.threshold - mu) / sigma, (params.reset - mu) / sigma);
    if !rhs.is_finite() {
        rhs = f64::INFINITY;
    }
    // g < 0 below the root
    Ok((nu * params.tau * rhs - 1.0, (lhs - rhs).abs() / lhs))
}

/// Bracketed bisection (in `log ν`) for the rate satisfying the
/// stationary equations, followed by the stationary density.
pub fn selfconsistent_rate(params: &IFContinuousParams) -> Result<StationaryFPResult> {
    selfconsistent_rate_on(params, &DensityGrid::default())
}

pub fn selfconsistent_rate_on(params: &IFContinuousParams, grid: &DensityGrid) -> Result<StationaryFPResult> {
    params.validate()?;
    let tau = params.tau;
    let mut lo = 1e-12 / tau;
    let mut hi = 1.0 / tau;
    let mut scan = Vec::new();
    loop {
        let g = rate_mismatch(params, lo)?.0;
        scan.push((lo, g));
        if g < 0.0 {
            break;
        }
        if lo * tau < 1e-290 {
            return Err(Error::NoSolution { scan });
        }
        hi = lo;
        lo *= 1e-12;
    }
    loop {
        let g = rate_mismatch(params, hi)?.0;
        scan.push((hi, g));
        if g > 0.0 {
            break;
        }
        if hi * tau > 1e6 {
            return Err(Error::NoSolution { scan });
        }
        lo = hi;
        hi *= 4.0;
    }
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut iterations = 0;
    while (hi - lo) / hi > 1e-13 && iterations < 200 {
        let mid = (lo * hi).sqrt();
        let (g, res) = rate_mismatch(params, mid)?;
        best = best.min(res);
        history.push(best);
        if g > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    let nu0 = (lo * hi).sqrt();
    let (_, residual) = rate_mismatch(params, nu0)?;
    let (mu0, sigma0) = params.drive(nu0);
    let density = stationary_density(mu0, sigma0, nu0, tau, params.threshold, params.reset, grid)?;
    Ok(StationaryFPResult {
        nu0,
        mu0,
        sigma0,
        y_theta: (params.threshold - mu0) / sigma0,
        y_reset: (params.reset - mu0) / sigma0,
        residual,
        iterations,
        bracket_width: (hi - lo) / hi,
        residual_history: history,
        density,
    })
}

/// `B(x) = x / (e^x - 1)`.
#[inline]
fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-10 {
        1.0 - 0.5 * x
    } else {
        x / x.exp_m1()
    }
}

/// Finite-volume discretisation of the time-dependent equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FpOptions {
    pub cells: usize,
    /// Time step; chosen from the stability bound when absent.
    pub dt: Option<f64>,
    pub lower_sigmas: f64,
    /// Largest rate, in multiples of `ν₀` plus `1/τ`, the step must remain
    /// stable for.
    pub rate_cap: f64,
    /// Keep every `record_every`-th rate sample.
    pub record_every: usize,
}

impl Default for FpOptions {
    fn default() -> Self {
        FpOptions {
            cells: 400,
            dt: None,
            lower_sigmas: 8.0,
            rate_cap: 4.0,
            record_every: 1,
        }
    }
}

/// How the time stepper starts.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialDensity {
    /// Stationary density with the rate history at `(1 + kick) ν₀`.
    Stationary { kick: f64 },
    /// Density values at the cell centres and a constant past rate.
    Given { density: Vec<f64>, past_rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FpTrajectory {
    pub times: Vec<f64>,
    pub rate: Vec<f64>,
    pub dt: f64,
    pub centers: Vec<f64>,
    pub density: Vec<f64>,
    /// Largest `|mass - 1|` seen.
    pub mass_drift: f64,
    pub nu0: f64,
}

impl FpTrajectory {
    /// `(max - min) / (2 mean)` of the rate over the final `window`.
    pub fn relative_amplitude(&self, window: f64) -> f64 {
        let end = *self.times.last().unwrap_or(&0.0);
        let tail: Vec<f64> = self
            .times
            .iter()
            .zip(&self.rate)
            .filter(|(t, _)| **t >= end - window)
            .map(|(_, r)| *r)
            .collect();
        if tail.is_empty() {
            return f64::NAN;
        }
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let (lo, hi) = tail
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        (hi - lo) / (2.0 * mean)
    }

    pub fn mean_rate(&self, window: f64) -> f64 {
        let end = *self.times.last().unwrap_or(&0.0);
        let tail: Vec<f64> = self
            .times
            .iter()
            .zip(&self.rate)
            .filter(|(t, _)| **t >= end - window)
            .map(|(_, r)| *r)
            .collect();
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

struct FvGrid {
    lower: f64,
    h: f64,
    cells: usize,
    reset_cell: usize,
}

impl FvGrid {
    fn new(params: &IFContinuousParams, mu0: f64, sigma0: f64, opts: &FpOptions) -> Result<Self> {
        let (theta, reset) = (params.threshold, params.reset);
        let target = (mu0 - opts.lower_sigmas * sigma0).min(reset - sigma0);
        if opts.cells < 8 {
            return Err(Error::config("need at least 8 cells"));
        }
        let m = ((opts.cells as f64 * (theta - reset) / (theta - target) - 0.5).round()).max(1.0);
        let h = (theta - reset) / (m + 0.5);
        let cells = ((theta - target) / h).ceil() as usize;
        let lower = theta - cells as f64 * h;
        let reset_cell = cells - 1 - m as usize;
        Ok(FvGrid {
            lower,
            h,
            cells,
            reset_cell,
        })
    }

    fn center(&self, k: usize) -> f64 {
        self.lower + (k as f64 + 0.5) * self.h
    }
}

/// Evolves the density with Scharfetter-Gummel fluxes and explicit Euler
/// steps. The threshold flux is the instantaneous rate and is reinjected
/// into the reset cell; the drive uses the rate one delay earlier.
pub fn fp_time_stepper(
    params: &IFContinuousParams,
    initial: &InitialDensity,
    duration: f64,
    opts: &FpOptions,
) -> Result<FpTrajectory> {
    let stationary = selfconsistent_rate(params)?;
    let (nu0, mu0, sigma0) = (stationary.nu0, stationary.mu0, stationary.sigma0);
    let grid = FvGrid::new(params, mu0, sigma0, opts)?;
    let (h, tau, n) = (grid.h, params.tau, grid.cells);

    let (mut p, past_rate) = match initial {
        InitialDensity::Stationary { kick } => {
            let p: Vec<f64> = (0..n)
                .map(|k| stationary_profile(grid.center(k), mu0, sigma0, nu0, tau, params.threshold, params.reset))
                .collect();
            (p, nu0 * (1.0 + kick))
        }
        InitialDensity::Given { density, past_rate } => {
            if density.len() != n {
                return Err(Error::config(format!(
                    "initial density has {} cells, grid has {n}",
                    density.len()
                )));
            }
            (density.clone(), *past_rate)
        }
    };
    let mass: f64 = p.iter().sum::<f64>() * h;
    p.iter_mut().for_each(|v| *v /= mass);

    let cap = opts.rate_cap * nu0 + 1.0 / tau;
    let (mu_lo, sigma_hi) = params.drive(cap);
    let (mu_hi, _) = params.drive(0.0);
    let diff_max = sigma_hi * sigma_hi / (2.0 * tau);
    let a_max = [grid.lower, params.threshold]
        .iter()
        .flat_map(|&x| [(mu_lo - x).abs(), (mu_hi - x).abs()])
        .fold(0.0, f64::max)
        / tau;
    let dt_stable = 0.9 / (2.0 * diff_max / (h * h) + a_max / h);
    let dt_wanted = opts.dt.unwrap_or(dt_stable);
    if dt_wanted > dt_stable {
        return Err(Error::config(format!(
            "time step {dt_wanted:e} exceeds the stability bound {dt_stable:e}"
        )));
    }
    let lag = (params.delay / dt_wanted).ceil() as usize;
    let dt = params.delay / lag as f64;
    let steps = (duration / dt).round() as usize;

    let mut history = vec![past_rate; lag];
    let mut flux = vec![0.0; n + 1];
    let mut times = Vec::with_capacity(steps / opts.record_every.max(1) + 1);
    let mut rates = Vec::with_capacity(times.capacity());
    let mut drift: f64 = 0.0;
    let every = opts.record_every.max(1);

    for step in 0..steps {
        let delayed = history[step % lag];
        if delayed > cap {
            return Err(Error::Instability {
                index: step,
                value: delayed,
            });
        }
        let (mu, sigma) = params.drive(delayed);
        let diff = sigma * sigma / (2.0 * tau);
        // flux[k] crosses the left face of cell k; flux[n] leaves through θ
        flux[0] = 0.0;
        for k in 1..n {
            let x = grid.lower + k as f64 * h;
            let pe = (mu - x) / tau * h / diff;
            flux[k] = diff / h * (bernoulli(-pe) * p[k - 1] - bernoulli(pe) * p[k]);
        }
        let x = params.threshold - 0.25 * h;
        let pe = (mu - x) / tau * (0.5 * h) / diff;
        let out = 2.0 * diff / h * bernoulli(-pe) * p[n - 1];
        flux[n] = out;
        for k in 0..n {
            p[k] += dt / h * (flux[k] - flux[k + 1]);
        }
        p[grid.reset_cell] += dt / h * out;
        history[step % lag] = out;

        if step % every == 0 || step + 1 == steps {
            let m: f64 = p.iter().sum::<f64>() * h;
            drift = drift.max((m - 1.0).abs());
            if drift > 1e-4 {
                return Err(Error::MassDrift { drift, limit: 1e-4 });
            }
            times.push((step + 1) as f64 * dt);
            rates.push(out);
        }
    }
    Ok(FpTrajectory {
        times,
        rate: rates,
        dt,
        centers: (0..n).map(|k| grid.center(k)).collect(),
        density: p,
        mass_drift: drift,
        nu0,
    })
}

/// Stationary or oscillatory behaviour of the mean-field dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnsetLabel {
    Stationary,
    Oscillatory,
}

impl OnsetLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            OnsetLabel::Stationary => "SS",
            OnsetLabel::Oscillatory => "OS",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanOptions {
    /// Run length in units of `τ`.
    pub duration: f64,
    /// Final window, in units of `τ`, over which the amplitude is measured.
    pub window: f64,
    pub kick: f64,
    /// Relative amplitude separating the labels.
    pub threshold: f64,
    pub fp: FpOptions,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            duration: 40.0,
            window: 10.0,
            kick: 0.2,
            threshold: 0.05,
            fp: FpOptions {
                record_every: 10,
                ..FpOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanCell {
    pub mu_ext: f64,
    pub sigma_ext: f64,
    pub nu0: f64,
    pub amplitude: f64,
    pub label: Option<OnsetLabel>,
    pub failure: Option<String>,
}

/// Labels each `(μ_ext, σ_ext)` cell, row-major in `μ_ext`, from the rate
/// of the time stepper after a kick away from the stationary state.
pub fn oscillation_scan(
    params: &IFContinuousParams,
    mu_ext: &[f64],
    sigma_ext: &[f64],
    opts: &ScanOptions,
) -> Vec<ScanCell> {
    let cells: Vec<(f64, f64)> = mu_ext
        .iter()
        .flat_map(|&m| sigma_ext.iter().map(move |&s| (m, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(mu, sigma)| {
            let p = params.with_external(mu, sigma);
            let run = fp_time_stepper(
                &p,
                &InitialDensity::Stationary { kick: opts.kick },
                opts.duration * p.tau,
                &opts.fp,
            );
            match run {
                Ok(run) => {
                    let amplitude = run.relative_amplitude(opts.window * p.tau);
                    let label = if amplitude > opts.threshold {
                        OnsetLabel::Oscillatory
                    } else {
                        OnsetLabel::Stationary
                    };
                    ScanCell {
                        mu_ext: mu,
                        sigma_ext: sigma,
                        nu0: run.nu0,
                        amplitude,
                        label: Some(label),
                        failure: None,
                    }
                }
                Err(Error::Instability { .. }) => ScanCell {
                    mu_ext: mu,
                    sigma_ext: sigma,
                    nu0: selfconsistent_rate(&p).map(|r| r.nu0).unwrap_or(f64::NAN),
                    amplitude: f64::INFINITY,
                    label: Some(OnsetLabel::Oscillatory),
                    failure: None,
                },
                Err(e) => ScanCell {
                    mu_ext: mu,
                    sigma_ext: sigma,
                    nu0: f64::NAN,
                    amplitude: f64::NAN,
                    label: None,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect()
}

pub fn scan_table(cells: &[ScanCell]) -> Table {
    let mut t = Table::new(["mu_ext", "sigma_ext", "nu0", "amplitude", "label"]);
    for c in cells {
        t.push(vec![
            float(c.mu_ext),
            float(c.sigma_ext),
            float(c.nu0),
            float(c.amplitude),
            c.label.map_or("failed", |l| l.as_str()).to_string(),
        ])
        .expect("five columns");
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpikingOptions {
    pub neurons: usize,
    pub duration: f64,
    /// Integration step `h`; must not exceed the delay.
    pub step: f64,
    /// Initial transient excluded from the mean rate.
    pub warmup: f64,
    pub bin: f64,
    pub record_spikes: bool,
    pub seed: u64,
}

impl Default for SpikingOptions {
    fn default() -> Self {
        SpikingOptions {
            neurons: 10_000,
            duration: 100.0,
            step: 0.01,
            warmup: 10.0,
            bin: 0.1,
            record_spikes: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpikingRunResult {
    /// Spike times per neuron (empty unless recorded).
    pub spikes: Vec<Vec<f64>>,
    /// Population rate per bin.
    pub rate: Vec<f64>,
    pub bin: f64,
    /// Mean rate over `[warmup, duration]`.
    pub mean_rate: f64,
    /// Standard error of `mean_rate` from batch means.
    pub rate_stderr: f64,
    pub total_spikes: u64,
}

impl SpikingRunResult {
    pub fn raster_table(&self) -> Table {
        let mut t = Table::new(["neuron", "time"]);
        for (i, times) in self.spikes.iter().enumerate() {
            for &s in times {
                t.push(vec![i.to_string(), float(s)]).expect("two columns");
            }
        }
        t
    }
}

/// Time-stepped simulation of `N` neurons with `C` inhibitory inputs each
/// (delta pulses of size `-J` after the delay) and white-noise external
/// drive. Between pulses the free membrane equation is advanced with its
/// exact Gaussian transition; threshold crossings inside a step are caught
/// with the Brownian-bridge crossing probability.
pub fn simulate_spiking(params: &IFContinuousParams, opts: &SpikingOptions) -> Result<SpikingRunResult> {
    params.validate()?;
    let n = opts.neurons;
    let h = opts.step;
    if !(h > 0.0 && h <= params.delay && h < params.tau) {
        return Err(Error::config(format!(
            "step {h} must be positive, at most the delay {} and below tau",
            params.delay
        )));
    }
    if !(opts.bin >= h && opts.warmup < opts.duration) {
        return Err(Error::config("need bin >= step and warmup < duration"));
    }
    let connections = params.connections.round() as usize;
    let law = WeightLaw::dilute(params.weight, connections);
    let targets = match sample_weights(
        &law,
        n,
        &mut rng_stream(opts.seed, StreamId::new(StreamPurpose::Weights, 0)),
    )? {
        WeightMatrix::Sparse(s) => s.targets(),
        WeightMatrix::Dense(_) => unreachable!("dilute law is sparse"),
    };
    let (mu_ext, sigma_ext) = params.external.moments();
    let (tau, theta, reset, jump) = (params.tau, params.threshold, params.reset, params.weight);
    let lag = ((params.delay / h).round() as usize).max(1);
    let steps = (opts.duration / h).round() as usize;
    // exact Ornstein-Uhlenbeck transition over one step
    let decay = -(-h / tau).exp_m1();
    let kick = sigma_ext * (0.5 * -(-2.0 * h / tau).exp_m1()).sqrt();
    let bridge = if sigma_ext > 0.0 {
        2.0 * tau / (sigma_ext * sigma_ext * h)
    } else {
        0.0
    };
    let bound = 1e3 * (theta.abs() + mu_ext.abs() + sigma_ext + jump * connections as f64 + 1.0);

    let mut init = rng_stream(opts.seed, StreamId::new(StreamPurpose::Initial, 0));
    let uniform = Uniform::new(reset, theta).map_err(|e| Error::config(e.to_string()))?;
    let mut u: Vec<f64> = (0..n).map(|_| init.sample(uniform)).collect();
    let mut pending = vec![0u32; (lag + 1) * n];
    let mut spikes = vec![Vec::new(); if opts.record_spikes { n } else { 0 }];
    let bins = (opts.duration / opts.bin).ceil() as usize;
    let mut counts = vec![0u64; bins];
    let mut total = 0u64;
    let mut fired = Vec::new();

    for step in 0..steps {
        let slot = (step % (lag + 1)) * n;
        let mut rng = rng_stream(opts.seed, StreamId::new(StreamPurpose::Spiking, step as u64));
        fired.clear();
        for i in 0..n {
            let arrivals = std::mem::take(&mut pending[slot + i]);
            let before = u[i] - jump * arrivals as f64;
            let z: f64 = rng.sample(StandardNormal);
            let after = before + decay * (mu_ext - before) + kick * z;
            if !after.is_finite() || after.abs() > bound {
                return Err(Error::Instability {
                    index: step,
                    value: after,
                });
            }
            let crossed = after >= theta || {
                let x = bridge * (theta - before) * (theta - after);
                bridge > 0.0 && x < 40.0 && rng.random::<f64>() < (-x).exp()
            };
            if crossed {
                u[i] = reset;
                fired.push(i);
            } else {
                u[i] = after;
            }
        }
        let time = (step + 1) as f64 * h;
        let arrival = ((step + 1 + lag) % (lag + 1)) * n;
        for &j in &fired {
            for &i in &targets[j] {
                pending[arrival + i as usize] += 1;
            }
            if opts.record_spikes {
                spikes[j].push(time);
            }
        }
        let b = (((step as f64 + 0.5) * h) / opts.bin) as usize;
        counts[b.min(bins - 1)] += fired.len() as u64;
        total += fired.len() as u64;
    }

    let rate: Vec<f64> = counts.iter().map(|&c| c as f64 / (n as f64 * opts.bin)).collect();
    let first = (opts.warmup / opts.bin).ceil() as usize;
    let window = &rate[first.min(rate.len())..];
    let batches = 20.min(window.len()).max(1);
    let per = window.len() / batches;
    let batch_means: Vec<f64> = (0..batches)
        .map(|b| window[b * per..(b + 1) * per].iter().sum::<f64>() / per.max(1) as f64)
        .collect();
    let (mean_rate, rate_stderr) = crate::scalar::mean_and_stderr(&batch_means);
    Ok(SpikingRunResult {
        spikes,
        rate,
        bin: opts.bin,
        mean_rate,
        rate_stderr,
        total_spikes: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn network(mu: f64, sigma: f64) -> IFContinuousParams {
        IFContinuousParams {
            tau: 1.0,
            threshold: 20.0,
            reset: 10.0,
            weight: 0.1,
            connections: 1000.0,
            delay: 0.1,
            external: ExternalDrive::Moments { mu, sigma },
        }
    }

    #[test]
    fn external_moments() {
        assert_eq!(external_input_moments(0.1, 1000.0, 0.0), (0.0, 0.0));
        assert_eq!(external_input_moments(0.1, 1000.0, 10.0).0, 0.1 * 1000.0 * 10.0);
        let (m1, s1) = external_input_moments(0.2, 500.0, 3.0);
        let (m2, s2) = external_input_moments(0.2, 500.0, 6.0);
        assert!((m2 / m1 - 2.0).abs() < 1e-15);
        assert!((s2 / s1 - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn reset_must_sit_between_zero_and_threshold() {
        let mut p = network(25.0, 2.0);
        p.reset = 0.0;
        assert!(p.validate().is_err());
        p.reset = 25.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn integrand_limit_at_origin() {
        // the integral equals √π ∫_{yϑ}^{yθ} e^{x²}(1 + erf x) dx
        let (a, b) = (1.3, -0.4);
        let oracle = integrate_interval(
            |x| std::f64::consts::PI.sqrt() * (x * x).exp() * (1.0 + statrs::function::erf::erf(x)),
            b,
            a,
            64,
        );
        assert!((rate_integral(a, b) / oracle - 1.0).abs() < 1e-10);
    }

    #[test]
    fn self_consistency_holds() {
        let r = selfconsistent_rate(&network(25.0, 2.0)).unwrap();
        assert!(r.residual < 1e-8, "{}", r.residual);
        assert!(r.bracket_width < 1e-10);
        assert!(r.residual_history.windows(2).all(|w| w[1] <= w[0]));
        let (mu, sigma) = network(25.0, 2.0).drive(r.nu0);
        assert_eq!((mu, sigma), (r.mu0, r.sigma0));
        assert!((r.mu0 - (-1000.0 * 0.1 * r.nu0 + 25.0)).abs() < 1e-12);
        assert!((r.sigma0.powi(2) - (1000.0 * 0.01 * r.nu0 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn density_is_normalised_and_absorbed() {
        let r = selfconsistent_rate(&network(25.0, 2.0)).unwrap();
        let d = &r.density;
        assert!((d.mass - 1.0).abs() < 1e-6);
        assert_eq!(*d.p.last().unwrap(), 0.0);
        assert!(d.p.iter().all(|&v| v >= 0.0));
        assert!(d.mass_below_reset() > 0.0);
        assert!(d.rate_mismatch < 1e-4);
        assert!(d.residual < 1e-6);
    }

    #[test]
    fn ode_solution_matches_integral_form() {
        let r = selfconsistent_rate(&network(25.0, 2.0)).unwrap();
        let d = &r.density;
        let peak = d.p.iter().cloned().fold(0.0, f64::max);
        for k in (0..d.u.len()).step_by(97) {
            let closed = stationary_profile(d.u[k], r.mu0, r.sigma0, r.nu0, 1.0, 20.0, 10.0);
            assert!(
                (closed - d.p[k]).abs() < 1e-6 * peak,
                "u {} : {} vs {}",
                d.u[k],
                closed,
                d.p[k]
            );
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let grid = DensityGrid {
            points: 40,
            ..DensityGrid::default()
        };
        let err = selfconsistent_rate_on(&network(25.0, 2.0), &grid).unwrap_err();
        assert!(matches!(err, Error::GridTooCoarse { .. }), "{err}");
    }

    #[test]
    fn weak_noise_limit() {
        let r = selfconsistent_rate(&network(12.0, 2.0)).unwrap();
        assert!(r.y_theta >= 3.0, "{}", r.y_theta);
        assert!((r.weak_noise_rate(1.0) / r.nu0 - 1.0).abs() < 0.25);
    }

    #[test]
    fn silent_noiseless_network_is_degenerate() {
        let p = IFContinuousParams {
            weight: 0.0,
            ..network(15.0, 0.0)
        };
        assert!(matches!(selfconsistent_rate(&p), Err(Error::DegenerateNoise { .. })));
    }

    #[test]
    fn subthreshold_drive_never_fires() {
        let p = IFContinuousParams {
            weight: 0.0,
            connections: 0.0,
            ..network(15.0, 0.0)
        };
        let opts = SpikingOptions {
            neurons: 50,
            duration: 20.0,
            warmup: 1.0,
            ..SpikingOptions::default()
        };
        assert_eq!(simulate_spiking(&p, &opts).unwrap().total_spikes, 0);
    }

    #[test]
    fn tonic_firing_period() {
        let p = IFContinuousParams {
            weight: 0.0,
            connections: 0.0,
            ..network(25.0, 0.0)
        };
        let opts = SpikingOptions {
            neurons: 1,
            duration: 30.0,
            step: 1e-4,
            warmup: 1.0,
            record_spikes: true,
            ..SpikingOptions::default()
        };
        let run = simulate_spiking(&p, &opts).unwrap();
        let period = (15.0f64 / 5.0).ln();
        let isi: Vec<f64> = run.spikes[0].windows(2).map(|w| w[1] - w[0]).collect();
        assert!(isi.len() > 10);
        for d in isi {
            assert!((d / period - 1.0).abs() < 1e-3, "{d} vs {period}");
        }
        assert!(run.spikes[0].windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn stepper_conserves_mass_and_stays_stationary() {
        let p = network(25.0, 4.0);
        let run = fp_time_stepper(
            &p,
            &InitialDensity::Stationary { kick: 0.0 },
            20.0,
            &FpOptions::default(),
        )
        .unwrap();
        assert!(run.mass_drift < 1e-6 * 20.0, "{}", run.mass_drift);
        for r in &run.rate {
            assert!((r / run.nu0 - 1.0).abs() < 0.02, "{r} vs {}", run.nu0);
        }
    }
}
